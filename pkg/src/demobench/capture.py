"""Demonstration capture: timestamped configuration recording, timing
normalization, torque annotation via tau = I * alpha, and JSON-lines storage.

Waypoint times are stored normalized to [0, 1]; the raw duration in seconds
travels with the record so torque estimation can use physical time.
"""
from __future__ import annotations

import json
import threading
import time as _time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateSession,
    InvalidInterval,
    IoError,
    SchemaViolation,
    TooFewSamples,
)

__all__ = [
    "Trajectory",
    "DemonstrationRecord",
    "TrajectoryQuery",
    "RecorderHandle",
    "RecorderRegistry",
    "recorder_start",
    "recorder_finish",
    "normalize_times",
    "estimate_torques",
    "save_record",
    "load_record",
    "record_to_json",
    "record_from_json",
]

DEMO_TYPES = ("correction", "feature_trace", "full_task")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered waypoints (q, t); times strictly increasing."""

    qs: np.ndarray  # (n, n_joints)
    ts: np.ndarray  # (n,)

    def __post_init__(self):
        qs = np.atleast_2d(np.asarray(self.qs, dtype=float))
        ts = np.asarray(self.ts, dtype=float)
        object.__setattr__(self, "qs", qs)
        object.__setattr__(self, "ts", ts)
        if len(qs) != len(ts):
            raise DimensionMismatch("waypoint and time counts differ")
        if len(ts) < 2:
            raise TooFewSamples("a trajectory needs at least two waypoints")
        if not np.all(np.diff(ts) > 0):
            raise ValueError("waypoint times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.ts)

    @property
    def n_joints(self) -> int:
        return self.qs.shape[1]

    def normalized(self) -> "Trajectory":
        return Trajectory(self.qs, normalize_times(self.ts))


@dataclass(frozen=True, eq=False)
class DemonstrationRecord:
    trajectory: Trajectory
    torques: np.ndarray  # (n, n_joints)
    demo_type: str
    robot_name: str
    scene_id: str
    started_at: float  # wall-clock epoch seconds
    sample_interval: float
    raw_duration: float  # seconds spanned by the raw recording
    joint_names: tuple = ()

    def __post_init__(self):
        torques = np.atleast_2d(np.asarray(self.torques, dtype=float))
        object.__setattr__(self, "torques", torques)
        if torques.shape != self.trajectory.qs.shape:
            raise DimensionMismatch(
                f"torques shape {torques.shape} != trajectory {self.trajectory.qs.shape}")
        if self.sample_interval <= 0:
            raise InvalidInterval("sample_interval must be > 0")
        if self.demo_type not in DEMO_TYPES:
            raise ValueError(f"demo_type must be one of {DEMO_TYPES}")


@dataclass(frozen=True, eq=False)
class TrajectoryQuery:
    q_start: np.ndarray
    q_goal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q_start", np.asarray(self.q_start, dtype=float))
        object.__setattr__(self, "q_goal", np.asarray(self.q_goal, dtype=float))
        if self.q_start.shape != self.q_goal.shape:
            raise DimensionMismatch("query endpoints have different lengths")


def normalize_times(ts) -> np.ndarray:
    """Affine map of times onto [0, 1] preserving relative spacing."""
    ts = np.asarray(ts, dtype=float)
    if len(ts) < 2:
        raise TooFewSamples("need at least two samples to normalize")
    span = ts[-1] - ts[0]
    return (ts - ts[0]) / span


def estimate_torques(trajectory: Trajectory, inertias, raw_duration: float) -> np.ndarray:
    """tau[k, j] = I_j * alpha[k, j] with alpha from finite differences.

    Interior points use the three-point central difference (exact on
    quadratics, also on non-uniform grids); endpoints use the second-order
    one-sided four-point scheme when enough samples exist.
    """
    inertias = np.asarray(inertias, dtype=float)
    if inertias.shape != (trajectory.n_joints,):
        raise DimensionMismatch(
            f"{inertias.shape[0] if inertias.ndim else 0} inertias for "
            f"{trajectory.n_joints} joints")
    if raw_duration <= 0:
        raise ValueError("raw_duration must be > 0")
    n = len(trajectory)
    q = trajectory.qs
    # Physical time axis: waypoint times are normalized, scale them back.
    t = normalize_times(trajectory.ts) * raw_duration

    alpha = np.zeros_like(q)
    h1 = (t[1:-1] - t[:-2])[:, None]
    h2 = (t[2:] - t[1:-1])[:, None]
    alpha[1:-1] = 2.0 * (h1 * q[2:] - (h1 + h2) * q[1:-1] + h2 * q[:-2]) \
        / (h1 * h2 * (h1 + h2))

    if n >= 4:
        h = t[1] - t[0]
        alpha[0] = (2.0 * q[0] - 5.0 * q[1] + 4.0 * q[2] - q[3]) / h ** 2
        h = t[-1] - t[-2]
        alpha[-1] = (2.0 * q[-1] - 5.0 * q[-2] + 4.0 * q[-3] - q[-4]) / h ** 2
    elif n == 3:
        # A parabola through three points has one curvature value everywhere.
        alpha[0] = alpha[1]
        alpha[-1] = alpha[1]
    else:  # two samples: no curvature information
        alpha[:] = 0.0

    return alpha * inertias[None, :]


# --- live recording ----------------------------------------------------------

class RecorderHandle:
    """Collects (time, configuration) samples for one demonstration.

    One writer at a time; `observe` may be called concurrently by a bus
    dispatcher because it atomically replaces the whole latest-configuration
    reference (no partial updates are ever visible).
    """

    def __init__(self, session_id: str, sample_interval: float,
                 registry: "RecorderRegistry", demo_type: str = "full_task",
                 started_at: Optional[float] = None):
        self.session_id = session_id
        self.sample_interval = float(sample_interval)
        self.demo_type = demo_type
        self.started_at = _time.time() if started_at is None else float(started_at)
        self._registry = registry
        self._latest: Optional[np.ndarray] = None
        self._samples: list = []  # (t, q) tuples
        self._last_sample_t: Optional[float] = None
        self._closed = False

    def observe(self, q) -> None:
        """Publish the most recent configuration (atomic reference swap)."""
        self._latest = np.array(q, dtype=float)

    def sample(self, t: float) -> bool:
        """Append the latest configuration if a full interval elapsed.

        Returns True when a waypoint was recorded. `t` is seconds on any
        monotonic clock; tests drive it synthetically.
        """
        if self._closed:
            raise DuplicateSession(f"session {self.session_id!r} already finished")
        if self._latest is None:
            return False
        if self._last_sample_t is not None \
                and t - self._last_sample_t < self.sample_interval - 1e-12:
            return False
        self._samples.append((float(t), self._latest))
        self._last_sample_t = float(t)
        return True

    @property
    def n_samples(self) -> int:
        return len(self._samples)


class RecorderRegistry:
    """Active sessions by id; enforces the one-session-per-id rule."""

    def __init__(self):
        self._active: dict = {}
        self._lock = threading.Lock()

    def start(self, session_id: str, sample_interval: float,
              demo_type: str = "full_task",
              started_at: Optional[float] = None) -> RecorderHandle:
        if sample_interval <= 0:
            raise InvalidInterval(f"sample_interval {sample_interval} must be > 0")
        with self._lock:
            if session_id in self._active:
                raise DuplicateSession(f"session {session_id!r} already active")
            handle = RecorderHandle(session_id, sample_interval, self,
                                    demo_type, started_at)
            self._active[session_id] = handle
        return handle

    def finish(self, handle: RecorderHandle, inertias, robot_name: str,
               scene_id: str, joint_names=()) -> DemonstrationRecord:
        with self._lock:
            self._active.pop(handle.session_id, None)
        handle._closed = True
        if handle.n_samples < 2:
            raise TooFewSamples(
                f"session {handle.session_id!r} recorded {handle.n_samples} samples")
        ts = np.array([t for t, _ in handle._samples])
        qs = np.vstack([q for _, q in handle._samples])
        raw_duration = float(ts[-1] - ts[0])
        trajectory = Trajectory(qs, normalize_times(ts))
        torques = estimate_torques(trajectory, inertias, raw_duration)
        return DemonstrationRecord(
            trajectory=trajectory,
            torques=torques,
            demo_type=handle.demo_type,
            robot_name=robot_name,
            scene_id=scene_id,
            started_at=handle.started_at,
            sample_interval=handle.sample_interval,
            raw_duration=raw_duration,
            joint_names=tuple(joint_names),
        )

    def active_ids(self) -> list:
        with self._lock:
            return sorted(self._active)


_default_registry = RecorderRegistry()


def recorder_start(session_id: str, sample_interval: float,
                   demo_type: str = "full_task",
                   registry: Optional[RecorderRegistry] = None,
                   started_at: Optional[float] = None) -> RecorderHandle:
    return (registry or _default_registry).start(
        session_id, sample_interval, demo_type, started_at)


def recorder_finish(handle: RecorderHandle, inertias, robot_name: str,
                    scene_id: str, joint_names=()) -> DemonstrationRecord:
    return handle._registry.finish(handle, inertias, robot_name, scene_id,
                                   joint_names)


# --- persistence -------------------------------------------------------------

def record_to_json(record: DemonstrationRecord) -> dict:
    """Single-object form, used on the /demonstration topic."""
    header = _header(record)
    header["waypoints"] = [
        {"t": float(t), "q": [float(v) for v in q], "tau": [float(v) for v in tau]}
        for t, q, tau in zip(record.trajectory.ts, record.trajectory.qs,
                             record.torques)
    ]
    return header


def _header(record: DemonstrationRecord) -> dict:
    return {
        "version": 1,
        "robot": record.robot_name,
        "scene": record.scene_id,
        "demo_type": record.demo_type,
        "sample_interval": record.sample_interval,
        "raw_duration": record.raw_duration,
        "started_at": record.started_at,
        "joints": list(record.joint_names),
    }


def record_from_json(obj: dict) -> DemonstrationRecord:
    try:
        wps = obj["waypoints"]
        ts = np.array([w["t"] for w in wps], dtype=float)
        qs = np.array([w["q"] for w in wps], dtype=float)
        taus = np.array([w["tau"] for w in wps], dtype=float)
        return DemonstrationRecord(
            trajectory=Trajectory(qs, ts),
            torques=taus,
            demo_type=obj["demo_type"],
            robot_name=obj["robot"],
            scene_id=obj["scene"],
            started_at=obj["started_at"],
            sample_interval=obj["sample_interval"],
            raw_duration=obj["raw_duration"],
            joint_names=tuple(obj.get("joints", ())),
        )
    except (KeyError, TypeError, ValueError, DimensionMismatch) as exc:
        raise SchemaViolation(f"bad demonstration payload: {exc}") from exc


def save_record(record: DemonstrationRecord, path) -> None:
    """JSON lines: header line, then one {"t", "q", "tau"} line per waypoint."""
    lines = [json.dumps(_header(record))]
    for t, q, tau in zip(record.trajectory.ts, record.trajectory.qs,
                         record.torques):
        lines.append(json.dumps({
            "t": float(t),
            "q": [float(v) for v in q],
            "tau": [float(v) for v in tau],
        }))
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_record(path) -> DemonstrationRecord:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise SchemaViolation(f"{path}: empty demonstration file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: bad header line: {exc}") from exc
    required = ("version", "robot", "scene", "demo_type", "sample_interval",
                "raw_duration", "joints")
    if not isinstance(header, dict) or any(k not in header for k in required):
        raise SchemaViolation(f"{path}: missing header line")

    ts, qs, taus = [], [], []
    width = None
    for i, line in enumerate(lines[1:], start=2):
        try:
            row = json.loads(line)
            t, q, tau = row["t"], row["q"], row["tau"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise SchemaViolation(f"{path}:{i}: bad waypoint line: {exc}") from exc
        if width is None:
            width = len(q)
        if len(q) != width or len(tau) != width:
            raise SchemaViolation(f"{path}:{i}: inconsistent widths")
        ts.append(t)
        qs.append(q)
        taus.append(tau)
    if len(ts) < 2:
        raise SchemaViolation(f"{path}: fewer than two waypoints")
    return DemonstrationRecord(
        trajectory=Trajectory(np.array(qs, dtype=float), np.array(ts, dtype=float)),
        torques=np.array(taus, dtype=float),
        demo_type=header["demo_type"],
        robot_name=header["robot"],
        scene_id=header["scene"],
        started_at=header.get("started_at", 0.0),
        sample_interval=header["sample_interval"],
        raw_duration=header["raw_duration"],
        joint_names=tuple(header["joints"]),
    )
