"""Experiment harness: synthetic demonstrator, MSE evaluation over the
reachable set, trial protocol, and feature-field CSV export.

The demonstrator descends a ground-truth feature field with a correlated
tangential wander (a bounded random walk on the direction offset), which
imitates how humans arc around an object instead of retracing straight rays.
Every trace goes through the real capture recorder so the timing and torque
paths are exercised.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import capture
from .capture import DemonstrationRecord, RecorderRegistry
from .errors import DegenerateRange, InsufficientTraces, IoError, NoHighRegion
from .kinematics import (
    IkParams,
    TargetTracker,
    ee_position,
    ee_positions_batch,
    random_configurations,
    solve_ik,
)
from .learning import FeatureNetwork, TrainParams, encode_batch, encoding_dim, train_feature
from .model import RobotModel
from .scene import GT_FEATURE_NAMES, Scene, gt_feature

__all__ = [
    "OracleParams",
    "ExperimentSpec",
    "ExperimentResult",
    "generate_oracle_trace",
    "evaluate_mse",
    "run_experiment",
    "emit_feature_field",
    "experiment_train_params",
    "load_trace_dir",
]

# Home configuration used to seed IK throughout the bench experiments.
UR5E_HOME = (0.0, -1.5708, 1.5708, -1.5708, -1.5708, 0.0)


@dataclass(frozen=True)
class OracleParams:
    """Synthetic demonstrator knobs.

    direction_noise_deg is the innovation of a bounded random walk on the
    angular offset between the step direction and steepest descent; the
    offset is clamped to +-wander_limit_deg so every step still descends.
    """

    direction_noise_deg: float = 10.0
    wander_limit_deg: float = 80.0
    step_length: float = 0.03
    sample_interval: float = 0.05
    max_steps: int = 200
    start_low: float = 0.9
    start_high: float = 0.97
    low_threshold: float = 0.1
    max_attempts: int = 30
    start_tries: int = 100000


def _gt_gradient(scene: Scene, gt: Callable, p: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of the unclamped field (descent stays defined on
    the saturated plateaus)."""
    g = np.zeros(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[k] = (gt(scene, p + e, raw=True) - gt(scene, p - e, raw=True)) / (2 * h)
    return g


def _resolve_gt(gt_or_name) -> Callable:
    if callable(gt_or_name):
        return gt_or_name
    return gt_feature(gt_or_name)


def generate_oracle_trace(gt_or_name, model: RobotModel, scene: Scene, seed: int,
                          params: OracleParams = OracleParams()) -> DemonstrationRecord:
    """One synthetic feature trace: start where the feature is strongly
    expressed (rejection sampling, gt >= start_low), descend by IK steps until
    it is weakly expressed (gt <= low_threshold) or the step budget runs out.

    Descents that stall against the workspace boundary are retried with fresh
    draws from the same seed stream; the returned trace always ends low.
    """
    gt = _resolve_gt(gt_or_name)
    rng = np.random.default_rng(seed)
    lo, hi = model.limits_arrays()
    # Principal-range start sampling avoids wrapped postures on +-2pi joints.
    lo_s = np.maximum(lo, -math.pi)
    hi_s = np.minimum(hi, math.pi)
    sigma = math.radians(params.direction_noise_deg)
    phi_max = math.radians(params.wander_limit_deg)
    dt = params.sample_interval

    for attempt in range(params.max_attempts):
        start = None
        for _ in range(params.start_tries):
            q = rng.uniform(lo_s, hi_s)
            if params.start_low <= gt(scene, ee_position(model, q)) <= params.start_high:
                start = q
                break
        if start is None:
            raise NoHighRegion(
                f"no start with feature value in [{params.start_low}, "
                f"{params.start_high}] after {params.start_tries} draws")

        registry = RecorderRegistry()
        handle = registry.start(f"oracle-{seed}-{attempt}", dt, "feature_trace",
                                started_at=0.0)
        tracker = TargetTracker(model, start, IkParams(), dt=dt)
        q = start.copy()
        handle.observe(q)
        handle.sample(0.0)
        ref = rng.normal(size=3)  # per-trace tangential reference direction
        phi = rng.uniform(-phi_max, phi_max) if sigma > 0 else 0.0
        reached_low = False
        for k in range(1, params.max_steps + 1):
            p = ee_position(model, q)
            g = _gt_gradient(scene, gt, p)
            norm = float(np.linalg.norm(g))
            if norm < 1e-9:
                d = rng.normal(size=3)
                d /= np.linalg.norm(d)
            else:
                descent = -g / norm
                tau = ref - np.dot(ref, descent) * descent
                tn = float(np.linalg.norm(tau))
                if tn < 1e-9:
                    tau = rng.normal(size=3)
                    tau -= np.dot(tau, descent) * descent
                    tn = float(np.linalg.norm(tau))
                tau /= tn
                if sigma > 0:
                    phi = float(np.clip(phi + rng.normal(0.0, sigma),
                                        -phi_max, phi_max))
                d = math.cos(phi) * descent + math.sin(phi) * tau
            q = tracker.step(p + params.step_length * d, dt).q
            handle.observe(q)
            handle.sample(k * dt)
            if gt(scene, ee_position(model, q)) <= params.low_threshold:
                reached_low = True
                break
        record = registry.finish(handle, model.joint_inertias(), model.name,
                                 scene.scene_id, model.joint_names())
        if reached_low:
            return record
    raise NoHighRegion(
        f"descent stalled in all {params.max_attempts} attempts (seed {seed})")


def _minmax(v: np.ndarray) -> np.ndarray:
    span = float(v.max() - v.min())
    if span < 1e-12:
        return np.zeros_like(v)
    return (v - v.min()) / span


def evaluate_mse(net, gt_or_name, model: RobotModel, scene: Scene,
                 n_samples: int, seed: int) -> float:
    """Mean squared difference between the learned and ground-truth fields,
    each min-max normalized over a uniform in-limit configuration sample."""
    gt = _resolve_gt(gt_or_name)
    rng = np.random.default_rng(seed)
    Q = random_configurations(model, n_samples, rng)
    X = encode_batch(model, scene, Q)
    learned = np.asarray(net.values(X), dtype=float)
    P = ee_positions_batch(model, Q)
    gtv = np.array([gt(scene, p) for p in P])
    if float(gtv.max() - gtv.min()) < 1e-12:
        raise DegenerateRange("ground truth constant over the evaluation sample")
    return float(np.mean((_minmax(learned) - _minmax(gtv)) ** 2))


@dataclass(frozen=True)
class ExperimentSpec:
    feature: str = "table"
    trace_pool_size: int = 20
    traces_per_trial: int = 10
    trials: int = 10
    eval_samples: int = 10000
    seed: int = 0
    traces_dir: Optional[str] = None  # use recorded traces instead of oracle
    oracle: OracleParams = field(default_factory=lambda: OracleParams(
        direction_noise_deg=40.0))
    train: Optional[TrainParams] = None  # None -> experiment_train_params

    def __post_init__(self):
        if self.feature not in GT_FEATURE_NAMES:
            raise ValueError(f"feature must be one of {GT_FEATURE_NAMES}")
        if self.traces_per_trial > self.trace_pool_size:
            raise ValueError("traces_per_trial cannot exceed trace_pool_size")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass(frozen=True)
class ExperimentResult:
    feature: str
    trial_mse: tuple
    baseline_mse: tuple
    mean: float
    std: float
    trial_seeds: tuple
    config_hash: str

    def to_json(self) -> dict:
        return {
            "feature": self.feature,
            "trial_mse": list(self.trial_mse),
            "baseline_mse": list(self.baseline_mse),
            "mean": self.mean,
            "std": self.std,
            "trial_seeds": list(self.trial_seeds),
            "config_hash": self.config_hash,
        }


def experiment_train_params(n_traces: int, seed: int) -> TrainParams:
    """Trainer settings calibrated for the bench experiments.

    Weights are count-normalized so gradient scale does not grow with trace
    count or sampled-pair count; adjacent-rank pairs keep values evenly
    spread along each trace; joint dimensions are de-emphasized in the input
    normalization since the bench features live in end-effector space.
    """
    pairs = 200
    return TrainParams(
        epochs=400,
        learning_rate=5e-3,
        seed=seed,
        anchor_weight=3.0 / (2.0 * n_traces),
        ranking_weight=1.0 / (n_traces * pairs),
        pairs_per_trace=pairs,
        pair_window=1,
        joint_scale=4.0,
    )


def _spec_hash(spec: ExperimentSpec) -> str:
    payload = {
        "feature": spec.feature,
        "trace_pool_size": spec.trace_pool_size,
        "traces_per_trial": spec.traces_per_trial,
        "trials": spec.trials,
        "eval_samples": spec.eval_samples,
        "seed": spec.seed,
        "traces_dir": spec.traces_dir,
        "oracle": vars(spec.oracle) if spec.traces_dir is None else None,
    }
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def load_trace_dir(path, traces_per_trial: int) -> list:
    """Load a recorded-trace pool (*.jsonl, sorted by name)."""
    import os

    files = sorted(f for f in os.listdir(path) if f.endswith(".jsonl"))
    if len(files) < traces_per_trial:
        raise InsufficientTraces(
            f"{path} holds {len(files)} traces, need {traces_per_trial}")
    return [capture.load_record(os.path.join(path, f)) for f in files]


def run_experiment(spec: ExperimentSpec, model: RobotModel, scene: Scene,
                   progress: Optional[Callable] = None) -> ExperimentResult:
    """Trial protocol: a fixed trace pool, then independent train/evaluate
    cycles on without-replacement subsamples. Fully deterministic per seed;
    recorded and oracle pools share every code path after pool construction.
    """
    gt = gt_feature(spec.feature)
    if spec.traces_dir is not None:
        pool = load_trace_dir(spec.traces_dir, spec.traces_per_trial)
    else:
        pool = [
            generate_oracle_trace(gt, model, scene,
                                  seed=spec.seed * 1000 + 1000 + i,
                                  params=spec.oracle)
            for i in range(spec.trace_pool_size)
        ]
    if progress:
        progress(f"pool ready: {len(pool)} traces")

    trial_mse = []
    baseline_mse = []
    trial_seeds = []
    for trial in range(spec.trials):
        trial_seed = spec.seed + trial
        rng = np.random.default_rng(9000 + trial_seed)
        idx = rng.choice(len(pool), spec.traces_per_trial, replace=False)
        traces = [pool[i] for i in idx]
        params = spec.train if spec.train is not None \
            else experiment_train_params(len(traces), trial_seed)
        if spec.train is not None:
            params = replace(params, seed=trial_seed)
        net = train_feature(traces, model, scene, params)
        eval_seed = 77 + trial_seed
        mse = evaluate_mse(net, gt, model, scene, spec.eval_samples, eval_seed)
        baseline = FeatureNetwork.initialize(encoding_dim(model),
                                             500 + trial_seed)
        base = evaluate_mse(baseline, gt, model, scene, spec.eval_samples,
                            eval_seed)
        trial_mse.append(mse)
        baseline_mse.append(base)
        trial_seeds.append(trial_seed)
        if progress:
            progress(f"trial {trial}: mse={mse:.5f} baseline={base:.5f}")

    arr = np.array(trial_mse)
    return ExperimentResult(
        feature=spec.feature,
        trial_mse=tuple(trial_mse),
        baseline_mse=tuple(baseline_mse),
        mean=float(arr.mean()),
        std=float(arr.std()),
        trial_seeds=tuple(trial_seeds),
        config_hash=_spec_hash(spec),
    )


def emit_feature_field(net_or_gt, model: RobotModel, scene: Scene,
                       grid_spec: dict, out_path,
                       seed_config=None) -> int:
    """CSV field export: rows `x,y,z,value` over an axis-aligned grid.

    Each grid point is IK-projected onto the reachable set; cells whose
    projection stays further than `reach_tolerance` (default 5 cm) are
    written with an empty value. Returns the number of reachable cells.
    """
    mins = np.asarray(grid_spec["min"], dtype=float)
    maxs = np.asarray(grid_spec["max"], dtype=float)
    counts = [int(c) for c in grid_spec["counts"]]
    reach_tol = float(grid_spec.get("reach_tolerance", 0.05))
    axes = [np.linspace(mins[k], maxs[k], counts[k]) if counts[k] > 1
            else np.array([mins[k]]) for k in range(3)]

    if seed_config is None:
        seed_config = UR5E_HOME if model.n_actuated == 6 \
            else np.zeros(model.n_actuated)
    seed_config = np.asarray(seed_config, dtype=float)

    is_net = hasattr(net_or_gt, "values")
    gt = None if is_net else _resolve_gt(net_or_gt)

    written = 0
    try:
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "z", "value"])
            q_seed = seed_config
            for x in axes[0]:
                for y in axes[1]:
                    for z in axes[2]:
                        target = np.array([x, y, z])
                        res = solve_ik(model, target, q_seed)
                        if res.residual > reach_tol:
                            writer.writerow([x, y, z, ""])
                            continue
                        q_seed = res.q  # warm start neighboring cells
                        if is_net:
                            s = encode_batch(model, scene, res.q[None, :])
                            value = float(net_or_gt.values(s)[0])
                        else:
                            value = gt(scene, ee_position(model, res.q))
                        writer.writerow([x, y, z, repr(value)])
                        written += 1
    except OSError as exc:
        raise IoError(f"cannot write {out_path}: {exc}") from exc
    return written
