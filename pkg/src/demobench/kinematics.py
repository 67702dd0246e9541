"""Forward kinematics, geometric Jacobian, and damped-least-squares IK.

All operations are pure functions of their inputs and safe to call
concurrently on a shared immutable RobotModel. TargetTracker holds the only
mutable state (the warm-start configuration) and belongs to one caller.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DimensionMismatch, NonFiniteTarget
from .model import CONTINUOUS, FIXED, PRISMATIC, REVOLUTE, RobotModel
from .transforms import (
    Transform,
    quat_from_axis_angle,
    quat_mul,
    quat_mul_batch,
    quat_rotate,
    quat_rotate_batch,
)

__all__ = [
    "IkParams",
    "IkResult",
    "forward_kinematics",
    "ee_position",
    "ee_positions_batch",
    "position_jacobian",
    "solve_ik",
    "TargetTracker",
    "track_target",
    "clamp_to_limits",
    "random_configurations",
]


@dataclass(frozen=True)
class IkParams:
    damping: float = 1e-2
    position_tolerance: float = 1e-4
    max_iterations: int = 200
    step_scale: float = 1.0

    def __post_init__(self):
        if self.damping <= 0:
            raise ValueError("damping must be > 0")
        if self.position_tolerance <= 0:
            raise ValueError("position_tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (0.0 < self.step_scale <= 1.0):
            raise ValueError("step_scale must be in (0, 1]")


class IkResult(NamedTuple):
    q: np.ndarray
    converged: bool
    iterations: int
    residual: float


def _check_q(model: RobotModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n_actuated,):
        raise DimensionMismatch(
            f"configuration has shape {q.shape}, expected ({model.n_actuated},)")
    return q


def _joint_motion(joint, value: float) -> Transform:
    if joint.kind in (REVOLUTE, CONTINUOUS):
        return Transform(quat_from_axis_angle(joint.axis, value), np.zeros(3))
    if joint.kind == PRISMATIC:
        return Transform(np.array([1.0, 0.0, 0.0, 0.0]), joint.axis * value)
    return Transform.identity()


def forward_kinematics(model: RobotModel, q) -> tuple:
    """Pose of every link plus the end-effector pose.

    Returns (poses, ee_pose) where poses is a list of Transforms aligned with
    model.links. Joints off the root-to-ee chain are held at zero.
    """
    q = _check_q(model, q)
    value_by_joint = {idx: q[k] for k, idx in enumerate(model.actuated)}

    poses: list = [None] * len(model.links)
    poses[model.root_link] = Transform.identity()

    # Walk joints in tree order; parent pose is always ready because the
    # parser guarantees a single-rooted tree in document order reachable sets.
    pending = list(range(len(model.joints)))
    while pending:
        progressed = False
        rest = []
        for idx in pending:
            joint = model.joints[idx]
            p_idx = model.link_index(joint.parent_link)
            if poses[p_idx] is None:
                rest.append(idx)
                continue
            value = value_by_joint.get(idx, 0.0)
            child_pose = poses[p_idx].compose(joint.origin).compose(
                _joint_motion(joint, value))
            poses[model.link_index(joint.child_link)] = child_pose
            progressed = True
        if not progressed:
            break
        pending = rest

    ee_pose = poses[model.ee_link]
    return poses, ee_pose


_KIND_FIXED, _KIND_REVOLUTE, _KIND_PRISMATIC = 0, 1, 2
_CHAIN_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _compiled_chain(model: RobotModel) -> list:
    """Chain joints flattened to plain tuples for the scalar FK walk."""
    steps = _CHAIN_CACHE.get(model)
    if steps is None:
        col_by_joint = {idx: k for k, idx in enumerate(model.actuated)}
        steps = []
        for idx in model.chain:
            j = model.joints[idx]
            if j.kind == FIXED:
                kind, axis, col = _KIND_FIXED, None, -1
            elif j.kind == PRISMATIC:
                kind, axis, col = _KIND_PRISMATIC, tuple(j.axis), col_by_joint[idx]
            else:
                kind, axis, col = _KIND_REVOLUTE, tuple(j.axis), col_by_joint[idx]
            steps.append((kind, tuple(j.origin.rotation),
                          tuple(j.origin.translation), axis, col))
        _CHAIN_CACHE[model] = steps
    return steps


def _chain_state(model: RobotModel, q: np.ndarray):
    """Fast walk of the root-to-ee chain.

    Returns (p_ee, joint_positions, joint_axes) where the latter two are
    (n, 3) arrays for the actuated joints in world frame. Scalar quaternion
    math; this is the hot path for IK.
    """
    n = model.n_actuated
    jpos = np.zeros((n, 3))
    jaxis = np.zeros((n, 3))
    rw, rx, ry, rz = 1.0, 0.0, 0.0, 0.0
    px, py, pz = 0.0, 0.0, 0.0
    for kind, (ow, ox, oy, oz), (tx, ty, tz), axis, col in _compiled_chain(model):
        if tx or ty or tz:
            # p += R * t, via v + 2 u x (u x v + w v)
            c1x = ry * tz - rz * ty + rw * tx
            c1y = rz * tx - rx * tz + rw * ty
            c1z = rx * ty - ry * tx + rw * tz
            px += tx + 2.0 * (ry * c1z - rz * c1y)
            py += ty + 2.0 * (rz * c1x - rx * c1z)
            pz += tz + 2.0 * (rx * c1y - ry * c1x)
        rw, rx, ry, rz = (
            rw * ow - rx * ox - ry * oy - rz * oz,
            rw * ox + rx * ow + ry * oz - rz * oy,
            rw * oy - rx * oz + ry * ow + rz * ox,
            rw * oz + rx * oy - ry * ox + rz * ow,
        )
        if kind == _KIND_FIXED:
            continue
        ax, ay, az = axis
        c1x = ry * az - rz * ay + rw * ax
        c1y = rz * ax - rx * az + rw * ay
        c1z = rx * ay - ry * ax + rw * az
        wx = ax + 2.0 * (ry * c1z - rz * c1y)
        wy = ay + 2.0 * (rz * c1x - rx * c1z)
        wz = az + 2.0 * (rx * c1y - ry * c1x)
        jpos[col, 0] = px
        jpos[col, 1] = py
        jpos[col, 2] = pz
        jaxis[col, 0] = wx
        jaxis[col, 1] = wy
        jaxis[col, 2] = wz
        value = q[col]
        if kind == _KIND_PRISMATIC:
            px += wx * value
            py += wy * value
            pz += wz * value
        else:
            half = 0.5 * value
            c = math.cos(half)
            s = math.sin(half)
            mx, my, mz = ax * s, ay * s, az * s
            rw, rx, ry, rz = (
                rw * c - rx * mx - ry * my - rz * mz,
                rw * mx + rx * c + ry * mz - rz * my,
                rw * my - rx * mz + ry * c + rz * mx,
                rw * mz + rx * my - ry * mx + rz * c,
            )
    return np.array([px, py, pz]), jpos, jaxis


def ee_position(model: RobotModel, q) -> np.ndarray:
    q = _check_q(model, q)
    return _chain_state(model, q)[0]


def ee_positions_batch(model: RobotModel, Q: np.ndarray) -> np.ndarray:
    """End-effector positions for (N, n) configurations, vectorized over N."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != model.n_actuated:
        raise DimensionMismatch(
            f"batch has shape {Q.shape}, expected (N, {model.n_actuated})")
    n = Q.shape[0]
    rot = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))
    pos = np.zeros((n, 3))
    col_by_joint = {idx: k for k, idx in enumerate(model.actuated)}
    for idx in model.chain:
        joint = model.joints[idx]
        # origin translation rotates by the parent orientation, so translate
        # before composing the origin rotation.
        pos = pos + quat_rotate_batch(rot, np.broadcast_to(
            joint.origin.translation, (n, 3)))
        rot = quat_mul_batch(rot, np.broadcast_to(joint.origin.rotation, (n, 4)))
        if joint.kind == FIXED:
            continue
        values = Q[:, col_by_joint[idx]]
        if joint.kind == PRISMATIC:
            pos = pos + quat_rotate_batch(rot, np.outer(values, joint.axis))
        else:
            half = 0.5 * values
            motion = np.zeros((n, 4))
            motion[:, 0] = np.cos(half)
            motion[:, 1:] = np.sin(half)[:, None] * joint.axis[None, :]
            rot = quat_mul_batch(rot, motion)
    return pos


def position_jacobian(model: RobotModel, q) -> np.ndarray:
    """3 x n geometric Jacobian of the ee position w.r.t. actuated joints."""
    q = _check_q(model, q)
    p_ee, jpos, jaxis = _chain_state(model, q)
    J = np.empty((3, model.n_actuated))
    for col, idx in enumerate(model.actuated):
        if model.joints[idx].kind == PRISMATIC:
            J[:, col] = jaxis[col]
        else:
            J[:, col] = np.cross(jaxis[col], p_ee - jpos[col])
    return J


def clamp_to_limits(model: RobotModel, q: np.ndarray) -> np.ndarray:
    lo, hi = model.limits_arrays()
    return np.clip(q, lo, hi)


def solve_ik(model: RobotModel, target, seed, params: IkParams = IkParams()) -> IkResult:
    """Damped least squares toward a position-only target.

    Each iteration applies dq = J^T (J J^T + damping^2 I)^-1 e and clamps the
    result to the joint limits. Joints pinned at a limit and pushing further
    out are frozen and the step re-solved over the free joints, so descent
    continues along the feasible face. A step that would grow the residual is
    halved (backtracking); the residual is therefore non-increasing.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != (3,):
        raise DimensionMismatch(f"target has shape {target.shape}, expected (3,)")
    if not np.all(np.isfinite(target)):
        raise NonFiniteTarget(f"target {target} is not finite")
    q = clamp_to_limits(model, _check_q(model, seed).copy())
    lo, hi = model.limits_arrays()
    n = model.n_actuated

    lam2 = params.damping * params.damping
    eye3 = np.eye(3)
    err = target - ee_position(model, q)
    residual = float(np.linalg.norm(err))

    iterations = 0
    for _ in range(params.max_iterations):
        if residual <= params.position_tolerance:
            break
        J = position_jacobian(model, q)
        free = np.ones(n, dtype=bool)
        dq = np.zeros(n)
        for _ in range(n):
            Jf = J[:, free]
            dq_f = params.step_scale * (
                Jf.T @ np.linalg.solve(Jf @ Jf.T + lam2 * eye3, err))
            dq = np.zeros(n)
            dq[free] = dq_f
            outward = ((q <= lo + 1e-12) & (dq < 0)) | ((q >= hi - 1e-12) & (dq > 0))
            if not outward.any():
                break
            free &= ~outward
            if not free.any():
                break

        accepted = False
        for _ in range(16):
            q_try = np.clip(q + dq, lo, hi)
            err_try = target - ee_position(model, q_try)
            res_try = float(np.linalg.norm(err_try))
            if res_try < residual:
                q, err, residual = q_try, err_try, res_try
                accepted = True
                break
            dq *= 0.5
        iterations += 1
        if not accepted:
            break

    return IkResult(q, residual <= params.position_tolerance, iterations, residual)


class TargetTracker:
    """Streaming IK: every target solve warm-starts from the previous output.

    Owned by a single caller; per-step joint motion is clamped to the joint
    velocity limits times the elapsed time when the model declares them.
    """

    def __init__(self, model: RobotModel, state, params: IkParams = IkParams(),
                 dt: float = 1.0 / 60.0):
        self.model = model
        self.params = params
        self.dt = float(dt)
        self.q = clamp_to_limits(model, _check_q(model, state).copy())

    def step(self, target, dt: Optional[float] = None) -> IkResult:
        dt = self.dt if dt is None else float(dt)
        res = solve_ik(self.model, target, self.q, self.params)
        q_new = res.q
        vel = self.model.velocity_limits()
        if np.any(np.isfinite(vel)):
            max_step = np.where(np.isfinite(vel), vel * dt, np.inf)
            q_new = self.q + np.clip(q_new - self.q, -max_step, max_step)
        self.q = q_new
        residual = float(np.linalg.norm(
            np.asarray(target, dtype=float) - ee_position(self.model, q_new)))
        return IkResult(q_new, residual <= self.params.position_tolerance,
                        res.iterations, residual)


def track_target(model: RobotModel, targets, state,
                 params: IkParams = IkParams(), dt: float = 1.0 / 60.0):
    """Generator over configurations tracking a stream of targets."""
    tracker = TargetTracker(model, state, params, dt)
    for target in targets:
        yield tracker.step(target).q


def random_configurations(model: RobotModel, count: int, rng) -> np.ndarray:
    """Uniform in-limit samples, (count, n). Continuous joints span (-pi, pi]."""
    lo, hi = model.limits_arrays()
    return rng.uniform(lo, hi, size=(count, model.n_actuated))
