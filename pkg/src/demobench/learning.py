"""Feature learning from traces, reward composition, confidence scoring, and
reward-optimal trajectory planning.

A feature network is a 2x64 MLP (softplus hidden, logistic output) over a
state encoding of joint angles, end-effector position, offsets to the scene
anchor points, and height above the table. Traces supervise it with endpoint
anchors (start high, end low) plus a pairwise logistic ranking loss that
enforces monotone descent along each trace. All training is plain batch
gradient descent with momentum so runs are bit-reproducible for a fixed seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .capture import DemonstrationRecord, Trajectory, TrajectoryQuery
from .errors import (
    DimensionMismatch,
    EmptyTraces,
    InconsistentDimensions,
    InvalidQuery,
    MissingTorques,
    NoDemos,
)
from .kinematics import ee_position, ee_positions_batch, position_jacobian
from .model import RobotModel
from .scene import Scene

__all__ = [
    "TrainParams",
    "PlanParams",
    "IrlParams",
    "FeatureNetwork",
    "AnalyticFeature",
    "RewardModel",
    "encoding_dim",
    "encode_state",
    "encode_batch",
    "encoding_jacobian",
    "train_feature",
    "train_regression",
    "feature_value",
    "confidence",
    "needs_new_feature",
    "update_reward",
    "plan_trajectory",
    "analytic_feature",
]

HIDDEN = 64


# --- state encoding ----------------------------------------------------------

def encoding_dim(model: RobotModel) -> int:
    """Joint angles + ee position + laptop/human offsets + table height."""
    return model.n_actuated + 3 + 3 + 3 + 1


def encode_state(model: RobotModel, scene: Scene, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n_actuated,):
        raise DimensionMismatch(
            f"configuration has shape {q.shape}, expected ({model.n_actuated},)")
    ee = ee_position(model, q)
    return np.concatenate([
        q,
        ee,
        ee - scene.laptop_center,
        ee - scene.human_position,
        [ee[2] - scene.table_top_height],
    ])


def encode_batch(model: RobotModel, scene: Scene, Q) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    ee = ee_positions_batch(model, Q)
    return np.hstack([
        Q,
        ee,
        ee - scene.laptop_center[None, :],
        ee - scene.human_position[None, :],
        (ee[:, 2] - scene.table_top_height)[:, None],
    ])


def encoding_jacobian(model: RobotModel, scene: Scene, q) -> np.ndarray:
    """d(encoding)/dq, shape (encoding_dim, n_actuated)."""
    n = model.n_actuated
    J = position_jacobian(model, q)
    out = np.zeros((encoding_dim(model), n))
    out[:n] = np.eye(n)
    out[n:n + 3] = J
    out[n + 3:n + 6] = J
    out[n + 6:n + 9] = J
    out[n + 9] = J[2]
    return out


# --- feature network ---------------------------------------------------------

def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class FeatureNetwork:
    """input -> 64 -> 64 -> 1 MLP; softplus hidden, logistic output in (0,1).

    Normalization constants are baked in at training time so the stored
    network is self-contained.
    """

    def __init__(self, W1, b1, W2, b2, w3, b3, mean, scale):
        self.W1 = np.asarray(W1, dtype=float)
        self.b1 = np.asarray(b1, dtype=float)
        self.W2 = np.asarray(W2, dtype=float)
        self.b2 = np.asarray(b2, dtype=float)
        self.w3 = np.asarray(w3, dtype=float)
        self.b3 = float(b3)
        self.mean = np.asarray(mean, dtype=float)
        self.scale = np.asarray(scale, dtype=float)

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @staticmethod
    def initialize(dim: int, seed: int, mean=None, scale=None) -> "FeatureNetwork":
        rng = np.random.default_rng(seed)
        def glorot(n_in, n_out):
            bound = math.sqrt(6.0 / (n_in + n_out))
            return rng.uniform(-bound, bound, size=(n_in, n_out))
        return FeatureNetwork(
            W1=glorot(dim, HIDDEN),
            b1=np.zeros(HIDDEN),
            W2=glorot(HIDDEN, HIDDEN),
            b2=np.zeros(HIDDEN),
            w3=glorot(HIDDEN, 1)[:, 0],
            b3=0.0,
            mean=np.zeros(dim) if mean is None else mean,
            scale=np.ones(dim) if scale is None else scale,
        )

    def _forward(self, X: np.ndarray):
        Xn = (X - self.mean) / self.scale
        Z1 = Xn @ self.W1 + self.b1
        H1 = _softplus(Z1)
        Z2 = H1 @ self.W2 + self.b2
        H2 = _softplus(Z2)
        z3 = H2 @ self.w3 + self.b3
        return Xn, Z1, H1, Z2, H2, _sigmoid(z3)

    def values(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise DimensionMismatch(
                f"encoding dim {X.shape[1]} != network input {self.input_dim}")
        return self._forward(X)[-1]

    def value(self, s) -> float:
        return float(self.values(np.asarray(s, dtype=float)[None, :])[0])

    def input_gradient(self, s) -> np.ndarray:
        """d value / d encoding at a single state."""
        s = np.asarray(s, dtype=float)
        Xn, Z1, H1, Z2, H2, y = self._forward(s[None, :])
        dy = y * (1.0 - y)  # (1,)
        dH2 = dy[:, None] * self.w3[None, :]
        dZ2 = dH2 * _sigmoid(Z2)
        dH1 = dZ2 @ self.W2.T
        dZ1 = dH1 * _sigmoid(Z1)
        dXn = dZ1 @ self.W1.T
        return (dXn / self.scale)[0]

    # parameter-vector view used by the trainer and gradient checks
    def get_params(self) -> np.ndarray:
        return np.concatenate([
            self.W1.ravel(), self.b1, self.W2.ravel(), self.b2,
            self.w3, [self.b3]])

    def set_params(self, vec: np.ndarray) -> None:
        d = self.input_dim
        i = 0
        self.W1 = vec[i:i + d * HIDDEN].reshape(d, HIDDEN).copy(); i += d * HIDDEN
        self.b1 = vec[i:i + HIDDEN].copy(); i += HIDDEN
        self.W2 = vec[i:i + HIDDEN * HIDDEN].reshape(HIDDEN, HIDDEN).copy(); i += HIDDEN * HIDDEN
        self.b2 = vec[i:i + HIDDEN].copy(); i += HIDDEN
        self.w3 = vec[i:i + HIDDEN].copy(); i += HIDDEN
        self.b3 = float(vec[i])

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "hidden": HIDDEN,
            "input_dim": self.input_dim,
            "weights": {
                "W1": self.W1.ravel().tolist(),
                "b1": self.b1.tolist(),
                "W2": self.W2.ravel().tolist(),
                "b2": self.b2.tolist(),
                "w3": self.w3.tolist(),
                "b3": self.b3,
            },
            "normalization": {
                "mean": self.mean.tolist(),
                "scale": self.scale.tolist(),
            },
        }

    @staticmethod
    def from_json(obj: dict) -> "FeatureNetwork":
        d = obj["input_dim"]
        w = obj["weights"]
        norm = obj["normalization"]
        return FeatureNetwork(
            W1=np.array(w["W1"], dtype=float).reshape(d, HIDDEN),
            b1=np.array(w["b1"], dtype=float),
            W2=np.array(w["W2"], dtype=float).reshape(HIDDEN, HIDDEN),
            b2=np.array(w["b2"], dtype=float),
            w3=np.array(w["w3"], dtype=float),
            b3=w["b3"],
            mean=np.array(norm["mean"], dtype=float),
            scale=np.array(norm["scale"], dtype=float),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @staticmethod
    def load(path) -> "FeatureNetwork":
        with open(path, "r", encoding="utf-8") as fh:
            return FeatureNetwork.from_json(json.load(fh))


def feature_value(net: FeatureNetwork, s) -> float:
    return net.value(s)


# --- analytic features over encodings ---------------------------------------

class AnalyticFeature:
    """Closed-form feature on the state encoding, with a subgradient."""

    def __init__(self, name: str, value_fn: Callable, grad_fn: Callable):
        self.name = name
        self._value = value_fn
        self._grad = grad_fn

    def value(self, s) -> float:
        return float(self._value(np.asarray(s, dtype=float)))

    def values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self._value(row) for row in X])

    def input_gradient(self, s) -> np.ndarray:
        return self._grad(np.asarray(s, dtype=float))


def analytic_feature(name: str, model: RobotModel, scene: Scene) -> AnalyticFeature:
    """Ground-truth feature re-expressed over the state encoding.

    Exactly matches the scene's gt_* functions composed with forward
    kinematics (the encoding already carries the needed offsets).
    """
    n = model.n_actuated
    dim = encoding_dim(model)

    if name == "table":
        z_range = scene.constants.table_z_range

        def value(s):
            return float(np.clip(s[-1] / z_range, 0.0, 1.0))

        def grad(s):
            g = np.zeros(dim)
            if 0.0 < s[-1] / z_range < 1.0:
                g[-1] = 1.0 / z_range
            return g

    elif name == "laptop":
        r_cut = scene.constants.laptop_radius
        sl = slice(n + 3, n + 5)

        def value(s):
            d = float(np.hypot(*s[sl]))
            return max(0.0, 1.0 - d / r_cut)

        def grad(s):
            g = np.zeros(dim)
            d = float(np.hypot(*s[sl]))
            if 0.0 < d < r_cut:
                g[sl] = -s[sl] / (d * r_cut)
            return g

    elif name == "proxemics":
        a, b = scene.constants.proxemics_axes
        sl = slice(n + 6, n + 8)

        def value(s):
            d = math.hypot(s[sl][0] / a, s[sl][1] / b)
            return max(0.0, 1.0 - d)

        def grad(s):
            g = np.zeros(dim)
            dx, dy = s[sl]
            d = math.hypot(dx / a, dy / b)
            if 0.0 < d < 1.0:
                g[sl] = np.array([-dx / a ** 2, -dy / b ** 2]) / d
            return g

    else:
        raise KeyError(f"unknown analytic feature {name!r}")

    return AnalyticFeature(name, value, grad)


# --- trace training ----------------------------------------------------------

@dataclass(frozen=True)
class TrainParams:
    epochs: int = 1000
    learning_rate: float = 1e-3
    seed: int = 0
    anchor_weight: float = 1.0
    ranking_weight: float = 1.0
    momentum: float = 0.9
    pairs_per_trace: int = 200
    # Rank separation of sampled pairs: j - i is uniform in [1, pair_window].
    # Short-range pairs calibrate evenly spaced values along a trace; 0 means
    # unbounded (any i < j).
    pair_window: int = 0
    # Multiplier on the joint-angle dimensions of the input normalization
    # scale; > 1 de-emphasizes raw joint angles relative to workspace dims.
    joint_scale: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.joint_scale <= 0:
            raise ValueError("joint_scale must be > 0")


@dataclass(frozen=True)
class TraceDataset:
    """Encoded trace states with anchor and ranking index sets."""

    X: np.ndarray  # (N, D) encodings, all traces concatenated
    first_idx: np.ndarray  # per trace
    last_idx: np.ndarray
    pair_i: np.ndarray  # earlier point of each sampled pair
    pair_j: np.ndarray  # later point


def build_trace_dataset(traces: Sequence[DemonstrationRecord], model: RobotModel,
                        scene: Scene, params: TrainParams) -> TraceDataset:
    if not traces:
        raise EmptyTraces("no feature traces given")
    n = model.n_actuated
    blocks = []
    first_idx, last_idx = [], []
    pair_i, pair_j = [], []
    rng = np.random.default_rng(params.seed)
    offset = 0
    for trace in traces:
        qs = trace.trajectory.qs
        if qs.shape[1] != n:
            raise InconsistentDimensions(
                f"trace has {qs.shape[1]} joints, model has {n}")
        m = len(qs)
        blocks.append(encode_batch(model, scene, qs))
        first_idx.append(offset)
        last_idx.append(offset + m - 1)
        if m == 2:
            ii, jj = np.array([0]), np.array([1])
        elif params.pair_window > 0:
            ii = rng.integers(0, m - 1, size=params.pairs_per_trace)
            gap = rng.integers(1, params.pair_window + 1,
                               size=params.pairs_per_trace)
            jj = np.minimum(ii + gap, m - 1)
        else:
            draw = rng.integers(0, m, size=(params.pairs_per_trace * 2, 2))
            draw = draw[draw[:, 0] != draw[:, 1]][:params.pairs_per_trace]
            ii = draw.min(axis=1)
            jj = draw.max(axis=1)
        pair_i.extend(ii + offset)
        pair_j.extend(jj + offset)
        offset += m
    return TraceDataset(
        X=np.vstack(blocks),
        first_idx=np.array(first_idx),
        last_idx=np.array(last_idx),
        pair_i=np.array(pair_i),
        pair_j=np.array(pair_j),
    )


def trace_loss_and_grad(net: FeatureNetwork, data: TraceDataset,
                        params: TrainParams):
    """Anchor + ranking loss and its gradient w.r.t. the parameter vector.

    L = a_w * sum_traces [(f(first) - 1)^2 + f(last)^2]
      + r_w * sum_pairs log(1 + exp(-(f(i) - f(j))))   for i earlier than j.
    """
    Xn, Z1, H1, Z2, H2, y = net._forward(data.X)

    yf = y[data.first_idx]
    yl = y[data.last_idx]
    anchor = float(np.sum((yf - 1.0) ** 2) + np.sum(yl ** 2))

    delta = y[data.pair_i] - y[data.pair_j]
    ranking = float(np.sum(np.logaddexp(0.0, -delta)))

    loss = params.anchor_weight * anchor + params.ranking_weight * ranking

    dy = np.zeros_like(y)
    np.add.at(dy, data.first_idx, 2.0 * params.anchor_weight * (yf - 1.0))
    np.add.at(dy, data.last_idx, 2.0 * params.anchor_weight * yl)
    s = _sigmoid(-delta) * params.ranking_weight
    np.add.at(dy, data.pair_i, -s)
    np.add.at(dy, data.pair_j, s)

    dz3 = dy * y * (1.0 - y)
    dw3 = H2.T @ dz3
    db3 = float(dz3.sum())
    dH2 = np.outer(dz3, net.w3)
    dZ2 = dH2 * _sigmoid(Z2)
    dW2 = H1.T @ dZ2
    db2 = dZ2.sum(axis=0)
    dH1 = dZ2 @ net.W2.T
    dZ1 = dH1 * _sigmoid(Z1)
    dW1 = Xn.T @ dZ1
    db1 = dZ1.sum(axis=0)

    grad = np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2, dw3, [db3]])
    return loss, grad


def _gd_momentum(net: FeatureNetwork, loss_grad_fn, epochs: int, lr: float,
                 momentum: float) -> None:
    vec = net.get_params()
    velocity = np.zeros_like(vec)
    for _ in range(epochs):
        _, grad = loss_grad_fn(net)
        velocity = momentum * velocity - lr * grad
        vec = vec + velocity
        net.set_params(vec)


def train_feature(traces: Sequence[DemonstrationRecord], model: RobotModel,
                  scene: Scene, params: TrainParams = TrainParams()) -> FeatureNetwork:
    """Fit a feature network to feature traces (start high, end low)."""
    data = build_trace_dataset(traces, model, scene, params)
    mean = data.X.mean(axis=0)
    scale = np.maximum(data.X.std(axis=0), 1e-8)
    scale[:model.n_actuated] *= params.joint_scale
    net = FeatureNetwork.initialize(data.X.shape[1], params.seed, mean, scale)
    _gd_momentum(net, lambda n: trace_loss_and_grad(n, data, params),
                 params.epochs, params.learning_rate, params.momentum)
    return net


def train_regression(X: np.ndarray, targets: np.ndarray,
                     params: TrainParams = TrainParams()) -> FeatureNetwork:
    """Direct mean-squared regression of target values in [0, 1].

    Utility for distillation sanity checks and baselines; shares the
    network, normalization, and optimizer with trace training.
    """
    X = np.asarray(X, dtype=float)
    targets = np.asarray(targets, dtype=float)
    mean = X.mean(axis=0)
    scale = np.maximum(X.std(axis=0), 1e-8)
    net = FeatureNetwork.initialize(X.shape[1], params.seed, mean, scale)

    def loss_grad(n: FeatureNetwork):
        Xn, Z1, H1, Z2, H2, y = n._forward(X)
        err = y - targets
        loss = float(np.mean(err ** 2))
        dy = 2.0 * err / len(err)
        dz3 = dy * y * (1.0 - y)
        dw3 = H2.T @ dz3
        db3 = float(dz3.sum())
        dH2 = np.outer(dz3, n.w3)
        dZ2 = dH2 * _sigmoid(Z2)
        dW2 = H1.T @ dZ2
        db2 = dZ2.sum(axis=0)
        dH1 = dZ2 @ n.W2.T
        dZ1 = dH1 * _sigmoid(Z1)
        dW1 = Xn.T @ dZ1
        db1 = dZ1.sum(axis=0)
        grad = np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2, dw3, [db3]])
        return loss, grad

    _gd_momentum(net, loss_grad, params.epochs, params.learning_rate,
                 params.momentum)
    return net


# --- reward model ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RewardModel:
    """Weighted sum of features evaluated on state encodings."""

    features: tuple  # FeatureNetwork or AnalyticFeature instances
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "features", tuple(self.features))
        if len(self.features) != len(w):
            raise DimensionMismatch("feature and weight counts differ")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")

    def feature_matrix(self, X: np.ndarray) -> np.ndarray:
        """(N, F) matrix of feature values."""
        X = np.atleast_2d(X)
        if not self.features:
            return np.zeros((len(X), 0))
        return np.column_stack([f.values(X) for f in self.features])

    def reward_values(self, X: np.ndarray) -> np.ndarray:
        return self.feature_matrix(X) @ self.weights

    def reward(self, s) -> float:
        return float(self.reward_values(np.atleast_2d(s))[0])

    def encoding_gradient(self, s) -> np.ndarray:
        g = np.zeros(len(np.asarray(s, dtype=float)))
        for w, f in zip(self.weights, self.features):
            if w != 0.0:
                g = g + w * f.input_gradient(s)
        return g

    def config_gradient(self, model: RobotModel, scene: Scene, q) -> np.ndarray:
        """d reward / d q via the encoding chain rule."""
        s = encode_state(model, scene, q)
        return encoding_jacobian(model, scene, q).T @ self.encoding_gradient(s)


def confidence(reward: RewardModel, correction: DemonstrationRecord,
               model: RobotModel, scene: Scene,
               torque_floor: float = 1e-3) -> float:
    """Alignment between applied torques and the reward gradient.

    (1 + mean cos(theta)) / 2 over waypoints whose torque norm exceeds the
    noise floor; 0.5 (uninformative) when none does.
    """
    if correction.demo_type != "correction":
        raise ValueError("confidence expects a correction demonstration")
    if correction.torques is None or correction.torques.size == 0:
        raise MissingTorques("correction has no torque annotations")
    cosines = []
    for q, tau in zip(correction.trajectory.qs, correction.torques):
        tau_norm = float(np.linalg.norm(tau))
        if tau_norm <= torque_floor:
            continue
        g = reward.config_gradient(model, scene, q)
        g_norm = float(np.linalg.norm(g))
        if g_norm == 0.0:
            cosines.append(0.0)
            continue
        cosines.append(float(np.dot(tau, g)) / (tau_norm * g_norm))
    if not cosines:
        return 0.5
    return (1.0 + float(np.mean(cosines))) / 2.0


def needs_new_feature(conf: float, threshold: float = 0.6) -> bool:
    """FERL-style trigger: expand the feature set when confidence is low."""
    return conf < threshold


# --- maximum-entropy weight update -------------------------------------------

@dataclass(frozen=True)
class PlanParams:
    n_waypoints: int = 21
    iterations: int = 200
    step: float = 1e-2
    smoothness_weight: float = 0.1


@dataclass(frozen=True)
class IrlParams:
    iterations: int = 10
    learning_rate: float = 0.5
    n_policy_samples: int = 16
    policy_noise: float = 0.1  # rad, std of waypoint perturbations
    temperature: float = 1.0
    weight_cap: float = 10.0  # L1 budget for the weight vector
    seed: int = 0
    plan: PlanParams = field(default_factory=lambda: PlanParams(iterations=60))


def _mean_features(reward: RewardModel, model: RobotModel, scene: Scene,
                   Q: np.ndarray) -> np.ndarray:
    X = encode_batch(model, scene, Q)
    return reward.feature_matrix(X).mean(axis=0)


def update_reward(reward: RewardModel, demos: Sequence[DemonstrationRecord],
                  model: RobotModel, scene: Scene,
                  params: IrlParams = IrlParams()) -> RewardModel:
    """Max-ent IRL weight refit: w <- w + lr * (E_demo[phi] - E_policy[phi]).

    E_policy is estimated over trajectories perturbed around the planner
    output and weighted by a Boltzmann distribution on trajectory reward.
    The updated weights are scaled back onto the L1 ball of radius
    weight_cap. Features themselves are left untouched.
    """
    if not demos:
        raise NoDemos("update_reward needs at least one demonstration")
    rng = np.random.default_rng(params.seed)
    w = reward.weights.copy()

    demo_phi = np.mean([
        _mean_features(reward, model, scene, d.trajectory.qs) for d in demos
    ], axis=0)
    queries = [TrajectoryQuery(d.trajectory.qs[0], d.trajectory.qs[-1])
               for d in demos]

    for _ in range(params.iterations):
        current = RewardModel(reward.features, w)
        policy_phi = np.zeros_like(w)
        for query in queries:
            base = plan_trajectory(model, scene, current, query, params.plan)
            n_wp, n_j = base.qs.shape
            phis = []
            rewards = []
            for _ in range(params.n_policy_samples):
                Q = base.qs.copy()
                Q[1:-1] += rng.normal(0.0, params.policy_noise,
                                      size=(n_wp - 2, n_j))
                X = encode_batch(model, scene, Q)
                phi = current.feature_matrix(X).mean(axis=0)
                phis.append(phi)
                rewards.append(float(phi @ w))
            rewards = np.asarray(rewards) / params.temperature
            weights = np.exp(rewards - rewards.max())
            weights /= weights.sum()
            policy_phi += weights @ np.vstack(phis)
        policy_phi /= len(queries)

        w = w + params.learning_rate * (demo_phi - policy_phi)
        l1 = float(np.abs(w).sum())
        if l1 > params.weight_cap:
            w *= params.weight_cap / l1

    return RewardModel(reward.features, w)


# --- trajectory planning -----------------------------------------------------

def plan_trajectory(model: RobotModel, scene: Scene, reward: RewardModel,
                    query: TrajectoryQuery, params: PlanParams = PlanParams(),
                    iterate_log: Optional[list] = None) -> Trajectory:
    """Gradient descent on -reward plus squared-difference smoothness.

    Waypoints start as the straight-line interpolation; endpoints stay fixed;
    a step that would raise the cost is halved (backtracking), so the cost is
    non-increasing across accepted iterations.
    """
    lo, hi = model.limits_arrays()
    q_s = np.asarray(query.q_start, dtype=float)
    q_g = np.asarray(query.q_goal, dtype=float)
    for name, q in (("start", q_s), ("goal", q_g)):
        if q.shape != (model.n_actuated,):
            raise InvalidQuery(f"{name} configuration has wrong length")
        if np.any(q < lo - 1e-12) or np.any(q > hi + 1e-12):
            raise InvalidQuery(f"{name} configuration outside joint limits")

    n_wp = params.n_waypoints
    Q = np.linspace(q_s, q_g, n_wp)
    mu = params.smoothness_weight

    def cost(Qm: np.ndarray) -> float:
        X = encode_batch(model, scene, Qm)
        r = float(reward.reward_values(X).sum())
        smooth = float(np.sum((Qm[1:] - Qm[:-1]) ** 2))
        return -r + mu * smooth

    def gradient(Qm: np.ndarray) -> np.ndarray:
        G = np.zeros_like(Qm)
        for k in range(1, n_wp - 1):
            G[k] = -reward.config_gradient(model, scene, Qm[k]) \
                + 2.0 * mu * (2.0 * Qm[k] - Qm[k - 1] - Qm[k + 1])
        return G

    if iterate_log is not None:
        iterate_log.append(Q.copy())
    c = cost(Q)
    alpha = params.step
    for _ in range(params.iterations):
        G = gradient(Q)
        if float(np.abs(G).max(initial=0.0)) < 1e-12:
            break
        accepted = False
        for _ in range(30):
            Q_try = Q.copy()
            Q_try[1:-1] = np.clip(Q[1:-1] - alpha * G[1:-1], lo, hi)
            c_try = cost(Q_try)
            if c_try <= c:
                Q, c = Q_try, c_try
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        if iterate_log is not None:
            iterate_log.append(Q.copy())

    return Trajectory(Q, np.linspace(0.0, 1.0, n_wp))
