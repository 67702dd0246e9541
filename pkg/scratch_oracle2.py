"""Second-generation oracle for calibration experiments (scratch)."""
import numpy as np

from demobench import capture as C
from demobench import kinematics as K
import demobench.learning as LL
from demobench import learning as L


def gt_grad_ee(scene, gt, p, h=1e-4):
    g = np.zeros(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[k] = (gt(scene, p + e, raw=True) - gt(scene, p - e, raw=True)) / (2 * h)
    return g


def oracle3(gt, mdl, scene, seed, sigma_deg=10.0, step_len=0.03, dt=0.05,
            max_steps=200, hi_cap=0.97, overshoot=0.0, angle_sector=None,
            anchor_xy=None):
    """Descend the raw feature field; optional overshoot below the low
    threshold and angular sector constraint on the start position."""
    rng = np.random.default_rng(seed)
    lo, hi = mdl.limits_arrays()
    lo_s = np.maximum(lo, -np.pi)
    hi_s = np.minimum(hi, np.pi)
    for attempt in range(30):
        start = None
        for _ in range(100000):
            q = rng.uniform(lo_s, hi_s)
            p = K.ee_position(mdl, q)
            v = gt(scene, p)
            if not (0.9 <= v <= hi_cap):
                continue
            if angle_sector is not None and anchor_xy is not None:
                ang = np.arctan2(p[1] - anchor_xy[1], p[0] - anchor_xy[0])
                lo_a, hi_a = angle_sector
                # wrap into sector test
                d = (ang - lo_a) % (2 * np.pi)
                if d > (hi_a - lo_a) % (2 * np.pi) and (hi_a - lo_a) % (2 * np.pi) > 0:
                    continue
            start = q
            break
        if start is None:
            continue
        reg = C.RecorderRegistry()
        h = reg.start('o%d-%d' % (seed, attempt), dt, 'feature_trace',
                      started_at=0.0)
        tracker = K.TargetTracker(mdl, start, K.IkParams(), dt=dt)
        q = start.copy()
        h.observe(q)
        h.sample(0.0)
        sigma = np.deg2rad(sigma_deg)
        ok = False
        done = False
        for k in range(1, max_steps + 1):
            p = K.ee_position(mdl, q)
            g = gt_grad_ee(scene, gt, p)
            n = np.linalg.norm(g)
            d = -g / n if n > 1e-9 else rng.normal(size=3)
            d = d / np.linalg.norm(d)
            if sigma > 0:
                r = rng.normal(size=3)
                ax = np.cross(d, r)
                na = np.linalg.norm(ax)
                if na > 1e-12:
                    ax /= na
                    ang = rng.normal(0, sigma)
                    d = d * np.cos(ang) + np.cross(ax, d) * np.sin(ang)
            q = tracker.step(p + step_len * d, dt).q
            h.observe(q)
            h.sample(k * dt)
            raw = gt(scene, K.ee_position(mdl, q), raw=True)
            if raw <= 0.1:
                ok = True
            if raw <= 0.1 - overshoot:
                done = True
                break
        if ok and (done or overshoot == 0.0):
            return reg.finish(h, mdl.joint_inertias(), mdl.name,
                              scene.scene_id, mdl.joint_names())
        if ok:
            # reached low but not full overshoot (workspace edge): accept too
            return reg.finish(h, mdl.joint_inertias(), mdl.name,
                              scene.scene_id, mdl.joint_names())
    raise RuntimeError('stall')


def train2(traces, mdl, scene, params, qdamp=4.0):
    data = LL.build_trace_dataset(traces, mdl, scene, params)
    mean = data.X.mean(axis=0)
    scale = np.maximum(data.X.std(axis=0), 1e-8)
    scale[:mdl.n_actuated] *= qdamp
    net = LL.FeatureNetwork.initialize(data.X.shape[1], params.seed, mean, scale)
    LL._gd_momentum(net, lambda n: LL.trace_loss_and_grad(n, data, params),
                    params.epochs, params.learning_rate, params.momentum)
    return net


def evaluate_mse(values_fn, gt, mdl, scene, n, seed):
    rng = np.random.default_rng(seed)
    Q = K.random_configurations(mdl, n, rng)
    X = L.encode_batch(mdl, scene, Q)
    learned = values_fn(X)
    P = K.ee_positions_batch(mdl, Q)
    gtv = np.array([gt(scene, p) for p in P])

    def norm(v):
        r = v.max() - v.min()
        return (v - v.min()) / r if r > 1e-12 else np.zeros_like(v)

    return float(np.mean((norm(learned) - norm(gtv)) ** 2))
