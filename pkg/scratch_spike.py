"""Calibration spike for the experiment pipeline (not part of the package)."""
import time

import numpy as np

from demobench import capture as C
from demobench import kinematics as K
from demobench import learning as L
from demobench import scene as S


def gt_grad_ee(scene, gt, p, h=1e-4):
    g = np.zeros(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[k] = (gt(scene, p + e, raw=True) - gt(scene, p - e, raw=True)) / (2 * h)
    return g


def _oracle_attempt(gt, mdl, scene, rng, sigma_deg, step_len, dt, max_steps, tag):
    lo, hi = mdl.limits_arrays()
    lo_s = np.maximum(lo, -np.pi)
    hi_s = np.minimum(hi, np.pi)
    start = None
    for _ in range(100000):
        q = rng.uniform(lo_s, hi_s)
        if gt(scene, K.ee_position(mdl, q)) >= 0.9:
            start = q
            break
    if start is None:
        raise RuntimeError("no high region")
    reg = C.RecorderRegistry()
    handle = reg.start(tag, dt, "feature_trace", started_at=0.0)
    tracker = K.TargetTracker(mdl, start, K.IkParams(), dt=dt)
    q = start.copy()
    handle.observe(q)
    handle.sample(0.0)
    sigma = np.deg2rad(sigma_deg)
    reached_low = False
    for k in range(1, max_steps + 1):
        p = K.ee_position(mdl, q)
        g = gt_grad_ee(scene, gt, p)
        norm = np.linalg.norm(g)
        if norm < 1e-9:
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
        else:
            d = -g / norm
        if sigma > 0:
            # rotate d by angle ~N(0, sigma) about a random orthogonal axis
            r = rng.normal(size=3)
            axis = np.cross(d, r)
            na = np.linalg.norm(axis)
            if na > 1e-12:
                axis /= na
                ang = rng.normal(0.0, sigma)
                d = d * np.cos(ang) + np.cross(axis, d) * np.sin(ang)
        target = p + step_len * d
        res = tracker.step(target, dt)
        q = res.q
        handle.observe(q)
        handle.sample(k * dt)
        if gt(scene, K.ee_position(mdl, q)) <= 0.1:
            reached_low = True
            break
    record = reg.finish(handle, mdl.joint_inertias(), mdl.name, scene.scene_id,
                        mdl.joint_names())
    return record, reached_low


def oracle_trace(gt, mdl, scene, seed, sigma_deg=10.0, step_len=0.03,
                 dt=0.05, max_steps=200):
    rng = np.random.default_rng(seed)
    for attempt in range(20):
        record, ok = _oracle_attempt(gt, mdl, scene, rng, sigma_deg, step_len,
                                     dt, max_steps, f"oracle-{seed}-{attempt}")
        if ok:
            return record
    raise RuntimeError("descent kept stalling")


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


def main():
    scene, mdl = S.load_scene_and_model(S.builtin_scene_path("bench_ur5e"))
    for feat_name in ("table", "laptop", "proxemics"):
        gt = S.gt_feature(feat_name)
        t0 = time.time()
        pool = [oracle_trace(gt, mdl, scene, 1000 + i) for i in range(20)]
        t_pool = time.time() - t0
        lens = [len(tr.trajectory) for tr in pool]
        print(f"{feat_name}: pool in {t_pool:.1f}s, trace lens {min(lens)}-{max(lens)}")
        mses, base_mses, ts = [], [], []
        for trial in range(3):
            t0 = time.time()
            rng = np.random.default_rng(9000 + trial)
            idx = rng.choice(len(pool), 10, replace=False)
            traces = [pool[i] for i in idx]
            params = L.TrainParams(seed=trial)
            net = L.train_feature(traces, mdl, scene, params)
            mse = evaluate_mse(net.values, gt, mdl, scene, 10000, 77 + trial)
            base = L.FeatureNetwork.initialize(L.encoding_dim(mdl), 500 + trial)
            bm = evaluate_mse(base.values, gt, mdl, scene, 10000, 77 + trial)
            mses.append(mse)
            base_mses.append(bm)
            ts.append(time.time() - t0)
        print(f"  trained MSE: {['%.4f' % m for m in mses]}  "
              f"baseline: {['%.3f' % m for m in base_mses]}  "
              f"trial time: {np.mean(ts):.1f}s")


if __name__ == "__main__":
    main()
