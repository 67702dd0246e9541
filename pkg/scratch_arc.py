
import numpy as np
from demobench import capture as C, kinematics as K
from scratch_oracle2 import gt_grad_ee
def oracle_arc(gt, mdl, scene, seed, sigma_deg=25.0, step_len=0.03, dt=0.05,
               max_steps=300, hi_cap=0.97, phi_max_deg=80.0, lo_band=0.9):
    rng = np.random.default_rng(seed)
    lo, hi = mdl.limits_arrays()
    lo_s = np.maximum(lo, -np.pi); hi_s = np.minimum(hi, np.pi)
    sig = np.deg2rad(sigma_deg); phimax = np.deg2rad(phi_max_deg)
    for attempt in range(30):
        start = None
        for _ in range(100000):
            q = rng.uniform(lo_s, hi_s)
            p = K.ee_position(mdl, q)
            if lo_band <= gt(scene, p) <= hi_cap:
                start = q; break
        if start is None: continue
        reg = C.RecorderRegistry()
        h = reg.start('o%d-%d'%(seed,attempt), dt, 'feature_trace', started_at=0.0)
        tracker = K.TargetTracker(mdl, start, K.IkParams(), dt=dt)
        q = start.copy(); h.observe(q); h.sample(0.0)
        ref = rng.normal(size=3)
        phi = 0.0 if sig == 0 else rng.uniform(-phimax, phimax)
        ok=False
        for k in range(1, max_steps+1):
            p = K.ee_position(mdl, q)
            g = gt_grad_ee(scene, gt, p)
            n = np.linalg.norm(g)
            if n < 1e-9:
                d = rng.normal(size=3); d/=np.linalg.norm(d)
            else:
                dhat = -g/n
                tau = ref - np.dot(ref, dhat)*dhat
                tn = np.linalg.norm(tau)
                if tn < 1e-9:
                    tau = rng.normal(size=3); tau -= np.dot(tau,dhat)*dhat; tn=np.linalg.norm(tau)
                tau /= tn
                if sig > 0:
                    phi = np.clip(phi + rng.normal(0, sig), -phimax, phimax)
                d = np.cos(phi)*dhat + np.sin(phi)*tau
            q = tracker.step(p + step_len*d, dt).q
            h.observe(q); h.sample(k*dt)
            if gt(scene, K.ee_position(mdl,q)) <= 0.1: ok=True; break
        rec = reg.finish(h, mdl.joint_inertias(), mdl.name, scene.scene_id, mdl.joint_names())
        if ok: return rec
    raise RuntimeError('stall')
