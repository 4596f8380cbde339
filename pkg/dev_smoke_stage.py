import time

import numpy as np

from boussiter.construction import run_stage, zero_state
from boussiter.fields import cube_box, pointwise_norm, sobol_points, divergence, field_sum
from boussiter.schedule import scaled_parameters

t0 = time.time()
params = scaled_parameters(
    delta=1.0, delta_bar=0.5, epsilon=0.1, ell=0.05,
    mu=(0.25, 0.5, 1.0), lam=(64.0, 128.0, 256.0), m_order=2,
)
state = zero_state(1.0)
new, report = run_stage(state, params, grid_n=25, pre_samples=256)
t1 = time.time()
print(f"stage built in {t1 - t0:.2f}s, dropped={report.dropped_waves}")

box = cube_box(new.support_radius)
P = sobol_points(512, box, 7)

t0 = time.time()
v = new.velocity.eval(P)
print(f"velocity eval 512 pts: {time.time() - t0:.2f}s  sup|v|={pointwise_norm(v).max():.4f}")

t0 = time.time()
dv = divergence(new.velocity).eval(P)
print(f"div v eval: {time.time() - t0:.2f}s  sup|div v|={np.abs(dv).max():.3e}")

t0 = time.time()
R = new.stress.eval(P)
print(f"stress eval: {time.time() - t0:.2f}s  sup|R|={pointwise_norm(R).max():.4f}")

t0 = time.time()
f = new.flux.eval(P)
print(f"flux eval: {time.time() - t0:.2f}s  sup|f|={pointwise_norm(f).max():.4e}")

th = new.temperature.eval(P)
print(f"sup|theta|={np.abs(th).max():.4f}")

# substep-3 identity: R_03 == sum of all defect pieces (plus base/mean dust)
t0 = time.time()
acc = np.zeros_like(R)
for sub in report.substeps:
    acc += sub.stress_defect().eval(P)
    if sub.mean_stress is not None:
        pass  # means cancel the base; included in the assembled stress only
ident = R - acc
print(f"identity sweep: {time.time() - t0:.2f}s  sup|R_03 - sum dR|={pointwise_norm(ident).max():.3e}")

facc = np.zeros_like(f)
for sub in report.substeps:
    fd = sub.flux_defect()
    if fd is not None:
        facc += fd.eval(P)
fident = f - facc
print(f"sup|f_03 - sum df|={pointwise_norm(fident).max():.3e}")
