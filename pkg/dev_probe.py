import time

import numpy as np

from boussiter.antidiv import tensor_antidivergence
from boussiter.construction import (
    WaveAssembly, prepare_stage, quadratic_families, zero_state,
)
from boussiter.fields import (
    WaveField, cube_box, divergence, pointwise_norm, sobol_points,
)
from boussiter.schedule import scaled_parameters

params = scaled_parameters(
    delta=1.0, delta_bar=0.5, epsilon=0.1, ell=0.05,
    mu=(0.25, 0.5, 1.0), lam=(64.0, 128.0, 256.0), m_order=2,
)
state = zero_state(1.0)
ctx, report = prepare_stage(state, params, grid_n=25, pre_samples=256)

n = 1
k, xi = ctx.direction(n)
asm = WaveAssembly(
    amp_dir=k, xi=xi, lam=params.lam[0], mu=params.mu[0],
    multipliers=ctx.multipliers, support_radius=ctx.new_radius,
    coeff=ctx.a_coeff(n), temp_coeff=None, velocity=None,
    form=ctx.form(n), label="probe",
)
m_osc, m_mean = quadratic_families(asm, "w_main", asm, "w_main", "outer", (2, 2), "M1")
F = WaveField((2, 2), groups=[m_osc], support_radius=ctx.new_radius)

box = cube_box(ctx.new_radius)
P = sobol_points(200, box, 7)

t0 = time.time()
raw = F.eval(P)
print(f"M1_osc raw      : sup={pointwise_norm(raw).max():.4e}  ({time.time()-t0:.1f}s)")

D = divergence(F)
t0 = time.time()
dv = D.eval(P)
print(f"div M1_osc      : sup={pointwise_norm(dv).max():.4e}  ({time.time()-t0:.1f}s)")

pot, res = tensor_antidivergence(D, params.m_order)
t0 = time.time()
pv = pot.eval(P)
print(f"pot(div M1_osc) : sup={pointwise_norm(pv).max():.4e}  ({time.time()-t0:.1f}s)")
rv = res.eval(P)
print(f"res(div M1_osc) : sup={pointwise_norm(rv).max():.4e}")

# single-term drill-down: largest-contributing group
terms = m_osc.materialize()
print(f"pair terms: {len(terms)}")
best = None
for t in terms[:40]:
    sup = np.abs(t.eval(P)).max() if t.amp.vshape == () else pointwise_norm(t.eval(P)).max()
    sl = t.spacetime_frequency
    if best is None or sup > best[0]:
        best = (sup, sl, t)
print(f"largest single pair term sup={best[0]:.3e}, spacetime freq={best[1]}")
