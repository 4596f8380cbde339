import sys
import time

import numpy as np

from boussiter.fields import (
    FuncAmplitude, cube_box, sobol_points, sup_norm, pointwise_norm,
)
from boussiter.localization import box_plateau
from boussiter.seed import build_seed

r, M = 1.0, 1.0


def bfn(pts):
    return 0.5 * M * box_plateau(np.asarray(pts, float), 0.5 * r, r)


b_amp = FuncAmplitude(bfn, (), step=1e-3)

configs = {
    "A": (4.0, 16.0, 64.0, 2048.0),
    "B": (4.0, 64.0, 256.0, 8192.0),
    "C": (4.0, 512.0, 2048.0, 65536.0),
    "D": (4.0, 512.0, 2048.0, 262144.0),
}
which = sys.argv[1] if len(sys.argv) > 1 else "A"
mu1, lam1, mu2, lam2 = configs[which]
print(f"config {which}: mu1={mu1} lam1={lam1} mu2={mu2} lam2={lam2}")

build = build_seed(r, M, mu1, lam1, mu2, lam2, b_amp)
state = build.state
box = cube_box(r)
n = 96

tot = 0.0
for p in build.stress_pieces:
    t0 = time.time()
    s = sup_norm(p.field, box, n=n, seed=1)
    tot += s
    print(f"  R {p.tag:14s} {p.label:28s} {s:12.4e} ({time.time()-t0:.1f}s)")
print(f"  R base+means+pieces sup:      {sup_norm(state.stress, box, n=n, seed=1):12.4e}")
for p in build.flux_pieces:
    s = sup_norm(p.field, box, n=n, seed=1)
    print(f"  f {p.tag:14s} {p.label:28s} {s:12.4e}")
print(f"  f total sup:                  {sup_norm(state.flux, box, n=n, seed=1):12.4e}")
for p in build.closure_residuals:
    s = sup_norm(p.field, box, n=n, seed=1)
    print(f"  res {p.label:38s} {s:10.3e}")

# bookkeeping check: FD equation residual == sum of tracked residual fields
h = 3e-7
pts = sobol_points(24, cube_box(0.8 * r), seed=7)


def fd_grad(fn, pts, axis):
    e = np.zeros(3)
    e[axis] = h
    return (fn(pts + e) - fn(pts - e)) / (2 * h)


def mom_residual(pts):
    dtv = fd_grad(state.velocity.eval, pts, 0)

    def vv(p):
        w = state.velocity.eval(p)
        return w[:, :, None] * w[:, None, :]

    divvv = fd_grad(vv, pts, 1)[:, :, 0] + fd_grad(vv, pts, 2)[:, :, 1]
    gp = np.stack([fd_grad(state.pressure.eval, pts, 1),
                   fd_grad(state.pressure.eval, pts, 2)], axis=-1)
    th = state.temperature.eval(pts)
    the2 = np.stack([np.zeros_like(th), th], axis=-1)
    divR = fd_grad(state.stress.eval, pts, 1)[:, :, 0] + \
        fd_grad(state.stress.eval, pts, 2)[:, :, 1]
    return dtv + divvv + gp - the2 - divR


rm = mom_residual(pts)
acc = np.zeros_like(rm)
for p in build.closure_residuals:
    if p.field.vshape == (2,):
        acc += p.field.eval(pts)
mism = np.max(pointwise_norm(rm - acc))
print("mom residual sup:", np.max(pointwise_norm(rm)),
      " minus tracked:", mism)
