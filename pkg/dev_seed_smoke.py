import time

import numpy as np

from boussiter.fields import (
    FuncAmplitude, WaveField, cube_box, sobol_points, sup_norm, divergence,
    pointwise_norm,
)
from boussiter.localization import box_plateau
from boussiter.seed import build_seed, seed_solution, velocity_floor_point

r, M = 1.0, 1.0
mu1, lam1, mu2, lam2 = 4.0, 16.0, 64.0, 2048.0


def bfn(pts):
    return 0.5 * M * box_plateau(np.asarray(pts, float), 0.5 * r, r)


b_amp = FuncAmplitude(bfn, (), step=1e-3)

t0 = time.time()
build = build_seed(r, M, mu1, lam1, mu2, lam2, b_amp)
state = build.state
print("build:", time.time() - t0, "s")

pt = velocity_floor_point(lam2)
print("x* =", pt)
v = state.velocity.eval(pt)[0]
print("v(x*) =", repr(v), " target (0, -20M) bitwise:",
      v[0] == 0.0 and v[1] == -20.0 * M)
wm = build.fast_main.eval(pt)[0]
print("fast main(x*) =", repr(wm), wm[1] == -20.0 * M)
sm = build.slow_main.eval(pt)[0]
print("slow main(x*) =", repr(sm), sm[0] == 0.0 and sm[1] == 0.0)
print("np.sin(-pi/2) == -1.0:", np.sin(-np.pi / 2) == -1.0)

# divergence-free velocity, sampled
t0 = time.time()
dv = sup_norm(divergence(state.velocity), cube_box(r), n=128, seed=3)
sv = sup_norm(state.velocity, cube_box(r), n=128, seed=3)
print("sup div v:", dv, " sup v:", sv, " rel:", dv / sv,
      f"({time.time()-t0:.1f}s)")

# theta structure: field equals Laplacian of the exposed potential
from boussiter.fields import differentiate, field_sum

pot = build.theta_potential
lap = field_sum(
    differentiate(differentiate(pot, 1), 1),
    differentiate(differentiate(pot, 2), 2),
)
pts = sobol_points(64, cube_box(r), seed=5)
dtheta = np.max(np.abs(state.temperature.eval(pts) - lap.eval(pts)))
sth = np.max(np.abs(state.temperature.eval(pts)))
print("theta vs lap(potential):", dtheta, " scale:", sth)

# equation residual spot check (FD on evaluated fields)
h = 3e-7
rng = np.random.default_rng(11)
pts = sobol_points(40, cube_box(0.85 * r), seed=7)


def fd_grad(fn, pts, axis):
    e = np.zeros(3)
    e[axis] = h
    return (fn(pts + e) - fn(pts - e)) / (2 * h)


def mom_residual(pts):
    vfun = state.velocity.eval
    # d_t v + div(v x v) + grad p - theta e2 - div R
    dtv = fd_grad(vfun, pts, 0)

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


def temp_residual(pts):
    dtth = fd_grad(state.temperature.eval, pts, 0)

    def vth(p):
        return state.velocity.eval(p) * state.temperature.eval(p)[:, None]

    divvth = fd_grad(vth, pts, 1)[:, 0] + fd_grad(vth, pts, 2)[:, 1]
    divf = fd_grad(state.flux.eval, pts, 1)[:, 0] + \
        fd_grad(state.flux.eval, pts, 2)[:, 1]
    return dtth + divvth - divf


t0 = time.time()
rm = mom_residual(pts)
print("momentum residual sup:", np.max(pointwise_norm(rm)),
      f"({time.time()-t0:.1f}s)")
t0 = time.time()
rt = temp_residual(pts)
print("temperature residual sup:", np.max(np.abs(rt)),
      f"({time.time()-t0:.1f}s)")

# closure residual budget for comparison
for p in build.closure_residuals:
    s = sup_norm(p.field, cube_box(r), n=64, seed=2)
    print(f"  residual {p.label:38s} {s:.3e}")

t0 = time.time()
supR = sup_norm(state.stress, cube_box(r), n=256, seed=1)
supf = sup_norm(state.flux, cube_box(r), n=256, seed=1)
print("sup R:", supR, " sup f:", supf, f"({time.time()-t0:.1f}s)")
