import numpy as np

from boussiter.fields import (
    FuncAmplitude, WaveField, cube_box, divergence, sobol_points,
    pointwise_norm,
)
from boussiter.localization import box_plateau
from boussiter.construction import advect_with_own_carrier, quadratic_families
from boussiter.seed import build_seed

r, M = 1.0, 1.0
mu1, lam1, mu2, lam2 = 4.0, 16.0, 64.0, 2048.0


def bfn(pts):
    return 0.5 * M * box_plateau(np.asarray(pts, float), 0.5 * r, r)


b_amp = FuncAmplitude(bfn, (), step=1e-3)
build = build_seed(r, M, mu1, lam1, mu2, lam2, b_amp)

h = 3e-7
pts = sobol_points(24, cube_box(0.8 * r), seed=7)


def fd_grad(fn, axis):
    e = np.zeros(3)
    e[axis] = h
    return (fn(pts + e) - fn(pts - e)) / (2 * h)


def fd_div_mat(fn):
    return fd_grad(fn, 1)[:, :, 0] + fd_grad(fn, 2)[:, :, 1]


def rep(name, x):
    print(f"{name:44s} {np.max(pointwise_norm(np.asarray(x))):12.4e}")


slow_full = WaveField((2,), groups=[build.slow.family("w_full", (2,))],
                      support_radius=r)
fast_full = WaveField((2,), groups=[build.fast.family("w_full", (2,))],
                      support_radius=r)
pieces = {p.label: p for p in build.stress_pieces}
res = {p.label.replace(":residual", ""): p for p in build.closure_residuals}

# fast square: mean + osc == main x main
osc2, _ = quadratic_families(build.fast, "w_main", build.fast, "w_main",
                             "outer", (2, 2), "dbg")
m2 = build.fast_main.eval(pts)
sq = m2[:, :, None] * m2[:, None, :]
osc_v = WaveField((2, 2), groups=[osc2], support_radius=r).eval(pts)
mean_v = build.stress_mean_fast.eval(pts)
rep("fast sq: mean+osc-mainxmain", mean_v + osc_v - sq)

# fast pairs == full sq - main sq
f2 = fast_full.eval(pts)
full_sq = f2[:, :, None] * f2[:, None, :]
acc = np.zeros_like(full_sq)
for lbl in ("seed-fast:w_mainxw_corr", "seed-fast:w_corrxw_main",
            "seed-fast:w_corrxw_corr"):
    acc += pieces[lbl].field.eval(pts)
rep("fast pairs vs fullsq-mainsq", acc - (full_sq - sq))

# antidiv identities for the fast ladders
drift2 = WaveField(
    (2,),
    groups=[build.fast.family("w_full", (2,)).map_terms(advect_with_own_carrier)],
    support_radius=r,
)
pot = pieces["seed-fast:drift"].field
rr = res["seed-fast:drift"].field
rep("fast drift: FDdiv(pot)+res-arg",
    fd_div_mat(pot.eval) + rr.eval(pts) - drift2.eval(pts))

arg_osc2 = divergence(WaveField((2, 2), groups=[osc2], support_radius=r))
pot = pieces["seed-fast:oscillation"].field
rr = res["seed-fast:oscillation"].field
rep("fast osc: FDdiv(pot)+res-arg",
    fd_div_mat(pot.eval) + rr.eval(pts) - arg_osc2.eval(pts))

# transport + freeze == d_t w2 + div(w2 x v1 + v1 x w2)
def cross(p):
    w = fast_full.eval(p)
    v = slow_full.eval(p)
    return w[:, :, None] * v[:, None, :] + v[:, :, None] * w[:, None, :]

lhs = fd_grad(fast_full.eval, 0) + fd_div_mat(cross)
freeze = pieces["seed-fast:freeze"].field
rhs = drift2.eval(pts) + fd_div_mat(freeze.eval)
rep("fast drift-arg+div(freeze) vs cross", rhs - lhs)
rep("  (cross lhs size)", lhs)

# buoyancy: div(pot) + res == -(0, theta)
th = build.state.temperature.eval(pts)
target = np.stack([np.zeros_like(th), -th], axis=-1)
pot = pieces["seed:buoyancy"].field
rr = res["seed:buoyancy"].field
rep("buoyancy: FDdiv(pot)+res-target",
    fd_div_mat(pot.eval) + rr.eval(pts) - target)
