import numpy as np

from boussiter.antidiv import tensor_antidivergence
from boussiter.fields import (
    FuncAmplitude, WaveField, cube_box, divergence, field_sum, sobol_points,
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

# 1. antidiv identity per laddered slow piece: FDdiv(pot) + res == arg
osc1, mean1 = quadratic_families(build.slow, "w_main", build.slow, "w_main",
                                 "outer", (2, 2), "dbg")
arg_osc = divergence(WaveField((2, 2), groups=[osc1], support_radius=r))
pot = pieces["seed-slow:oscillation"].field
rr = res["seed-slow:oscillation"].field
rep("slow osc: FDdiv(pot)+res-arg",
    fd_div_mat(pot.eval) + rr.eval(pts) - arg_osc.eval(pts))

drift1 = WaveField(
    (2,),
    groups=[build.slow.family("w_full", (2,)).map_terms(advect_with_own_carrier)],
    support_radius=r,
)
pot = pieces["seed-slow:drift"].field
rr = res["seed-slow:drift"].field
rep("slow drift: FDdiv(pot)+res-arg",
    fd_div_mat(pot.eval) + rr.eval(pts) - drift1.eval(pts))

# 2. drift field really is d_t of the slow packet sum
rep("slow drift vs FD d_t v1", drift1.eval(pts) - fd_grad(slow_full.eval, 0))

# 3. main x main square: mean + osc == v1main (x) v1main
m1 = build.slow_main.eval(pts)
sq = m1[:, :, None] * m1[:, None, :]
osc_v = WaveField((2, 2), groups=[osc1], support_radius=r).eval(pts)
mean_v = build.stress_mean_slow.eval(pts)
rep("slow sq: mean+osc-mainxmain", mean_v + osc_v - sq)

# 4. pair pieces: three pieces == full x full - main x main
f1 = slow_full.eval(pts)
full_sq = f1[:, :, None] * f1[:, None, :]
acc = np.zeros_like(full_sq)
for lbl in ("seed-slow:w_mainxw_corr", "seed-slow:w_corrxw_main",
            "seed-slow:w_corrxw_corr"):
    acc += pieces[lbl].field.eval(pts)
rep("slow pairs vs fullsq-mainsq", acc - (full_sq - sq))

# 5. slow-only equation: d_t v1 + div(v1 x v1) + grad p - div(Rslow) == res
def v1v1(p):
    w = slow_full.eval(p)
    return w[:, :, None] * w[:, None, :]

slow_R = field_sum(
    build.stress_base, build.stress_mean_slow,
    *[pieces[l].field for l in (
        "seed-slow:oscillation", "seed-slow:drift", "seed-slow:w_mainxw_corr",
        "seed-slow:w_corrxw_main", "seed-slow:w_corrxw_corr")],
)
lhs = fd_grad(slow_full.eval, 0) + fd_div_mat(v1v1) \
    + np.stack([fd_grad(build.state.pressure.eval, 1),
                fd_grad(build.state.pressure.eval, 2)], axis=-1)
acc = res["seed-slow:oscillation"].field.eval(pts) \
    + res["seed-slow:drift"].field.eval(pts)
rep("slow-only eq residual - tracked", lhs - fd_div_mat(slow_R.eval) - acc)
rep("  (slow-only eq residual itself)", lhs - fd_div_mat(slow_R.eval))
rep("  (tracked res itself)", acc)
