import numpy as np

from boussiter.fields import (
    FuncAmplitude, WaveField, cube_box, sobol_points, pointwise_norm,
)
from boussiter.localization import box_plateau
from boussiter.construction import advect_with_own_carrier
from boussiter.seed import build_seed

r, M = 1.0, 1.0
mu1, lam1, mu2, lam2 = 4.0, 16.0, 64.0, 2048.0


def bfn(pts):
    return 0.5 * M * box_plateau(np.asarray(pts, float), 0.5 * r, r)


b_amp = FuncAmplitude(bfn, (), step=1e-3)
build = build_seed(r, M, mu1, lam1, mu2, lam2, b_amp)

slow_full = WaveField((2,), groups=[build.slow.family("w_full", (2,))],
                      support_radius=r)

site = (3, 5, 2)
chan = build.fast.channel("w_full")
t = chan(site)
vbar = build.fast.site_velocity(site)
print("site", site, "vbar", vbar)

wl = WaveField((2,), terms=[t], support_radius=r)
adv = WaveField((2,), terms=[advect_with_own_carrier(t)], support_radius=r)

# sample near the site so the bump is alive
center = np.array(site, dtype=float) / mu2
rng = np.random.default_rng(0)
pts = center + rng.uniform(-0.5 / mu2, 0.5 / mu2, size=(16, 3))

h = 3e-7


def fd_grad(fn, axis):
    e = np.zeros(3)
    e[axis] = h
    return (fn(pts + e) - fn(pts - e)) / (2 * h)


def rep(name, x):
    print(f"{name:46s} {np.max(pointwise_norm(np.asarray(x))):12.4e}")


# 1. advect == (d_t + vbar.grad) w_l by FD
mat = fd_grad(wl.eval, 0) + vbar[0] * fd_grad(wl.eval, 1) \
    + vbar[1] * fd_grad(wl.eval, 2)
rep("advect vs FD material derivative", adv.eval(pts) - mat)
rep("  (advect size)", adv.eval(pts))

# 2. freeze piece for this site
fam = build.fast.site_velocity_diff_outer("w_full", slow_full, 1e-3)
fr = WaveField((2, 2), terms=fam.builder((site,)), support_radius=r)


def fd_div_mat(fn):
    return fd_grad(fn, 1)[:, :, 0] + fd_grad(fn, 2)[:, :, 1]


def cross(p):
    w = wl.eval(p)
    v = slow_full.eval(p)
    return w[:, :, None] * v[:, None, :] + v[:, :, None] * w[:, None, :]


lhs = fd_grad(wl.eval, 0) + fd_div_mat(cross)
rhs = adv.eval(pts) + fd_div_mat(fr.eval)
rep("per-site drift+div(freeze) vs cross", rhs - lhs)
rep("  (lhs size)", lhs)

# decompose: div(freeze) alone vs (v1-vbar).grad w + (w.grad) v1
def diffcross(p):
    w = wl.eval(p)
    v = slow_full.eval(p) - vbar
    return w[:, :, None] * v[:, None, :] + v[:, :, None] * w[:, None, :]


rep("freeze values vs w x (v1-vbar) + sym", fr.eval(pts) - diffcross(pts))
rep("div freeze vs FD div of diffcross", fd_div_mat(fr.eval) - fd_div_mat(diffcross))

# and the advect piece vs d_t + vbar thing again on larger region
mat2 = fd_grad(wl.eval, 0)
rep("d_t w_l FD vs advect - vbar.grad", mat2 - (adv.eval(pts)
    - vbar[0] * fd_grad(wl.eval, 1) - vbar[1] * fd_grad(wl.eval, 2)))
