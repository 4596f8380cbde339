"""Fused evaluation kernels for the lattice-wave amplitude closures.

The hot closures all share one shape:

    scale * plateau(p) * (1 + grid(p)) * partition(mu p, l)

(velocity amplitudes) or the temperature variant with a gridded numerator and
an energy denominator.  Evaluating that chain through the generic numpy
primitives costs dozens of small-array operations per call, and the
finite-difference / ladder machinery calls each closure hundreds of times per
term group, so the python path is completely overhead-bound.  Here the chain
is compiled to a single pass per call with numba; the arithmetic mirrors
:mod:`boussiter.localization` and the grid interpolant in
:mod:`boussiter.fields` term for term, including the exact-0/exact-1 branches
the plateau and partition expose (seed point evaluations rely on those).

When numba is unavailable every binder below returns ``None`` and the callers
keep their generic closure path.
"""

from __future__ import annotations

import math

import numpy as np

# numba freezes these at compile time and cache=True persists the compiled
# artifacts: any change to the partition window must be accompanied by
# clearing __pycache__, or stale kernels keep the old constants
from .localization import C_IN, C_OUT

try:  # pragma: no cover - exercised implicitly by every fast test run
    from numba import njit

    HAVE_KERNELS = True
except Exception:  # pragma: no cover
    HAVE_KERNELS = False

    def njit(*args, **kwargs):  # type: ignore
        def deco(fn):
            return fn

        return deco if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def _step_s(s):
    # C-infinity step, exactly 0 / exactly 1 outside the open unit interval
    if s <= 0.0:
        return 0.0
    if s >= 1.0:
        return 1.0
    a = math.exp(-1.0 / s)
    b = math.exp(-1.0 / (1.0 - s))
    return a / (a + b)


@njit(cache=True)
def _psi_s(q):
    return _step_s((C_OUT - q) / (C_OUT - C_IN))


@njit(cache=True)
def _partition_s(y0, y1, y2, l0, l1, l2):
    d0 = y0 - l0
    d1 = y1 - l1
    d2 = y2 - l2
    q = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    if q >= C_OUT:
        return 0.0
    w = _psi_s(q)
    if w == 0.0:
        return 0.0
    b0 = np.rint(y0)
    b1 = np.rint(y1)
    b2 = np.rint(y2)
    s = 0.0
    for o0 in range(-1, 2):
        c0 = y0 - (b0 + o0)
        for o1 in range(-1, 2):
            c1 = y1 - (b1 + o1)
            for o2 in range(-1, 2):
                c2 = y2 - (b2 + o2)
                qq = math.sqrt(c0 * c0 + c1 * c1 + c2 * c2)
                if qq < C_OUT:
                    ww = _psi_s(qq)
                    s += ww * ww
    return w / math.sqrt(s)


@njit(cache=True)
def _plateau_s(p0, p1, p2, r_in, r_out):
    width = r_out - r_in
    out = _step_s((r_out - abs(p0)) / width)
    if out == 0.0:
        return 0.0
    out *= _step_s((r_out - abs(p1)) / width)
    if out == 0.0:
        return 0.0
    return out * _step_s((r_out - abs(p2)) / width)


@njit(cache=True)
def _cubic3_s(box, hs, data, p0, p1, p2):
    # tri-cubic Catmull-Rom matching GridAmplitude: exact 0 outside the box
    if p0 < box[0, 0] or p0 > box[0, 1]:
        return 0.0
    if p1 < box[1, 0] or p1 > box[1, 1]:
        return 0.0
    if p2 < box[2, 0] or p2 > box[2, 1]:
        return 0.0
    n0 = data.shape[0]
    n1 = data.shape[1]
    n2 = data.shape[2]
    w = np.empty((3, 4))
    nodes = np.empty((3, 4), dtype=np.int64)
    p = (p0, p1, p2)
    ns = (n0, n1, n2)
    for a in range(3):
        s = (p[a] - box[a, 0]) / hs[a]
        i0 = int(math.floor(s))
        hi = ns[a] - 2
        if hi < 0:
            hi = 0
        if i0 < 0:
            i0 = 0
        elif i0 > hi:
            i0 = hi
        u = s - i0
        w[a, 0] = u * (-0.5 + u * (1.0 - 0.5 * u))
        w[a, 1] = 1.0 + u * u * (-2.5 + 1.5 * u)
        w[a, 2] = u * (0.5 + u * (2.0 - 1.5 * u))
        w[a, 3] = u * u * (-0.5 + 0.5 * u)
        for j in range(4):
            node = i0 - 1 + j
            if node < 0:
                node = 0
            elif node > ns[a] - 1:
                node = ns[a] - 1
            nodes[a, j] = node
    acc = 0.0
    for j0 in range(4):
        w0 = w[0, j0]
        i0 = nodes[0, j0]
        for j1 in range(4):
            w01 = w0 * w[1, j1]
            i1 = nodes[1, j1]
            for j2 in range(4):
                acc += w01 * w[2, j2] * data[i0, i1, nodes[2, j2]]
    return acc


@njit(cache=True)
def _vel_amp_k(pts, mu, l0, l1, l2, r_in, r_out, scale, use_grid, gbox, ghs, gdata):
    n = pts.shape[0]
    out = np.zeros(n)
    for i in range(n):
        p0 = pts[i, 0]
        p1 = pts[i, 1]
        p2 = pts[i, 2]
        plat = _plateau_s(p0, p1, p2, r_in, r_out)
        if plat == 0.0:
            continue
        al = _partition_s(mu * p0, mu * p1, mu * p2, l0, l1, l2)
        if al == 0.0:
            continue
        g = 1.0
        if use_grid != 0:
            g = 1.0 + _cubic3_s(gbox, ghs, gdata, p0, p1, p2)
        out[i] = scale * plat * g * al
    return out


@njit(cache=True)
def _temp_amp_k(pts, mu, l0, l1, l2, r_in, r_out, two_delta,
                cbox, chs, cdata, gbox, ghs, gdata):
    n = pts.shape[0]
    out = np.zeros(n)
    for i in range(n):
        p0 = pts[i, 0]
        p1 = pts[i, 1]
        p2 = pts[i, 2]
        c = _cubic3_s(cbox, chs, cdata, p0, p1, p2)
        if c == 0.0:
            continue
        al = _partition_s(mu * p0, mu * p1, mu * p2, l0, l1, l2)
        if al == 0.0:
            continue
        plat = _plateau_s(p0, p1, p2, r_in, r_out)
        e = two_delta * plat * plat
        if e <= 0.0:
            continue
        g = 1.0 + _cubic3_s(gbox, ghs, gdata, p0, p1, p2)
        out[i] = c / (math.sqrt(2.0 * e) * g) * al
    return out


_DUMMY_BOX = np.array([[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
_DUMMY_HS = np.array([1.0, 1.0, 1.0])
_DUMMY_DATA = np.zeros((1, 1, 1))


def _grid_args(grid):
    """(box, spacings, float data) pulled out of a GridAmplitude."""
    data = np.ascontiguousarray(grid.data.real, dtype=float)
    box = np.ascontiguousarray(grid.box, dtype=float)
    hs = np.ascontiguousarray(grid.hs, dtype=float)
    return box, hs, data


def bind_velocity_amp(mu, site, r_in, r_out, scale, grid=None):
    """Fused  scale * plateau * gamma * partition_site  closure, or None.

    ``grid`` is the gamma-1 GridAmplitude (cubic) or None for gamma == 1.
    """

    if not HAVE_KERNELS:
        return None
    l0, l1, l2 = (float(x) for x in site)
    mu = float(mu)
    r_in = float(r_in)
    r_out = float(r_out)
    scale = float(scale)
    if grid is None:
        use, gbox, ghs, gdata = 0, _DUMMY_BOX, _DUMMY_HS, _DUMMY_DATA
    else:
        use = 1
        gbox, ghs, gdata = _grid_args(grid)

    def fn(pts):
        pts = np.ascontiguousarray(pts, dtype=float)
        return _vel_amp_k(pts, mu, l0, l1, l2, r_in, r_out, scale,
                          use, gbox, ghs, gdata)

    return fn


def bind_temperature_amp(mu, site, r_in, r_out, two_delta, c_grid, gamma_grid):
    """Fused  c / sqrt(2 e) / gamma * partition_site  closure, or None."""

    if not HAVE_KERNELS:
        return None
    l0, l1, l2 = (float(x) for x in site)
    cbox, chs, cdata = _grid_args(c_grid)
    gbox, ghs, gdata = _grid_args(gamma_grid)
    mu = float(mu)
    r_in = float(r_in)
    r_out = float(r_out)
    two_delta = float(two_delta)

    def fn(pts):
        pts = np.ascontiguousarray(pts, dtype=float)
        return _temp_amp_k(pts, mu, l0, l1, l2, r_in, r_out, two_delta,
                           cbox, chs, cdata, gbox, ghs, gdata)

    return fn
