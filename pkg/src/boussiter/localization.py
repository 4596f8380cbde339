"""Lattice partition of unity, mollification, and cutoff profiles.

The partition lives on the integer lattice Z^3 in rescaled coordinates: site
weights are a radial C-infinity bump

    psi(q) = step( (C_OUT - q) / (C_OUT - C_IN) ),

identically 1 for q <= C_IN = 0.8665 and 0 for q >= C_OUT = 0.975.  Since
every point of R^3 lies within sqrt(3)/2 ~ 0.86603 < C_IN of some site, the
normalizer S = sum psi^2 is >= 1 everywhere, at most 8 sites are active at
once (the 9th nearest lattice point sits at distance >= 1 > C_OUT), and
alpha_l = psi_l / sqrt(S) satisfies sum alpha_l^2 = 1.  Within 0.025 of a
site all neighbours vanish and alpha == 1.0 exactly — float exactly, which
the seed's point evaluations rely on.

The window is a compromise pinned from both sides: C_IN must clear the cube
half-diagonal, C_OUT must leave a plateau wide enough that exact point
evaluations at pi/(2*ratio) site units survive carrier/site ratios down to
64, and the gap C_OUT - C_IN is the transition width that bounds every
partition gradient (~ 2/width per site unit).  Narrowing the gap sharpens
the bumps and the relaxation correctors grow by the same factor.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad

C_IN = 0.8665
C_OUT = 0.975

# 27 neighbour offsets around the rounded site, fixed enumeration order
_OFFSETS = np.array(
    [[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)]
)


def smoothstep(s):
    """C-infinity step: exactly 0 for s <= 0, exactly 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.maximum(s, 1e-300)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.maximum(1.0 - s, 1e-300)), 0.0)
    return a / (a + b)


def site_weight(q):
    """Radial profile psi(q): 1 on [0, C_IN], 0 beyond C_OUT."""
    return smoothstep((C_OUT - np.asarray(q, dtype=float)) / (C_OUT - C_IN))


def parity_index(l):
    """Index in 0..7 from the coordinate parities ([l_j] = 1 iff l_j is odd).

    Any two sites both active at one point differ by at most 1 per coordinate
    and in at least one, so their parity indices differ: no two overlapping
    waves share a frequency multiplier drawn from this index.
    """

    l = np.asarray(l, dtype=int)
    bits = np.abs(l) % 2
    return bits[..., 0] + 2 * bits[..., 1] + 4 * bits[..., 2]


def normalizer(y):
    """S(y) = sum over sites of psi(|y-l|)^2; >= 1 everywhere.  y: (N,3)."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    base = np.rint(y).astype(int)
    s = np.zeros(y.shape[:-1])
    for off in _OFFSETS:
        d = y - (base + off)
        q = np.sqrt((d * d).sum(axis=-1))
        s += site_weight(q) ** 2
    return s


def partition_value(y, l):
    """alpha_l(y) = psi(|y-l|) / sqrt(S(y)); exactly 1.0 on a site plateau.

    y: (N,3) points in rescaled coordinates, l: one site (3,).
    """

    y = np.atleast_2d(np.asarray(y, dtype=float))
    l = np.asarray(l, dtype=float)
    d = y - l
    q = np.sqrt((d * d).sum(axis=-1))
    w = site_weight(q)
    out = np.zeros_like(w)
    mask = w > 0
    if np.any(mask):
        out[mask] = w[mask] / np.sqrt(normalizer(y[mask]))
    return out


def active_sites(y):
    """Pairs (point index, site) with psi > 0; at most 8 per point.  y: (N,3)."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    base = np.rint(y).astype(int)
    rows = []
    sites = []
    for off in _OFFSETS:
        cand = base + off
        d = y - cand
        q = np.sqrt((d * d).sum(axis=-1))
        mask = q < C_OUT
        idx = np.nonzero(mask)[0]
        if len(idx):
            rows.append(idx)
            sites.append(cand[idx])
    if not rows:
        return np.zeros(0, dtype=int), np.zeros((0, 3), dtype=int)
    return np.concatenate(rows), np.concatenate(sites)


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------


def _bump3_radial(r):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        v = np.where(r < 1.0, np.exp(-1.0 / np.maximum(1.0 - r * r, 1e-300)), 0.0)
    return v


#: normalization of exp(-1/(1-|z|^2)) over the unit ball of R^3
_BUMP3_MASS = 4.0 * math.pi * quad(lambda r: r * r * _bump3_radial(r), 0.0, 1.0)[0]


def kernel_value(z):
    """Normalized space-time mollifier phi on the unit ball, integral 1."""
    z = np.asarray(z, dtype=float)
    r = np.sqrt((z * z).sum(axis=-1))
    return _bump3_radial(r) / _BUMP3_MASS


class KernelTransform:
    """Radial Fourier transform table rho -> phi_hat(rho), linearly interpolated.

    phi_hat(|kappa|) multiplies a wave amplitude when the carrier frequency is
    kappa; phi_hat(0) = 1.
    """

    def __init__(self, rho_max=400.0, n=4001, n_nodes=2000):
        self.rho = np.linspace(0.0, rho_max, n)
        # 4 pi / rho * int_0^1 r sin(rho r) f(r) dr for all rho at once; a
        # high-order Gauss rule resolves the <= rho_max/(2 pi) oscillations
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        r = 0.5 * (x + 1.0)
        w = 0.5 * w
        fr = r * _bump3_radial(r) * w
        rho = self.rho[1:]
        integ = np.sin(np.outer(rho, r)) @ fr
        vals = np.empty(n)
        vals[0] = 1.0
        vals[1:] = 4.0 * math.pi * integ / (rho * _BUMP3_MASS)
        self.vals = vals

    def __call__(self, rho):
        rho = np.abs(np.asarray(rho, dtype=float))
        out = np.interp(rho, self.rho, self.vals, right=0.0)
        return out


_KERNEL_TRANSFORM = None


def kernel_transform():
    global _KERNEL_TRANSFORM
    if _KERNEL_TRANSFORM is None:
        _KERNEL_TRANSFORM = KernelTransform()
    return _KERNEL_TRANSFORM


def mollification_weights(ell, n=5):
    """Midpoint product-grid quadrature of phi_ell, discretely normalized.

    Returns (offsets (m,3), weights (m,)) with sum(weights) == 1, so constants
    mollify to themselves to rounding.  Only nodes inside the kernel support
    are kept.
    """

    ell = float(ell)
    edges = np.linspace(-ell, ell, n + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    Z = np.stack(np.meshgrid(mids, mids, mids, indexing="ij"), axis=-1).reshape(-1, 3)
    w = kernel_value(Z / ell)
    keep = w > 0
    Z, w = Z[keep], w[keep]
    w = w / w.sum()
    return Z, w


def mollify_to_grid(fn, ell, box, shape, vshape=(), n_kernel=5, method="cubic"):
    """Discrete mollification of ``fn`` sampled onto a grid amplitude.

    fn: callable (N,3) -> (N,)+vshape.  The result is a
    :class:`~boussiter.fields.GridAmplitude` over ``box`` with ``shape`` nodes.
    """

    from .fields import GridAmplitude

    box = np.asarray(box, dtype=float)
    axes = [np.linspace(box[a, 0], box[a, 1], shape[a]) for a in range(3)]
    P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    Z, w = mollification_weights(ell, n_kernel)
    acc = np.zeros((len(P),) + tuple(vshape), dtype=complex)
    for z, wk in zip(Z, w):
        acc += wk * np.asarray(fn(P - z), dtype=complex)
    data = acc.reshape(tuple(shape) + tuple(vshape))
    return GridAmplitude(box, data, method=method)


_MOLL_BLOCK = 400_000  # max rows of the stacked (kernel x points) evaluation


class MollifiedAmplitude:
    """Lazy discrete mollification of another amplitude.

    value(p) = sum_k w_k * base(p - z_k) with the same quadrature as
    :func:`mollification_weights`.  Differentiation commutes with the sum, so
    derivatives simply mollify the base's derivatives.
    """

    def __init__(self, base, offsets, weights):
        self.base = base
        self.offsets = np.asarray(offsets, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.vshape = base.vshape

    @classmethod
    def of(cls, base, ell, n_kernel=5):
        Z, w = mollification_weights(ell, n_kernel)
        return cls(base, Z, w)

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        n = len(pts)
        if n == 0:
            return np.asarray(self.base.value(pts))
        k = len(self.offsets)
        # one base call over all kernel nodes at once; block the points so the
        # stacked array stays small
        blk = max(1, _MOLL_BLOCK // max(k, 1))
        chunks = []
        for s in range(0, n, blk):
            p = pts[s:s + blk]
            shifted = (p[None, :, :] - self.offsets[:, None, :]).reshape(-1, 3)
            v = np.asarray(self.base.value(shifted))
            v = v.reshape((k, len(p)) + v.shape[1:])
            chunks.append(np.tensordot(self.weights, v, axes=(0, 0)))
        if len(chunks) == 1:
            return chunks[0]
        return np.concatenate(chunks, axis=0)

    def derivative(self, axis):
        cache = self.__dict__.setdefault("_dcache", {})
        if axis not in cache:
            cache[axis] = MollifiedAmplitude(
                self.base.derivative(axis), self.offsets, self.weights
            )
        return cache[axis]

    _plain_derivative = derivative

    @property
    def is_zero(self):
        return self.base.is_zero


# ---------------------------------------------------------------------------
# cutoff / energy profiles
# ---------------------------------------------------------------------------


def box_plateau(pts, r_in, r_out):
    """Product of per-axis steps: exactly 1 on the cube Q_{r_in} = [-r_in, r_in]^3
    (sup-coordinates), exactly 0 outside Q_{r_out}."""
    pts = np.asarray(pts, dtype=float)
    width = r_out - r_in
    out = np.ones(len(pts))
    for a in range(3):
        out = out * smoothstep((r_out - np.abs(pts[:, a])) / width)
    return out


def energy_profile(delta, r_support, widening):
    """rho(p) = sqrt(2 delta) * plateau: 2*delta on Q_{r+w/2}, 0 beyond Q_{r+w}.

    Returns (rho_fn, e_fn); e = rho^2 equals 2*delta exactly on the plateau.
    """

    r_in = r_support + 0.5 * widening
    r_out = r_support + widening

    def rho_fn(pts):
        return math.sqrt(2.0 * delta) * box_plateau(pts, r_in, r_out)

    def e_fn(pts):
        s = box_plateau(pts, r_in, r_out)
        return 2.0 * delta * s * s

    return rho_fn, e_fn
