"""Partition-of-unity, mollifier, and profile tests."""

import numpy as np
import pytest


from boussiter import localization as L

RNG = np.random.default_rng(19)


# ---------------------------------------------------------------------------
# smoothstep and site weights
# ---------------------------------------------------------------------------


def test_smoothstep_endpoints_exact():
    s = L.smoothstep(np.array([-1.0, 0.0, 1.0, 2.0]))
    assert s[0] == 0.0 and s[1] == 0.0
    assert s[2] == 1.0 and s[3] == 1.0


def test_smoothstep_monotone():
    x = np.linspace(-0.2, 1.2, 400)
    s = L.smoothstep(x)
    assert np.all(np.diff(s) >= 0)


def test_site_weight_plateau_and_support():
    q = np.array([0.0, 0.5, L.C_IN, 0.93, L.C_OUT, 1.2])
    w = L.site_weight(q)
    assert w[0] == 1.0 and w[1] == 1.0 and w[2] == 1.0
    assert 0.0 < w[3] < 1.0
    assert w[4] == 0.0 and w[5] == 0.0


# ---------------------------------------------------------------------------
# partition of unity
# ---------------------------------------------------------------------------


def _direct_alpha_square_sum(y):
    """Oracle: brute-force sum of alpha_l^2 over a generous site range."""
    y = np.atleast_2d(y)
    lo = np.floor(y.min() - 2).astype(int)
    hi = np.ceil(y.max() + 2).astype(int)
    total = np.zeros(len(y))
    for i in range(lo, hi + 1):
        for j in range(lo, hi + 1):
            for k in range(lo, hi + 1):
                total += L.partition_value(y, np.array([i, j, k])) ** 2
    return total


def test_partition_squares_sum_to_one():
    y = RNG.uniform(-2.0, 2.0, size=(60, 3))
    total = _direct_alpha_square_sum(y)
    assert np.abs(total - 1.0).max() <= 1e-12


def test_partition_plateau_is_exact_one():
    # the exact-one plateau reaches 1 - C_OUT from each site
    radius = 0.98 * (1.0 - L.C_OUT)
    sites = RNG.integers(-3, 4, size=(40, 3))
    offs = RNG.uniform(-1, 1, size=(40, 3))
    offs = radius * offs / np.abs(offs).max(axis=1, keepdims=True)
    y = sites + offs
    vals = L.partition_value(y, sites) if False else np.array(
        [L.partition_value(y[i : i + 1], sites[i])[0] for i in range(len(y))]
    )
    assert np.all(vals == 1.0)


def test_normalizer_floor():
    y = RNG.uniform(-3, 3, size=(5000, 3))
    s = L.normalizer(y)
    assert s.min() >= 1.0 - 1e-12  # nearest site is within C_IN everywhere


def test_at_most_eight_active_sites():
    y = RNG.uniform(-5, 5, size=(2000, 3))
    rows, sites = L.active_sites(y)
    counts = np.bincount(rows, minlength=len(y))
    assert counts.max() <= 8


def test_active_sites_match_positive_weights():
    y = RNG.uniform(-2, 2, size=(50, 3))
    rows, sites = L.active_sites(y)
    for i, l in zip(rows, sites):
        assert L.partition_value(y[i : i + 1], l)[0] > 0


def test_translation_invariance():
    y = RNG.uniform(-0.5, 0.5, size=(200, 3))
    l = np.array([0, 1, 0])
    shift = np.array([2, -1, 3])
    a = L.partition_value(y, l)
    b = L.partition_value(y + shift, l + shift)
    assert np.abs(a - b).max() <= 1e-14


def test_parity_index_distinguishes_overlapping_sites():
    # sites simultaneously active at one point differ by <=1 per coordinate;
    # check every such pair gets a different index
    y = RNG.uniform(-4, 4, size=(500, 3))
    rows, sites = L.active_sites(y)
    for i in range(len(y)):
        ls = sites[rows == i]
        if len(ls) < 2:
            continue
        idx = L.parity_index(ls)
        assert len(np.unique(idx)) == len(ls)


def test_parity_index_values():
    assert L.parity_index(np.array([0, 0, 0])) == 0
    assert L.parity_index(np.array([1, 0, 0])) == 1
    assert L.parity_index(np.array([0, 1, 0])) == 2
    assert L.parity_index(np.array([1, 1, 1])) == 7
    assert L.parity_index(np.array([-1, 2, -3])) == 1 + 0 + 4


# ---------------------------------------------------------------------------
# mollifier
# ---------------------------------------------------------------------------


def test_kernel_integrates_to_one():
    # oracle: midpoint Riemann sum of the normalized kernel over its box
    n = 120
    edges = np.linspace(-1, 1, n + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    Z = np.stack(np.meshgrid(mids, mids, mids, indexing="ij"), axis=-1).reshape(-1, 3)
    val = L.kernel_value(Z).sum() * (2.0 / n) ** 3
    assert abs(val - 1.0) < 1e-4


def test_mollification_weights_normalized():
    Z, w = L.mollification_weights(0.05, n=5)
    assert abs(w.sum() - 1.0) < 1e-14
    assert np.all(np.abs(Z) <= 0.05)


def test_mollify_preserves_constants_and_linears():
    box = np.array([[-1, 1], [-1, 1], [-1, 1]], dtype=float)

    const = L.mollify_to_grid(lambda p: np.full(len(p), 3.25), 0.1, box, (6, 6, 6))
    assert np.allclose(const.data, 3.25, atol=1e-13)

    lin = L.mollify_to_grid(lambda p: p[:, 1], 0.1, box, (6, 6, 6))
    nodes = np.linspace(-1, 1, 6)
    # symmetric midpoint kernel grid: odd moments vanish, linears survive
    assert np.allclose(lin.data[0, :, 0].real, nodes, atol=1e-13)


def test_mollification_error_second_order():
    box = np.array([[-1, 1], [-1, 1], [-1, 1]], dtype=float)
    fn = lambda p: np.sin(2 * p[:, 1]) * np.cos(p[:, 2])
    errs = []
    for ell in (0.2, 0.1):
        g = L.mollify_to_grid(fn, ell, box, (9, 9, 9), n_kernel=9)
        nodes = np.linspace(-1, 1, 9)
        P = np.stack(np.meshgrid(nodes, nodes, nodes, indexing="ij"), axis=-1).reshape(-1, 3)
        errs.append(np.abs(g.data.reshape(-1) - fn(P)).max())
    ratio = errs[0] / errs[1]
    assert 2.5 <= ratio <= 6.0  # ~4 for an O(ell^2) method


def test_kernel_transform_basics():
    KT = L.kernel_transform()
    assert abs(KT(0.0) - 1.0) < 1e-12
    vals = KT(np.array([1.0, 5.0, 20.0, 100.0]))
    assert vals[0] > vals[1] > abs(vals[3])
    # oracle: brute-force radial transform at rho=5
    from scipy.integrate import quad

    import math

    rho = 5.0
    brute = (
        4
        * math.pi
        / rho
        * quad(lambda r: r * math.sin(rho * r) * float(L._bump3_radial(r)), 0, 1)[0]
        / L._BUMP3_MASS
    )
    assert abs(KT(rho) - brute) < 1e-5
    assert KT(10000.0) == 0.0  # beyond the table: treated as fully attenuated


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------


def test_energy_profile_plateau_exact():
    rho_fn, e_fn = L.energy_profile(delta=0.8, r_support=1.0, widening=0.5)
    pts_in = RNG.uniform(-1.25, 1.25, size=(200, 3))
    assert np.all(e_fn(pts_in) == 2 * 0.8)
    pts_out = RNG.uniform(1.5, 3.0, size=(100, 3)) * RNG.choice([-1, 1], size=(100, 3))
    assert np.all(e_fn(pts_out) == 0.0)
    mid = np.array([[1.4, 0.0, 0.0]])
    assert 0.0 < e_fn(mid)[0] < 2 * 0.8
    assert np.allclose(rho_fn(pts_in) ** 2, e_fn(pts_in), atol=1e-14)
