"""Seed construction tests.

The designated-point checks are bitwise: at (0, pi/(2 lambda2), 0) the slow
family's sine argument is exactly zero, the fast family's argument is exactly
-pi/2, and with lambda2/mu2 >= 10 pi every neighbouring partition bump is in
its exact zero branch, so the full velocity evaluates to (0, -20M) in floats.
Everything else is either an algebraic identity (support, divergence, the
base/mean cancellation, equation closure against the tracked ladder
residuals) or a comparative claim (defect norms shrink when the frequencies
grow) that needs no frozen constants.
"""

import math

import numpy as np
import pytest

from boussiter.fields import (
    FuncAmplitude,
    cube_box,
    divergence,
    field_sum,
    pointwise_norm,
    sobol_points,
    sup_norm,
)
from boussiter.localization import box_plateau
from boussiter.seed import (
    DEFAULT_SEPARATIONS,
    SeedError,
    build_seed,
    seed_solution,
    velocity_floor_point,
)


def half_plateau(r, M, step=1e-3):
    """The reference temperature amplitude: M/2 on Q_{r/2}, zero outside Q_r."""

    def fn(pts):
        return 0.5 * M * box_plateau(np.asarray(pts, float), 0.5 * r, r)

    return FuncAmplitude(fn, (), step=step)


@pytest.fixture(scope="module")
def seed_a():
    return build_seed(1.0, 1.0, *DEFAULT_SEPARATIONS, half_plateau(1.0, 1.0))


LAM2 = DEFAULT_SEPARATIONS[3]


def fd(fn, pts, axis, h):
    p1 = pts.copy()
    p1[:, axis] += h
    p0 = pts.copy()
    p0[:, axis] -= h
    return (np.asarray(fn(p1)) - np.asarray(fn(p0))) / (2.0 * h)


# ---------------------------------------------------------------------------
# designated point
# ---------------------------------------------------------------------------


def test_quarter_turn_sine_is_exact():
    # the bitwise point checks below stand on this library guarantee
    assert np.sin(-np.pi / 2.0) == -1.0
    assert np.sin(0.0) == 0.0


def test_fast_packet_value_at_designated_point(seed_a):
    w = seed_a.fast_main.eval(velocity_floor_point(LAM2))[0]
    assert w[0] == 0.0
    assert w[1] == -20.0


def test_slow_packet_vanishes_at_designated_point(seed_a):
    v = seed_a.slow_main.eval(velocity_floor_point(LAM2))[0]
    assert v[0] == 0.0 and v[1] == 0.0


def test_full_velocity_at_designated_point(seed_a):
    # correctors see locally constant amplitudes there, so they vanish too
    v = seed_a.state.velocity.eval(velocity_floor_point(LAM2))[0]
    assert v[0] == 0.0
    assert v[1] == -20.0


def test_floor_scales_with_amplitude():
    b = build_seed(1.0, 2.5, *DEFAULT_SEPARATIONS, half_plateau(1.0, 2.5))
    v = b.state.velocity.eval(velocity_floor_point(LAM2))[0]
    assert v[1] == -50.0


def test_temperature_value_at_designated_point(seed_a):
    th = seed_a.state.temperature.eval(velocity_floor_point(LAM2))
    assert th[0] == -1.0


def test_reported_floor_speed():
    state = seed_solution(1.0, 1.0, *DEFAULT_SEPARATIONS, half_plateau(1.0, 1.0))
    assert state.seed_build.norms["floor_speed"] == 20.0


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------


def test_velocity_is_divergence_free(seed_a):
    P = sobol_points(64, cube_box(1.0), 11)
    dv = divergence(seed_a.state.velocity).eval(P)
    assert np.abs(dv).max() <= 1e-9


def test_temperature_is_laplacian_of_potential(seed_a):
    pot = seed_a.theta_potential
    P = sobol_points(24, cube_box(0.6), 9)
    h = 1e-5
    lap = fd(lambda p: fd(pot.eval, p, 1, h), P, 1, h)
    lap += fd(lambda p: fd(pot.eval, p, 2, h), P, 2, h)
    th = seed_a.state.temperature.eval(P)
    assert np.abs(lap - th).max() <= 1e-3 * np.abs(th).max()


def test_base_and_means_cancel_inside_the_plateau(seed_a):
    # -2 phi^2 Id against the partition-squared sums of both families
    P = sobol_points(48, cube_box(0.3), 3)
    s = field_sum(seed_a.stress_base, seed_a.stress_mean_slow,
                  seed_a.stress_mean_fast).eval(P)
    assert pointwise_norm(s).max() <= 1e-10


def test_everything_supported_in_the_box(seed_a):
    P = np.array([
        [0.0, 1.2, 0.0],
        [0.3, 0.0, -1.1],
        [0.7, 1.05, 1.05],
    ])
    st = seed_a.state
    for f in (st.velocity, st.temperature, st.stress, st.flux):
        assert np.abs(np.asarray(f.eval(P))).max() == 0.0


def test_defect_piece_labels(seed_a):
    stress_labels = {p.label for p in seed_a.stress_pieces}
    for want in ("seed-slow:oscillation", "seed-slow:drift",
                 "seed-fast:oscillation", "seed-fast:drift",
                 "seed-fast:freeze", "seed:buoyancy"):
        assert want in stress_labels
    flux_labels = {p.label for p in seed_a.flux_pieces}
    for want in ("seed-slow:theta-oscillation", "seed-slow:theta-drift",
                 "seed-fast:theta-transport"):
        assert want in flux_labels


# ---------------------------------------------------------------------------
# equation closure
# ---------------------------------------------------------------------------


def test_momentum_closure_matches_tracked_residuals(seed_a):
    st = seed_a.state
    P = sobol_points(8, cube_box(0.55), 5)
    h = 1e-8  # keeps omega*h small for the fastest carrier in this fixture

    def vv(p):
        v = st.velocity.eval(p)
        return np.einsum("pi,pj->pij", v, v)

    lhs = fd(st.velocity.eval, P, 0, h)
    lhs += fd(vv, P, 1, h)[:, :, 0] + fd(vv, P, 2, h)[:, :, 1]
    lhs += np.stack([fd(st.pressure.eval, P, 1, h),
                     fd(st.pressure.eval, P, 2, h)], axis=-1)
    th = st.temperature.eval(P)
    lhs -= np.stack([np.zeros_like(th), th], axis=-1)
    div_R = fd(st.stress.eval, P, 1, h)[:, :, 0] + fd(st.stress.eval, P, 2, h)[:, :, 1]
    lhs -= div_R

    tracked = np.zeros_like(lhs)
    for p in seed_a.closure_residuals:
        val = np.asarray(p.field.eval(P))
        if val.ndim == 2:
            tracked += val
    scale = max(pointwise_norm(tracked).max(), pointwise_norm(div_R).max())
    assert pointwise_norm(lhs - tracked).max() <= 5e-3 * scale


def test_temperature_closure_matches_tracked_residuals(seed_a):
    st = seed_a.state
    P = sobol_points(8, cube_box(0.55), 5)
    h = 1e-8

    def vth(p):
        return st.velocity.eval(p) * st.temperature.eval(p)[:, None]

    lhs = fd(st.temperature.eval, P, 0, h)
    lhs += fd(vth, P, 1, h)[:, 0] + fd(vth, P, 2, h)[:, 1]
    div_f = fd(st.flux.eval, P, 1, h)[:, 0] + fd(st.flux.eval, P, 2, h)[:, 1]
    lhs -= div_f

    tracked = np.zeros(len(P))
    for p in seed_a.closure_residuals:
        val = np.asarray(p.field.eval(P))
        if val.ndim == 1:
            tracked += val
    scale = max(np.abs(tracked).max(), np.abs(div_f).max())
    assert np.abs(lhs - tracked).max() <= 1e-3 * scale


# ---------------------------------------------------------------------------
# scaling claims
# ---------------------------------------------------------------------------


def test_defect_norms_decrease_when_frequencies_double():
    box = cube_box(1.0)
    sups = []
    for cfg in [(4, 16, 64, 2048), (4, 32, 64, 4096)]:
        b = build_seed(1.0, 1.0, *cfg, half_plateau(1.0, 1.0))
        sups.append((sup_norm(b.state.stress, box, n=64, seed=7),
                     sup_norm(b.state.flux, box, n=64, seed=7)))
    (r_lo, f_lo), (r_hi, f_hi) = sups
    assert r_hi < r_lo
    assert f_hi < f_lo


def test_corrector_sum_small_when_scales_separate():
    M = 1.0
    b = build_seed(1.0, M, 4, 8192, 32768, 2.0 ** 25, half_plateau(1.0, M))
    box = cube_box(1.0)
    s1 = sup_norm(b.slow_corr, box, n=128, seed=4)
    s2 = sup_norm(b.fast_corr, box, n=128, seed=4)
    assert s1 + s2 <= M


# ---------------------------------------------------------------------------
# guard rails
# ---------------------------------------------------------------------------


def test_ratio_violation_raises():
    with pytest.raises(SeedError, match="scale separation"):
        seed_solution(1.0, 1.0, 4, 16, 32, 2048, half_plateau(1.0, 1.0))


def test_mu1_floor_raises():
    with pytest.raises(SeedError, match="mu1"):
        seed_solution(1.0, 1.0, 2, 16, 64, 2048, half_plateau(1.0, 1.0))


def test_velocity_floor_violation_raises():
    # support too small for the designated point to sit inside the plateau
    r = 0.0005
    with pytest.raises(SeedError, match="lambda2"):
        seed_solution(r, 1.0, 4, 16, 64, 2048, half_plateau(r, 1.0))


def test_defect_gate_raises():
    with pytest.raises(SeedError, match="increase lambda"):
        seed_solution(1.0, 1.0, 4, 16, 64, 2048, half_plateau(1.0, 1.0),
                      eta_delta0=1e-6, samples=64)


def test_defect_gate_records_norms():
    state = seed_solution(1.0, 1.0, 4, 16, 64, 2048, half_plateau(1.0, 1.0),
                          eta_delta0=1e6, samples=64)
    norms = state.seed_build.norms
    assert 0.0 < norms["stress"] < 1e6
    assert 0.0 < norms["flux"] < norms["stress"]
