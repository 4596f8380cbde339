"""Stage construction tests.

The strongest oracles here are algebraic identities evaluated pointwise:
the lattice pair families must reproduce the literal product of the summed
wave packets, the assembled stress after the last substep must equal the sum
of the tracked defect pieces, and the velocity increment must be divergence
free because it comes from a stream potential.  Those identities hold to
rounding by construction, so the tolerances are near machine precision.
"""

import dataclasses
import math

import numpy as np
import pytest

from boussiter._kernels import (
    HAVE_KERNELS,
    bind_temperature_amp,
    bind_velocity_amp,
)
from boussiter.construction import (
    StagePreconditionError,
    WaveAssembly,
    _a_squared_amp,
    default_multipliers,
    mollify_field,
    prepare_stage,
    quadratic_families,
    relax_substep,
    run_stage,
    zero_state,
)
from boussiter.fields import (
    ConstAmplitude,
    FuncAmplitude,
    GridAmplitude,
    TensorScaleAmplitude,
    WaveField,
    WaveTerm,
    cube_box,
    divergence,
    pointwise_norm,
    sobol_points,
)
from boussiter.geometry import DIRECTIONS, ETA, perp
from boussiter.localization import (
    box_plateau,
    kernel_transform,
    partition_value,
)
from boussiter.schedule import scaled_parameters

RNG = np.random.default_rng(11)


def small_assembly(temp=False, velocity=None):
    """An assembly cheap enough for brute-force site enumeration."""

    def coeff(pts):
        pts = np.asarray(pts, dtype=float)
        return box_plateau(pts, 1.2, 1.9)

    tcoeff = None
    if temp:
        def tcoeff(pts):
            pts = np.asarray(pts, dtype=float)
            return 0.3 * box_plateau(pts, 1.2, 1.9)

    k = DIRECTIONS[0]
    return WaveAssembly(
        amp_dir=k, xi=perp(k), lam=24.0, mu=0.5,
        multipliers=default_multipliers(),
        support_radius=2.0, coeff=coeff, temp_coeff=tcoeff,
        velocity=velocity, label="test",
    )


def all_sites(mu, radius, extra=2):
    lim = int(np.ceil(mu * radius)) + extra
    rng = range(-lim, lim + 1)
    return [(i, j, k) for i in rng for j in rng for k in rng]


def fixture_params(**over):
    kw = dict(delta=1.0, delta_bar=0.5, epsilon=0.1, ell=0.05,
              mu=(0.125, 0.25, 0.5), lam=(64.0, 128.0, 256.0), m_order=2)
    kw.update(over)
    return scaled_parameters(**kw)


# ---------------------------------------------------------------------------
# lattice families
# ---------------------------------------------------------------------------


def test_family_eval_matches_site_enumeration():
    asm = small_assembly()
    fam = asm.family("w_main", (2,))
    pts = RNG.uniform(-1.8, 1.8, size=(60, 3))
    got = fam.eval(pts)

    chan = asm.channel("w_main")
    want = np.zeros((len(pts), 2))
    for site in all_sites(asm.mu, asm.support_radius):
        t = chan(site)
        if t is not None:
            want += t.eval(pts)
    np.testing.assert_allclose(got, want, atol=1e-13)


def test_family_materialize_matches_eval():
    asm = small_assembly()
    fam = asm.family("w_full", (2,))
    pts = RNG.uniform(-1.5, 1.5, size=(25, 3))
    got = fam.eval(pts)
    want = np.zeros_like(got)
    for t in fam.materialize():
        want += t.eval(pts)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_pair_family_reproduces_literal_product():
    # mean + oscillation must equal the pointwise outer product of the
    # assembled packet with itself -- the whole pairing machinery in one check
    asm = small_assembly()
    w = asm.family("w_main", (2,)).eval(RNG.uniform(-1.6, 1.6, size=(0, 3)))
    pts = RNG.uniform(-1.6, 1.6, size=(80, 3))
    w = asm.family("w_main", (2,)).eval(pts)
    want = np.einsum("ni,nj->nij", w, w)

    osc, mean = quadratic_families(asm, "w_main", asm, "w_main", "outer",
                                   (2, 2), "M")
    got = WaveField((2, 2), mean, groups=[osc], support_radius=2.0).eval(pts)
    np.testing.assert_allclose(got, want, atol=1e-11)


def test_pair_family_scalar_kind_reproduces_product():
    asm = small_assembly(temp=True)
    pts = RNG.uniform(-1.6, 1.6, size=(60, 3))
    w = asm.family("w_main", (2,)).eval(pts)
    chi = asm.family("chi_main", ()).eval(pts)
    want = w * chi[:, None]

    osc, mean = quadratic_families(asm, "w_main", asm, "chi_main", "scalar",
                                   (2,), "K")
    got = WaveField((2,), mean, groups=[osc], support_radius=2.0).eval(pts)
    np.testing.assert_allclose(got, want, atol=1e-11)


def test_full_packet_is_divergence_free():
    asm = small_assembly()
    fam = asm.family("w_full", (2,))
    field = WaveField((2,), groups=[fam], support_radius=2.0)
    pts = RNG.uniform(-1.7, 1.7, size=(50, 3))
    dv = divergence(field).eval(pts)
    w = fam.eval(pts)
    scale = max(1.0, float(pointwise_norm(w).max())) * asm.lam
    assert np.abs(dv).max() <= 1e-11 * scale


def test_corrector_decays_with_carrier_frequency():
    # w_full - w_main is the 1/lambda amplitude-gradient correction: scaling
    # the carrier frequency by 4 scales the corrector amplitude by exactly 1/4
    def corr_amp(lam):
        def coeff(pts):
            pts = np.asarray(pts, dtype=float)
            return box_plateau(pts, 1.2, 1.9)

        k = DIRECTIONS[0]
        asm = WaveAssembly(
            amp_dir=k, xi=perp(k), lam=lam, mu=0.5,
            multipliers=default_multipliers(),
            support_radius=2.0, coeff=coeff, label="corr",
        )
        return asm.site((0, 0, 0))["w_corr"]

    pts = RNG.uniform(-0.8, 0.8, size=(100, 3))
    c24 = corr_amp(24.0).value(pts)
    c96 = corr_amp(96.0).value(pts)
    scale = np.abs(c24).max()
    assert scale > 0
    np.testing.assert_allclose(c96, c24 / 4.0, atol=1e-11 * scale)


def test_default_multipliers_distinct_and_tight():
    ms = default_multipliers()
    assert len(ms) == 8 and len(set(ms)) == 8
    assert min(ms) >= 1.0 and max(ms) / min(ms) < 2.0
    dy = default_multipliers("dyadic")
    assert len(set(dy)) == 8 and max(dy) == 2 ** 7


# ---------------------------------------------------------------------------
# fused kernels against the generic closure chain
# ---------------------------------------------------------------------------


@pytest.mark.skipif(not HAVE_KERNELS, reason="numba unavailable")
def test_velocity_kernel_matches_generic_chain():
    box = np.array([[-2.1, 2.1]] * 3)
    data = RNG.normal(size=(15, 15, 15)) * 0.05
    grid = GridAmplitude(box, data, method="cubic")
    mu, site = 0.25, (1, 0, -1)
    fn = bind_velocity_amp(mu, site, 1.5, 2.0, 0.7, grid)
    pts = RNG.uniform(-2.2, 2.2, size=(800, 3))
    got = fn(pts)
    want = (0.7 * box_plateau(pts, 1.5, 2.0) * (grid.value(pts).real + 1.0)
            * partition_value(mu * pts, np.array(site, dtype=float)))
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-14)


@pytest.mark.skipif(not HAVE_KERNELS, reason="numba unavailable")
def test_velocity_kernel_exact_on_plateau():
    # near a lattice site inside the plateau every factor is exactly 1.0,
    # so the closure returns the bare scale bit for bit
    fn = bind_velocity_amp(1.0, (1, 0, -1), 1.5, 2.0, -5.0, None)
    pts = np.array([1.0, 0.0, -1.0]) + RNG.uniform(-0.02, 0.02, size=(40, 3))
    assert np.all(fn(pts) == -5.0)


@pytest.mark.skipif(not HAVE_KERNELS, reason="numba unavailable")
def test_temperature_kernel_matches_generic_chain():
    box = np.array([[-2.1, 2.1]] * 3)
    gdata = RNG.normal(size=(15, 15, 15)) * 0.05
    cdata = np.zeros((15, 15, 15))
    cdata[5:10, 5:10, 5:10] = RNG.normal(size=(5, 5, 5)) * 0.1
    ggrid = GridAmplitude(box, gdata, method="cubic")
    cgrid = GridAmplitude(box, cdata, method="cubic")
    mu, site = 0.5, (0, 0, 0)
    fn = bind_temperature_amp(mu, site, 1.5, 2.0, 2.0, cgrid, ggrid)
    pts = RNG.uniform(-2.0, 2.0, size=(800, 3))
    got = fn(pts)

    c = cgrid.value(pts).real
    plat = box_plateau(pts, 1.5, 2.0)
    g = ggrid.value(pts).real + 1.0
    want = np.zeros(len(pts))
    live = c != 0.0
    want[live] = c[live] / (np.sqrt(2.0 * 2.0 * plat[live] ** 2) * g[live])
    want *= partition_value(mu * pts, np.zeros(3))
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-14)


# ---------------------------------------------------------------------------
# mollification of wave fields
# ---------------------------------------------------------------------------


def test_mollify_field_attenuates_carrier():
    c = 0.8
    term = WaveTerm(ConstAmplitude(c + 0.0j), np.array([0.0, 1.0]), 30.0,
                    np.zeros(2), 1)
    field = WaveField((), terms=[term], support_radius=1.0)
    ell = 0.04
    out, counter = mollify_field(field, ell)
    pts = RNG.uniform(-0.5, 0.5, size=(40, 3))
    phat = kernel_transform()(30.0 * ell)
    np.testing.assert_allclose(out.eval(pts), phat * field.eval(pts),
                               atol=1e-12)
    assert out.support_radius == pytest.approx(1.0 + ell)


def test_mollify_field_drops_fast_waves():
    term = WaveTerm(ConstAmplitude(1.0 + 0.0j), np.array([0.0, 1.0]), 1e7,
                    np.zeros(2), 1)
    field = WaveField((), terms=[term], support_radius=1.0)
    out, counter = mollify_field(field, 0.05)
    assert counter.count == 1
    assert not out.terms


def test_mollify_field_keeps_constant_smooth_part():
    field = WaveField((), smooth=ConstAmplitude(2.5 + 0.0j),
                      support_radius=1.0)
    out, _ = mollify_field(field, 0.1)
    pts = RNG.uniform(-0.3, 0.3, size=(20, 3))
    np.testing.assert_allclose(out.eval(pts), 2.5, atol=1e-12)


# ---------------------------------------------------------------------------
# full stage on the zero state
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def zero_stage():
    params = fixture_params()
    state = zero_state(1.0)
    new, report = run_stage(state, params, grid_n=17, pre_samples=128)
    return state, params, new, report


def test_stage_support_growth(zero_stage):
    state, params, new, report = zero_stage
    assert new.support_radius == pytest.approx(
        state.support_radius + params.delta)
    shell = RNG.uniform(2.05, 2.6, size=(40, 3)) * RNG.choice(
        [-1.0, 1.0], size=(40, 3))
    assert np.all(new.velocity.eval(shell) == 0.0)
    assert np.all(new.stress.eval(shell) == 0.0)


def test_stage_velocity_divergence_free(zero_stage):
    _, _, new, _ = zero_stage
    pts = sobol_points(200, cube_box(new.support_radius), 5)
    dv = divergence(new.velocity).eval(pts)
    sup_v = pointwise_norm(new.velocity.eval(pts)).max()
    assert np.abs(dv).max() <= 1e-8 * max(sup_v, 1.0)


def test_stage_defect_bookkeeping_closes(zero_stage):
    # final stress equals the sum of all tracked defect pieces: the base and
    # the quadratic means cancel to rounding across the three substeps
    _, _, new, report = zero_stage
    pts = sobol_points(80, cube_box(new.support_radius), 9)
    total = new.stress.eval(pts)
    acc = np.zeros_like(total)
    for sub in report.substeps:
        acc += sub.stress_defect().eval(pts)
    assert pointwise_norm(total - acc).max() <= 1e-10


def test_substep_one_identity(zero_stage):
    state, params, _, _ = zero_stage
    ctx, _ = prepare_stage(state, params, grid_n=17, pre_samples=128)
    s1, rep1 = relax_substep(state, ctx, 1)
    pts = sobol_points(80, cube_box(s1.support_radius), 13)

    r01 = s1.stress.eval(pts)
    d1 = rep1.stress_defect().eval(pts)
    left = r01 - d1
    for i in (2, 3):
        k = ctx.direction(i)[0]
        a2 = _a_squared_amp(ctx, i).value(pts).real
        left = left + a2[:, None, None] * np.outer(k, k)
    assert pointwise_norm(left).max() <= 1e-10

    # flux side is structurally empty for a zero input state
    fd = rep1.flux_defect()
    if fd is not None:
        assert pointwise_norm(fd.eval(pts)).max() == 0.0


def test_stage_zero_flux_stays_zero(zero_stage):
    _, _, new, _ = zero_stage
    pts = sobol_points(60, cube_box(new.support_radius), 17)
    assert np.all(new.temperature.eval(pts) == 0.0)
    assert np.all(new.flux.eval(pts) == 0.0)


def test_stage_velocity_size(zero_stage):
    _, params, new, _ = zero_stage
    pts = sobol_points(500, cube_box(new.support_radius), 21)
    sup_v = pointwise_norm(new.velocity.eval(pts)).max()
    # sum of <= 8 partition packets of size sqrt(2 delta) each plus correctors
    assert 0.1 <= sup_v <= 10.0 * math.sqrt(params.delta)


def test_stage_precondition_rejects_large_stress():
    state = zero_state(1.0)

    def bump(pts):
        return 0.5 * box_plateau(np.asarray(pts, dtype=float), 0.5, 0.9)

    big = WaveField(
        (2, 2),
        TensorScaleAmplitude(np.eye(2), FuncAmplitude(bump, vshape=())),
        support_radius=1.0,
    )
    bad = dataclasses.replace(state, stress=big)
    with pytest.raises(StagePreconditionError):
        prepare_stage(bad, fixture_params(), grid_n=9, pre_samples=64)


def test_stage_precondition_error_reports_measured_norm():
    state = zero_state(1.0)

    def bump(pts):
        return 0.5 * box_plateau(np.asarray(pts, dtype=float), 0.5, 0.9)

    big = WaveField(
        (2, 2),
        TensorScaleAmplitude(np.eye(2), FuncAmplitude(bump, vshape=())),
        support_radius=1.0,
    )
    bad = dataclasses.replace(state, stress=big)
    with pytest.raises(StagePreconditionError, match="sup"):
        prepare_stage(bad, fixture_params(), grid_n=9, pre_samples=64)
