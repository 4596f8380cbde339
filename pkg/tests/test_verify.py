"""Residual measurement: manufactured exact solutions, budgets, fault alarms.

The sharpest oracle is a hand-built quintuple whose equations close through
*identical* finite-difference paths on both sides (mixed FD partials of a
FuncAmplitude commute bitwise), so its residual is zero to rounding — any
bookkeeping slip in the residual assembly shows up as O(1).  Budgets are
then checked on a real seed, where the residual must sit below the summed
closure remainders it is made of.
"""

import numpy as np
import pytest

from boussiter.construction import FlowState, zero_state
from boussiter.fields import (
    FuncAmplitude,
    ScaledAmplitude,
    StackAmplitude,
    TensorScaleAmplitude,
    WaveField,
    ZeroAmplitude,
    cube_box,
    sobol_points,
)
from boussiter.localization import box_plateau
from boussiter.seed import build_seed
from boussiter.verify import (
    NORMS_HEADER,
    DiagnosticsRow,
    ResidualStats,
    closure_budget,
    diagnostics_row,
    divergence_check,
    momentum_residual,
    norm_table,
    read_norms_csv,
    support_check,
    temperature_residual,
    weak_form_residual,
    write_norms_csv,
)

RHO = 0.5


def _solved_state(scale=1.0):
    """v = 0, theta = d2 G, f = (0, dt G), R22 = -G: both equations close
    bitwise because every derivative is the same fixed-step stencil."""
    G = FuncAmplitude(lambda p: scale * box_plateau(p, RHO / 2, RHO), ())
    theta = WaveField((), G.derivative(2), support_radius=RHO)
    flux = WaveField((2,), StackAmplitude([ZeroAmplitude(), G.derivative(0)], (2,)),
                     support_radius=RHO)
    e22 = np.zeros((2, 2))
    e22[1, 1] = 1.0
    stress = WaveField((2, 2), TensorScaleAmplitude(e22, ScaledAmplitude(-1.0, G)),
                       support_radius=RHO)
    return FlowState(WaveField((2,)), theta, WaveField(()), stress, flux, RHO)


@pytest.fixture(scope="module")
def pts():
    return sobol_points(256, cube_box(RHO), seed=3)


def test_residual_stats_ordering_enforced():
    ResidualStats(1.0, 0.5, 10, 2.0)
    with pytest.raises(AssertionError):
        ResidualStats(0.5, 1.0, 10, 2.0)


def test_manufactured_solution_has_zero_residual(pts):
    st = _solved_state()
    scale = float(np.abs(st.temperature.eval(pts)).max())
    assert scale > 0.1
    assert momentum_residual(st, pts).sup <= 1e-13 * scale
    assert temperature_residual(st, pts).sup <= 1e-13 * scale
    assert divergence_check(st, pts).sup == 0.0


def test_fault_injection_trips_the_residual(pts):
    st = _solved_state()
    clean = momentum_residual(st, pts).sup
    st_bad = FlowState(
        st.velocity,
        st.temperature,
        st.pressure,
        WaveField((2, 2), ScaledAmplitude(1.1, st.stress.smooth), support_radius=RHO),
        st.flux,
        RHO,
    )
    tripped = momentum_residual(st_bad, pts).sup
    assert tripped >= 100.0 * max(clean, 1e-300)
    assert tripped > 0.01


def test_temperature_fault_injection(pts):
    st = _solved_state()
    clean = temperature_residual(st, pts).sup
    st_bad = FlowState(
        st.velocity, st.temperature, st.pressure, st.stress,
        WaveField((2,), ScaledAmplitude(1.1, st.flux.smooth), support_radius=RHO),
        RHO,
    )
    assert temperature_residual(st_bad, pts).sup >= 100.0 * max(clean, 1e-300)


def test_divergence_check_catches_injected_bump(pts):
    st = _solved_state()
    bump = FuncAmplitude(lambda p: box_plateau(p, RHO / 2, RHO), ())
    bad_v = WaveField(
        (2,), StackAmplitude([bump, ZeroAmplitude()], (2,)), support_radius=RHO
    )
    rep = divergence_check(
        FlowState(bad_v, st.temperature, st.pressure, st.stress, st.flux, RHO), pts
    )
    assert not rep.ok
    assert rep.sup > 0.1


@pytest.fixture(scope="module")
def seed_small():
    r = 1.0 / 32
    phi = FuncAmplitude(lambda p: 0.5 * box_plateau(p, r / 2, r), ())
    return build_seed(r, 1.0, 4.0, 16.0, 64.0, 256.0, phi, m_order=1)


def test_seed_residual_within_closure_budget(seed_small):
    st = seed_small.state
    box = cube_box(st.support_radius)
    p = sobol_points(256, box, seed=5)
    budget = closure_budget(seed_small.closure_residuals, box, n=256, seed=5)
    assert budget > 0.0
    mom = momentum_residual(st, p, budget)
    tem = temperature_residual(st, p, budget)
    assert mom.ok and tem.ok
    assert mom.sup > 0.0  # the ladder remainder is genuinely there
    assert divergence_check(st, p).ok


def test_weak_form_zero_state_is_zero():
    rep = weak_form_residual(zero_state(RHO), test_count=4, seed=1, quad_n=8)
    assert rep.momentum.sup <= 1e-6
    assert rep.temperature.sup <= 1e-6
    assert rep.test_mass > 0.0


def test_weak_form_bounded_by_pointwise_times_mass(pts):
    st = _solved_state()
    rep = weak_form_residual(st, test_count=6, seed=2, quad_n=24)
    point_sup = temperature_residual(st, pts).sup
    sup_fields = float(np.abs(st.temperature.eval(pts)).max())
    quad_tol = 1e-2 * sup_fields * rep.test_mass
    assert rep.temperature.sup <= 10.0 * point_sup * rep.test_mass + quad_tol
    assert rep.momentum.sup <= 10.0 * momentum_residual(st, pts).sup * rep.test_mass + quad_tol


def test_weak_form_scales_linearly_with_injected_forcing():
    # theta = s * bump with v = f = 0 leaves the full transport term theta_t
    # as forcing; the weak response must double when s does
    vals = []
    for s in (1.0, 2.0, 4.0):
        bump = FuncAmplitude(lambda p, s=s: s * box_plateau(p, RHO / 2, RHO), ())
        st = FlowState(
            WaveField((2,)), WaveField((), bump, support_radius=RHO),
            WaveField(()), WaveField((2, 2)), WaveField((2,)), RHO,
        )
        rep = weak_form_residual(st, test_count=5, seed=7, quad_n=16)
        vals.append(rep.temperature.sup)
    assert vals[0] > 0.0
    for a, b in zip(vals, vals[1:]):
        slope = np.log2(b / a)
        assert abs(slope - 1.0) <= 0.05


def test_support_check_passes_and_fails(seed_small):
    rep = support_check(seed_small.state, n=96, seed=11)
    assert rep["ok"] and rep["max_leak"] == 0.0
    wide = FuncAmplitude(lambda p: box_plateau(p, 0.4, 0.8), ())
    leaky = FlowState(
        WaveField((2,)), WaveField((), wide, support_radius=0.8),
        WaveField(()), WaveField((2, 2)), WaveField((2,)), 0.8,
    )
    rep2 = support_check(leaky, radius=0.3, n=256, seed=11)
    assert not rep2["ok"]
    assert rep2["max_leak"] > 0.0


def test_norm_table_reports_all_fields(seed_small):
    table = norm_table(seed_small.state, n=128, seed=1)
    for key in ("sup_v", "sup_theta", "sup_p", "sup_R", "sup_f",
                "c1_v", "c1_theta", "c1_R", "c1_f"):
        assert key in table
        assert table[key] >= 0.0
    assert table["sup_v"] > 10.0  # the floor guarantees this much
    assert table["c1_v"] > table["sup_v"]  # oscillations pay derivatives


def test_norms_header_is_frozen():
    assert NORMS_HEADER == (
        "stage,substep,delta,delta_bar,sup_R,sup_f,sup_dv,sup_dtheta,sup_dp,"
        "c1_R,c1_f,c1_v,c1_theta,res_mom_sup,res_temp_sup,res_div_sup,"
        "budget,support_radius"
    )


def _toy_row(stage=0):
    stats = ResidualStats(1.0, 0.25, 64, 2.0)
    return DiagnosticsRow(
        stage=stage, substep=3, delta=0.5, delta_bar=0.125,
        sup_R=3.0, sup_f=0.5, sup_dv=1.25, sup_dtheta=0.75, sup_dp=0.1,
        c1_R=30.0, c1_f=5.0, c1_v=40.0, c1_theta=20.0,
        res_momentum=stats, res_temperature=stats, res_div=stats,
        support_radius=0.5, mechanism_breakdown={"oscillation": 0.4},
    )


def test_norms_csv_round_trip(tmp_path):
    path = tmp_path / "norms.csv"
    write_norms_csv(path, [_toy_row(0), _toy_row(1)])
    rows = read_norms_csv(path)
    assert [r["stage"] for r in rows] == [0, 1]
    assert rows[0]["delta_bar"] == 0.125
    assert rows[1]["res_mom_sup"] == 1.0
    assert rows[1]["budget"] == 2.0
    # identical content rewrites byte-identically
    txt1 = path.read_text()
    write_norms_csv(path, [_toy_row(0), _toy_row(1)])
    assert path.read_text() == txt1


def test_norms_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "norms.csv"
    path.write_text("stage,substep,delta\n0,0,0.5\n")
    with pytest.raises(ValueError, match="header"):
        read_norms_csv(path)
    path2 = tmp_path / "norms2.csv"
    write_norms_csv(path2, [_toy_row()])
    txt = path2.read_text().splitlines()
    path2.write_text(txt[0] + "\n" + txt[1] + ",9.9\n")
    with pytest.raises(ValueError, match="columns"):
        read_norms_csv(path2)


def test_diagnostics_row_on_seed(seed_small):
    row = diagnostics_row(
        seed_small.state, stage=0, substep=0, delta=0.5, delta_bar=0.125,
        closure_pieces=seed_small.closure_residuals,
        breakdown={"oscillation": 1.0}, n=128, seed=9,
    )
    assert row.res_momentum.ok and row.res_temperature.ok
    assert row.sup_dv == pytest.approx(norm_table(seed_small.state, n=128, seed=9)["sup_v"])
    assert row.mechanism_breakdown == {"oscillation": 1.0}
    line = row.csv_line()
    assert line.count(",") == NORMS_HEADER.count(",")
