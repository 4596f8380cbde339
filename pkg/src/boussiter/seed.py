"""Initial relaxed quintuple with a spendable velocity floor.

Two families of divergence-free sine packets ride the coordinate directions:
a static family oscillating in x2 at frequency ``lambda1`` and a transported
family oscillating in x1 at frequency ``lambda2``, each localized by the
standard lattice partition at densities ``mu1`` / ``mu2`` and sized by one
spacetime plateau of height ``10 M``.  At the point (0, pi/(2 lambda2), 0)
the fast family's packets line up to their full height while the slow family
vanishes, so the velocity reaches 20 M there — a floor the staged iteration
can later spend without ever stalling at zero.

The temperature is a single compactly supported Laplacian-potential wave, and
every interaction term the equations produce is either inverted into the
stress/flux potentials or kept as a tracked closure residual, so the output
is a genuine relaxed solution ready for the first stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from ._kernels import bind_velocity_amp
from .construction import (
    ERROR,
    MOMENT,
    OSCILLATION,
    TRANSPORT,
    DefectPiece,
    FlowState,
    LatticeFamily,
    LatticeSumAmplitude,
    WaveAssembly,
    _potential_pieces,
    advect_with_own_carrier,
    combined_term,
    default_multipliers,
    quadratic_families,
)
from .fields import (
    ConjAmplitude,
    FuncAmplitude,
    ProductAmplitude,
    ScaledAmplitude,
    TensorScaleAmplitude,
    WaveField,
    WaveTerm,
    _phase_diff,
    amp_sum,
    cube_box,
    divergence,
    field_sum,
    sup_norm,
)
from .localization import box_plateau


class SeedError(RuntimeError):
    """Seed parameters do not meet a precondition or a verified guarantee."""


def velocity_floor_point(lam2):
    """The sample point where the fast family reaches its full height.

    Returned as a (1, 3) array ready for ``WaveField.eval``.
    """

    return np.array([[0.0, math.pi / (2.0 * float(lam2)), 0.0]])


# ordered as (mu1, lambda1, mu2, lambda2); lambda2/mu2 = 64 keeps the floor
# point's neighbouring partition sites exactly dead (see seed_solution).
# These are deliberately modest: the defect norms and the anti-divergence
# closure residuals both shrink when the frequencies grow (the partition
# bumps contribute a derivative scale of roughly 19 mu per ladder rung, and
# it grows with the order), so callers chasing small defects should raise
# lambda1/lambda2 well beyond this and pay the build time.
DEFAULT_SEPARATIONS = (4.0, 16.0, 64.0, 4096.0)


@dataclass
class SeedBuild:
    """The assembled quintuple plus every piece needed by the diagnostics."""

    state: FlowState
    params: dict
    slow: WaveAssembly
    fast: WaveAssembly
    slow_main: WaveField
    slow_corr: WaveField
    fast_main: WaveField
    fast_corr: WaveField
    theta_main_term: WaveTerm
    theta_corr_term: WaveTerm
    theta_potential_term: WaveTerm
    stress_base: WaveField | None = None
    stress_mean_slow: WaveField | None = None
    stress_mean_fast: WaveField | None = None
    stress_pieces: list = dc_field(default_factory=list)
    flux_pieces: list = dc_field(default_factory=list)
    closure_residuals: list = dc_field(default_factory=list)
    norms: dict = dc_field(default_factory=dict)

    @property
    def theta_potential(self) -> WaveField:
        return WaveField((), terms=[self.theta_potential_term],
                         support_radius=self.state.support_radius)


def _wave_theta_products(asm, name, tterm, label, *, skip_mean=False):
    """Product of one packet channel with a single temperature wave.

    Returns (oscillatory family, co-moving mean).  Each co-active site
    contributes the sum-frequency term 2 Re(A B e^{i(phi+psi)}) and, for
    distinct carriers, the difference term 2 Re(A conj(B) e^{i(phi-psi)});
    a site whose carrier matches the temperature wave exactly contributes
    its difference part as the smooth mean 2 Re(A conj(B)) instead.
    """

    chan = asm.channel(name)
    gb = np.asarray(tterm.phase_gradient(), dtype=float)
    amp_b = tterm.amp

    def build(key):
        (site,) = key
        tw = chan(site)
        if tw is None:
            return []
        ga = np.asarray(tw.phase_gradient(), dtype=float)
        out = [combined_term(ProductAmplitude(tw.amp, amp_b), ga + gb)]
        d = ga - gb
        if np.any(d[1:] != 0.0):
            out.append(
                combined_term(ProductAmplitude(tw.amp, ConjAmplitude(amp_b)), d)
            )
        else:
            # matching spatial carriers must match in time too, or the
            # difference channel would be a pure e^{i w t} mode with no
            # spatial frequency to invert against
            assert d[0] == 0.0
        return out

    osc = LatticeFamily((asm.mu,), build, (2,), asm.support_radius, label)
    if skip_mean:
        return osc, None

    def mean_build(site):
        tw = chan(site)
        if tw is None:
            return None
        ga = np.asarray(tw.phase_gradient(), dtype=float)
        if np.any(ga != gb):
            return None
        return ScaledAmplitude(2.0, ProductAmplitude(tw.amp, ConjAmplitude(amp_b)))

    mean = LatticeSumAmplitude(asm.mu, mean_build, (2,))
    return osc, mean


def build_seed(r, M, mu1, lam1, mu2, lam2, b_amp, *, m_order=2,
               closure_step=1e-3, multipliers=None) -> SeedBuild:
    """Assemble the seed quintuple without running any of the checks.

    ``b_amp`` is the (real-valued) amplitude of the temperature potential,
    supported in Q_r.  Checks and error reporting live in
    :func:`seed_solution`; this builder accepts any positive parameters so
    the diagnostics can probe degenerate configurations cheaply.
    """

    r = float(r)
    M = float(M)
    lam1 = float(lam1)
    lam2 = float(lam2)
    if multipliers is None:
        multipliers = default_multipliers("dyadic")

    scale = 10.0 * M
    r_in = 0.5 * r

    def coeff(pts):
        pts = np.asarray(pts, dtype=float)
        return scale * box_plateau(pts, r_in, r)

    def _bind(mu, site):
        return bind_velocity_amp(mu, site, r_in, r, scale, None)

    coeff.bind_site = _bind

    # -- slow family: amplitude along x1, carrier oscillating in x2 --------
    slow = WaveAssembly(
        amp_dir=(1.0, 0.0), xi=(0.0, 1.0), lam=lam1, mu=mu1,
        multipliers=multipliers, support_radius=r, coeff=coeff,
        form=-1j, label="seed-slow",
    )
    slow_main = WaveField((2,), groups=[slow.family("w_main", (2,))],
                          support_radius=r)
    slow_full = WaveField((2,), groups=[slow.family("w_full", (2,))],
                          support_radius=r)
    slow_corr = WaveField((2,), groups=[slow.family("w_corr", (2,))],
                          support_radius=r)

    # -- fast family: amplitude along x2, carrier moving with the slow one -
    fast = WaveAssembly(
        amp_dir=(0.0, 1.0), xi=(-1.0, 0.0), lam=lam2, mu=mu2,
        multipliers=multipliers, support_radius=r, coeff=coeff,
        velocity=slow_full, form=-1j, label="seed-fast",
    )
    fast_main = WaveField((2,), groups=[fast.family("w_main", (2,))],
                          support_radius=r)
    fast_full = WaveField((2,), groups=[fast.family("w_full", (2,))],
                          support_radius=r)
    fast_corr = WaveField((2,), groups=[fast.family("w_corr", (2,))],
                          support_radius=r)

    # -- temperature: one spacetime-compact Laplacian-potential wave -------
    k_theta = np.array([0.0, 1.0])
    theta_o_amp = ScaledAmplitude(-1.0, b_amp)
    u_amp = ScaledAmplitude(1.0 / (lam1 * lam1), b_amp)
    probe = WaveTerm(b_amp, k_theta, lam1, (0.0, 0.0), 1)
    pc = tuple(complex(c) for c in probe.phase_gradient())
    theta_full_amp = amp_sum(
        _phase_diff(_phase_diff(u_amp, 1, pc), 1, pc),
        _phase_diff(_phase_diff(u_amp, 2, pc), 2, pc),
    )
    theta_corr_amp = amp_sum(theta_full_amp, ScaledAmplitude(-1.0, theta_o_amp))
    term_theta = probe.with_amp(theta_full_amp)
    term_theta_o = probe.with_amp(theta_o_amp)
    term_theta_c = probe.with_amp(theta_corr_amp)
    temperature = WaveField((), terms=[term_theta], support_radius=r)

    # -- pressure and base stress ------------------------------------------
    # the base stress is pressure * identity, so its divergence cancels the
    # pressure gradient exactly, and the two families' co-moving means then
    # cancel the base against the partition's square-sum
    def neg_two_sq(pts):
        s = coeff(pts)
        return -2.0 * s * s

    pbar_amp = FuncAmplitude(neg_two_sq, (), step=closure_step)
    pressure = WaveField((), pbar_amp, support_radius=r)
    stress_base = WaveField((2, 2), TensorScaleAmplitude(np.eye(2), pbar_amp),
                            support_radius=r)

    stress_pieces: list[DefectPiece] = []
    flux_pieces: list[DefectPiece] = []
    residuals: list[DefectPiece] = []

    # -- slow-family stress defects ----------------------------------------
    osc1, mean1 = quadratic_families(slow, "w_main", slow, "w_main",
                                     "outer", (2, 2), "seed-slow:sq")
    _potential_pieces(
        OSCILLATION, "seed-slow:oscillation",
        divergence(WaveField((2, 2), groups=[osc1], support_radius=r)),
        m_order, "tensor", stress_pieces, residuals,
    )
    drift1 = WaveField(
        (2,),
        groups=[slow.family("w_full", (2,)).map_terms(advect_with_own_carrier)],
        support_radius=r,
    )
    _potential_pieces(TRANSPORT, "seed-slow:drift", drift1, m_order, "tensor",
                      stress_pieces, residuals)
    for na, nb in (("w_main", "w_corr"), ("w_corr", "w_main"),
                   ("w_corr", "w_corr")):
        posc, pmean = quadratic_families(slow, na, slow, nb, "outer", (2, 2),
                                         f"seed-slow:{na}x{nb}")
        stress_pieces.append(DefectPiece(ERROR, f"seed-slow:{na}x{nb}",
                                         WaveField((2, 2), pmean, [], [posc], r)))
    buoy = WaveField(
        (2,),
        terms=[term_theta.with_amp(TensorScaleAmplitude([0.0, -1.0],
                                                        theta_full_amp))],
        support_radius=r,
    )
    _potential_pieces(MOMENT, "seed:buoyancy", buoy, m_order, "tensor",
                      stress_pieces, residuals)

    # -- fast-family stress defects ----------------------------------------
    osc2, mean2 = quadratic_families(fast, "w_main", fast, "w_main",
                                     "outer", (2, 2), "seed-fast:sq")
    _potential_pieces(
        OSCILLATION, "seed-fast:oscillation",
        divergence(WaveField((2, 2), groups=[osc2], support_radius=r)),
        m_order, "tensor", stress_pieces, residuals,
    )
    drift2 = WaveField(
        (2,),
        groups=[fast.family("w_full", (2,)).map_terms(advect_with_own_carrier)],
        support_radius=r,
    )
    _potential_pieces(TRANSPORT, "seed-fast:drift", drift2, m_order, "tensor",
                      stress_pieces, residuals)
    freeze = WaveField(
        (2, 2),
        groups=[fast.site_velocity_diff_outer("w_full", slow_full,
                                              closure_step)],
        support_radius=r,
    )
    stress_pieces.append(DefectPiece(ERROR, "seed-fast:freeze", freeze))
    for na, nb in (("w_main", "w_corr"), ("w_corr", "w_main"),
                   ("w_corr", "w_corr")):
        posc, pmean = quadratic_families(fast, na, fast, nb, "outer", (2, 2),
                                         f"seed-fast:{na}x{nb}")
        stress_pieces.append(DefectPiece(ERROR, f"seed-fast:{na}x{nb}",
                                         WaveField((2, 2), pmean, [], [posc], r)))

    # -- flux defects -------------------------------------------------------
    # main x main rides matched carriers at the unit-multiplier sites, but its
    # co-moving mean is the real part of a purely imaginary product (sine form
    # -1j against a real temperature amplitude), hence exactly zero: skip it
    osc_oo, _ = _wave_theta_products(slow, "w_main", term_theta_o,
                                     "seed-slow:theta-sq", skip_mean=True)
    _potential_pieces(
        OSCILLATION, "seed-slow:theta-oscillation",
        divergence(WaveField((2,), groups=[osc_oo], support_radius=r)),
        m_order, "scalar", flux_pieces, residuals,
    )
    dtheta = WaveField((), terms=[term_theta.with_amp(theta_full_amp.derivative(0))],
                       support_radius=r)
    _potential_pieces(TRANSPORT, "seed-slow:theta-drift", dtheta, m_order,
                      "scalar", flux_pieces, residuals)
    for wname, tt, lbl in (
        ("w_main", term_theta_c, "mainxcorr"),
        ("w_corr", term_theta_o, "corrxmain"),
        ("w_corr", term_theta_c, "corrxcorr"),
    ):
        posc, pmean = _wave_theta_products(slow, wname, tt,
                                           f"seed-slow:theta-{lbl}")
        flux_pieces.append(DefectPiece(ERROR, f"seed-slow:theta-{lbl}",
                                       WaveField((2,), pmean, [], [posc], r)))
    # the fast packets are divergence-free, so transporting the temperature
    # equals the divergence of their product with it
    osc_w2t, _ = _wave_theta_products(fast, "w_full", term_theta,
                                      "seed-fast:theta", skip_mean=True)
    _potential_pieces(
        TRANSPORT, "seed-fast:theta-transport",
        divergence(WaveField((2,), groups=[osc_w2t], support_radius=r)),
        m_order, "scalar", flux_pieces, residuals,
    )

    velocity = field_sum(slow_full, fast_full)
    mean_slow = WaveField((2, 2), mean1, support_radius=r)
    mean_fast = WaveField((2, 2), mean2, support_radius=r)
    stress = field_sum(
        stress_base, mean_slow, mean_fast,
        *[p.field for p in stress_pieces],
    )
    flux = field_sum(*[p.field for p in flux_pieces])
    state = FlowState(velocity, temperature, pressure, stress, flux, r)

    return SeedBuild(
        state=state,
        params=dict(r=r, M=M, mu1=float(mu1), lambda1=lam1, mu2=float(mu2),
                    lambda2=lam2, m_order=int(m_order)),
        slow=slow, fast=fast,
        slow_main=slow_main, slow_corr=slow_corr,
        fast_main=fast_main, fast_corr=fast_corr,
        theta_main_term=term_theta_o,
        theta_corr_term=term_theta_c,
        theta_potential_term=probe.with_amp(u_amp),
        stress_base=stress_base,
        stress_mean_slow=mean_slow,
        stress_mean_fast=mean_fast,
        stress_pieces=stress_pieces,
        flux_pieces=flux_pieces,
        closure_residuals=residuals,
    )


def seed_solution(r, M, mu1, lambda1, mu2, lambda2, b_amp, *,
                  eta_delta0=None, m_order=2, closure_step=1e-3,
                  samples=256, sample_seed=0):
    """Build the seed quintuple and verify its guarantees.

    Preconditions: the scales must separate by a factor of four at every
    rung (4 <= mu1, 4 mu1 <= lambda1, 4 lambda1 <= mu2, 4 mu2 <= lambda2)
    and ``b_amp`` must be a real-valued amplitude supported in Q_r.

    The velocity floor |v(0, pi/(2 lambda2), 0)| >= 10 M is verified by
    evaluating, not assumed: at that point the slow family's sine vanishes
    while the fast family needs its local partition bump at full height,
    which requires lambda2/mu2 >= 20 pi so the neighbouring bumps are
    exactly dead.  When ``eta_delta0`` is given, the sampled sup norms of
    stress and flux must also come in below it.  Violations raise
    :class:`SeedError` with the remedy (larger frequencies) spelled out.
    """

    chain = (1.0, float(mu1), float(lambda1), float(mu2), float(lambda2))
    names = ("1", "mu1", "lambda1", "mu2", "lambda2")
    for (a, b, na, nb) in zip(chain, chain[1:], names, names[1:]):
        if not b >= 4.0 * a:
            raise SeedError(
                f"scale separation violated: need {nb} >= 4 {na}, "
                f"got {nb}={b:g} against {na}={a:g}"
            )

    build = build_seed(r, M, mu1, lambda1, mu2, lambda2, b_amp,
                       m_order=m_order, closure_step=closure_step)
    state = build.state

    pt = velocity_floor_point(lambda2)
    v = state.velocity.eval(pt)[0]
    speed = float(math.hypot(v[0], v[1]))
    build.norms["floor_speed"] = speed
    if not speed >= 10.0 * float(M):
        raise SeedError(
            f"velocity floor missed: |v| = {speed:g} < {10.0 * float(M):g} at "
            f"the designated point; increase lambda2 (need lambda2/mu2 >= "
            f"20 pi for the partition bump there to stand alone) and keep "
            f"lambda1 well above mu1"
        )

    if eta_delta0 is not None:
        box = cube_box(float(r))
        sup_R = sup_norm(state.stress, box, n=samples, seed=sample_seed)
        sup_f = sup_norm(state.flux, box, n=samples, seed=sample_seed)
        build.norms["stress"] = sup_R
        build.norms["flux"] = sup_f
        if sup_R > eta_delta0 or sup_f > eta_delta0:
            raise SeedError(
                f"seed defects too large: sup|R| = {sup_R:g}, sup|f| = "
                f"{sup_f:g} exceed the allowance {float(eta_delta0):g}; "
                f"increase lambda1 and lambda2 (and the lattice densities "
                f"in proportion) to shrink them"
            )

    state.seed_build = build
    return state
