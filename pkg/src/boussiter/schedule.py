"""Stage frequency schedules and iteration bookkeeping.

A stage that trades a defect of size ``delta`` for one of size ``delta_bar``
needs mollification length, lattice densities and carrier frequencies chosen
together: the coefficient fields must look frozen on a wavelength, each
substep must oscillate far above the one before it, and the anti-divergence
ladders must gain a full factor of ``delta_bar / delta`` per rung.  This
module computes such a plan from the input norms, checks the compatibility
conditions, and provides the shrinking defect sequence plus the exact
rational Hölder-exponent bounds implied by the parameter recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .antidiv import default_order
from .geometry import ETA


class ScheduleError(ValueError):
    """A requested stage plan violates a compatibility condition."""


@dataclass(frozen=True)
class StageParams:
    """Resolved parameters for one three-substep stage."""

    delta: float
    delta_bar: float
    epsilon: float
    ell: float
    mu: tuple
    lam: tuple
    m_order: int
    capped: bool = False

    def as_dict(self):
        out = {
            "delta": self.delta,
            "delta_bar": self.delta_bar,
            "epsilon": self.epsilon,
            "ell": self.ell,
            "m_order": self.m_order,
            "capped": self.capped,
        }
        for i in range(3):
            out[f"mu{i + 1}"] = self.mu[i]
            out[f"lam{i + 1}"] = self.lam[i]
        return out


def schedule_parameters(delta, delta_bar, Lambda, epsilon, L_v,
                        m_order=None, freq_cap=None) -> StageParams:
    """Frequency plan for one stage given input scale ``Lambda``.

    ell      = delta_bar / (L_v * Lambda)
    mu_1     = L_v * (sqrt(delta)/delta_bar) * Lambda
    lam_n    = L_v * (sqrt(delta)/delta_bar) * mu_n^(1+epsilon)
    mu_n     = L_v * delta * lam_{n-1} / delta_bar          (n = 2, 3)

    All compatibility conditions are checked; ``freq_cap`` optionally rescales
    the carrier frequencies proportionally (preserving their ordering) and
    flags the plan as capped, in which case the frequency floors are reported
    but not enforced.
    """

    if min(delta, delta_bar, Lambda, L_v) <= 0:
        raise ScheduleError("stage parameters must be positive")
    if Lambda < 1.0:
        raise ScheduleError(f"Lambda = {Lambda} must be >= 1")
    if L_v < 1.0 / ETA:
        raise ScheduleError(f"L_v = {L_v} below the floor 1/eta = {1.0 / ETA:.3f}")
    if delta_bar > 0.5 * delta ** 1.5:
        raise ScheduleError(
            f"delta_bar = {delta_bar} exceeds delta^(3/2)/2 = {0.5 * delta ** 1.5}"
        )

    ratio = math.sqrt(delta) / delta_bar
    ell = delta_bar / (L_v * Lambda)
    mu = [L_v * ratio * Lambda]
    lam = [L_v * ratio * mu[0] ** (1.0 + epsilon)]
    for _ in (2, 3):
        mu.append(L_v * delta * lam[-1] / delta_bar)
        lam.append(L_v * ratio * mu[-1] ** (1.0 + epsilon))

    capped = False
    if freq_cap is not None and lam[-1] > freq_cap:
        scale = freq_cap / lam[-1]
        lam = [x * scale for x in lam]
        mu = [max(1.0, x * scale) for x in mu]
        capped = True

    params = StageParams(
        delta=float(delta),
        delta_bar=float(delta_bar),
        epsilon=float(epsilon),
        ell=ell,
        mu=tuple(mu),
        lam=tuple(lam),
        m_order=default_order(epsilon) if m_order is None else int(m_order),
        capped=capped,
    )
    problems = check_compatibility(params, Lambda)
    if problems and not capped:
        raise ScheduleError("; ".join(problems))
    return params


def check_compatibility(params: StageParams, Lambda) -> list:
    """All stage compatibility conditions; returns human-readable violations."""

    delta, delta_bar, eps = params.delta, params.delta_bar, params.epsilon
    ell, mu, lam = params.ell, params.mu, params.lam
    out = []
    if mu[0] < Lambda / delta:
        out.append(f"mu1 = {mu[0]:g} below Lambda/delta = {Lambda / delta:g}")
    if 1.0 / ell < Lambda / (ETA * delta):
        out.append(f"1/ell = {1.0 / ell:g} below Lambda/(eta delta)")
    if ell > 0.5 * delta:
        out.append(f"ell = {ell:g} exceeds delta/2 (support containment)")
    prev = 1.0
    for n in range(3):
        floor = max(mu[n] ** (1.0 + eps), ell ** -(1.0 + eps))
        if lam[n] < floor:
            out.append(f"lam{n + 1} = {lam[n]:g} below its floor {floor:g}")
        if mu[n] <= prev:
            out.append(f"mu{n + 1} = {mu[n]:g} not above previous scale {prev:g}")
        prev = lam[n]
    return out


def scaled_parameters(delta, delta_bar, epsilon, ell, mu, lam, m_order=None) -> StageParams:
    """Explicit user-supplied ladders (desk-scale runs).

    Only structural orderings are enforced: both ladders increasing, and each
    substep's lattice density below its carrier frequency (the amplitude
    must modulate slower than the wave it rides).  The asymptotic floors are
    the caller's business; the plan is flagged as capped so downstream
    reporting shows it ran off-schedule.
    """

    mu = tuple(float(x) for x in mu)
    lam = tuple(float(x) for x in lam)
    if len(mu) != 3 or len(lam) != 3:
        raise ScheduleError("need three lattice densities and three frequencies")
    if mu[0] <= 0 or any(b <= a for a, b in zip(mu, mu[1:])):
        raise ScheduleError(f"lattice ladder not increasing: {mu}")
    if any(b <= a for a, b in zip(lam, lam[1:])):
        raise ScheduleError(f"frequency ladder not increasing: {lam}")
    if any(m >= l for m, l in zip(mu, lam)):
        raise ScheduleError(
            f"each substep needs mu_n < lam_n; got mu={mu}, lam={lam}"
        )
    if ell <= 0 or ell > 0.5 * delta:
        raise ScheduleError(f"ell = {ell} outside (0, delta/2]")
    return StageParams(
        delta=float(delta),
        delta_bar=float(delta_bar),
        epsilon=float(epsilon),
        ell=float(ell),
        mu=mu,
        lam=lam,
        m_order=default_order(epsilon) if m_order is None else int(m_order),
        capped=True,
    )


# ---------------------------------------------------------------------------
# outer iteration arithmetic
# ---------------------------------------------------------------------------


def delta_sequence(a, b, n_stages):
    """The defect sizes delta_n = a^(-b^n), n = 0..n_stages."""
    if a < 1.5 or b < 1.5:
        raise ScheduleError(f"need a, b >= 3/2; got a={a}, b={b}")
    return [a ** -(b ** n) for n in range(n_stages + 1)]


def stage_target(delta):
    """Largest defect target a single stage is allowed to promise."""
    return 0.5 * delta ** 1.5


def iteration_preconditions(a, b, r, epsilon, M):
    """The smallness hypotheses of the outer iteration, individually reported.

    The iteration drives delta_n = a^(-b^n) to zero inside a support budget r;
    1/a <= min(r/2, eps^2/(16 M^2)) makes the total support growth and the
    accumulated velocity/temperature drift 4M/sqrt(a) < eps both fit.
    """

    checks = {
        "a >= 3/2": a >= 1.5,
        "b >= 3/2": b >= 1.5,
        "1/a <= r/2": 1.0 / a <= r / 2.0,
        "1/a <= eps^2/(16 M^2)": 1.0 / a <= epsilon ** 2 / (16.0 * M ** 2),
        "4M/sqrt(a) < eps": 4.0 * M / math.sqrt(a) < epsilon,
    }
    return checks


@dataclass(frozen=True)
class ExponentReport:
    """Exact rational Hölder-exponent bounds from the parameter recursion."""

    d: Fraction
    c: Fraction
    alpha_v: Fraction
    alpha_theta: Fraction


def exponent_report(epsilon, a=Fraction(3, 2), b=Fraction(3, 2)) -> ExponentReport:
    """Exact-arithmetic exponent bounds for oscillation parameter ``epsilon``.

    d          = (1+e)^2 (2+e) + (2+e)^2
    c          = (2d - (e^2 + 2e + 3)) / (3 - 2 (1+e)^3)
    alpha_v    = 1 / (1 + 2 b c)
    alpha_th   = 1 / (1 + 2 (3 + 4e + e^2 + c (1+e)^2))

    As epsilon -> 0 these tend to 1/28 and 1/25.  Raises for epsilon large
    enough that the geometric sum behind ``c`` diverges (3 - 2(1+e)^3 <= 0).
    """

    e = Fraction(epsilon)
    b = Fraction(b)
    if Fraction(a) < Fraction(3, 2) or b < Fraction(3, 2):
        raise ScheduleError("need a, b >= 3/2")
    den = 3 - 2 * (1 + e) ** 3
    if den <= 0:
        raise ScheduleError(
            f"epsilon = {epsilon} too large: 2(1+eps)^3 = {2 * float((1 + e) ** 3):g} >= 3"
        )
    d = (1 + e) ** 2 * (2 + e) + (2 + e) ** 2
    c = (2 * d - (e ** 2 + 2 * e + 3)) / den
    alpha_v = 1 / (1 + 2 * b * c)
    alpha_theta = 1 / (1 + 2 * (3 + 4 * e + e ** 2 + c * (1 + e) ** 2))
    return ExponentReport(d=d, c=c, alpha_v=alpha_v, alpha_theta=alpha_theta)
