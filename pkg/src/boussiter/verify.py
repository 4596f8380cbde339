"""Equation residuals, support audits and the diagnostics table.

Everything here *measures*; nothing corrects.  The relaxed system under test
is

    d_t v + div(v (x) v) + grad p - theta e2 = div R
    d_t theta + div(v theta)                 = div f
    div v = 0

and for states assembled by this package the pointwise residuals reduce
analytically to the tracked closure remainders, so each measured residual is
compared against a budget: the summed sup norms of those remainder fields
plus ten times the snapshot interpolation error (zero for in-memory states).

Derivatives of wave fields are taken analytically (phase factors are
differentiated exactly; amplitude envelopes by their own rules), never by
finite differences of the total field — the carriers are far too fast for
any honest FD step.  The only finite differences here are the C1 norm
*estimates*, which are reported as estimates and asserted against nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .construction import FlowState
from .fields import (
    WaveField,
    cube_box,
    differentiate,
    divergence,
    pointwise_norm,
    sobol_points,
    sup_norm,
)

NORMS_HEADER = (
    "stage,substep,delta,delta_bar,sup_R,sup_f,sup_dv,sup_dtheta,sup_dp,"
    "c1_R,c1_f,c1_v,c1_theta,res_mom_sup,res_temp_sup,res_div_sup,"
    "budget,support_radius"
)

DIV_REL_TOL = 1e-8


@dataclass
class ResidualStats:
    """Sampled size of one equation residual against its budget."""

    sup: float
    mean_abs: float
    sample_count: int
    budget: float

    def __post_init__(self):
        assert self.sup >= self.mean_abs >= 0.0

    @property
    def ok(self):
        return self.sup <= self.budget


def _stats(vals, budget, pts):
    mags = pointwise_norm(vals)
    return ResidualStats(
        sup=float(mags.max()) if len(mags) else 0.0,
        mean_abs=float(mags.mean()) if len(mags) else 0.0,
        sample_count=len(pts),
        budget=float(budget),
    )


def closure_budget(residual_pieces, box, *, n=512, seed=0, interp_error=0.0):
    """Sum of closure-remainder sup norms plus 10x the interpolation error."""
    total = 10.0 * float(interp_error)
    for piece in residual_pieces:
        f = getattr(piece, "field", piece)
        total += sup_norm(f, box, n=n, seed=seed)
    return total


# ---------------------------------------------------------------------------
# pointwise residuals
# ---------------------------------------------------------------------------


def momentum_residual(state: FlowState, pts, budget=0.0) -> ResidualStats:
    """d_t v + (v.grad)v + v div v + grad p - theta e2 - div R at ``pts``."""
    v = state.velocity
    vv = v.eval(pts)
    res = differentiate(v, 0).eval(pts)
    d1v = differentiate(v, 1).eval(pts)
    d2v = differentiate(v, 2).eval(pts)
    divv = d1v[:, 0] + d2v[:, 1]
    res += vv[:, :1] * d1v + vv[:, 1:] * d2v + vv * divv[:, None]
    res[:, 0] += differentiate(state.pressure, 1).eval(pts)
    res[:, 1] += differentiate(state.pressure, 2).eval(pts)
    res[:, 1] -= state.temperature.eval(pts)
    res -= divergence(state.stress).eval(pts)
    return _stats(res, budget, pts)


def temperature_residual(state: FlowState, pts, budget=0.0) -> ResidualStats:
    """d_t theta + v.grad theta + theta div v - div f at ``pts``."""
    v = state.velocity
    vv = v.eval(pts)
    d1v = differentiate(v, 1).eval(pts)
    d2v = differentiate(v, 2).eval(pts)
    divv = d1v[:, 0] + d2v[:, 1]
    res = differentiate(state.temperature, 0).eval(pts)
    res += vv[:, 0] * differentiate(state.temperature, 1).eval(pts)
    res += vv[:, 1] * differentiate(state.temperature, 2).eval(pts)
    res += state.temperature.eval(pts) * divv
    res -= divergence(state.flux).eval(pts)
    return _stats(res, budget, pts)


def divergence_check(state: FlowState, pts, rel_tol=DIV_REL_TOL) -> ResidualStats:
    """|div v| against ``rel_tol`` times the size of the velocity gradient."""
    d1v = differentiate(state.velocity, 1).eval(pts)
    d2v = differentiate(state.velocity, 2).eval(pts)
    divv = d1v[:, 0] + d2v[:, 1]
    scale = max(float(np.abs(d1v).max()), float(np.abs(d2v).max()), 1e-300)
    return _stats(divv, rel_tol * scale, pts)


# ---------------------------------------------------------------------------
# weak form
# ---------------------------------------------------------------------------


class _TestBump:
    """Separable cos^2 bump on [c-s, c+s]^3 with closed-form gradient."""

    def __init__(self, center, scales):
        self.c = np.asarray(center, dtype=float)
        self.s = np.asarray(scales, dtype=float)

    def _axis(self, pts, a):
        u = (pts[:, a] - self.c[a]) / self.s[a]
        inside = np.abs(u) < 1.0
        h = np.where(inside, np.cos(0.5 * np.pi * u) ** 2, 0.0)
        dh = np.where(inside, -0.5 * np.pi * np.sin(np.pi * u) / self.s[a], 0.0)
        return h, dh

    def value_and_grad(self, pts):
        hs, dhs = zip(*(self._axis(pts, a) for a in range(3)))
        val = hs[0] * hs[1] * hs[2]
        grad = np.stack(
            [
                dhs[0] * hs[1] * hs[2],
                hs[0] * dhs[1] * hs[2],
                hs[0] * hs[1] * dhs[2],
            ],
            axis=1,
        )
        return val, grad

    def quad(self, n):
        """Midpoint nodes and the constant cell weight over the bump box."""
        axes = [
            self.c[a] - self.s[a] + (2.0 * self.s[a] / n) * (np.arange(n) + 0.5)
            for a in range(3)
        ]
        tt, x1, x2 = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([tt.ravel(), x1.ravel(), x2.ravel()], axis=1)
        w = float(np.prod(2.0 * self.s / n))
        return pts, w


@dataclass
class WeakReport:
    momentum: ResidualStats
    temperature: ResidualStats
    test_mass: float
    quad_nodes: int


def weak_form_residual(state: FlowState, test_count=8, *, seed=0, quad_n=24,
                       radius=None, budgets=(0.0, 0.0)) -> WeakReport:
    """Pair the state with random compact test bumps centred in Q_{2 rho}.

    For each bump the momentum equation is tested against a constant unit
    direction times the bump, the temperature equation against the bump
    itself, all derivatives falling on the (closed-form) test function.
    Integrals use midpoint quadrature with ``quad_n``^3 nodes per bump.
    """

    rho = float(radius if radius is not None else state.support_radius)
    rng = np.random.default_rng(seed)
    mom_vals = []
    temp_vals = []
    mass = 0.0
    for _ in range(test_count):
        center = rng.uniform(-2.0 * rho, 2.0 * rho, size=3)
        scales = rng.uniform(0.3 * rho, rho, size=3)
        ang = rng.uniform(0.0, 2.0 * math.pi)
        e = np.array([math.cos(ang), math.sin(ang)])
        bump = _TestBump(center, scales)
        pts, w = bump.quad(quad_n)
        val, grad = bump.value_and_grad(pts)
        mass = max(mass, w * float(np.abs(val).sum()))

        vv = state.velocity.eval(pts)
        th = state.temperature.eval(pts)
        pr = state.pressure.eval(pts)
        rr = state.stress.eval(pts)
        ff = state.flux.eval(pts)

        # psi = e * bump: - v.psi_t - (v x v + p Id - R):grad psi - theta psi_2
        integrand = -(vv @ e) * grad[:, 0]
        for i in range(2):
            for j in range(2):
                integrand -= e[i] * (vv[:, i] * vv[:, j] - rr[:, i, j]) * grad[:, 1 + j]
        integrand -= pr * (e[0] * grad[:, 1] + e[1] * grad[:, 2])
        integrand -= th * e[1] * val
        mom_vals.append(w * float(integrand.sum()))

        # phi = bump: - theta phi_t - theta v.grad phi + f.grad phi
        integrand = -th * grad[:, 0]
        integrand -= th * (vv[:, 0] * grad[:, 1] + vv[:, 1] * grad[:, 2])
        integrand += ff[:, 0] * grad[:, 1] + ff[:, 1] * grad[:, 2]
        temp_vals.append(w * float(integrand.sum()))

    return WeakReport(
        momentum=_stats(np.array(mom_vals), budgets[0], mom_vals),
        temperature=_stats(np.array(temp_vals), budgets[1], temp_vals),
        test_mass=mass,
        quad_nodes=quad_n ** 3,
    )


# ---------------------------------------------------------------------------
# support and norms
# ---------------------------------------------------------------------------


def support_check(state: FlowState, radius=None, *, n=512, margin=0.5, seed=0):
    """Sample the shell outside ``radius``; report the largest leaked value."""
    rho = float(radius if radius is not None else state.support_radius)
    outer = cube_box(rho + margin)
    pts = sobol_points(4 * n, outer, seed)
    shell = pts[np.abs(pts).max(axis=1) > rho][:n]
    leak = 0.0
    for name in ("velocity", "temperature", "pressure", "stress", "flux"):
        vals = getattr(state, name).eval(shell)
        leak = max(leak, float(pointwise_norm(vals).max()))
    return {"ok": leak == 0.0, "max_leak": leak, "radius": rho,
            "sample_count": len(shell)}


def norm_table(state: FlowState, *, n=2048, seed=0, step=None):
    """Sup norms of the quintuple plus forward-difference C1 estimates.

    The FD step defaults to 1e-3 times the support radius.  These numbers
    calibrate frequency schedules; they are estimates, not assertions.
    """

    rho = state.support_radius
    box = cube_box(rho)
    h = float(step) if step is not None else 1e-3 * rho
    out = {}
    base = sobol_points(min(n, 512), box, seed)
    for key, name in (("v", "velocity"), ("theta", "temperature"),
                      ("p", "pressure"), ("R", "stress"), ("f", "flux")):
        f = getattr(state, name)
        out["sup_" + key] = sup_norm(f, box, n=n, seed=seed)
        v0 = f.eval(base)
        c1 = 0.0
        for a in range(3):
            shifted = base.copy()
            shifted[:, a] += h
            diff = pointwise_norm(f.eval(shifted) - v0) / h
            c1 = max(c1, float(diff.max()))
        out["c1_" + key] = c1
    return out


# ---------------------------------------------------------------------------
# diagnostics rows
# ---------------------------------------------------------------------------


@dataclass
class DiagnosticsRow:
    """One norms.csv row: where the iteration stands after a (sub)step."""

    stage: int
    substep: int
    delta: float
    delta_bar: float
    sup_R: float
    sup_f: float
    sup_dv: float
    sup_dtheta: float
    sup_dp: float
    c1_R: float
    c1_f: float
    c1_v: float
    c1_theta: float
    res_momentum: ResidualStats
    res_temperature: ResidualStats
    res_div: ResidualStats
    support_radius: float
    mechanism_breakdown: dict = dc_field(default_factory=dict)

    def csv_line(self):
        cells = [str(self.stage), str(self.substep)]
        cells += [
            repr(float(x))
            for x in (
                self.delta, self.delta_bar, self.sup_R, self.sup_f,
                self.sup_dv, self.sup_dtheta, self.sup_dp,
                self.c1_R, self.c1_f, self.c1_v, self.c1_theta,
                self.res_momentum.sup, self.res_temperature.sup,
                self.res_div.sup, self.res_momentum.budget,
                self.support_radius,
            )
        ]
        return ",".join(cells)


def diagnostics_row(state: FlowState, *, stage, substep, delta, delta_bar,
                    increments=None, closure_pieces=(), interp_error=0.0,
                    breakdown=None, n=2048, seed=0) -> DiagnosticsRow:
    """Measure one state into a row.

    ``increments`` is an optional (dv, dtheta, dp) triple of WaveFields (the
    perturbation the step added; for a seed, the fields themselves).
    ``closure_pieces`` are the tracked remainder fields feeding the budget.
    """

    rho = state.support_radius
    box = cube_box(rho)
    pts = sobol_points(n, box, seed)
    budget = closure_budget(closure_pieces, box, n=min(n, 512), seed=seed,
                            interp_error=interp_error)
    table = norm_table(state, n=n, seed=seed)
    if increments is None:
        increments = (state.velocity, state.temperature, state.pressure)
    dv, dtheta, dp = increments
    return DiagnosticsRow(
        stage=int(stage),
        substep=int(substep),
        delta=float(delta),
        delta_bar=float(delta_bar),
        sup_R=table["sup_R"],
        sup_f=table["sup_f"],
        sup_dv=sup_norm(dv, box, n=n, seed=seed),
        sup_dtheta=sup_norm(dtheta, box, n=n, seed=seed),
        sup_dp=sup_norm(dp, box, n=n, seed=seed),
        c1_R=table["c1_R"],
        c1_f=table["c1_f"],
        c1_v=table["c1_v"],
        c1_theta=table["c1_theta"],
        res_momentum=momentum_residual(state, pts, budget),
        res_temperature=temperature_residual(state, pts, budget),
        res_div=divergence_check(state, pts),
        support_radius=float(rho),
        mechanism_breakdown=dict(breakdown or {}),
    )


def write_norms_csv(path, rows):
    with open(path, "w") as fh:
        fh.write(NORMS_HEADER + "\n")
        for row in rows:
            fh.write(row.csv_line() + "\n")


def append_norms_row(path, row):
    import os

    fresh = not os.path.exists(path)
    with open(path, "a") as fh:
        if fresh:
            fh.write(NORMS_HEADER + "\n")
        fh.write(row.csv_line() + "\n")


def read_norms_csv(path):
    """norms.csv -> list of {column: value} dicts; header must be exact."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines or lines[0] != NORMS_HEADER:
        raise ValueError(
            f"{path}: bad norms.csv header; expected {NORMS_HEADER!r}"
        )
    cols = NORMS_HEADER.split(",")
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != len(cols):
            raise ValueError(f"{path}:{lineno}: expected {len(cols)} columns")
        row = {}
        for key, cell in zip(cols, cells):
            row[key] = int(cell) if key in ("stage", "substep") else float(cell)
        rows.append(row)
    return rows
