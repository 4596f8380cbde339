"""Anti-divergence ladders for oscillatory fields.

Every wave term rides a carrier e^{i s lam xi.(x - w t)} with xi != 0, which
makes divergence division by (i s lam) possible order by order.  For a vector
input V e^{i phi} the tensor ladder solves M xi = V entrywise,

    both xi components nonzero:  M = diag(V1/xi1, V2/xi2)
    xi1 == 0:                    M11 = 0, M12 = V1/xi2, M22 = V2/xi2
    xi2 == 0:                    M22 = 0, M12 = V2/xi1, M11 = V1/xi1

and recurses on V' = -(d1 M11 + d2 M12, d1 M12 + d2 M22).  The potential is
sum_i M_i/(i s lam)^(i+1) on the same carrier and the closure residual is
V_m/(i s lam)^m.  Because the residual is *defined* through the same lazy
derivative nodes the verifier differentiates, div(potential) + residual
reproduces the input to rounding, independent of how rough the amplitudes
are; the residual sup then shrinks like lam^-m for smooth amplitudes.

The scalar ladder does the same for scalar inputs with vector potentials
xi phi/(i s lam |xi|^2) and recursion phi' = -(xi . grad phi)/|xi|^2.
"""

from __future__ import annotations

import math

import numpy as np

from .fields import (
    Amplitude,
    ComponentAmplitude,
    ScaledAmplitude,
    StackAmplitude,
    SumAmplitude,
    TensorScaleAmplitude,
    WaveField,
    WaveTerm,
    ZeroAmplitude,
    amp_sum,
)


def default_order(epsilon: float) -> int:
    """Ladder depth that beats the frequency growth of one stage."""
    return min(6, math.ceil(1.0 + 1.0 / epsilon) + 1)


def _solve_tensor(V: Amplitude, xi) -> Amplitude:
    """Symmetric M with M xi = V, following the branch rule above."""
    v1 = ComponentAmplitude(V, (0,))
    v2 = ComponentAmplitude(V, (1,))
    zero = ZeroAmplitude()
    if xi[0] != 0.0 and xi[1] != 0.0:
        m11 = ScaledAmplitude(1.0 / xi[0], v1)
        m12 = zero
        m22 = ScaledAmplitude(1.0 / xi[1], v2)
    elif xi[0] == 0.0:
        m11 = zero
        m12 = ScaledAmplitude(1.0 / xi[1], v1)
        m22 = ScaledAmplitude(1.0 / xi[1], v2)
    else:
        m22 = zero
        m12 = ScaledAmplitude(1.0 / xi[0], v2)
        m11 = ScaledAmplitude(1.0 / xi[0], v1)
    return StackAmplitude([m11, m12, m12, m22], (2, 2))


def _tensor_next(M: Amplitude) -> Amplitude:
    """-( d1 M11 + d2 M12 , d1 M12 + d2 M22 ) as a vector amplitude."""
    d1 = M.derivative(1)
    d2 = M.derivative(2)
    c0 = amp_sum(ComponentAmplitude(d1, (0, 0)), ComponentAmplitude(d2, (0, 1)))
    c1 = amp_sum(ComponentAmplitude(d1, (0, 1)), ComponentAmplitude(d2, (1, 1)))
    return StackAmplitude([ScaledAmplitude(-1.0, c0), ScaledAmplitude(-1.0, c1)], (2,))


def _scalar_next(phi: Amplitude, xi) -> Amplitude:
    parts = []
    for j in (0, 1):
        if xi[j] != 0.0:
            parts.append(ScaledAmplitude(xi[j], phi.derivative(j + 1)))
    norm2 = float(xi[0] * xi[0] + xi[1] * xi[1])
    return ScaledAmplitude(-1.0 / norm2, amp_sum(*parts))


def _ladder_term(term: WaveTerm, order: int, mode: str):
    """(potential amplitude, residual amplitude) for one term."""
    isl = 1j * term.sign * term.freq
    xi = term.xi
    pot_parts = []
    if mode == "tensor":
        V = term.amp
        for i in range(order):
            if V.is_zero:
                return amp_sum(*pot_parts) if pot_parts else ZeroAmplitude((2, 2)), None
            M = _solve_tensor(V, xi)
            pot_parts.append(ScaledAmplitude(isl ** -(i + 1), M))
            V = _tensor_next(M)
        residual = None if V.is_zero else ScaledAmplitude(isl ** -order, V)
        pot = amp_sum(*pot_parts) if pot_parts else ZeroAmplitude((2, 2))
        return pot, residual
    else:
        norm2 = float(xi[0] * xi[0] + xi[1] * xi[1])
        unit = np.array([xi[0], xi[1]]) / norm2
        phi = term.amp
        for i in range(order):
            if phi.is_zero:
                return amp_sum(*pot_parts) if pot_parts else ZeroAmplitude((2,)), None
            pot_parts.append(
                ScaledAmplitude(isl ** -(i + 1), TensorScaleAmplitude(unit, phi))
            )
            phi = _scalar_next(phi, xi)
        residual = None if phi.is_zero else ScaledAmplitude(isl ** -order, phi)
        pot = amp_sum(*pot_parts) if pot_parts else ZeroAmplitude((2,))
        return pot, residual


def _apply(field: WaveField, order: int, mode: str):
    in_shape = (2,) if mode == "tensor" else ()
    out_shape = (2, 2) if mode == "tensor" else (2,)
    assert tuple(field.vshape) == in_shape
    assert field.smooth is None or field.smooth.is_zero, (
        "anti-divergence is only defined for purely oscillatory fields"
    )

    def pot_term(t):
        pot, _ = _ladder_term(t, order, mode)
        return t.with_amp(pot)

    def res_term(t):
        _, res = _ladder_term(t, order, mode)
        return t.with_amp(res if res is not None else ZeroAmplitude(in_shape))

    pot_terms = [pot_term(t) for t in field.terms]
    res_terms = [rt for rt in (res_term(t) for t in field.terms) if not rt.amp.is_zero]
    pot_groups = [g.map_terms(pot_term, vshape=out_shape) for g in field.groups]
    res_groups = [g.map_terms(res_term, vshape=in_shape) for g in field.groups]
    potential = WaveField(out_shape, None, pot_terms, pot_groups, field.support_radius)
    residual = WaveField(in_shape, None, res_terms, res_groups, field.support_radius)
    return potential, residual


def tensor_antidivergence(field: WaveField, order: int):
    """Symmetric-matrix potential P and residual r with div P + r = field."""
    return _apply(field, order, "tensor")


def scalar_antidivergence(field: WaveField, order: int):
    """Vector potential U and residual r with div U + r = field (scalar)."""
    return _apply(field, order, "scalar")
