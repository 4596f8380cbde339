"""Lazy space-time fields assembled from plane-wave terms.

A point batch is a float array of shape (N, 3) with columns (t, x1, x2).
A field evaluates as

    value(p) = smooth(p) + sum_terms 2*Re( A(p) * exp(i*phase(p)) ) + groups,

    phase(p) = sign * freq * ( xi . x  -  (xi . vel) * t ),

so every stored term stands for itself plus its complex conjugate, and field
values are real.  Amplitudes are lazy nodes that know their own derivatives.

Two derivative notions appear and must not be confused:

* ``Amplitude.derivative(axis)`` -- plain partial of the amplitude function.
* ``differentiate(term_or_field, axis)`` -- partial of the *represented*
  field; on a wave term the phase factor is folded into the amplitude.

Both are realised as multi-index bookkeeping on one wrapper node
(:class:`PhaseDerivative`), evaluated in a canonical order, so repeated
derivatives commute bitwise.  Downstream structural identities (divergence-free
perturbations, anti-divergence telescoping, transport cancellation) rely on
exactly this.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

AXES = (0, 1, 2)  # t, x1, x2

# ---------------------------------------------------------------------------
# amplitude nodes
# ---------------------------------------------------------------------------


class Amplitude:
    """Base class: a complex-valued function of (N,3) points with derivatives."""

    vshape: tuple = ()

    def value(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _plain_derivative(self, axis: int) -> "Amplitude":
        raise NotImplementedError

    def derivative(self, axis: int) -> "Amplitude":
        # memoized so repeated requests return the identical node; this keeps
        # re-derived expression trees bitwise reproducible and cheap
        cache = self.__dict__.setdefault("_dcache", {})
        if axis not in cache:
            cache[axis] = self._plain_derivative(axis)
        return cache[axis]

    @property
    def is_zero(self) -> bool:
        return False


class ZeroAmplitude(Amplitude):
    """Structural zero: survives any derivative and evaluates to zeros."""

    def __init__(self, vshape=()):
        self.vshape = tuple(vshape)

    def value(self, pts):
        return np.zeros((len(pts),) + self.vshape, dtype=complex)

    def _plain_derivative(self, axis):
        return self

    @property
    def is_zero(self):
        return True


class ConstAmplitude(Amplitude):
    def __init__(self, arr):
        self.arr = np.asarray(arr, dtype=complex)
        self.vshape = self.arr.shape

    def value(self, pts):
        out = np.empty((len(pts),) + self.vshape, dtype=complex)
        out[...] = self.arr
        return out

    def _plain_derivative(self, axis):
        return ZeroAmplitude(self.vshape)

    @property
    def is_zero(self):
        return not np.any(self.arr)


def _require_pts(pts):
    pts = np.asarray(pts, dtype=float)
    assert pts.ndim == 2 and pts.shape[1] == 3, "points must be (N,3)"
    return pts


# -- grid-backed amplitudes --------------------------------------------------

# Catmull-Rom basis, rows = nodes (-1,0,1,2), cols = coefficients of 1,u,u^2,u^3
_CR_POLY = np.array(
    [
        [0.0, -0.5, 1.0, -0.5],
        [1.0, 0.0, -2.5, 1.5],
        [0.0, 0.5, 2.0, -1.5],
        [0.0, 0.0, -0.5, 0.5],
    ]
)
_LIN_POLY = np.array([[1.0, -1.0], [0.0, 1.0]])  # nodes (0,1)


def _poly_weights(poly, u, order):
    """Evaluate the basis polynomials (or a u-derivative) at u: (N, nodes)."""
    ncoef = poly.shape[1]
    if order >= ncoef:
        return np.zeros((len(u), poly.shape[0]))
    # derivative of u^j is fall(j,order) * u^(j-order)
    out = np.zeros((len(u), poly.shape[0]))
    for j in range(order, ncoef):
        fall = math.perm(j, order)
        out += np.outer(u ** (j - order) * fall, poly[:, j])
    return out


class GridAmplitude(Amplitude):
    """Amplitude sampled on a uniform box grid, interpolated tri-cubically.

    Derivatives are the *analytic* derivatives of the interpolant (basis
    polynomial derivatives), so mixed partials commute bitwise and derivative
    order ``>= 4`` (cubic) / ``>= 2`` (linear) is a structural zero.  Values
    outside the box are exactly zero; callers are responsible for data that
    decays to zero at the box edge when that matters.
    """

    def __init__(self, box, data, method="cubic", orders=(0, 0, 0)):
        box = np.asarray(box, dtype=float)
        assert box.shape == (3, 2)
        data = np.asarray(data, dtype=complex)
        assert data.ndim >= 3
        self.box = box
        self.data = data
        self.method = method
        self.orders = tuple(orders)
        self.vshape = data.shape[3:]
        self.ns = data.shape[:3]
        self.hs = np.array(
            [
                (box[a, 1] - box[a, 0]) / (self.ns[a] - 1) if self.ns[a] > 1 else 1.0
                for a in AXES
            ]
        )
        self._poly = _CR_POLY if method == "cubic" else _LIN_POLY
        self._maxorder = self._poly.shape[1] - 1

    def value(self, pts):
        pts = _require_pts(pts)
        out = np.zeros((len(pts),) + self.vshape, dtype=complex)
        inside = np.ones(len(pts), dtype=bool)
        for a in AXES:
            inside &= (pts[:, a] >= self.box[a, 0]) & (pts[:, a] <= self.box[a, 1])
        if not inside.any():
            return out
        p = pts[inside]
        nn = self._poly.shape[0]
        idx = []
        wts = []
        for a in AXES:
            s = (p[:, a] - self.box[a, 0]) / self.hs[a]
            i0 = np.clip(np.floor(s).astype(int), 0, max(self.ns[a] - 2, 0))
            u = s - i0
            w = _poly_weights(self._poly, u, self.orders[a]) / self.hs[a] ** self.orders[a]
            base = -1 if self.method == "cubic" else 0
            nodes = np.clip(i0[:, None] + np.arange(base, base + nn)[None, :], 0, self.ns[a] - 1)
            idx.append(nodes)
            wts.append(w)
        # gather (M, nn, nn, nn, *vshape) and contract with the weight product
        g = self.data[
            idx[0][:, :, None, None],
            idx[1][:, None, :, None],
            idx[2][:, None, None, :],
        ]
        w3 = wts[0][:, :, None, None] * wts[1][:, None, :, None] * wts[2][:, None, None, :]
        out[inside] = (w3.reshape(w3.shape + (1,) * len(self.vshape)) * g).sum(axis=(1, 2, 3))
        return out

    def _plain_derivative(self, axis):
        orders = list(self.orders)
        orders[axis] += 1
        if orders[axis] > self._maxorder:
            return ZeroAmplitude(self.vshape)
        return GridAmplitude(self.box, self.data, self.method, tuple(orders))


# -- closed-form amplitudes with finite-difference derivatives ---------------

# central stencils per derivative order: (offsets, coefficients)
_FD_STENCILS = {
    0: ((0,), (1.0,)),
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
    4: ((-2, -1, 0, 1, 2), (1.0, -4.0, 6.0, -4.0, 1.0)),
    5: ((-3, -2, -1, 1, 2, 3), (-0.5, 2.0, -2.5, 2.5, -2.0, 0.5)),
    6: ((-3, -2, -1, 0, 1, 2, 3), (1.0, -6.0, 15.0, -20.0, 15.0, -6.0, 1.0)),
}


class FuncAmplitude(Amplitude):
    """Closed-form amplitude; derivatives via fixed-step central differences.

    The step is fixed per node, and a derivative request only bumps a
    multi-index, so mixed FD partials commute bitwise.  Good for partition
    functions and profiles; use :class:`GridAmplitude` when derivative noise
    at high order would matter.
    """

    def __init__(self, fn, vshape=(), step=1e-3, orders=(0, 0, 0)):
        self.fn = fn
        self.vshape = tuple(vshape)
        self.step = float(step)
        self.orders = tuple(orders)
        self._memo = None

    def value(self, pts):
        pts = _require_pts(pts)
        # one-slot memo: ladder expansions request the same (shared) leaf many
        # times during a single tree walk, always with the identical array
        if self._memo is not None:
            ref, cached = self._memo
            if ref() is pts:
                return cached
        out = self._value(pts)
        try:
            self._memo = (weakref.ref(pts), out)
        except TypeError:
            self._memo = None
        return out

    def _value(self, pts):
        if self.orders == (0, 0, 0):
            return np.asarray(self.fn(pts), dtype=complex)
        offs = []
        coefs = []
        for a in AXES:
            o, c = _FD_STENCILS[self.orders[a]]
            offs.append(np.array(o, dtype=float) * self.step)
            coefs.append(np.array(c) / self.step ** self.orders[a])
        acc = np.zeros((len(pts),) + self.vshape, dtype=complex)
        for i0, d0 in enumerate(offs[0]):
            for i1, d1 in enumerate(offs[1]):
                for i2, d2 in enumerate(offs[2]):
                    c = coefs[0][i0] * coefs[1][i1] * coefs[2][i2]
                    q = pts + np.array([d0, d1, d2])
                    acc += c * np.asarray(self.fn(q), dtype=complex)
        return acc

    def _plain_derivative(self, axis):
        orders = list(self.orders)
        orders[axis] += 1
        if orders[axis] > max(_FD_STENCILS):
            raise ValueError("finite-difference stencil table exhausted (order > 6)")
        return FuncAmplitude(self.fn, self.vshape, self.step, tuple(orders))


# -- algebra nodes -----------------------------------------------------------


class SumAmplitude(Amplitude):
    def __init__(self, children):
        children = [c for c in children if not c.is_zero]
        self.children = children
        self.vshape = children[0].vshape if children else ()

    def value(self, pts):
        if not self.children:
            return np.zeros((len(pts),) + self.vshape, dtype=complex)
        acc = self.children[0].value(pts).copy()
        for c in self.children[1:]:
            acc += c.value(pts)
        return acc

    def _plain_derivative(self, axis):
        return SumAmplitude([c.derivative(axis) for c in self.children])

    @property
    def is_zero(self):
        return not self.children


class ScaledAmplitude(Amplitude):
    """scalar * amplitude (same vshape)."""

    def __new__(cls, factor, child):
        # fold scalar factors into phase-derivative wrappers so that exact
        # +/- cancellations stay bitwise (x + (-x) == 0.0)
        if isinstance(child, PhaseDerivative):
            return PhaseDerivative(
                child.base, child.beta, child.shift, child.pc, child.factor * factor
            )
        self = object.__new__(cls)
        return self

    def __init__(self, factor, child):
        if isinstance(child, PhaseDerivative):  # handled in __new__
            return
        self.factor = complex(factor)
        self.child = child
        self.vshape = child.vshape

    def value(self, pts):
        return self.factor * self.child.value(pts)

    def _plain_derivative(self, axis):
        return ScaledAmplitude(self.factor, self.child.derivative(axis))

    @property
    def is_zero(self):
        return self.child.is_zero or self.factor == 0


class TensorScaleAmplitude(Amplitude):
    """Constant array times a *scalar* amplitude: value = arr * a(p)."""

    def __init__(self, arr, child):
        assert child.vshape == ()
        self.arr = np.asarray(arr, dtype=complex)
        self.child = child
        self.vshape = self.arr.shape

    def value(self, pts):
        v = self.child.value(pts)
        return v.reshape(v.shape + (1,) * self.arr.ndim) * self.arr

    def _plain_derivative(self, axis):
        return TensorScaleAmplitude(self.arr, self.child.derivative(axis))

    @property
    def is_zero(self):
        return self.child.is_zero or not np.any(self.arr)


class ProductAmplitude(Amplitude):
    """Pointwise product scalar*anything with the Leibniz rule.

    The derivative expands a sum tree whose shape depends on the order the
    derivatives were requested in, so products are NOT bitwise-commuting; use
    only where an exact structural cancellation is not required.
    """

    def __init__(self, a, b):
        assert a.vshape == () or b.vshape == ()
        self.a = a
        self.b = b
        self.vshape = a.vshape if a.vshape else b.vshape

    def value(self, pts):
        va = self.a.value(pts)
        vb = self.b.value(pts)
        if self.a.vshape == () and self.b.vshape != ():
            va = va.reshape(va.shape + (1,) * len(self.b.vshape))
        elif self.b.vshape == () and self.a.vshape != ():
            vb = vb.reshape(vb.shape + (1,) * len(self.a.vshape))
        return va * vb

    def _plain_derivative(self, axis):
        return SumAmplitude(
            [
                ProductAmplitude(self.a.derivative(axis), self.b),
                ProductAmplitude(self.a, self.b.derivative(axis)),
            ]
        )

    @property
    def is_zero(self):
        return self.a.is_zero or self.b.is_zero


class ComponentAmplitude(Amplitude):
    def __init__(self, child, index):
        self.child = child
        self.index = tuple(index)
        self.vshape = ()

    def value(self, pts):
        return self.child.value(pts)[(slice(None),) + self.index]

    def _plain_derivative(self, axis):
        return ComponentAmplitude(self.child.derivative(axis), self.index)

    @property
    def is_zero(self):
        return self.child.is_zero


class StackAmplitude(Amplitude):
    """Build a vector/matrix amplitude out of scalar children."""

    def __init__(self, children, vshape):
        self.children = list(children)
        self.vshape = tuple(vshape)
        assert len(self.children) == int(np.prod(self.vshape))

    def value(self, pts):
        cols = [c.value(pts) for c in self.children]
        return np.stack(cols, axis=-1).reshape((len(pts),) + self.vshape)

    def _plain_derivative(self, axis):
        return StackAmplitude([c.derivative(axis) for c in self.children], self.vshape)

    @property
    def is_zero(self):
        return all(c.is_zero for c in self.children)


class OuterAmplitude(Amplitude):
    """Outer product of two vector amplitudes."""

    def __init__(self, u, v):
        assert len(u.vshape) == 1 and len(v.vshape) == 1
        self.u = u
        self.v = v
        self.vshape = (u.vshape[0], v.vshape[0])

    def value(self, pts):
        return self.u.value(pts)[:, :, None] * self.v.value(pts)[:, None, :]

    def _plain_derivative(self, axis):
        return SumAmplitude(
            [
                OuterAmplitude(self.u.derivative(axis), self.v),
                OuterAmplitude(self.u, self.v.derivative(axis)),
            ]
        )

    @property
    def is_zero(self):
        return self.u.is_zero or self.v.is_zero


class ConjAmplitude(Amplitude):
    """Complex conjugate of an amplitude (used for difference carriers)."""

    def __init__(self, child):
        self.child = child
        self.vshape = child.vshape

    def value(self, pts):
        return np.conj(self.child.value(pts))

    def _plain_derivative(self, axis):
        return ConjAmplitude(self.child.derivative(axis))

    @property
    def is_zero(self):
        return self.child.is_zero


class PhaseDerivative(Amplitude):
    """``factor * D^shift [ e^{-i phi} D^beta ( base * e^{i phi} ) ]``.

    ``pc`` holds the phase gradient (d phi/dt, d phi/dx1, d phi/dx2) of the
    owning wave term.  The node evaluates the binomial expansion

        sum_{alpha <= beta}  C(beta, alpha) (i pc)^(beta-alpha) D^(alpha+shift) base

    in canonical (lexicographic) order.  Both derivative notions only bump a
    multi-index here, so they commute bitwise, and opposite ``factor`` signs
    cancel exactly.
    """

    def __init__(self, base, beta=(0, 0, 0), shift=(0, 0, 0), pc=(0.0, 0.0, 0.0), factor=1.0):
        if isinstance(base, PhaseDerivative) and base.shift == (0, 0, 0):
            # collapse nested wrappers with identical phase coefficients
            if tuple(base.pc) == tuple(pc) or base.beta == (0, 0, 0):
                pc_eff = pc if base.beta == (0, 0, 0) else base.pc
                beta = tuple(b1 + b2 for b1, b2 in zip(beta, base.beta))
                factor = factor * base.factor
                base = base.base
                pc = pc_eff
        self.base = base
        self.beta = tuple(beta)
        self.shift = tuple(shift)
        self.pc = tuple(complex(c) for c in pc)
        self.factor = complex(factor)
        self.vshape = base.vshape
        self._memo = None

    def _dbase(self, alpha):
        node = self.base
        for a in AXES:
            for _ in range(alpha[a] + self.shift[a]):
                node = node.derivative(a)
        return node

    def value(self, pts):
        pts = _require_pts(pts)
        if self._memo is not None:
            ref, cached = self._memo
            if ref() is pts:
                return cached
        out = self._value(pts)
        try:
            self._memo = (weakref.ref(pts), out)
        except TypeError:
            self._memo = None
        return out

    def _value(self, pts):
        acc = np.zeros((len(pts),) + self.vshape, dtype=complex)
        b0, b1, b2 = self.beta
        for a0 in range(b0 + 1):
            for a1 in range(b1 + 1):
                for a2 in range(b2 + 1):
                    coef = (
                        math.comb(b0, a0)
                        * math.comb(b1, a1)
                        * math.comb(b2, a2)
                        * (1j * self.pc[0]) ** (b0 - a0)
                        * (1j * self.pc[1]) ** (b1 - a1)
                        * (1j * self.pc[2]) ** (b2 - a2)
                    )
                    if coef == 0:
                        continue
                    acc += coef * self._dbase((a0, a1, a2)).value(pts)
        acc *= self.factor
        return acc

    def _plain_derivative(self, axis):
        shift = list(self.shift)
        shift[axis] += 1
        return PhaseDerivative(self.base, self.beta, tuple(shift), self.pc, self.factor)

    def phase_derivative(self, axis):
        """The represented-field derivative: bump the binomial multi-index."""
        assert self.shift == (0, 0, 0), "phase derivative after plain derivative"
        beta = list(self.beta)
        beta[axis] += 1
        return PhaseDerivative(self.base, tuple(beta), self.shift, self.pc, self.factor)

    @property
    def is_zero(self):
        return self.factor == 0 or self.base.is_zero


def amp_sum(*children):
    children = [c for c in children if not c.is_zero]
    if not children:
        return ZeroAmplitude()
    if len(children) == 1:
        return children[0]
    return SumAmplitude(children)


# ---------------------------------------------------------------------------
# wave terms and fields
# ---------------------------------------------------------------------------


@dataclass
class WaveTerm:
    """One conjugate pair: contributes 2*Re( amp * e^{i*phase} ).

    phase(p) = sign*freq*( xi.x - (xi.vel) t ).  freq > 0; sign in {+1,-1}.
    """

    amp: Amplitude
    xi: np.ndarray
    freq: float
    vel: np.ndarray
    sign: int = 1

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.vel = np.asarray(self.vel, dtype=float)
        assert self.freq > 0 and self.sign in (-1, 1)
        assert self.xi.shape == (2,) and float(np.dot(self.xi, self.xi)) > 0

    @property
    def vshape(self):
        return self.amp.vshape

    def phase_gradient(self):
        """(dphi/dt, dphi/dx1, dphi/dx2) — constants of the carrier wave."""
        sf = self.sign * self.freq
        return (-sf * float(np.dot(self.xi, self.vel)), sf * self.xi[0], sf * self.xi[1])

    def spacetime_frequency(self):
        """Full 3-vector carrier frequency (t, x1, x2) — used by mollification."""
        return np.array(self.phase_gradient(), dtype=float).real

    def phase(self, pts):
        sf = self.sign * self.freq
        return sf * (
            self.xi[0] * (pts[:, 1] - self.vel[0] * pts[:, 0])
            + self.xi[1] * (pts[:, 2] - self.vel[1] * pts[:, 0])
        )

    def eval(self, pts):
        pts = _require_pts(pts)
        carrier = np.exp(1j * self.phase(pts))
        v = self.amp.value(pts)
        return 2.0 * (v * carrier.reshape((-1,) + (1,) * len(self.vshape))).real

    def eval_complex(self, pts):
        """One-sided value amp*e^{i phase} (no conjugate partner)."""
        pts = _require_pts(pts)
        carrier = np.exp(1j * self.phase(pts))
        v = self.amp.value(pts)
        return v * carrier.reshape((-1,) + (1,) * len(self.vshape))

    def with_amp(self, amp):
        return WaveTerm(amp, self.xi, self.freq, self.vel, self.sign)


def _phase_diff(amp: Amplitude, axis: int, pc: tuple) -> Amplitude:
    """e^{-i phi} d_axis ( amp e^{i phi} ), pushed through linear wrappers.

    Pushing through keeps every branch a *single* binomial node over its leaf,
    so that equal-and-opposite branches cancel bitwise (divergence-free
    perturbations, telescoping ladders).  Non-linear nodes fall back to a
    generic wrap, which is correct but only cancels to rounding.
    """

    if isinstance(amp, ZeroAmplitude):
        return amp
    if isinstance(amp, PhaseDerivative) and amp.shift == (0, 0, 0) and (
        amp.pc == pc or amp.beta == (0, 0, 0)
    ):
        merged = PhaseDerivative(amp.base, amp.beta, amp.shift, pc, amp.factor)
        return merged.phase_derivative(axis)
    if isinstance(amp, TensorScaleAmplitude):
        return TensorScaleAmplitude(amp.arr, _phase_diff(amp.child, axis, pc))
    if isinstance(amp, ComponentAmplitude):
        return ComponentAmplitude(_phase_diff(amp.child, axis, pc), amp.index)
    if isinstance(amp, SumAmplitude):
        return SumAmplitude([_phase_diff(c, axis, pc) for c in amp.children])
    if isinstance(amp, ScaledAmplitude):
        return ScaledAmplitude(amp.factor, _phase_diff(amp.child, axis, pc))
    if isinstance(amp, StackAmplitude):
        return StackAmplitude([_phase_diff(c, axis, pc) for c in amp.children], amp.vshape)
    wrapped = PhaseDerivative(amp, (0, 0, 0), (0, 0, 0), pc, 1.0)
    return wrapped.phase_derivative(axis)


def differentiate_term(term: WaveTerm, axis: int) -> WaveTerm:
    """Phase-aware derivative of a wave term."""
    pc = tuple(complex(c) for c in term.phase_gradient())
    return term.with_amp(_phase_diff(term.amp, axis, pc))


class TermGroup:
    """Interface for lazily enumerated families of wave terms (lattice sums).

    Concrete groups implement ``eval``, ``materialize`` and ``map_terms``;
    everything else is expressed through per-term maps.
    """

    vshape: tuple = ()

    def eval(self, pts) -> np.ndarray:  # real contribution, shape (N,)+vshape
        raise NotImplementedError

    def materialize(self, cap=20000) -> list:
        raise NotImplementedError

    def map_terms(self, fn, vshape=None) -> "TermGroup":
        """Per-term map; ``vshape`` overrides the value shape when fn changes it."""
        raise NotImplementedError

    def derivative(self, axis) -> "TermGroup":
        return self.map_terms(lambda t: differentiate_term(t, axis))

    def scaled(self, c) -> "TermGroup":
        return self.map_terms(lambda t: t.with_amp(ScaledAmplitude(c, t.amp)))

    def component(self, index) -> "TermGroup":
        index = tuple(index)
        return self.map_terms(
            lambda t: t.with_amp(ComponentAmplitude(t.amp, index)), vshape=()
        )

    def embedded(self, onehot) -> "TermGroup":
        arr = np.asarray(onehot)
        return self.map_terms(
            lambda t: t.with_amp(TensorScaleAmplitude(arr, t.amp)), vshape=arr.shape
        )


@dataclass
class WaveField:
    """smooth + wave terms + lazily enumerated term groups."""

    vshape: tuple
    smooth: Amplitude | None = None
    terms: list = dc_field(default_factory=list)
    groups: list = dc_field(default_factory=list)
    support_radius: float | None = None

    def eval(self, pts):
        pts = _require_pts(pts)
        out = np.zeros((len(pts),) + tuple(self.vshape), dtype=float)
        if self.smooth is not None and not self.smooth.is_zero:
            out += self.smooth.value(pts).real
        for t in self.terms:
            out += t.eval(pts)
        for g in self.groups:
            out += g.eval(pts)
        return out

    def materialized_terms(self, cap=20000):
        out = list(self.terms)
        for g in self.groups:
            out.extend(g.materialize(cap))
            if len(out) > cap:
                raise ValueError(
                    f"materializing {len(out)}+ wave terms exceeds cap={cap}; "
                    "raise the cap or export a smaller region"
                )
        return out

    def map_terms(self, fn):
        return WaveField(
            self.vshape,
            self.smooth,
            [fn(t) for t in self.terms],
            [g.map_terms(fn) for g in self.groups],
            self.support_radius,
        )


def differentiate(f: WaveField, axis: int) -> WaveField:
    smooth = f.smooth.derivative(axis) if f.smooth is not None else None
    return WaveField(
        f.vshape,
        smooth,
        [differentiate_term(t, axis) for t in f.terms],
        [g.derivative(axis) for g in f.groups],
        f.support_radius,
    )


def field_sum(*fs: WaveField) -> WaveField:
    fs = [f for f in fs if f is not None]
    assert fs
    vshape = fs[0].vshape
    smooth = amp_sum(*[f.smooth for f in fs if f.smooth is not None])
    terms = [t for f in fs for t in f.terms]
    groups = [g for f in fs for g in f.groups]
    rads = [f.support_radius for f in fs if f.support_radius is not None]
    return WaveField(vshape, None if smooth.is_zero else smooth, terms, groups,
                     max(rads) if rads else None)


def field_scale(c: float, f: WaveField) -> WaveField:
    smooth = None if f.smooth is None else ScaledAmplitude(c, f.smooth)
    return WaveField(
        f.vshape,
        smooth,
        [t.with_amp(ScaledAmplitude(c, t.amp)) for t in f.terms],
        [g.scaled(c) for g in f.groups],
        f.support_radius,
    )


def _amp_component(amp, index):
    if amp is None or amp.is_zero:
        return ZeroAmplitude()
    return ComponentAmplitude(amp, index)


def field_component(f: WaveField, index) -> WaveField:
    index = tuple(index)
    smooth = None if f.smooth is None else _amp_component(f.smooth, index)
    return WaveField(
        (),
        smooth,
        [t.with_amp(ComponentAmplitude(t.amp, index)) for t in f.terms],
        [g.component(index) for g in f.groups],
        f.support_radius,
    )


def divergence(f: WaveField) -> WaveField:
    """Row divergence: matrix (2,2) -> vector (2,), or vector (2,) -> scalar."""
    d1 = differentiate(f, 1)
    d2 = differentiate(f, 2)
    if f.vshape == (2,):
        return field_sum(field_component(d1, (0,)), field_component(d2, (1,)))
    assert f.vshape == (2, 2)
    comps = [
        field_sum(field_component(d1, (k, 0)), field_component(d2, (k, 1)))
        for k in (0, 1)
    ]
    return field_stack(comps, (2,))


def field_stack(fields: Sequence[WaveField], vshape) -> WaveField:
    """Stack scalar fields into a vector/matrix field.

    Wave terms are NOT merged across components (they keep their own carriers);
    each scalar term is embedded with a one-hot tensor factor.
    """

    vshape = tuple(vshape)
    n = int(np.prod(vshape))
    assert len(fields) == n
    smooth_children = []
    terms = []
    groups = []
    rads = []
    any_smooth = False
    for flat, f in enumerate(fields):
        assert f.vshape == ()
        idx = np.unravel_index(flat, vshape)
        onehot = np.zeros(vshape)
        onehot[idx] = 1.0
        if f.smooth is not None and not f.smooth.is_zero:
            any_smooth = True
        smooth_children.append(f.smooth if f.smooth is not None else ZeroAmplitude())
        for t in f.terms:
            terms.append(t.with_amp(TensorScaleAmplitude(onehot, t.amp)))
        for g in f.groups:
            groups.append(g.embedded(onehot))
        if f.support_radius is not None:
            rads.append(f.support_radius)
    smooth = StackAmplitude(smooth_children, vshape) if any_smooth else None
    return WaveField(vshape, smooth, terms, groups, max(rads) if rads else None)


def perp_gradient(f: WaveField) -> WaveField:
    """Rotated gradient (-d2 s, d1 s) of a scalar field."""
    assert f.vshape == ()
    d1 = differentiate(f, 1)
    d2 = differentiate(f, 2)
    return field_stack([field_scale(-1.0, d2), d1], (2,))


def advect(f: WaveField, vel) -> WaveField:
    """Transport derivative (d_t + vel . grad) f for a constant velocity.

    On a wave term whose carrier moves with exactly this velocity the phase
    contribution vanishes identically: (d/dt + vel.grad) e^{i phase} = 0 when
    vel == term.vel, and the implementation drops it structurally rather than
    subtracting two large equal numbers.
    """

    vel = np.asarray(vel, dtype=float)

    def one_term(t: WaveTerm) -> WaveTerm:
        pc = tuple(complex(c) for c in t.phase_gradient())
        base = t.amp
        if isinstance(base, PhaseDerivative) and base.shift == (0, 0, 0) and base.pc == pc:
            inner = base
        else:
            inner = PhaseDerivative(base, (0, 0, 0), (0, 0, 0), pc, 1.0)
        # amplitude transport: d_t A + vel . grad A  (plain derivatives)
        parts = [inner.derivative(0)]
        for j in (0, 1):
            if vel[j] != 0.0:
                parts.append(ScaledAmplitude(vel[j], inner.derivative(j + 1)))
        # carrier transport: i*(dphi/dt + vel . grad phi) * A, which is exactly
        # zero for a co-moving carrier and is then omitted structurally
        if not np.array_equal(vel, t.vel):
            sf = t.sign * t.freq
            rate = sf * float(np.dot(t.xi, vel - t.vel))
            if rate != 0.0:
                parts.append(ScaledAmplitude(1j * rate, inner))
        return t.with_amp(amp_sum(*parts))

    smooth = None
    if f.smooth is not None:
        parts = [f.smooth.derivative(0)]
        for j in (0, 1):
            if vel[j] != 0.0:
                parts.append(ScaledAmplitude(vel[j], f.smooth.derivative(j + 1)))
        smooth = amp_sum(*parts)
    return WaveField(
        f.vshape,
        smooth,
        [one_term(t) for t in f.terms],
        [g.map_terms(one_term) for g in f.groups],
        f.support_radius,
    )


# ---------------------------------------------------------------------------
# sampling helpers
# ---------------------------------------------------------------------------


def sobol_points(n, box, seed=0):
    """Deterministic low-discrepancy points in a (3,2) box."""
    from scipy.stats import qmc

    box = np.asarray(box, dtype=float)
    eng = qmc.Sobol(d=3, scramble=True, seed=seed)
    m = max(1, math.ceil(math.log2(n)))  # draw a power of two, keep the prefix
    u = eng.random_base2(m)[:n]
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


def cube_box(radius):
    """The centred cube [-r,r]^3 as a (3,2) box array."""
    r = float(radius)
    return np.array([[-r, r]] * 3)


def pointwise_norm(vals):
    """Euclidean magnitude per point for scalar/vector/matrix samples."""
    v = np.asarray(vals)
    if v.ndim == 1:
        return np.abs(v)
    return np.sqrt((v.reshape(len(v), -1) ** 2).sum(axis=1))


def sup_norm(field_or_fn, box, n=4096, seed=0, batch=2048):
    """Sup-norm estimate on low-discrepancy samples (monotone in n)."""
    box = np.asarray(box, dtype=float)
    fn = field_or_fn.eval if hasattr(field_or_fn, "eval") else field_or_fn
    pts = sobol_points(n, box, seed)
    best = 0.0
    for k in range(0, n, batch):
        vals = fn(pts[k : k + batch])
        best = max(best, float(pointwise_norm(vals).max()))
    return best


def holder_seminorm(fn, box, alpha, n_dirs=48, n_scales=10, seed=1):
    """Estimate sup |f(x)-f(y)| / |x-y|^alpha over dyadic separations.

    Pairs are seeded low-discrepancy base points displaced along random unit
    directions at separations r, r/2, ..., r/2^(n_scales-1).
    """

    box = np.asarray(box, dtype=float)
    half = 0.5 * (box[:, 1] - box[:, 0])
    r0 = float(half.min())
    base = sobol_points(n_dirs, box * 0.5, seed)  # keep pairs inside the box
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_dirs, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    best = 0.0
    for k in range(n_scales):
        sep = r0 / 2.0 ** (k + 1)
        a = base
        b = base + sep * dirs
        da = fn(a)
        db = fn(b)
        diff = pointwise_norm(da - db)
        best = max(best, float((diff / sep ** alpha).max()))
    return best
