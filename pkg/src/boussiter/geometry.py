"""Direction geometry: decomposing stresses and fluxes onto three fixed waves.

Three unit-scale directions k1, k2, k3 are chosen so their dyads k_i k_i^T sum
to the identity.  Near the identity every symmetric 2x2 matrix R then splits as

    R = sum_i  gamma_i(R)^2  k_i k_i^T,

a plain 3x3 linear solve in the basis (R11, R12, R22), with smooth positive
weights gamma_i in [1/2, 3/2] on a calibrated ball around Id.  Vectors split
on (k1, k2) alone.  The calibrated ball radius (times a 0.9 safety factor) is
exported as ETA and drives every smallness threshold downstream.
"""

from __future__ import annotations

import numpy as np

K1 = np.array([1.0 / np.sqrt(2.0), 1.0 / np.sqrt(3.0)])
K2 = np.array([-0.5, 2.0 / np.sqrt(6.0)])
K3 = np.array([0.5, 0.0])
DIRECTIONS = (K1, K2, K3)

DYADS = np.stack([np.outer(k, k) for k in DIRECTIONS])

# coefficient matrix of the 3x3 solve: rows are the (R11, R12, R22) components
# of the dyads, columns the three directions
_BASIS = np.stack([[D[0, 0], D[0, 1], D[1, 1]] for D in DYADS], axis=1)
_BASIS_INV = np.linalg.inv(_BASIS)

# 2x2 vector split on (k1, k2); the determinant is sqrt(3)/2
_VBASIS = np.stack([K1, K2], axis=1)
_VBASIS_INV = np.linalg.inv(_VBASIS)


def perp(k):
    """Rotate a 2-vector by +90 degrees."""
    k = np.asarray(k)
    return np.stack([-k[..., 1], k[..., 0]], axis=-1)


def stress_weights(R):
    """Squared weights gamma_i^2 with sum_i gamma_i^2 k_i k_i^T = R.

    R: (..., 2, 2) symmetric.  Returns (..., 3).
    """

    R = np.asarray(R, dtype=float)
    comp = np.stack([R[..., 0, 0], R[..., 0, 1], R[..., 1, 1]], axis=-1)
    return comp @ _BASIS_INV.T


def compose_stress(weights):
    """Inverse of :func:`stress_weights`: sum_i w_i k_i k_i^T."""
    w = np.asarray(weights, dtype=float)
    return np.tensordot(w, DYADS, axes=([-1], [0]))


def stress_factors(R, clip=False):
    """gamma_i(R) = sqrt(gamma_i^2); raises if any weight is non-positive."""
    w = stress_weights(R)
    if np.any(w <= 0):
        raise ValueError("stress outside the positive cone of the decomposition")
    return np.sqrt(w)


def vector_weights(f):
    """Weights (g1, g2) with g1 k1 + g2 k2 = f.  f: (..., 2)."""
    f = np.asarray(f, dtype=float)
    return f @ _VBASIS_INV.T


def compose_vector(weights):
    w = np.asarray(weights, dtype=float)
    return w @ _VBASIS.T


def calibration_radius(lo=0.25, hi=2.25):
    """Largest Frobenius radius around Id keeping every gamma_i^2 in [lo, hi].

    For R = Id + E the weights are 1 + B^{-1} e with e = (E11, E12, E22), and
    the extreme of a row functional over the Frobenius ball ||E||_F <= r
    (which weighs the off-diagonal twice) is r times the dual norm
    sqrt(row1^2 + row2^2/2 + row3^2).  Verified by random audit in the tests.
    """

    margin = min(1.0 - lo, hi - 1.0)
    dual = np.sqrt(
        _BASIS_INV[:, 0] ** 2 + _BASIS_INV[:, 1] ** 2 / 2.0 + _BASIS_INV[:, 2] ** 2
    )
    return margin / dual.max()


#: safety-deflated calibrated radius; the smallness threshold used everywhere
ETA = 0.9 * calibration_radius()
