"""Direction-geometry tests: dyad algebra, decompositions, calibration."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from boussiter import geometry as G


def test_dyads_sum_to_identity():
    assert np.allclose(G.DYADS.sum(axis=0), np.eye(2), atol=1e-15)


def test_dyad_values():
    # hand values of the three dyads
    s6 = np.sqrt(6.0)
    assert np.allclose(G.DYADS[0], [[0.5, 1 / s6], [1 / s6, 1 / 3]], atol=1e-15)
    assert np.allclose(G.DYADS[1], [[0.25, -1 / s6], [-1 / s6, 2 / 3]], atol=1e-15)
    assert np.allclose(G.DYADS[2], [[0.25, 0.0], [0.0, 0.0]], atol=1e-15)


def test_identity_decomposes_with_unit_weights():
    w = G.stress_weights(np.eye(2))
    assert np.allclose(w, [1.0, 1.0, 1.0], atol=1e-14)


def test_stress_weights_frozen_example():
    # oracle: independent 3x3 solve, plus frozen values
    R = np.array([[1.0, 0.1], [0.1, 1.0]])
    A = np.stack([[D[0, 0], D[0, 1], D[1, 1]] for D in G.DYADS], axis=1)
    want = np.linalg.solve(A, [R[0, 0], R[0, 1], R[1, 1]])
    got = G.stress_weights(R)
    assert np.allclose(got, want, atol=1e-14)
    assert np.allclose(got, [1.1633, 0.9184, 0.7551], atol=5e-4)
    assert np.allclose(G.compose_stress(got), R, atol=1e-14)


def test_vector_weights_frozen_example():
    f = np.array([1.0, 0.0])
    g = G.vector_weights(f)
    assert np.allclose(g, [2 * np.sqrt(2) / 3, -2.0 / 3.0], atol=1e-14)
    assert np.allclose(G.compose_vector(g), f, atol=1e-15)


@given(
    e11=st.floats(-0.2, 0.2),
    e12=st.floats(-0.2, 0.2),
    e22=st.floats(-0.2, 0.2),
)
@settings(max_examples=200, deadline=None)
def test_roundtrip_property(e11, e12, e22):
    R = np.eye(2) + np.array([[e11, e12], [e12, e22]])
    w = G.stress_weights(R)
    assert np.allclose(G.compose_stress(w), R, atol=1e-12)


def test_calibration_radius_is_sharp():
    # audit the closed form: on the sphere of the calibrated radius all
    # weights stay inside [1/4, 9/4]; 3 percent beyond, some leave
    r0 = G.calibration_radius()
    rng = np.random.default_rng(11)
    e = rng.normal(size=(20000, 3))
    # Frobenius length of a symmetric matrix counts the off-diagonal twice
    wnorm = np.sqrt(e[:, 0] ** 2 + 2 * e[:, 1] ** 2 + e[:, 2] ** 2)
    e_on = e / wnorm[:, None]
    E = np.zeros((len(e), 2, 2))
    E[:, 0, 0], E[:, 0, 1], E[:, 1, 0], E[:, 1, 1] = e_on[:, 0], e_on[:, 1], e_on[:, 1], e_on[:, 2]
    w_at = G.stress_weights(np.eye(2) + r0 * E)
    assert w_at.min() >= 0.25 - 1e-12 and w_at.max() <= 2.25 + 1e-12
    w_beyond = G.stress_weights(np.eye(2) + 1.03 * r0 * E)
    assert w_beyond.min() < 0.25 or w_beyond.max() > 2.25


def test_eta_value_stable():
    assert 0.9 * G.calibration_radius() == G.ETA
    assert 0.1 < G.ETA < 0.6  # order of magnitude guard


def test_gamma_range_on_safety_ball():
    # inside the deflated ball ETA, factors are well within [1/2, 3/2]
    rng = np.random.default_rng(5)
    e = rng.normal(size=(5000, 3))
    wnorm = np.sqrt(e[:, 0] ** 2 + 2 * e[:, 1] ** 2 + e[:, 2] ** 2)
    r = G.ETA * rng.uniform(0, 1, len(e)) ** (1 / 3)
    e = e * (r / wnorm)[:, None]
    E = np.zeros((len(e), 2, 2))
    E[:, 0, 0], E[:, 0, 1], E[:, 1, 0], E[:, 1, 1] = e[:, 0], e[:, 1], e[:, 1], e[:, 2]
    gam = G.stress_factors(np.eye(2) + E)
    assert gam.min() >= 0.5 and gam.max() <= 1.5


def test_perp():
    assert np.allclose(G.perp([1.0, 2.0]), [-2.0, 1.0])
    # k . perp(k) vanishes to rounding (np.dot may use FMA, so not bitwise);
    # code that needs this exactly drops the term structurally instead
    for k in G.DIRECTIONS:
        assert abs(float(np.dot(k, G.perp(k)))) < 1e-16
