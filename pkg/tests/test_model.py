import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachbound.model import (
    Boundedness,
    DangerSet,
    Ellipsoid,
    InputBounds,
    InvalidDangerSet,
    LtiSystem,
    ModelError,
    boundedness_diagnostic,
    ellipsoid_volume,
    hyperplane_distance,
    input_weight,
    normalize_halfspace,
    spectral_radius,
    symmetrize,
)

from cases import DEMO_F, DEMO_G, random_spd


# ---------------------------------------------------------------- types


def test_system_dimensions():
    s = LtiSystem(DEMO_F, DEMO_G)
    assert (s.n, s.m) == (2, 2)
    s = LtiSystem(0.5, 1.0)
    assert (s.n, s.m) == (1, 1)


@pytest.mark.parametrize("F, G", [
    ([[1, 2, 3], [4, 5, 6]], [[1], [1]]),
    ([[1, 0], [0, 1]], [[1], [1], [1]]),
    ([[np.nan]], [[1]]),
    ([[1]], [[np.inf]]),
])
def test_system_rejects_bad_shapes(F, G):
    with pytest.raises(ModelError):
        LtiSystem(F, G)


def test_system_is_immutable():
    s = LtiSystem(DEMO_F, DEMO_G)
    with pytest.raises(ValueError):
        s.F[0, 0] = 1.0


def test_bounds_name_bad_entry():
    with pytest.raises(ModelError, match=r"gamma\[1\]"):
        InputBounds([1.0, 0.0])
    with pytest.raises(ModelError, match=r"gamma\[0\]"):
        InputBounds([-1.0])


def test_symmetrize_tolerance():
    M = np.array([[1.0, 2.0], [2.0 + 1e-12, 1.0]])
    S = symmetrize(M)
    assert np.array_equal(S, S.T)
    with pytest.raises(ModelError):
        symmetrize(np.array([[1.0, 2.0], [2.1, 1.0]]))


def test_ellipsoid_rejects_indefinite():
    with pytest.raises(ModelError):
        Ellipsoid(np.diag([1.0, -1.0]))
    with pytest.raises(ModelError):
        Ellipsoid(np.eye(2), 0.0)


# ---------------------------------------------------------------- operations


@pytest.mark.parametrize("gamma, expected", [
    ([8, 10], [0.125, 0.1]),
    ([1], [1.0]),
    ([1.2, 0.8, 1.1], [1 / 1.2, 1.25, 1 / 1.1]),
])
def test_input_weight(gamma, expected):
    R = input_weight(InputBounds(gamma))
    assert np.allclose(R, np.diag(expected), rtol=1e-15)


def test_boundedness_examples():
    v = boundedness_diagnostic(LtiSystem(0.5, 1.0))
    assert v.verdict is Boundedness.BOUNDED and v.spectral_radius == pytest.approx(0.5)

    v = boundedness_diagnostic(LtiSystem(DEMO_F, DEMO_G))
    # roots of l**2 - 0.96 l + 0.2089
    oracle = max(abs(np.roots([1.0, -0.96, 0.2089])))
    assert v.verdict is Boundedness.BOUNDED
    assert v.spectral_radius == pytest.approx(oracle, rel=1e-12)
    assert v.spectral_radius == pytest.approx(0.627, abs=5e-4)

    v = boundedness_diagnostic(LtiSystem(1.0, 1.0))
    assert v.verdict is Boundedness.POSSIBLY_UNBOUNDED and v.spectral_radius == 1.0

    v = boundedness_diagnostic(LtiSystem(2.0, 1.0))
    assert v.verdict is Boundedness.UNBOUNDED


def test_boundedness_rotation_on_unit_circle():
    th = 0.3
    F = [[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]]
    assert boundedness_diagnostic(LtiSystem(F, [[1], [0]])).verdict is Boundedness.POSSIBLY_UNBOUNDED


@pytest.mark.parametrize("P, alpha, expected", [
    (np.eye(2), 1.0, math.pi),
    ([[0.25]], 1.0, 4.0),
    (np.diag([4.0, 1.0]), 1.0, math.pi / 2),
    (np.eye(3), 1.0, 4 * math.pi / 3),
])
def test_ellipsoid_volume(P, alpha, expected):
    assert ellipsoid_volume(Ellipsoid(P, alpha)) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("P, c, b, expected", [
    (np.eye(2), [1, 0], 2, 1.0),
    (np.eye(2), [1, 0], 1, 0.0),
    ([[0.25]], [1], 2, 0.0),
    (np.eye(2), [3, 4], 10, 1.0),
])
def test_hyperplane_distance(P, c, b, expected):
    assert hyperplane_distance(Ellipsoid(P, 1.0), c, b) == pytest.approx(expected, abs=1e-15)


def test_hyperplane_distance_negative_when_crossing():
    assert hyperplane_distance(Ellipsoid(np.eye(2), 4.0), [1, 0], 1) == pytest.approx(-1.0)


def test_normalize_halfspace_examples():
    c, b = normalize_halfspace([0.1, 1], 3, ">=")
    assert np.allclose(c, [0.1, 1]) and b == 3
    c, b = normalize_halfspace([-2, 1], -2 * math.sqrt(5), "<=")
    assert np.allclose(c, [2, -1]) and b == pytest.approx(2 * math.sqrt(5))
    with pytest.raises(InvalidDangerSet):
        normalize_halfspace([1], -1, ">=")
    with pytest.raises(InvalidDangerSet):
        normalize_halfspace([1], 0.0, ">=")
    with pytest.raises(InvalidDangerSet):
        normalize_halfspace([0, 0], 1, ">=")
    with pytest.raises(InvalidDangerSet):
        normalize_halfspace([1], 1, "<=")


def test_danger_set_membership():
    D = DangerSet.from_halfspaces([([0.1, 1], 3), ([-2, 1], -2 * math.sqrt(5), "<=")])
    assert len(D) == 2
    assert not D.contains(np.zeros(2))
    assert D.contains(np.array([0.0, 3.0]))
    assert D.contains(np.array([3.0, 0.0]))
    pts = np.array([[0, 0], [0, 3.5], [5, 0]])
    assert D.contains(pts).tolist() == [False, True, True]


def test_danger_set_rejects_origin_inside():
    with pytest.raises(InvalidDangerSet):
        DangerSet(np.array([[1.0, 0.0]]), np.array([-1.0]))
    with pytest.raises(InvalidDangerSet):
        DangerSet.from_halfspaces([([1, 0], 1), ([1, 0, 0], 1)])


def test_empty_danger_set():
    D = DangerSet.from_halfspaces([], 3)
    assert len(D) == 0
    assert not np.any(D.contains(np.ones((4, 3))))


def test_spectral_radius_nonsymmetric():
    F = np.array([[0.0, 1.0], [-0.81, 0.0]])  # eigenvalues +-0.9i
    assert spectral_radius(F) == pytest.approx(0.9, rel=1e-14)


# ---------------------------------------------------------------- properties

dims = st.integers(1, 5)
seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=50, deadline=None)
@given(dims, seeds)
def test_origin_always_inside(n, seed):
    rng = np.random.default_rng(seed)
    e = Ellipsoid(random_spd(rng, n), rng.uniform(0.1, 10))
    assert e.contains(np.zeros(n))


@settings(max_examples=50, deadline=None)
@given(dims, seeds)
def test_distance_zero_when_touching(n, seed):
    rng = np.random.default_rng(seed)
    P = random_spd(rng, n)
    alpha = rng.uniform(0.1, 10)
    c = rng.standard_normal(n)
    b = math.sqrt(alpha * c @ np.linalg.solve(P, c))
    d = hyperplane_distance(Ellipsoid(P, alpha), c, b)
    assert abs(d) <= 1e-9 * b / np.linalg.norm(c)


@settings(max_examples=50, deadline=None)
@given(dims, seeds)
def test_volume_invariant_under_rotation(n, seed):
    rng = np.random.default_rng(seed)
    P = random_spd(rng, n)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    v0 = ellipsoid_volume(Ellipsoid(P, 2.0))
    v1 = ellipsoid_volume(Ellipsoid(Q.T @ P @ Q, 2.0))
    assert v1 == pytest.approx(v0, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(dims, seeds, st.floats(1e-3, 1e3))
def test_volume_scaling_law(n, seed, s):
    rng = np.random.default_rng(seed)
    P = random_spd(rng, n)
    v0 = ellipsoid_volume(Ellipsoid(P, 1.5))
    v1 = ellipsoid_volume(Ellipsoid(P / s, 1.5))
    assert v1 == pytest.approx(s ** (n / 2) * v0, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3), min_size=1, max_size=4),
       st.floats(1e-3, 1e3))
def test_normalize_idempotent(c, b):
    c1, b1 = normalize_halfspace(c, b, ">=")
    c2, b2 = normalize_halfspace(c1, b1, ">=")
    assert np.array_equal(c1, c2) and b1 == b2
    c3, b3 = normalize_halfspace(-np.asarray(c), -b, "<=")
    assert np.array_equal(c3, c1) and b3 == b1


@settings(max_examples=50, deadline=None)
@given(dims, seeds)
def test_membership_matches_volume_scaling(n, seed):
    # points on the boundary have level one; the same points scaled by r have level r**2
    rng = np.random.default_rng(seed)
    P = random_spd(rng, n)
    e = Ellipsoid(P, 3.0)
    z = rng.standard_normal(n)
    x = z * math.sqrt(3.0 / (z @ P @ z))
    assert e.level(x) == pytest.approx(1.0, rel=1e-12)
    assert e.level(0.5 * x) == pytest.approx(0.25, rel=1e-12)
