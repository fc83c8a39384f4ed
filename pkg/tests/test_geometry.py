import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfpkit import geometry as geo
from helpers import KINDS, random_set

set_cases = st.tuples(st.sampled_from(KINDS), st.integers(1, 4), st.integers(0, 2**32 - 1))


def _build(case):
    kind, n, seed = case
    rng = np.random.default_rng(seed)
    return random_set(rng, kind, n), rng


# -- worked examples ---------------------------------------------------------


def test_project_halfspace_boundary():
    res = geo.project(geo.Halfspace([1.0], 0.0), [2.0])
    assert res.point == pytest.approx([0.0])
    assert res.distance == pytest.approx(2.0)
    assert res.normal_unit == pytest.approx([1.0])


def test_project_ball_radial():
    res = geo.project(geo.Ball([0.0, 0.0], 1.0), [3.0, 4.0])
    np.testing.assert_allclose(res.point, [0.6, 0.8], atol=1e-15)
    assert res.distance == pytest.approx(4.0)


def test_project_box_half_line():
    p = 0.5
    res = geo.project(geo.Box([p**2], [np.inf]), [0.0])
    assert res.point == pytest.approx([0.25])
    assert res.distance == pytest.approx(0.25)


@pytest.mark.parametrize(
    "s, x, expected",
    [
        (geo.Box([1.0], [np.inf]), [0.5], 0.5),
        (geo.Halfspace([1.0], -0.25), [-0.25], 0.0),
        (geo.Singleton([1.0, 2.0]), [1.0, 2.0], 0.0),
    ],
)
def test_distance_examples(s, x, expected):
    assert geo.distance(s, x) == pytest.approx(expected, abs=1e-15)


def test_interior_point_has_no_normal():
    res = geo.project(geo.Box([-1.0], [1.0]), [0.3])
    assert res.distance == 0.0 and res.normal_unit is None


def test_affine_projection_is_least_squares():
    A = geo.Affine([[1.0, 1.0]], [2.0])
    res = geo.project(A, [0.0, 0.0])
    np.testing.assert_allclose(res.point, [1.0, 1.0])


def test_polyhedron_projection_to_vertex():
    P = geo.Polyhedron([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    res = geo.project(P, [1.0, 2.0])
    np.testing.assert_allclose(res.point, [0.0, 0.0], atol=1e-10)


# -- errors ------------------------------------------------------------------


def test_dimension_mismatch():
    with pytest.raises(geo.GeometryError, match="dimension mismatch"):
        geo.project(geo.Ball([0.0, 0.0], 1.0), [1.0])


@pytest.mark.parametrize(
    "factory",
    [
        lambda: geo.Halfspace([0.0, 0.0], 1.0),
        lambda: geo.Box([1.0], [0.0]),
        lambda: geo.Ball([0.0], -1.0),
        lambda: geo.Affine([[1.0, 0.0], [2.0, 0.0]], [1.0, 0.0]),
        lambda: geo.Polyhedron([[1.0], [-1.0]], [0.0, -1.0]),
    ],
)
def test_invalid_sets_rejected(factory):
    with pytest.raises(geo.GeometryError):
        factory()


def test_polyhedron_attestation_skips_certificate():
    geo.Polyhedron([[1.0], [-1.0]], [0.0, -1.0], attest_nonempty=True)


def test_dykstra_cap_carries_iterate():
    P = geo.Polyhedron([[1.0, 0.1], [1.0, -0.1], [-1.0, 0.0]], [0.0, 0.0, 0.0], max_iter=2)
    with pytest.raises(geo.ProjectionNotConverged) as info:
        geo.project(P, [5.0, 3.0])
    assert info.value.iterate.shape == (2,)
    assert info.value.residual >= 0


def test_normal_cone_outside_set_errors():
    with pytest.raises(geo.GeometryError, match="tolerance"):
        geo.normal_cone_sample(geo.Box([0.0], [1.0]), [2.0], 4, 0)


# -- normal cones -------------------------------------------------------------


def test_normal_cone_halfspace_boundary_is_ray():
    vs = geo.normal_cone_sample(geo.Halfspace([1.0], 0.0), [0.0], 20, 1)
    assert np.all(vs[0] == 0)
    assert all(v[0] >= 0 for v in vs)
    assert any(v[0] > 0 for v in vs)


def test_normal_cone_interior_is_zero():
    vs = geo.normal_cone_sample(geo.Box([-0.25], [np.inf]), [0.5], 10, 3)
    assert all(np.all(v == 0) for v in vs)


def test_normal_cone_unit_ball_interval():
    p = 0.25
    vs = geo.normal_cone_sample(geo.Halfspace([1.0], -p), [-p], 200, 5, unit_ball=True)
    vals = np.array([v[0] for v in vs])
    assert vals.min() == 0.0 and vals.max() <= 1.0 and vals.max() > 0.5


@settings(max_examples=60, deadline=None)
@given(set_cases)
def test_normal_cone_samples_are_normal(case):
    S, rng = _build(case)
    x = S.project_points(3 * rng.standard_normal(S.dim))
    vs = geo.normal_cone_sample(S, x, 16, 0, tol=1e-7)
    Z = S.project_points(3 * rng.standard_normal((32, S.dim)))
    for v in vs:
        assert np.max((Z - x) @ v) <= 1e-7 * (1 + np.linalg.norm(v))


def test_box_cone_generators_sign_pattern():
    B = geo.Box([0.0, 0.0], [1.0, 1.0])
    gens = B.cone_generators(np.array([0.0, 1.0]), 1e-9)
    assert {tuple(g) for g in gens} == {(-1.0, 0.0), (0.0, 1.0)}


def test_min_norm_in_cone_matches_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(20):
        fixed = rng.standard_normal(2)
        K = rng.standard_normal((2, 2))
        gens = rng.standard_normal((2, 2))
        gens /= np.linalg.norm(gens, axis=1, keepdims=True)
        got = geo.min_norm_in_cone(fixed, K, gens)
        r, th = np.meshgrid(np.linspace(0, 1, 301), np.linspace(0, 2 * np.pi, 1441))
        W = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1).reshape(-1, 2)
        coef = np.linalg.solve(gens.T, W.T).T
        W = W[np.all(coef >= -1e-12, axis=1)]
        vals = np.linalg.norm(fixed + W @ K.T, axis=-1)
        assert got <= vals.min() + 1e-12
        assert got >= vals.min() - 1e-2


# -- projection properties ----------------------------------------------------


@settings(max_examples=150, deadline=None)
@given(set_cases)
def test_idempotent(case):
    S, rng = _build(case)
    x = 3 * rng.standard_normal(S.dim)
    p = geo.project(S, x).point
    np.testing.assert_allclose(geo.project(S, p).point, p, atol=1e-10)


@settings(max_examples=150, deadline=None)
@given(set_cases)
def test_nonexpansive(case):
    S, rng = _build(case)
    x, y = 3 * rng.standard_normal((2, S.dim))
    gap = np.linalg.norm(geo.project(S, x).point - geo.project(S, y).point)
    assert gap <= np.linalg.norm(x - y) + 1e-10


@settings(max_examples=100, deadline=None)
@given(set_cases)
def test_variational_inequality(case):
    S, rng = _build(case)
    x = 3 * rng.standard_normal(S.dim)
    px = geo.project(S, x).point
    Z = np.array([geo.project(S, z).point for z in 3 * rng.standard_normal((20, S.dim))])
    assert np.max((Z - px) @ (x - px)) <= 1e-9


@settings(max_examples=150, deadline=None)
@given(set_cases)
def test_distance_is_norm_of_residual(case):
    S, rng = _build(case)
    x = 3 * rng.standard_normal(S.dim)
    res = geo.project(S, x)
    assert res.distance == np.linalg.norm(x - res.point)
    assert geo.distance(S, x) == res.distance
    if res.normal_unit is not None:
        assert abs(np.linalg.norm(res.normal_unit) - 1) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(set_cases)
def test_distance_gradient_is_unit_normal(case):
    S, rng = _build(case)
    x = 3 * rng.standard_normal(S.dim)
    res = geo.project(S, x)
    if res.distance < 1e-2:
        x = res.point + (1.0 if res.normal_unit is None else 0.5) * rng.standard_normal(S.dim)
        res = geo.project(S, x)
    if res.normal_unit is None or res.distance < 1e-2:
        return
    h = 1e-6
    grad = np.array([
        (geo.distance(S, x + h * e) - geo.distance(S, x - h * e)) / (2 * h) for e in np.eye(S.dim)
    ])
    assert np.linalg.norm(grad - res.normal_unit) <= 1e-4


def test_batched_projection_matches_scalar():
    rng = np.random.default_rng(9)
    lo = rng.standard_normal((5, 2))
    B = geo.Box(lo, lo + 1)
    X = rng.standard_normal((5, 2))
    batched = B.project_points(X)
    for i in range(5):
        np.testing.assert_array_equal(batched[i], geo.project(B.take(i), X[i]).point)


@pytest.mark.parametrize("kind", KINDS)
def test_dict_round_trip(kind):
    S = random_set(np.random.default_rng(2), kind, 3)
    T = geo.set_from_dict(S.to_dict())
    x = np.array([0.3, -2.0, 1.5])
    np.testing.assert_allclose(geo.project(T, x).point, geo.project(S, x).point, atol=1e-12)


def test_infinite_bounds_serialize_as_strings():
    d = geo.whole_space(2).to_dict()
    assert d["lo"] == ["-inf", "-inf"] and d["hi"] == ["inf", "inf"]
