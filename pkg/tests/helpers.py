"""Random canonical sets and small families shared by the test modules."""

import numpy as np

from sfpkit import geometry as geo
from sfpkit.family import LinearOpMap, ParamExpression, SetMap, SfpFamily

KINDS = ("halfspace", "box", "ball", "affine", "polyhedron", "singleton")


def random_set(rng, kind, n):
    """A random nonempty set of the given kind in R^n."""
    if kind == "halfspace":
        return geo.Halfspace(rng.standard_normal(n), rng.standard_normal())
    if kind == "box":
        lo = rng.standard_normal(n)
        hi = lo + rng.exponential(size=n)
        lo[rng.random(n) < 0.2] = -np.inf
        hi[rng.random(n) < 0.2] = np.inf
        return geo.Box(lo, hi)
    if kind == "ball":
        return geo.Ball(rng.standard_normal(n), rng.exponential())
    if kind == "affine":
        k = int(rng.integers(1, n + 1))
        M = rng.standard_normal((k, n))
        return geo.Affine(M, M @ rng.standard_normal(n))
    if kind == "polyhedron":
        rows = int(rng.integers(2, 5))
        A = rng.standard_normal((rows, n))
        x0 = rng.standard_normal(n)
        return geo.Polyhedron(A, A @ x0 + rng.exponential(size=rows))
    if kind == "singleton":
        return geo.Singleton(rng.standard_normal(n))
    raise ValueError(kind)


def halfline_family():
    """C(p) = R, Q(p) = [p, inf), A(p, x) = x; Sigma(p) = [p, inf)."""
    p = ParamExpression.param(0)
    return SfpFamily(
        SetMap("box", {"lo": [-np.inf], "hi": [np.inf]}),
        SetMap("box", {"lo": [p], "hi": [np.inf]}),
        LinearOpMap([[1.0]]),
        p_ref=[0.0],
        x_ref=[0.0],
    )


def singleton_family():
    """C(p) = {p}, Q = R, A = identity; Sigma(p) = {p}."""
    p = ParamExpression.param(0)
    return SfpFamily(
        SetMap("singleton", {"v": [p]}),
        SetMap("box", {"lo": [-np.inf], "hi": [np.inf]}),
        LinearOpMap([[1.0]]),
        p_ref=[0.0],
        x_ref=[0.0],
    )


def constant_family():
    """Parameter-free family: C = [-1, 1], Q = [-2, 2], A = 1."""
    return SfpFamily(
        SetMap("box", {"lo": [-1.0], "hi": [1.0]}),
        SetMap("box", {"lo": [-2.0], "hi": [2.0]}),
        LinearOpMap([[1.0]]),
        p_ref=[0.0],
        x_ref=[0.0],
    )


def point_solution_family():
    """C = R^2, Q(p) = {0}, A = [[2, 1], [0, 1]] invertible; Sigma(p) = {0}."""
    return SfpFamily(
        SetMap("box", {"lo": [-np.inf, -np.inf], "hi": [np.inf, np.inf]}),
        SetMap("singleton", {"v": [0.0, 0.0]}),
        LinearOpMap([[2.0, 1.0], [0.0, 1.0]]),
        p_ref=[0.0],
        x_ref=[0.0, 0.0],
    )
