"""Canonical closed convex sets in Euclidean space.

Every set class stores its numeric data as numpy arrays. A leading batch
axis is allowed on every field, in which case :meth:`project_points` and
the other vectorised methods act sample-wise; this is what the sampling
estimators use. The scalar entry points (:func:`project`, :func:`distance`,
:func:`normal_cone_sample`) expect unbatched sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.optimize import linprog, nnls

FEAS_TOL = 1e-9

DYKSTRA_MAX_ITER = 100_000
DYKSTRA_TOL = 1e-12


class GeometryError(ValueError):
    """Invalid set data or mismatched dimensions."""


class ProjectionNotConverged(RuntimeError):
    """Dykstra iteration hit its cap; carries the last iterate."""

    def __init__(self, message, iterate, residual):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual


@dataclass(frozen=True)
class ProjectionResult:
    point: np.ndarray
    distance: float
    normal_unit: np.ndarray | None


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


class ConvexSet:
    """Base class. Subclasses are frozen dataclasses of numpy arrays."""

    kind: str = ""

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def batch_shape(self) -> tuple:
        raise NotImplementedError

    def project_points(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def cone_generators(self, x: np.ndarray, tol: float) -> np.ndarray:
        """Unit generators (as rows) of the normal cone at ``x`` in the set."""
        raise NotImplementedError

    def cone_trivial(self, x: np.ndarray, tol: float) -> np.ndarray:
        """Batched test: is the normal cone at ``x`` just ``{0}``?"""
        raise NotImplementedError

    def take(self, i) -> "ConvexSet":
        """Select one element of a batched set."""
        kw = {f.name: getattr(self, f.name)[i] for f in fields(self) if f.init and isinstance(getattr(self, f.name), np.ndarray)}
        return replace(self, **kw)

    def to_dict(self) -> dict:
        raise NotImplementedError


def _fmt_bound(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _parse_bound(v) -> float:
    if isinstance(v, str):
        if v in ("inf", "+inf"):
            return math.inf
        if v == "-inf":
            return -math.inf
        raise GeometryError(f"unrecognised bound {v!r}")
    return float(v)


@dataclass(frozen=True, eq=False)
class Halfspace(ConvexSet):
    """{x : <a, x> <= b}"""

    a: np.ndarray
    b: np.ndarray
    kind = "halfspace"

    def __post_init__(self):
        object.__setattr__(self, "a", _arr(self.a))
        object.__setattr__(self, "b", _arr(self.b))
        if self.a.ndim < 1:
            raise GeometryError("halfspace normal must be a vector")
        if np.any(np.linalg.norm(self.a, axis=-1) == 0):
            raise GeometryError("halfspace normal a must be nonzero")

    @property
    def dim(self):
        return self.a.shape[-1]

    @property
    def batch_shape(self):
        return self.a.shape[:-1]

    def _slack(self, x):
        return (self.a * x).sum(-1) - self.b

    def project_points(self, x):
        s = np.maximum(self._slack(x), 0.0) / (self.a * self.a).sum(-1)
        return x - s[..., None] * self.a

    def cone_trivial(self, x, tol):
        return self._slack(x) < -tol * np.linalg.norm(self.a, axis=-1)

    def cone_generators(self, x, tol):
        if self.cone_trivial(x, tol):
            return np.zeros((0, self.dim))
        return (self.a / np.linalg.norm(self.a))[None, :]

    def to_dict(self):
        return {"kind": self.kind, "a": self.a.tolist(), "b": float(self.b)}


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    """Componentwise bounds lo <= x <= hi; infinite bounds allowed."""

    lo: np.ndarray
    hi: np.ndarray
    kind = "box"

    def __post_init__(self):
        object.__setattr__(self, "lo", _arr(self.lo))
        object.__setattr__(self, "hi", _arr(self.hi))
        if self.lo.shape != self.hi.shape:
            raise GeometryError("box bounds must have equal shapes")
        if np.any(np.isnan(self.lo)) or np.any(np.isnan(self.hi)):
            raise GeometryError("box bounds must not be NaN")
        if np.any(self.lo > self.hi):
            raise GeometryError("box requires lo <= hi componentwise")

    @property
    def dim(self):
        return self.lo.shape[-1]

    @property
    def batch_shape(self):
        return self.lo.shape[:-1]

    def project_points(self, x):
        return np.clip(x, self.lo, self.hi)

    def cone_trivial(self, x, tol):
        lo_act = x - self.lo <= tol
        hi_act = self.hi - x <= tol
        return ~np.any(lo_act | hi_act, axis=-1)

    def cone_generators(self, x, tol):
        eye = np.eye(self.dim)
        gens = [-eye[i] for i in range(self.dim) if x[i] - self.lo[i] <= tol]
        gens += [eye[i] for i in range(self.dim) if self.hi[i] - x[i] <= tol]
        return np.array(gens).reshape(-1, self.dim)

    def to_dict(self):
        return {
            "kind": self.kind,
            "lo": [_fmt_bound(v) for v in self.lo],
            "hi": [_fmt_bound(v) for v in self.hi],
        }


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    center: np.ndarray
    radius: np.ndarray
    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", _arr(self.center))
        object.__setattr__(self, "radius", _arr(self.radius))
        if np.any(self.radius < 0):
            raise GeometryError("ball radius must be nonnegative")

    @property
    def dim(self):
        return self.center.shape[-1]

    @property
    def batch_shape(self):
        return self.center.shape[:-1]

    def project_points(self, x):
        d = x - self.center
        nrm = np.linalg.norm(d, axis=-1)
        scale = np.where(nrm > self.radius, self.radius / np.where(nrm > 0, nrm, 1.0), 1.0)
        return self.center + scale[..., None] * d

    def cone_trivial(self, x, tol):
        nrm = np.linalg.norm(x - self.center, axis=-1)
        return (nrm < self.radius - tol) & (self.radius > 0)

    def cone_generators(self, x, tol):
        if self.radius == 0:
            eye = np.eye(self.dim)
            return np.vstack([eye, -eye])
        if self.cone_trivial(x, tol):
            return np.zeros((0, self.dim))
        d = x - self.center
        return (d / np.linalg.norm(d))[None, :]

    def to_dict(self):
        return {"kind": self.kind, "center": self.center.tolist(), "radius": float(self.radius)}


@dataclass(frozen=True, eq=False)
class Affine(ConvexSet):
    """{x : M x = c}, projected through the pseudo-inverse of M."""

    M: np.ndarray
    c: np.ndarray
    rank_tol: float = 1e-12
    kind = "affine"

    def __post_init__(self):
        object.__setattr__(self, "M", _arr(self.M))
        object.__setattr__(self, "c", _arr(self.c))
        if self.M.ndim < 2 or self.M.shape[:-1] != self.c.shape:
            raise GeometryError("affine set needs M of shape (k, n) and c of shape (k,)")
        pinv = np.linalg.pinv(self.M, rcond=self.rank_tol)
        object.__setattr__(self, "_pinv", pinv)
        resid = np.einsum("...ij,...j->...i", self.M, np.einsum("...ij,...j->...i", pinv, self.c)) - self.c
        scale = 1.0 + np.linalg.norm(self.c, axis=-1)
        if np.any(np.linalg.norm(resid, axis=-1) > 1e-9 * scale):
            raise GeometryError("affine set is empty: c is not in the range of M")

    @property
    def dim(self):
        return self.M.shape[-1]

    @property
    def batch_shape(self):
        return self.M.shape[:-2]

    def take(self, i):
        return Affine(self.M[i], self.c[i], self.rank_tol)

    def project_points(self, x):
        r = np.einsum("...ij,...j->...i", self.M, x) - self.c
        return x - np.einsum("...ij,...j->...i", self._pinv, r)

    def cone_trivial(self, x, tol):
        # normal cone is range(M^T), the same at every point
        nz = np.any(np.abs(self.M) > 0, axis=(-2, -1))
        return np.broadcast_to(~nz, np.shape(x)[:-1])

    def cone_generators(self, x, tol):
        rows = [r / np.linalg.norm(r) for r in self.M if np.linalg.norm(r) > 0]
        if not rows:
            return np.zeros((0, self.dim))
        rows = np.array(rows)
        return np.vstack([rows, -rows])

    def to_dict(self):
        return {"kind": self.kind, "M": self.M.tolist(), "c": self.c.tolist()}


def dykstra(projectors, x0, max_iter=DYKSTRA_MAX_ITER, tol=DYKSTRA_TOL):
    """Dykstra's alternating projection onto an intersection.

    ``projectors`` are callables mapping points to points (batched along
    leading axes is fine). Returns ``(point, iterations)``. Raises
    :class:`ProjectionNotConverged` when the cap is reached.
    """
    x = np.array(x0, dtype=float)
    incs = [np.zeros_like(x) for _ in projectors]
    for it in range(1, max_iter + 1):
        x_prev = x
        change = 0.0
        for j, proj in enumerate(projectors):
            y = x + incs[j]
            x_new = proj(y)
            new_inc = y - x_new
            change = max(change, float(np.max(np.abs(new_inc - incs[j]), initial=0.0)))
            incs[j] = new_inc
            x = x_new
        step = float(np.max(np.abs(x - x_prev), initial=0.0))
        if step < tol and change < tol:
            return x, it
    residual = max(float(np.max(np.linalg.norm(proj(x) - x, axis=-1))) for proj in projectors)
    raise ProjectionNotConverged(
        f"Dykstra did not converge in {max_iter} sweeps (max row residual {residual:.3e})",
        x,
        residual,
    )


@dataclass(frozen=True, eq=False)
class Polyhedron(ConvexSet):
    """{x : rows_a @ x <= rows_b}, projected with Dykstra over the rows.

    Nonemptiness is certified with a linear program unless the caller
    attests it (``attest_nonempty=True``); batched instances are always
    treated as attested.
    """

    rows_a: np.ndarray
    rows_b: np.ndarray
    attest_nonempty: bool = False
    max_iter: int = DYKSTRA_MAX_ITER
    kind = "polyhedron"

    def __post_init__(self):
        object.__setattr__(self, "rows_a", _arr(self.rows_a))
        object.__setattr__(self, "rows_b", _arr(self.rows_b))
        A, b = self.rows_a, self.rows_b
        if A.ndim < 2 or A.shape[:-1] != b.shape:
            raise GeometryError("polyhedron needs rows_a of shape (m, n) and rows_b of shape (m,)")
        if A.shape[-2] and np.any(np.linalg.norm(A, axis=-1) == 0):
            raise GeometryError("polyhedron rows must have nonzero normals")
        if A.ndim == 2 and not self.attest_nonempty and A.shape[0]:
            res = linprog(np.zeros(A.shape[1]), A_ub=A, b_ub=b, bounds=[(None, None)] * A.shape[1], method="highs")
            if res.status == 2:
                raise GeometryError("polyhedron is empty")

    @property
    def dim(self):
        return self.rows_a.shape[-1]

    @property
    def batch_shape(self):
        return self.rows_a.shape[:-2]

    def take(self, i):
        return Polyhedron(self.rows_a[i], self.rows_b[i], attest_nonempty=True, max_iter=self.max_iter)

    def row_halfspaces(self) -> list[Halfspace]:
        return [Halfspace(self.rows_a[..., j, :], self.rows_b[..., j]) for j in range(self.rows_a.shape[-2])]

    def project_points(self, x):
        x = np.asarray(x, dtype=float)
        rows = self.row_halfspaces()
        if not rows:
            return x.copy()
        if len(rows) == 1:
            return rows[0].project_points(x)
        slack = np.einsum("...ij,...j->...i", self.rows_a, x) - self.rows_b
        if np.all(slack <= 0):
            return x.copy()
        point, _ = dykstra([h.project_points for h in rows], x, max_iter=self.max_iter)
        return point

    def _active(self, x, tol):
        slack = np.einsum("...ij,...j->...i", self.rows_a, x) - self.rows_b
        return slack >= -tol * np.linalg.norm(self.rows_a, axis=-1)

    def cone_trivial(self, x, tol):
        return ~np.any(self._active(x, tol), axis=-1)

    def cone_generators(self, x, tol):
        act = self._active(x, tol)
        rows = self.rows_a[act]
        return rows / np.linalg.norm(rows, axis=1, keepdims=True)

    def to_dict(self):
        return {
            "kind": self.kind,
            "rows": [{"a": a.tolist(), "b": float(b)} for a, b in zip(self.rows_a, self.rows_b)],
        }


@dataclass(frozen=True, eq=False)
class Singleton(ConvexSet):
    v: np.ndarray
    kind = "singleton"

    def __post_init__(self):
        object.__setattr__(self, "v", _arr(self.v))

    @property
    def dim(self):
        return self.v.shape[-1]

    @property
    def batch_shape(self):
        return self.v.shape[:-1]

    def project_points(self, x):
        return np.broadcast_to(self.v, np.broadcast_shapes(np.shape(x), self.v.shape)).copy()

    def cone_trivial(self, x, tol):
        return np.zeros(np.shape(x)[:-1], dtype=bool)

    def cone_generators(self, x, tol):
        eye = np.eye(self.dim)
        return np.vstack([eye, -eye])

    def to_dict(self):
        return {"kind": self.kind, "v": self.v.tolist()}


SET_KINDS = {cls.kind: cls for cls in (Halfspace, Box, Ball, Affine, Polyhedron, Singleton)}


def whole_space(n: int) -> Box:
    return Box(np.full(n, -np.inf), np.full(n, np.inf))


def set_from_dict(d: dict) -> ConvexSet:
    """Inverse of ``ConvexSet.to_dict``."""
    kind = d.get("kind")
    if kind == "halfspace":
        return Halfspace(d["a"], float(d["b"]))
    if kind == "box":
        return Box([_parse_bound(v) for v in d["lo"]], [_parse_bound(v) for v in d["hi"]])
    if kind == "ball":
        return Ball(d["center"], float(d["radius"]))
    if kind == "affine":
        return Affine(d["M"], d["c"])
    if kind == "polyhedron":
        rows = d["rows"]
        n = len(rows[0]["a"]) if rows else int(d["dim"])
        return Polyhedron(np.array([r["a"] for r in rows], dtype=float).reshape(-1, n), [r["b"] for r in rows])
    if kind == "singleton":
        return Singleton(d["v"])
    raise GeometryError(f"unknown set kind {kind!r}")


def _check_point(s: ConvexSet, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != s.dim:
        raise GeometryError(f"dimension mismatch: {s.kind} lives in R^{s.dim}, got point of shape {x.shape}")
    if s.batch_shape:
        raise GeometryError("scalar operations need an unbatched set; use take()")
    if not np.all(np.isfinite(x)):
        raise GeometryError("point has non-finite entries")
    return x


def project(s: ConvexSet, x, tol: float = FEAS_TOL) -> ProjectionResult:
    """Metric projection of ``x`` onto ``s`` with the outward unit normal."""
    x = _check_point(s, x)
    point = s.project_points(x)
    d = float(np.linalg.norm(x - point))
    normal = (x - point) / d if d > tol else None
    return ProjectionResult(point, d, normal)


def distance(s: ConvexSet, x) -> float:
    return project(s, x).distance


def normal_cone_sample(
    s: ConvexSet,
    x,
    count: int,
    rng_seed: int,
    tol: float = FEAS_TOL,
    unit_ball: bool = False,
) -> list[np.ndarray]:
    """Sample ``count`` vectors from the normal cone of ``s`` at ``x``.

    The first vector is always zero. The rest are nonnegative combinations
    of the cone generators with Exp(1) coefficients; with ``unit_ball``
    they are scaled into the closed unit ball.
    """
    x = _check_point(s, x)
    if count < 1:
        raise ValueError("count must be positive")
    d = distance(s, x)
    if d > tol:
        raise GeometryError(f"point is outside the set: distance {d:.3e} exceeds tolerance {tol:.1e}")
    gens = s.cone_generators(s.project_points(x), tol)
    out = [np.zeros(s.dim)]
    if len(gens) == 0:
        return out * count
    rng = np.random.default_rng(rng_seed)
    coefs = rng.exponential(size=(count - 1, len(gens)))
    for c in coefs:
        v = c @ gens
        if unit_ball:
            v = v / max(1.0, float(np.linalg.norm(v)))
        out.append(v)
    return out


def min_norm_in_cone(fixed: np.ndarray, K: np.ndarray, gens: np.ndarray, bisect_iters: int = 80) -> float:
    """min ||fixed + K w|| over w in cone(gens) with ||w|| <= 1.

    ``gens`` holds cone generators as rows. Solved exactly: nonnegative
    least squares for the unconstrained-cone problem, then bisection on the
    multiplier of the ball constraint when it binds.
    """
    fixed = np.asarray(fixed, dtype=float)
    if len(gens) == 0:
        return float(np.linalg.norm(fixed))
    G = np.asarray(gens, dtype=float).T
    B = K @ G

    def solve(mu):
        if mu == 0.0:
            lam, _ = nnls(B, -fixed)
        else:
            lhs = np.vstack([B, math.sqrt(mu) * G])
            rhs = np.concatenate([-fixed, np.zeros(G.shape[0])])
            lam, _ = nnls(lhs, rhs)
        return G @ lam

    w = solve(0.0)
    if np.linalg.norm(w) <= 1.0:
        return float(np.linalg.norm(fixed + K @ w))
    lo, hi = 0.0, 1.0
    while np.linalg.norm(solve(hi)) > 1.0:
        lo, hi = hi, hi * 10.0
    best = solve(hi)
    for _ in range(bisect_iters):
        mid = 0.5 * (lo + hi)
        w = solve(mid)
        if np.linalg.norm(w) > 1.0:
            lo = mid
        else:
            hi, best = mid, w
        if hi - lo <= 1e-14 * max(1.0, hi):
            break
    w = best / max(1.0, float(np.linalg.norm(best)))
    return float(np.linalg.norm(fixed + K @ w))

