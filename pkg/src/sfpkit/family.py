"""Parameterised split feasibility families and the merit function.

A family is a triple ``(C(p), Q(p), A(p, .))`` over ``p`` in R^m. Parameter
dependence is expressed with :class:`ParamExpression`, a polynomial in the
coordinates ``p_i`` and their absolute values of total degree at most 3.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .geometry import GeometryError

MAX_DEGREE = 3
_FACTOR_RE = re.compile(r"^(abs\()?p(\d+)(\))?$")


class FamilyError(ValueError):
    pass


def _parse_factor(f: str) -> tuple[int, bool]:
    m = _FACTOR_RE.match(f.replace(" ", ""))
    if not m or bool(m.group(1)) != bool(m.group(3)):
        raise FamilyError(f"bad factor {f!r}; expected 'p<i>' or 'abs(p<i>)'")
    return int(m.group(2)), bool(m.group(1))


@dataclass(frozen=True)
class ParamExpression:
    """Sum of ``coef * prod(factors)``; factors are ``"p<i>"`` or ``"abs(p<i>)"``."""

    terms: tuple[tuple[float, tuple[str, ...]], ...] = ()

    def __post_init__(self):
        norm = []
        for coef, factors in self.terms:
            factors = tuple(sorted(factors))
            if len(factors) > MAX_DEGREE:
                raise FamilyError(f"monomial {factors} exceeds degree {MAX_DEGREE}")
            for f in factors:
                _parse_factor(f)
            coef = float(coef)
            if math.isnan(coef):
                raise FamilyError("NaN coefficient")
            if math.isinf(coef) and factors:
                raise FamilyError("infinite coefficients are only allowed on constant terms")
            norm.append((coef, factors))
        object.__setattr__(self, "terms", tuple(norm))

    @classmethod
    def const(cls, c: float) -> "ParamExpression":
        return cls(((c, ()),))

    @classmethod
    def param(cls, i: int = 0) -> "ParamExpression":
        return cls(((1.0, (f"p{i}",)),))

    def __add__(self, other):
        other = _as_expr(other)
        return ParamExpression(self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return ParamExpression(tuple((-c, f) for c, f in self.terms))

    def __sub__(self, other):
        return self + (-_as_expr(other))

    def __rsub__(self, other):
        return _as_expr(other) - self

    def __mul__(self, other):
        other = _as_expr(other)
        return ParamExpression(tuple((c1 * c2, f1 + f2) for c1, f1 in self.terms for c2, f2 in other.terms))

    __rmul__ = __mul__

    def __abs__(self):
        if len(self.terms) != 1 or self.terms[0][0] != 1.0 or len(self.terms[0][1]) != 1:
            raise FamilyError("abs() is only defined on a bare parameter p<i>")
        idx, is_abs = _parse_factor(self.terms[0][1][0])
        return ParamExpression(((1.0, (f"abs(p{idx})",)),))

    @property
    def max_index(self) -> int:
        return max((_parse_factor(f)[0] for _, fs in self.terms for f in fs), default=-1)

    @property
    def is_constant(self) -> bool:
        return all(not fs for _, fs in self.terms)

    def evaluate(self, p) -> np.ndarray | float:
        """Evaluate at ``p`` of shape ``(m,)`` or a batch ``(N, m)``."""
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1])
        for coef, factors in self.terms:
            val = np.full(p.shape[:-1], coef)
            for f in factors:
                idx, is_abs = _parse_factor(f)
                v = p[..., idx]
                val = val * (np.abs(v) if is_abs else v)
            out = out + val
        return out if out.ndim else float(out)

    def to_json(self):
        if self.is_constant:
            return geo._fmt_bound(sum(c for c, _ in self.terms))
        return [{"coef": geo._fmt_bound(c), "factors": list(f)} for c, f in self.terms]

    @classmethod
    def from_json(cls, obj) -> "ParamExpression":
        if isinstance(obj, (int, float)) or isinstance(obj, str):
            return cls.const(geo._parse_bound(obj))
        if not isinstance(obj, list):
            raise FamilyError(f"cannot read parameter expression from {obj!r}")
        terms = []
        for t in obj:
            try:
                terms.append((geo._parse_bound(t["coef"]), tuple(t.get("factors", ()))))
            except (KeyError, TypeError) as exc:
                raise FamilyError(f"bad expression term {t!r}") from exc
        return cls(tuple(terms))


def _as_expr(v) -> ParamExpression:
    if isinstance(v, ParamExpression):
        return v
    return ParamExpression.const(float(v))


def _expr_array(values) -> np.ndarray:
    """Object array of ParamExpressions from nested lists of expressions or numbers."""
    arr = np.empty(np.shape(np.asarray(values, dtype=object)), dtype=object)
    flat = np.asarray(values, dtype=object).reshape(-1)
    arr.reshape(-1)[:] = [_as_expr(v) for v in flat]
    return arr


def _eval_array(exprs: np.ndarray, p: np.ndarray) -> np.ndarray:
    batch = p.shape[:-1]
    flat = [e.evaluate(p) for e in exprs.reshape(-1)]
    out = np.stack([np.broadcast_to(v, batch) for v in flat], axis=-1) if flat else np.zeros(batch + (0,))
    return out.reshape(batch + exprs.shape)


# Field layout of each set kind; scalars are shape-() fields.
_SET_FIELDS = {
    "halfspace": ("a", "b"),
    "box": ("lo", "hi"),
    "ball": ("center", "radius"),
    "affine": ("M", "c"),
    "polyhedron": ("rows_a", "rows_b"),
    "singleton": ("v",),
}


@dataclass(frozen=True, eq=False)
class SetMap:
    """A set-valued map ``p -> S(p)``: a set template with expression-valued fields."""

    kind: str
    fields: dict

    def __post_init__(self):
        if self.kind not in _SET_FIELDS:
            raise FamilyError(f"unknown set kind {self.kind!r}")
        missing = set(_SET_FIELDS[self.kind]) - set(self.fields)
        if missing:
            raise FamilyError(f"{self.kind} template is missing fields {sorted(missing)}")
        object.__setattr__(self, "fields", {k: _expr_array(self.fields[k]) for k in _SET_FIELDS[self.kind]})

    @property
    def dim(self) -> int:
        key = {"halfspace": "a", "box": "lo", "ball": "center", "affine": "M", "polyhedron": "rows_a", "singleton": "v"}[self.kind]
        return self.fields[key].shape[-1]

    @property
    def max_param_index(self) -> int:
        return max((e.max_index for arr in self.fields.values() for e in arr.reshape(-1)), default=-1)

    def instantiate(self, p, batched: bool = False) -> geo.ConvexSet:
        p = np.asarray(p, dtype=float)
        vals = {k: _eval_array(v, p) for k, v in self.fields.items()}
        if self.kind == "polyhedron":
            return geo.Polyhedron(vals["rows_a"], vals["rows_b"], attest_nonempty=True)
        return geo.SET_KINDS[self.kind](**vals)

    @classmethod
    def constant(cls, s: geo.ConvexSet) -> "SetMap":
        d = {k: getattr(s, k).tolist() for k in _SET_FIELDS[s.kind]}
        return cls(s.kind, d)

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        for k, arr in self.fields.items():
            out[k] = _nested_json(arr)
        return out

    @classmethod
    def from_json(cls, d: dict) -> "SetMap":
        kind = d.get("kind")
        if kind not in _SET_FIELDS:
            raise FamilyError(f"unknown set kind {kind!r}")
        fields_ = {}
        for k in _SET_FIELDS[kind]:
            if k not in d:
                raise FamilyError(f"{kind} set is missing field {k!r}")
            fields_[k] = _nested_from_json(d[k])
        if kind == "polyhedron" and not fields_["rows_a"]:
            raise FamilyError("polyhedron template needs at least one row")
        return cls(kind, fields_)


def _nested_json(arr):
    if isinstance(arr, ParamExpression):
        return arr.to_json()
    if arr.ndim == 0:
        return arr.item().to_json()
    return [_nested_json(a) for a in arr]


def _is_expr_json(obj) -> bool:
    return isinstance(obj, (int, float, str)) or (
        isinstance(obj, list) and all(isinstance(t, dict) for t in obj) and len(obj) > 0
    )


def _nested_from_json(obj):
    if _is_expr_json(obj):
        return ParamExpression.from_json(obj)
    if isinstance(obj, list):
        return [_nested_from_json(o) for o in obj]
    raise FamilyError(f"cannot read expression array from {obj!r}")


@dataclass(frozen=True, eq=False)
class LinearOpMap:
    """``p -> A(p, .)`` as a (k, n) matrix of parameter expressions."""

    entries: np.ndarray

    def __post_init__(self):
        arr = _expr_array(self.entries)
        if arr.ndim != 2:
            raise FamilyError("operator entries must form a 2-D matrix")
        object.__setattr__(self, "entries", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def instantiate(self, p) -> np.ndarray:
        return _eval_array(self.entries, np.asarray(p, dtype=float))

    def to_json(self):
        return _nested_json(self.entries)

    @classmethod
    def from_json(cls, obj) -> "LinearOpMap":
        return cls(_nested_from_json(obj))


@dataclass(frozen=True, eq=False)
class SfpFamily:
    """The family ``find x in C(p) with A(p, x) in Q(p)`` plus a reference pair.

    ``param_lo`` / ``param_hi`` give the parameter domain (a box, possibly
    unbounded); samplers never leave it.
    """

    C: SetMap
    Q: SetMap
    A: LinearOpMap
    p_ref: np.ndarray
    x_ref: np.ndarray
    param_dim: int = 1
    param_lo: np.ndarray | None = None
    param_hi: np.ndarray | None = None
    name: str = ""
    tol: float = geo.FEAS_TOL
    check_reference: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        m = self.param_dim
        object.__setattr__(self, "p_ref", np.asarray(self.p_ref, dtype=float).reshape(-1))
        object.__setattr__(self, "x_ref", np.asarray(self.x_ref, dtype=float).reshape(-1))
        lo = np.full(m, -np.inf) if self.param_lo is None else np.asarray(self.param_lo, dtype=float)
        hi = np.full(m, np.inf) if self.param_hi is None else np.asarray(self.param_hi, dtype=float)
        object.__setattr__(self, "param_lo", lo)
        object.__setattr__(self, "param_hi", hi)
        k, n = self.A.shape
        if self.C.dim != n:
            raise FamilyError(f"C lives in R^{self.C.dim} but A has {n} columns")
        if self.Q.dim != k:
            raise FamilyError(f"Q lives in R^{self.Q.dim} but A has {k} rows")
        used = max(self.C.max_param_index, self.Q.max_param_index,
                   max((e.max_index for e in self.A.entries.reshape(-1)), default=-1))
        if used >= m:
            raise FamilyError(f"expressions use p{used} but param_dim is {m}")
        if self.p_ref.shape != (m,) or self.x_ref.shape != (n,):
            raise FamilyError("reference pair has wrong dimensions")
        if lo.shape != (m,) or hi.shape != (m,) or np.any(lo > hi):
            raise FamilyError("invalid parameter domain")
        if self.check_reference:
            val = merit(self, self.p_ref, self.x_ref)
            if val > self.tol:
                raise FamilyError(f"reference pair is not a solution: merit {val:.3e} > {self.tol:.1e}")

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def k(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.param_dim

    def in_domain(self, p) -> np.ndarray | bool:
        p = np.asarray(p, dtype=float)
        return np.all((p >= self.param_lo) & (p <= self.param_hi), axis=-1)

    def instantiate(self, p):
        """``(C(p), Q(p), A(p))`` for a single parameter vector."""
        p = _check_vec(p, self.m, "p")
        try:
            return self.C.instantiate(p), self.Q.instantiate(p), self.A.instantiate(p)
        except GeometryError as exc:
            raise FamilyError(f"instantiated set is invalid at p={p.tolist()}: {exc}") from exc

    def instantiate_batch(self, P):
        """Batched instantiation for ``P`` of shape ``(N, m)``."""
        P = np.asarray(P, dtype=float)
        try:
            return self.C.instantiate(P), self.Q.instantiate(P), self.A.instantiate(P)
        except GeometryError as exc:
            raise FamilyError(f"instantiated set is invalid on a parameter batch: {exc}") from exc

    def check_domain(self, count: int = 64, seed: int = 0, span: float = 10.0) -> None:
        """Instantiate at seeded parameters in the domain; infinite sides are cut at ``span`` from p_ref."""
        rng = np.random.default_rng([seed, 5])
        lo = np.maximum(self.param_lo, self.p_ref - span)
        hi = np.minimum(self.param_hi, self.p_ref + span)
        P = np.vstack([self.p_ref, lo, hi, lo + (hi - lo) * rng.random((count, self.m))])
        for p in P:
            self.instantiate(p)

    def to_json(self) -> dict:
        return {
            "C": self.C.to_json(),
            "Q": self.Q.to_json(),
            "A": self.A.to_json(),
            "param_dim": self.m,
            "param_domain": {
                "lo": [geo._fmt_bound(v) for v in self.param_lo],
                "hi": [geo._fmt_bound(v) for v in self.param_hi],
            },
        }

    @classmethod
    def from_json(cls, d: dict, p_ref, x_ref, name: str = "", tol: float = geo.FEAS_TOL) -> "SfpFamily":
        try:
            dom = d.get("param_domain", {})
            m = int(d.get("param_dim", 1))
            lo = [geo._parse_bound(v) for v in dom["lo"]] if "lo" in dom else None
            hi = [geo._parse_bound(v) for v in dom["hi"]] if "hi" in dom else None
            return cls(
                C=SetMap.from_json(d["C"]),
                Q=SetMap.from_json(d["Q"]),
                A=LinearOpMap.from_json(d["A"]),
                p_ref=p_ref,
                x_ref=x_ref,
                param_dim=m,
                param_lo=lo,
                param_hi=hi,
                name=name,
                tol=tol,
            )
        except KeyError as exc:
            raise FamilyError(f"family is missing key {exc}") from exc


def _check_vec(v, dim, name) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1) if np.ndim(v) == 0 else np.asarray(v, dtype=float)
    if v.shape != (dim,):
        raise FamilyError(f"{name} must have dimension {dim}, got shape {v.shape}")
    return v


def merit_components(family: SfpFamily, p, x) -> tuple[float, float]:
    """``(dist(A(p,x), Q(p)), dist(x, C(p)))``."""
    C, Q, A = family.instantiate(p)
    x = _check_vec(x, family.n, "x")
    return geo.distance(Q, A @ x), geo.distance(C, x)


def merit(family: SfpFamily, p, x) -> float:
    d_aq, d_c = merit_components(family, p, x)
    return d_aq + d_c


def merit_batch(family: SfpFamily, P, X) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised merit components over ``P (N, m)`` and ``X (N, n)``."""
    C, Q, A = family.instantiate_batch(P)
    X = np.asarray(X, dtype=float)
    Y = np.einsum("nkj,nj->nk", A, X)
    d_aq = np.linalg.norm(Y - Q.project_points(Y), axis=-1)
    d_c = np.linalg.norm(X - C.project_points(X), axis=-1)
    return d_aq, d_c


def adjoint_apply(family: SfpFamily, p, y) -> np.ndarray:
    """``A(p, .)^T y``."""
    _, _, A = family.instantiate(p)
    y = _check_vec(y, family.k, "y")
    return A.T @ y


def opnorm(A: np.ndarray) -> float:
    """Spectral norm of a matrix (largest singular value)."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))
