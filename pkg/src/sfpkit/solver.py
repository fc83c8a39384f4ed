"""Finding points of the solution set and distances to it.

``solve`` runs projected subgradient descent on the merit function: the
iterate is kept in C(p) and moved along A^T u, u the unit outward normal of
Q(p) at A x, with the Polyak step psi / ||g||^2 (the optimal value is zero
whenever the problem is solvable). ``dist_to_solution`` combines multistart
solves with a best-approximation refinement: Dykstra's method on C(p) and
the preimage A(p, .)^{-1}(Q(p)), which is again a canonical set for every
kind of Q except the ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, linprog

from . import geometry as geo
from .family import SfpFamily, _check_vec

STATUSES = ("feasible", "infeasible_evidence", "max_iters")


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    step: float | str = "auto"
    max_iters: int = 1000
    tol_feas: float = geo.FEAS_TOL
    multistart_count: int = 8
    start_box_radius: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.step != "auto" and not (isinstance(self.step, (int, float)) and self.step > 0):
            raise ValueError("step must be 'auto' or a positive number")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.tol_feas < self.start_box_radius:
            raise ValueError("need 0 < tol_feas < start_box_radius")
        if self.multistart_count < 0:
            raise ValueError("multistart_count must be nonnegative")

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "max_iters": self.max_iters,
            "tol_feas": self.tol_feas,
            "multistart_count": self.multistart_count,
            "start_box_radius": self.start_box_radius,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SolverConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown solver keys {sorted(extra)}")
        return cls(**d)


@dataclass
class SolveOutcome:
    status: str
    point: np.ndarray
    residual: float
    iters: int
    trace: list[float] = field(default_factory=list, repr=False)


def _residual(C, Q, A, x):
    y = A @ x
    py = Q.project_points(y)
    px = C.project_points(x)
    return float(np.linalg.norm(y - py)), float(np.linalg.norm(x - px)), y, py, px


def solve(family: SfpFamily, p, x0, config: SolverConfig = SolverConfig(), *, instance=None) -> SolveOutcome:
    """Look for a point of Sigma(p) starting from ``x0``.

    ``feasible`` guarantees merit <= tol_feas. ``infeasible_evidence`` means
    the best residual stalled above 100 * tol_feas; it is not a certificate.
    """
    C, Q, A = instance if instance is not None else family.instantiate(p)
    x = _check_vec(x0, family.n, "x0").copy()
    tol = config.tol_feas

    d_aq, d_c, y, py, px = _residual(C, Q, A, x)
    best_x, best = x.copy(), d_aq + d_c
    trace = [best]
    if best <= tol:
        return SolveOutcome("feasible", best_x, best, 0, trace)

    stall_strikes = 0
    for k in range(1, config.max_iters + 1):
        g = np.zeros_like(x)
        if d_aq > 0:
            g += A.T @ ((y - py) / d_aq)
        if d_c > 0:
            g += (x - px) / d_c
        gg = float(g @ g)
        if config.step == "auto":
            psi = d_aq + d_c
            t = psi / gg if gg > 0 else 0.0
            if stall_strikes:
                t = 1.0 / (k + 1) / math.sqrt(gg) if gg > 0 else 0.0
        else:
            t = float(config.step) / math.sqrt(gg) if gg > 0 else 0.0
        x = C.project_points(x - t * g)
        if not np.all(np.isfinite(x)):
            raise SolverError(f"non-finite iterate at iteration {k}")
        d_aq, d_c, y, py, px = _residual(C, Q, A, x)
        psi = d_aq + d_c
        if psi < best:
            stall_strikes = 0 if psi < best * (1 - 1e-12) else stall_strikes + 1
            best_x, best = x.copy(), psi
        else:
            stall_strikes += 1
        trace.append(best)
        if best <= tol:
            return SolveOutcome("feasible", best_x, best, k, trace)
        window = max(10, k // 10)
        if k >= 2 * window and best > 100 * tol:
            old = trace[-window - 1]
            if old - best <= 1e-12 * old:
                return SolveOutcome("infeasible_evidence", best_x, best, k, trace)
        if gg == 0:
            return SolveOutcome("infeasible_evidence" if best > 100 * tol else "max_iters", best_x, best, k, trace)
    return SolveOutcome("max_iters", best_x, best, config.max_iters, trace)


# -- preimage of Q under A as a projector ---------------------------------


def _preimage_projector(Q: geo.ConvexSet, A: np.ndarray):
    """Projector onto ``{z : A z in Q}``; None if that set is provably empty."""
    if Q.kind == "halfspace":
        rows, rhs = [A.T @ Q.a], [float(Q.b)]
    elif Q.kind == "polyhedron":
        rows, rhs = list(Q.rows_a @ A), list(Q.rows_b)
    elif Q.kind == "box":
        rows, rhs = [], []
        for i in range(A.shape[0]):
            if np.isfinite(Q.hi[i]):
                rows.append(A[i]); rhs.append(Q.hi[i])
            if np.isfinite(Q.lo[i]):
                rows.append(-A[i]); rhs.append(-Q.lo[i])
    elif Q.kind == "singleton":
        return _affine_projector(A, Q.v)
    elif Q.kind == "affine":
        return _affine_projector(Q.M @ A, Q.c)
    elif Q.kind == "ball":
        return _ball_preimage_projector(A, Q.center, float(Q.radius))
    else:
        raise SolverError(f"unsupported set kind {Q.kind}")
    keep_a, keep_b = [], []
    for a, b in zip(rows, rhs):
        if np.linalg.norm(a) <= 1e-14:
            if b < 0:
                return None
            continue
        keep_a.append(a); keep_b.append(b)
    if not keep_a:
        return lambda z: np.array(z, dtype=float)
    if len(keep_a) == 1:
        return geo.Halfspace(keep_a[0], keep_b[0]).project_points
    return [geo.Halfspace(a, b).project_points for a, b in zip(keep_a, keep_b)]


def _affine_projector(M, c):
    try:
        return geo.Affine(M, c).project_points
    except geo.GeometryError:
        return None


def _ball_preimage_projector(A, center, radius):
    """Projection onto ``{z : ||A z - center|| <= radius}`` by bisection on the multiplier."""
    AtA = A.T @ A
    n = A.shape[1]
    z_ls = np.linalg.lstsq(A, center, rcond=None)[0]
    if np.linalg.norm(A @ z_ls - center) > radius + 1e-12:
        return None

    def proj(y):
        y = np.asarray(y, dtype=float)
        if np.linalg.norm(A @ y - center) <= radius:
            return y.copy()

        def z_of(mu):
            return np.linalg.solve(np.eye(n) + mu * AtA, y + mu * A.T @ center)

        def gap(mu):
            return np.linalg.norm(A @ z_of(mu) - center) - radius

        hi = 1.0
        while gap(hi) > 0 and hi < 1e16:
            hi *= 10.0
        if gap(hi) > 0:
            return z_of(hi)
        return z_of(brentq(gap, 0.0, hi, xtol=1e-15, rtol=1e-15))

    return proj


def _polyhedral_rows(S: geo.ConvexSet):
    """Rows ``(G, h)`` with ``S = {z : G z <= h}``, or None for non-polyhedral kinds."""
    if S.kind == "halfspace":
        return S.a[None, :], np.atleast_1d(S.b)
    if S.kind == "polyhedron":
        return S.rows_a, S.rows_b
    if S.kind == "box":
        eye = np.eye(S.dim)
        up, dn = np.isfinite(S.hi), np.isfinite(S.lo)
        return np.vstack([eye[up], -eye[dn]]), np.concatenate([S.hi[up], -S.lo[dn]])
    return None


def certified_empty(instance) -> bool:
    """True when Sigma is empty by a linear programming certificate.

    Only polyhedral C and Q are certified; other kinds return False.
    """
    C, Q, A = instance
    c_rows, q_rows = _polyhedral_rows(C), _polyhedral_rows(Q)
    if c_rows is None or q_rows is None:
        return False
    G = np.vstack([c_rows[0], q_rows[0] @ A])
    h = np.concatenate([c_rows[1], q_rows[1]])
    if G.shape[0] == 0:
        return False
    res = linprog(np.zeros(A.shape[1]), A_ub=G, b_ub=h, bounds=[(None, None)] * A.shape[1], method="highs")
    return res.status == 2


def _c_projectors(C: geo.ConvexSet):
    if C.kind == "polyhedron":
        return [h.project_points for h in C.row_halfspaces()]
    return [C.project_points]


def nearest_solution(family: SfpFamily, p, x, *, instance=None, max_iter: int = geo.DYKSTRA_MAX_ITER):
    """Best approximation of ``x`` in Sigma(p) via Dykstra; None if Sigma(p) is provably empty."""
    C, Q, A = instance if instance is not None else family.instantiate(p)
    pre = _preimage_projector(Q, A)
    if pre is None:
        return None
    projs = _c_projectors(C) + (pre if isinstance(pre, list) else [pre])
    if len(projs) == 1:
        return projs[0](np.asarray(x, dtype=float))
    point, _ = geo.dykstra(projs, np.asarray(x, dtype=float), max_iter=max_iter)
    return point


def _starts(x, config: SolverConfig):
    x = np.asarray(x, dtype=float)
    out = [x]
    for i in range(config.multistart_count):
        rng = np.random.default_rng([config.seed, i])
        out.append(x + rng.uniform(-config.start_box_radius, config.start_box_radius, size=x.shape))
    return out


def dist_to_solution(family: SfpFamily, p, x, config: SolverConfig = SolverConfig()):
    """Upper bound on dist(x, Sigma(p)) and the feasible point achieving it.

    Returns ``(inf, None)`` when every multistart solve ends with
    infeasibility evidence (the distance to the empty set is +inf).
    """
    x = _check_vec(x, family.n, "x")
    inst = family.instantiate(p)
    C, Q, A = inst
    tol = config.tol_feas
    candidates = []
    any_feasible = False
    for s in _starts(x, config):
        out = solve(family, p, s, config, instance=inst)
        if out.status == "feasible":
            any_feasible = True
            candidates.append(out.point)
    if not any_feasible:
        return math.inf, None
    try:
        z = nearest_solution(family, p, x, instance=inst)
    except geo.ProjectionNotConverged as exc:
        z = exc.iterate
    if z is not None:
        d_aq, d_c, *_ = _residual(C, Q, A, z)
        if d_aq + d_c <= tol:
            candidates.append(z)
    dists = [float(np.linalg.norm(x - c)) for c in candidates]
    i = int(np.argmin(dists))
    return dists[i], candidates[i]


def solver_oracle(family: SfpFamily, config: SolverConfig = SolverConfig()):
    """Distance oracle ``(p, x) -> float`` backed by :func:`dist_to_solution`."""

    def oracle(p, x):
        return dist_to_solution(family, p, x, config)[0]

    return oracle
