"""Empirical Lipschitzian moduli of the solution map and related checks.

Each estimator reports, for every radius r of a decreasing schedule, the
largest observed ratio ``dist / parameter displacement`` over samples in the
r-ball around the reference parameter; the reported value is the one at the
smallest radius. Distances come from an injected oracle ``(p, x) -> float``
(closed form or solver backed); ``inf`` means the solution set is empty.

The four estimators draw the same parameter and solution samples for equal
``(radii, samples, seed, x_radius)``, and the Aubin estimator evaluates every
ratio that the Lipschitz l.s.c. and calmness estimators evaluate, so
``liplsc <= aubin`` and ``calm <= aubin`` hold exactly on shared samples.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from . import geometry as geo
from .family import SfpFamily, merit_batch
from .regularity import RegularityEstimate, _uniform_ball, sample_params
from .solver import SolverConfig, certified_empty, nearest_solution, solve

DistOracle = Callable[[np.ndarray, np.ndarray], float]

DEFAULT_RADII = tuple(1e-3 * 2.0**k for k in range(4, -1, -1))
SAMPLING_TOL = 1e-12
BOUND_SLACK = 0.05
LINEARITY_TOL = 1e-10


class ModuliError(ValueError):
    pass


class ConvexityHypothesisError(ModuliError):
    """The operator is not jointly linear in (p, x), so convexity of the solution map is not implied."""


class VacuousBoundError(ModuliError):
    """The dual regularity constant is zero: DRC fails, bound vacuous."""


@dataclass
class ModulusEstimate:
    kind: str
    value: float
    radii: list[float]
    per_radius_values: list[float]
    witness: dict | None
    feasible_counts: list[int] = field(default_factory=list)
    x_box_radius: float | None = None

    def to_json(self) -> dict:
        out = {
            "kind": self.kind,
            "value": self.value,
            "radii": list(self.radii),
            "per_radius_values": list(self.per_radius_values),
            "witness": self.witness,
            "feasible_counts": list(self.feasible_counts),
        }
        if self.x_box_radius is not None:
            out["x_box_radius"] = self.x_box_radius
        return out


@dataclass
class ErrorBoundReport:
    constant_used: float
    grid_size: int
    max_violation: float
    violation_witness: dict | None

    @property
    def violated(self) -> bool:
        return self.violation_witness is not None

    def to_json(self) -> dict:
        return {
            "constant": self.constant_used,
            "grid_size": self.grid_size,
            "max_violation": self.max_violation,
            "witness": self.violation_witness,
        }


# -- shared sampling --------------------------------------------------------


def _check_radii(radii) -> list[float]:
    radii = [float(r) for r in radii]
    if not radii:
        raise ModuliError("radii must be a nonempty list")
    if any(r <= 0 for r in radii) or any(b >= a for a, b in zip(radii, radii[1:])):
        raise ModuliError("radii must be positive and strictly decreasing")
    return radii


def _sampling_config(config: SolverConfig | None) -> SolverConfig:
    config = config or SolverConfig()
    # Tight tolerance so badly scaled families do not admit pseudo-solutions.
    return replace(config, tol_feas=min(config.tol_feas, SAMPLING_TOL), multistart_count=0)


def _param_samples(family: SfpFamily, radius: float, samples: int, seed: int, index: int) -> np.ndarray:
    rng = np.random.default_rng([seed, index, 0])
    return sample_params(family, rng, samples, radius, exclude_center=True)


def _solution_samples(family, p, x_radius, starts, seed, index, j, config):
    """Feasible points of Sigma(p) within ``x_radius`` of x_ref, from seeded starts in that ball."""
    rng = np.random.default_rng([seed, index, 1, j])
    X0 = family.x_ref + _uniform_ball(rng, family.n, starts, x_radius)
    inst = family.instantiate(p)
    found = []
    if certified_empty(inst):
        return np.zeros((0, family.n))
    for x0 in X0:
        out = solve(family, p, x0, config, instance=inst)
        if out.status != "feasible":
            continue
        x = _refine(family, p, out.point, inst, config.tol_feas)
        if np.linalg.norm(x - family.x_ref) <= x_radius:
            found.append(x)
    return np.array(found).reshape(-1, family.n)


def _refine(family, p, x, inst, tol):
    """Snap a merit-feasible point onto Sigma(p) by best approximation.

    A small merit does not imply a small distance when A(p, .) is nearly
    degenerate, so the projected point is preferred when it is feasible.
    """
    try:
        z = nearest_solution(family, p, x, instance=inst, max_iter=10_000)
    except geo.ProjectionNotConverged:
        return x
    if z is None:
        return x
    d_aq, d_c = merit_components_inst(inst, z)
    return z if d_aq + d_c <= tol else x


def merit_components_inst(inst, x):
    C, Q, A = inst
    y = A @ x
    return float(np.linalg.norm(y - Q.project_points(y))), float(np.linalg.norm(x - C.project_points(x)))


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _graph_samples(family, radii, samples, seed, x_radius, x_starts, config, threads):
    """Per radius: parameter samples and, for each, solution samples in the x-ball."""
    out = []
    for i, r in enumerate(radii):
        P = _param_samples(family, r, samples, seed, i)
        xs = _map(lambda j: _solution_samples(family, P[j], x_radius, x_starts, seed, i, j, config),
                  range(len(P)), threads)
        out.append((P, xs))
    return out


class _Tracker:
    """Running max of ratios with first-come tie breaking."""

    def __init__(self):
        self.value, self.witness = 0.0, None

    def offer(self, ratio, witness):
        if ratio > self.value or (self.witness is None and ratio >= self.value):
            self.value, self.witness = ratio, witness


def _vec(v):
    return [float(t) for t in np.asarray(v).reshape(-1)]


def _finish(kind, radii, trackers, counts, x_box_radius=None):
    values = [t.value for t in trackers]
    return ModulusEstimate(kind, values[-1], radii, values, trackers[-1].witness, counts, x_box_radius)


# -- estimators -------------------------------------------------------------


def estimate_liplsc(
    family: SfpFamily,
    radii=DEFAULT_RADII,
    samples_per_radius: int = 64,
    seed: int = 0,
    dist_oracle: DistOracle | None = None,
    *,
    threads: int = 1,
) -> ModulusEstimate:
    """Largest ``dist(x_ref, Sigma(p)) / |p - p_ref|`` per radius."""
    radii = _check_radii(radii)
    oracle = _require(dist_oracle)
    trackers = []
    for i, r in enumerate(radii):
        P = _param_samples(family, r, samples_per_radius, seed, i)
        t = _Tracker()
        for p in P:
            d = oracle(p, family.x_ref)
            t.offer(d / np.linalg.norm(p - family.p_ref), {"p": _vec(p), "x": _vec(family.x_ref)})
        trackers.append(t)
    return _finish("liplsc", radii, trackers, [])


def _calm_trackers(family, graph, oracle):
    trackers, counts = [], []
    for P, xs in graph:
        t = _Tracker()
        for p, X in zip(P, xs):
            for x in X:
                t.offer(oracle(family.p_ref, x) / np.linalg.norm(p - family.p_ref), {"p": _vec(p), "x": _vec(x)})
        trackers.append(t)
        counts.append(int(sum(len(X) for X in xs)))
    return trackers, counts


def estimate_calm(
    family: SfpFamily,
    radii=DEFAULT_RADII,
    x_radius: float = 1.0,
    samples: int = 64,
    seed: int = 0,
    dist_oracle: DistOracle | None = None,
    *,
    x_starts: int = 8,
    solver_config: SolverConfig | None = None,
    threads: int = 1,
) -> ModulusEstimate:
    """Largest ``dist(x, Sigma(p_ref)) / |p - p_ref|`` over sampled x in Sigma(p) near x_ref."""
    radii = _check_radii(radii)
    oracle = _require(dist_oracle)
    if x_radius <= 0:
        raise ModuliError("x_radius must be positive")
    graph = _graph_samples(family, radii, samples, seed, x_radius, x_starts, _sampling_config(solver_config), threads)
    trackers, counts = _calm_trackers(family, graph, oracle)
    return _finish("calm", radii, trackers, counts)


def estimate_lipusc(
    family: SfpFamily,
    radii=DEFAULT_RADII,
    x_box_radius: float = 10.0,
    samples: int = 64,
    seed: int = 0,
    dist_oracle: DistOracle | None = None,
    *,
    x_radius: float | None = None,
    x_starts: int = 8,
    solver_config: SolverConfig | None = None,
    threads: int = 1,
) -> ModulusEstimate:
    """Largest ``dist(x, Sigma(p_ref)) / |p - p_ref|`` over sampled x in Sigma(p) within the truncation ball.

    With ``x_radius`` given, the calmness samples for that radius are
    included as well, so the result dominates :func:`estimate_calm` on
    shared arguments.
    """
    radii = _check_radii(radii)
    oracle = _require(dist_oracle)
    if x_box_radius <= 0:
        raise ModuliError("x_box_radius must be positive")
    config = _sampling_config(solver_config)
    graph = _graph_samples(family, radii, samples, seed, x_box_radius, x_starts, config, threads)
    trackers, counts = _calm_trackers(family, graph, oracle)
    if x_radius is not None:
        near = _graph_samples(family, radii, samples, seed, x_radius, x_starts, config, threads)
        extra, extra_counts = _calm_trackers(family, near, oracle)
        for t, e in zip(trackers, extra):
            t.offer(e.value, e.witness)
        counts = [a + b for a, b in zip(counts, extra_counts)]
    return _finish("lipusc", radii, trackers, counts, x_box_radius)


def estimate_aubin(
    family: SfpFamily,
    radii=DEFAULT_RADII,
    x_radius: float = 1.0,
    samples: int = 64,
    seed: int = 0,
    dist_oracle: DistOracle | None = None,
    *,
    x_starts: int = 8,
    solver_config: SolverConfig | None = None,
    threads: int = 1,
) -> ModulusEstimate:
    """Largest ``dist(x, Sigma(p2)) / |p1 - p2|`` over sampled pairs and x in Sigma(p1) near x_ref.

    Pairs are (p_ref, p_j), (p_j, p_ref) and consecutive samples in both
    orders; x_ref itself is used for the pairs starting at p_ref.
    """
    radii = _check_radii(radii)
    oracle = _require(dist_oracle)
    if x_radius <= 0:
        raise ModuliError("x_radius must be positive")
    graph = _graph_samples(family, radii, samples, seed, x_radius, x_starts, _sampling_config(solver_config), threads)
    pref, xref = family.p_ref, family.x_ref
    trackers, counts = [], []
    for P, xs in graph:
        t = _Tracker()

        def offer(p1, X, p2):
            gap = np.linalg.norm(p1 - p2)
            if gap == 0:
                return
            for x in X:
                t.offer(oracle(p2, x) / gap, {"p1": _vec(p1), "p2": _vec(p2), "x": _vec(x)})

        for j, p in enumerate(P):
            offer(pref, [xref], p)
            offer(p, xs[j], pref)
        for j in range(len(P) - 1):
            offer(P[j], xs[j], P[j + 1])
            offer(P[j + 1], xs[j + 1], P[j])
        trackers.append(t)
        counts.append(int(sum(len(X) for X in xs)))
    return _finish("aubin", radii, trackers, counts)


def _require(oracle):
    if oracle is None or not callable(oracle):
        raise ModuliError("a distance oracle (p, x) -> float is required")
    return oracle


# -- error bound ------------------------------------------------------------


def _axis_grid(center, radius, lo, hi, density):
    axes = []
    for c, a, b in zip(center, lo, hi):
        left, right = max(c - radius, a), min(c + radius, b)
        axes.append(np.linspace(left, right, density) if right > left else np.array([left]))
    return axes


def _ball_grid(center, radius, lo, hi, density):
    axes = _axis_grid(center, radius, lo, hi, density)
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    keep = np.linalg.norm(pts - center, axis=1) <= radius * (1 + 1e-12)
    return pts[keep]


def verify_error_bound(
    family: SfpFamily,
    constant: float,
    p_radius: float,
    x_radius: float,
    grid_density: int,
    dist_oracle: DistOracle,
    slack: float = 1e-9,
) -> ErrorBoundReport:
    """Check ``dist(x, Sigma(p)) <= constant * psi(p, x) + slack`` on a grid.

    The grid is ``grid_density`` points per axis over the bounding box of
    each closed ball, clipped to the parameter domain, keeping the points in
    the ball. ``max_violation`` is the largest ``dist - constant * psi - slack``.
    """
    if not constant > 0:
        raise ModuliError("constant must be positive")
    if grid_density < 2:
        raise ModuliError("grid_density must be at least 2")
    oracle = _require(dist_oracle)
    n = family.n
    Pg = _ball_grid(family.p_ref, p_radius, family.param_lo, family.param_hi, grid_density)
    Xg = _ball_grid(family.x_ref, x_radius, np.full(n, -np.inf), np.full(n, np.inf), grid_density)
    P = np.repeat(Pg, len(Xg), axis=0)
    X = np.tile(Xg, (len(Pg), 1))
    d_aq, d_c = merit_batch(family, P, X)
    psi = d_aq + d_c
    worst, witness = -math.inf, None
    for i in range(len(P)):
        d = oracle(P[i], X[i])
        gap = d - constant * psi[i] - slack
        if gap > worst:
            worst = gap
            if gap > 0:
                witness = {"p": _vec(P[i]), "x": _vec(X[i]), "dist": d, "merit": float(psi[i])}
    return ErrorBoundReport(float(constant), len(P), float(worst), witness)


# -- isolated calmness ------------------------------------------------------


def _localizes_to_point(S: geo.ConvexSet, center: np.ndarray, eta: float, tol: float = 1e-9) -> bool:
    """Whether ``S`` meets the closed eta-ball around ``center`` in at most that point."""
    if geo.distance(S, center) > tol:
        return False
    kind = S.kind
    if kind == "singleton":
        return True
    if kind == "box":
        return bool(np.all(S.hi - S.lo <= tol))
    if kind == "ball":
        return float(S.radius) <= tol
    if kind == "affine":
        return np.linalg.matrix_rank(S.M, tol=S.rank_tol) == S.dim
    if kind == "polyhedron":
        n = S.dim
        bounds = [(c - eta, c + eta) for c in center]
        for i in range(n):
            for sign in (1.0, -1.0):
                res = linprog(-sign * np.eye(n)[i], A_ub=S.rows_a, b_ub=S.rows_b, bounds=bounds, method="highs")
                if res.status != 0 or abs(res.x[i] - center[i]) > tol:
                    return False
        return True
    return False


def check_isolated_calmness(
    family: SfpFamily,
    eta_schedule=(1.0, 0.1, 0.01),
    samples: int = 64,
    seed: int = 0,
    *,
    solver_config: SolverConfig | None = None,
    point_tol: float = 1e-6,
) -> tuple[bool, dict]:
    """Sample Sigma(p_ref) in the smallest eta-ball and test that it is the single point x_ref.

    The evidence also records two sufficient conditions: ``v1`` (C(p_ref)
    is a single point near x_ref) and ``v2`` (Q(p_ref) is a single point near
    A x_ref and A(p_ref, .) is injective, smallest singular value > 1e-10).
    """
    etas = _check_radii(eta_schedule)
    eta = etas[-1]
    config = _sampling_config(solver_config)
    C, Q, A = family.instantiate(family.p_ref)
    X = _solution_samples(family, family.p_ref, eta, samples, seed, 0, 0, config)
    spread = np.linalg.norm(X - family.x_ref, axis=1) if len(X) else np.zeros(0)
    holds = bool(np.all(spread <= point_tol))
    v1 = _localizes_to_point(C, family.x_ref, eta)
    y = A @ family.x_ref
    sv = np.linalg.svd(A, compute_uv=False)
    injective = A.shape[0] >= A.shape[1] and sv.size > 0 and float(sv.min()) > 1e-10
    v2 = bool(injective and _localizes_to_point(Q, y, eta * max(float(sv.max()), 1.0)))
    evidence = {
        "eta": eta,
        "feasible_found": int(len(X)),
        "max_spread": float(spread.max()) if spread.size else 0.0,
        "v1": bool(v1),
        "v2": v2,
    }
    return holds, evidence


# -- convexity of the solution map -----------------------------------------


def joint_linearity_residual(family: SfpFamily, seed: int = 0, trials: int = 32, scale: float = 1.0) -> float:
    """Largest relative defect of ``(p, x) -> A(p, x)`` being linear on random combinations."""
    rng = np.random.default_rng([seed, 7])
    worst = 0.0
    for _ in range(trials):
        p1, p2 = (family.p_ref + scale * rng.standard_normal((2, family.m)))
        x1, x2 = rng.standard_normal((2, family.n)) * scale
        a, b = rng.standard_normal(2)
        if not (family.in_domain(p1) and family.in_domain(p2) and family.in_domain(a * p1 + b * p2)):
            p1 = p2 = family.p_ref
        lhs = family.A.instantiate(a * p1 + b * p2) @ (a * x1 + b * x2)
        rhs = a * family.A.instantiate(p1) @ x1 + b * family.A.instantiate(p2) @ x2
        denom = 1.0 + np.linalg.norm(lhs) + np.linalg.norm(rhs)
        worst = max(worst, float(np.linalg.norm(lhs - rhs)) / denom)
    return worst


def check_solv_convexity(
    family: SfpFamily,
    pair_samples: int,
    seed: int,
    dist_oracle: DistOracle,
    *,
    p_radius: float = 1.0,
    x_radius: float = 1.0,
    solver_config: SolverConfig | None = None,
    violation_tol: float = 1e-6,
) -> tuple[bool, float, dict]:
    """Check that convex combinations of graph points stay in the graph.

    Raises :class:`ConvexityHypothesisError` when the operator fails the
    joint linearity test. Returns ``(holds, max_violation, evidence)``.
    """
    oracle = _require(dist_oracle)
    residual = joint_linearity_residual(family, seed)
    if residual > LINEARITY_TOL:
        raise ConvexityHypothesisError(
            f"operator is not jointly linear in (p, x): residual {residual:.3e} > {LINEARITY_TOL:g}"
        )
    config = _sampling_config(solver_config)
    rng = np.random.default_rng([seed, 11])
    pts = []
    attempts = 0
    while len(pts) < 2 * pair_samples and attempts < 20 * pair_samples:
        attempts += 1
        p = sample_params(family, rng, 1, p_radius)[0]
        x0 = family.x_ref + _uniform_ball(rng, family.n, 1, x_radius)[0]
        out = solve(family, p, x0, config)
        if out.status == "feasible":
            pts.append((p, out.point))
    if len(pts) < 2:
        raise ModuliError("could not sample graph points")
    worst, witness = 0.0, None
    for (p1, x1), (p2, x2) in zip(pts[0::2], pts[1::2]):
        for t in (0.25, 0.5, 0.75):
            p, x = t * p1 + (1 - t) * p2, t * x1 + (1 - t) * x2
            d = oracle(p, x)
            if d > worst:
                worst, witness = d, {"p": _vec(p), "x": _vec(x), "t": t}
    pairs = len(pts) // 2
    return worst <= violation_tol, float(worst), {"pairs": pairs, "linearity_residual": residual, "witness": witness}


# -- theorem bounds ---------------------------------------------------------

BOUND_KINDS = ("liplsc", "calm", "aubin", "lipusc")


def compare_bound_theorems(
    component_moduli: dict,
    tau_estimate,
    estimated: dict,
    *,
    tau_global=None,
    slack: float = BOUND_SLACK,
) -> list[dict]:
    """Compare estimated moduli with ``(C modulus + A modulus + Q modulus) / tau``.

    ``component_moduli`` maps a modulus kind to ``{"C": .., "A": .., "Q": ..}``;
    ``estimated`` maps the same kinds to a :class:`ModulusEstimate` or a float.
    The u.s.c. bound uses ``tau_global`` when given. A row is flagged when the
    estimate exceeds its bound by more than ``slack``.
    """
    rows = []
    for kind in BOUND_KINDS:
        if kind not in component_moduli or kind not in estimated:
            continue
        tau_src = tau_global if (kind == "lipusc" and tau_global is not None) else tau_estimate
        tau = tau_src.tau if isinstance(tau_src, RegularityEstimate) else float(tau_src)
        if not tau > 0:
            raise VacuousBoundError(f"{kind}: tau estimate is {tau}; DRC fails, bound vacuous")
        parts = component_moduli[kind]
        missing = {"C", "A", "Q"} - set(parts)
        if missing:
            raise ModuliError(f"{kind}: missing data moduli {sorted(missing)}")
        total = float(parts["C"]) + float(parts["A"]) + float(parts["Q"])
        bound = total / tau
        est = estimated[kind]
        value = est.value if isinstance(est, ModulusEstimate) else float(est)
        rows.append({"theorem": kind, "modulus": total, "tau": tau, "bound": bound,
                     "estimated": value, "exceeds": bool(value > bound + slack)})
    return rows

