"""Strong slopes and sampled dual regularity constants.

For a sample (p, x) near the reference pair the estimators evaluate the
norm minimised in the definition of the dual regularity constants:

* ``AQ_positive`` (A(p,x) outside Q(p)): ||A^T u + w|| minimised over
  w in N(x; C(p) enlarged) with ||w|| <= 1, u the unit outward Q-normal;
* ``AQ_zero_C_positive``: ||A^T w + v|| minimised over w in N(A x; Q(p))
  with ||w|| <= 1, v the unit outward C-normal.

Minima are taken over a seeded sample of the open ball product and are
therefore upper bounds of the true infima.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .family import SfpFamily, _check_vec

STRICT_TOL = 1e-8
CHUNK = 8192
MIN_SAMPLES = 100

FEASIBLE, AQ_POSITIVE, AQ_ZERO_C_POSITIVE = "feasible", "AQ_positive", "AQ_zero_C_positive"
_CLASS_NAMES = (FEASIBLE, AQ_POSITIVE, AQ_ZERO_C_POSITIVE)


class RegularityError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingPlan:
    """``count`` seeded samples; every ``anchor_every``-th one sits at the reference parameter."""

    count: int
    seed: int = 0
    anchor_every: int = 16

    def to_json(self):
        return {"count": self.count, "seed": self.seed, "anchor_every": self.anchor_every}


@dataclass(frozen=True)
class RegionSample:
    p: np.ndarray
    x: np.ndarray
    classification: str
    slope_value: float


@dataclass(frozen=True)
class RegularityEstimate:
    delta: float
    tau_aq: float
    tau_c: float
    tau: float
    sample_count: int
    min_witness: RegionSample | None
    global_: bool = False
    region_counts: dict | None = None

    def to_json(self) -> dict:
        w = self.min_witness
        return {
            "delta" if not self.global_ else "x_box_radius": self.delta,
            "tau_aq": self.tau_aq,
            "tau_c": self.tau_c,
            "tau": self.tau,
            "samples": self.sample_count,
            "global": self.global_,
            "region_counts": self.region_counts,
            "witness": None if w is None else {
                "p": w.p.tolist(), "x": w.x.tolist(),
                "classification": w.classification, "value": w.slope_value,
            },
        }


# -- pointwise quantities ---------------------------------------------------


def _local_pieces(C, Q, A, x, strict_tol):
    y = A @ x
    py, px = Q.project_points(y), C.project_points(x)
    d_aq, d_c = float(np.linalg.norm(y - py)), float(np.linalg.norm(x - px))
    return y, py, px, d_aq, d_c


def strong_slope(family: SfpFamily, p, x, strict_tol: float = STRICT_TOL, act_tol: float = geo.FEAS_TOL) -> float:
    """Distance from the origin to the subdifferential of psi(p, .) at x.

    Components with positive distance contribute their unique unit-normal
    gradient; components at distance zero contribute the normal cone
    intersected with the unit ball. Returns 0 on the solution set.
    """
    C, Q, A = family.instantiate(p)
    x = _check_vec(x, family.n, "x")
    y, py, px, d_aq, d_c = _local_pieces(C, Q, A, x, strict_tol)
    if d_aq > strict_tol:
        f = A.T @ ((y - py) / d_aq)
        if d_c > strict_tol:
            return float(np.linalg.norm(f + (x - px) / d_c))
        return geo.min_norm_in_cone(f, np.eye(family.n), C.cone_generators(px, act_tol))
    if d_c > strict_tol:
        v = (x - px) / d_c
        return geo.min_norm_in_cone(v, A.T, Q.cone_generators(py, act_tol))
    return 0.0


def region_value(C, Q, A, x, strict_tol: float = STRICT_TOL, act_tol: float = geo.FEAS_TOL):
    """Classification and inner minimum for one instantiated sample."""
    y, py, px, d_aq, d_c = _local_pieces(C, Q, A, x, strict_tol)
    if d_aq > strict_tol:
        f = A.T @ ((y - py) / d_aq)
        if d_c > strict_tol:
            v = (x - px) / d_c
            t = min(max(-float(f @ v), 0.0), 1.0)
            return AQ_POSITIVE, float(np.linalg.norm(f + t * v))
        return AQ_POSITIVE, geo.min_norm_in_cone(f, np.eye(len(x)), C.cone_generators(px, act_tol))
    if d_c > strict_tol:
        v = (x - px) / d_c
        return AQ_ZERO_C_POSITIVE, geo.min_norm_in_cone(v, A.T, Q.cone_generators(py, act_tol))
    return FEASIBLE, math.nan


def _region_values_batch(family, P, X, strict_tol, act_tol):
    """Vectorised classification and values; boundary cases drop to the scalar path."""
    C, Q, A = family.instantiate_batch(P)
    Y = np.einsum("nkj,nj->nk", A, X)
    PY, PX = Q.project_points(Y), C.project_points(X)
    d_aq = np.linalg.norm(Y - PY, axis=-1)
    d_c = np.linalg.norm(X - PX, axis=-1)
    aq = d_aq > strict_tol
    cp = d_c > strict_tol
    cls = np.where(aq, 1, np.where(cp, 2, 0))
    val = np.full(len(P), np.nan)

    with np.errstate(invalid="ignore", divide="ignore"):
        U = (Y - PY) / d_aq[:, None]
        V = (X - PX) / d_c[:, None]
    F = np.einsum("nkj,nk->nj", A, np.where(aq[:, None], U, 0.0))

    both = aq & cp
    t = np.clip(-np.sum(F * V, axis=-1), 0.0, 1.0)
    val[both] = np.linalg.norm(F + t[:, None] * V, axis=-1)[both]

    slow = np.zeros(len(P), dtype=bool)
    aq_only = aq & ~cp
    c_triv = C.cone_trivial(PX, act_tol)
    sel = aq_only & c_triv
    val[sel] = np.linalg.norm(F, axis=-1)[sel]
    slow |= aq_only & ~c_triv

    c_only = ~aq & cp
    q_triv = Q.cone_trivial(PY, act_tol)
    val[c_only & q_triv] = 1.0
    slow |= c_only & ~q_triv

    for i in np.flatnonzero(slow):
        _, val[i] = region_value(C.take(i), Q.take(i), A[i], X[i], strict_tol, act_tol)
    return cls, val


# -- sampling ---------------------------------------------------------------


def _uniform_ball(rng, n, count, radius):
    g = rng.standard_normal((count, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / n)
    return g * r[:, None]


def sample_params(family: SfpFamily, rng, count: int, radius: float, exclude_center: bool = False):
    """Uniform draws from the closed ball around p_ref intersected with the parameter domain.

    Candidates come in fixed-size blocks, so the first ``k`` draws do not
    depend on ``count``.
    """
    block = 256
    kept, total, drawn = [], 0, 0
    while total < count:
        cand = family.p_ref + _uniform_ball(rng, family.m, block, radius)
        ok = family.in_domain(cand)
        if exclude_center:
            ok &= np.any(cand != family.p_ref, axis=1)
        kept.append(cand[ok])
        total += int(ok.sum())
        drawn += block
        if drawn >= 100 * block and total < drawn // 1000:
            raise RegularityError("parameter domain barely meets the sampling ball")
    return np.vstack(kept)[:count] if kept else np.empty((0, family.m))


def _chunk_samples(family, plan, index, size, p_radius, x_center, x_radius, p_fixed):
    # Always draw a full chunk so a smaller count is a prefix of a larger one.
    rng = np.random.default_rng([plan.seed, index])
    if p_fixed is not None:
        P = np.broadcast_to(p_fixed, (CHUNK, family.m)).copy()
    else:
        P = sample_params(family, rng, CHUNK, p_radius)
        if plan.anchor_every:
            start = index * CHUNK
            P[(np.arange(start, start + CHUNK) % plan.anchor_every) == 0] = family.p_ref
    X = x_center + _uniform_ball(rng, family.n, CHUNK, x_radius)
    return P[:size], X[:size]


def _reduce(family, P, X, strict_tol, act_tol):
    cls, val = _region_values_batch(family, P, X, strict_tol, act_tol)
    best = {}
    for c in (1, 2):
        idx = np.flatnonzero(cls == c)
        if idx.size:
            i = idx[np.argmin(val[idx])]
            best[c] = (float(val[i]), P[i].copy(), X[i].copy())
    return best, [int(np.sum(cls == c)) for c in range(3)]


def _merge(parts):
    best = {1: None, 2: None}
    counts = np.zeros(3, dtype=int)
    for res, cnt in parts:
        counts += cnt
        for c, item in res.items():
            if best[c] is None or item[0] < best[c][0]:
                best[c] = item
    tau_aq = best[1][0] if best[1] else math.inf
    tau_c = best[2][0] if best[2] else math.inf
    witness = None
    pick = 1 if tau_aq <= tau_c else 2
    if best[pick] is not None:
        v, p, x = best[pick]
        witness = RegionSample(p, x, _CLASS_NAMES[pick], v)
    return tau_aq, tau_c, witness, dict(zip(_CLASS_NAMES, map(int, counts)))


def _estimate(family, plan, p_radius, x_center, x_radius, p_fixed, strict_tol, act_tol, threads):
    if plan.count < MIN_SAMPLES:
        raise RegularityError(f"sampling.count={plan.count} is below {MIN_SAMPLES}; estimate would be meaningless")
    sizes = [min(CHUNK, plan.count - s) for s in range(0, plan.count, CHUNK)]

    def work(j):
        P, X = _chunk_samples(family, plan, j, sizes[j], p_radius, x_center, x_radius, p_fixed)
        return _reduce(family, P, X, strict_tol, act_tol)

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, range(len(sizes))))
    else:
        parts = [work(j) for j in range(len(sizes))]
    return _merge(parts)


def tau_from_samples(
    family: SfpFamily, P, X, delta: float, strict_tol: float = STRICT_TOL, act_tol: float = geo.FEAS_TOL
) -> RegularityEstimate:
    """Same reduction as :func:`estimate_tau` over caller-supplied samples (rows of ``P`` and ``X``)."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if P.shape != (len(X), family.m) or X.shape[1] != family.n:
        raise RegularityError("sample arrays have the wrong shape")
    tau_aq, tau_c, w, counts = _merge([_reduce(family, P, X, strict_tol, act_tol)])
    return RegularityEstimate(delta, tau_aq, tau_c, min(tau_aq, tau_c), len(P), w, False, counts)


def estimate_tau(
    family: SfpFamily,
    delta: float,
    sampling: SamplingPlan,
    strict_tol: float = STRICT_TOL,
    act_tol: float = geo.FEAS_TOL,
    threads: int = 1,
) -> RegularityEstimate:
    """Sampled dual regularity constants over the ball product of radius ``delta``."""
    if delta <= 0:
        raise RegularityError("delta must be positive")
    r = delta * (1 - 1e-12)
    tau_aq, tau_c, w, counts = _estimate(family, sampling, r, family.x_ref, r, None, strict_tol, act_tol, threads)
    return RegularityEstimate(delta, tau_aq, tau_c, min(tau_aq, tau_c), sampling.count, w, False, counts)


def estimate_tau_global(
    family: SfpFamily,
    p_fixed,
    x_box_radius: float,
    sampling: SamplingPlan,
    strict_tol: float = STRICT_TOL,
    act_tol: float = geo.FEAS_TOL,
    threads: int = 1,
) -> RegularityEstimate:
    """Global constants at a frozen parameter, x drawn from a ball of radius ``x_box_radius``."""
    if x_box_radius <= 0:
        raise RegularityError("x_box_radius must be positive")
    p_fixed = _check_vec(p_fixed, family.m, "p_fixed")
    tau_aq, tau_c, w, counts = _estimate(
        family, sampling, 0.0, family.x_ref, x_box_radius, p_fixed, strict_tol, act_tol, threads
    )
    return RegularityEstimate(x_box_radius, tau_aq, tau_c, min(tau_aq, tau_c), sampling.count, w, True, counts)


def drc_holds(estimate: RegularityEstimate, threshold: float) -> tuple[bool, RegionSample | None]:
    return estimate.tau >= threshold, estimate.min_witness
