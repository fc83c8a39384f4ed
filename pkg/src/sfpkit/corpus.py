"""Built-in one-dimensional families with closed-form solution maps.

All four share the reference pair ``(p_ref, x_ref) = (0, 0)``.

ex31  C(p) = (-inf, -p],  Q(p) = [p, inf),       A(p, x) = (p + 1/2) x,  p >= 0
ex32  C(p) = R,           Q(p) = [p^2, inf),     A(p, x) = p x,          p >= 0
ex33  C(p) = R,           Q(p) = [p, inf),       A(p, x) = (p + 1) x,    p >= 0
ex34  C(p) = [-|p|, inf), Q(p) = [|p| p^2, inf), A(p, x) = p^2 x,        p in R
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .family import LinearOpMap, ParamExpression, SetMap, SfpFamily, merit_batch

INF = math.inf


class CorpusError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CorpusExample:
    id: str
    family: SfpFamily
    interval: Callable[[float], tuple[float, float] | None]
    notes: dict = field(default_factory=dict)

    def solv_oracle(self, p) -> tuple[float, float] | None:
        """Solution set at ``p`` as a closed interval ``(lo, hi)``, or None if empty."""
        p = _scalar(p)
        self._check_domain(p)
        return self.interval(p)

    def _check_domain(self, p: float):
        lo, hi = self.family.param_lo[0], self.family.param_hi[0]
        if not lo <= p <= hi:
            raise CorpusError(f"{self.id}: parameter {p} outside the domain [{lo}, {hi}]")


def _scalar(v) -> float:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size != 1:
        raise CorpusError("corpus examples have one-dimensional parameters and decisions")
    return float(arr[0])


def oracle_dist(example: CorpusExample, p, x) -> float:
    """Exact distance from ``x`` to the solution set; ``inf`` when it is empty."""
    iv = example.solv_oracle(p)
    if iv is None:
        return INF
    lo, hi = iv
    x = _scalar(x)
    return max(lo - x, x - hi, 0.0)


def _ex31(p):
    lo, hi = p / (p + 0.5), -p
    return (lo, hi) if lo <= hi else None


def _ex32(p):
    return (-INF, INF) if p == 0 else (p, INF)


def _ex33(p):
    return (p / (p + 1.0), INF)


def _ex34(p):
    return (abs(p), INF)


def _build(id_: str) -> CorpusExample:
    p = ParamExpression.param(0)
    whole = SetMap("box", {"lo": [-INF], "hi": [INF]})
    nonneg = ([0.0], [INF])
    if id_ == "ex31":
        C = SetMap("halfspace", {"a": [1.0], "b": -p})
        Q = SetMap("box", {"lo": [p], "hi": [INF]})
        A = LinearOpMap([[p + 0.5]])
        dom, interval = nonneg, _ex31
        notes = {"tau": 0.0, "solvable_for_p_positive": False}
    elif id_ == "ex32":
        C = whole
        Q = SetMap("box", {"lo": [p * p], "hi": [INF]})
        A = LinearOpMap([[p]])
        dom, interval = nonneg, _ex32
        notes = {"tau": 0.0, "tau_c": INF}
    elif id_ == "ex33":
        C = whole
        Q = SetMap("box", {"lo": [p], "hi": [INF]})
        A = LinearOpMap([[p + 1.0]])
        dom, interval = nonneg, _ex33
        notes = {"tau_aq": 1.0, "tau_c": INF, "tau": 1.0, "error_bound_constant": 1.0,
                 "data_moduli": {"liplsc": {"C": 0.0, "A": 0.0, "Q": 1.0}}}
    elif id_ == "ex34":
        C = SetMap("box", {"lo": [-abs(p)], "hi": [INF]})
        Q = SetMap("box", {"lo": [abs(p) * p * p], "hi": [INF]})
        A = LinearOpMap([[p * p]])
        dom, interval = ([-INF], [INF]), _ex34
        notes = {"aubin": 1.0, "tau_aq": 0.0}
    else:
        raise CorpusError(f"unknown corpus example {id_!r}; known: {', '.join(CORPUS_IDS)}")
    fam = SfpFamily(C, Q, A, p_ref=[0.0], x_ref=[0.0], param_dim=1,
                    param_lo=dom[0], param_hi=dom[1], name=id_)
    return CorpusExample(id_, fam, interval, notes)


CORPUS_IDS = ("ex31", "ex32", "ex33", "ex34")


def validate(example: CorpusExample, size: int = 101, tol: float = 1e-9) -> None:
    """Check oracle against the merit function on a size x size grid.

    ``oracle distance <= tol`` must coincide with ``merit <= tol``.
    """
    p_lo = max(-1.0, example.family.param_lo[0])
    ps = np.linspace(p_lo, 1.0, size)
    xs = np.linspace(-1.0, 1.0, size)
    P, X = np.meshgrid(ps, xs, indexing="ij")
    d_aq, d_c = merit_batch(example.family, P.reshape(-1, 1), X.reshape(-1, 1))
    in_merit = (d_aq + d_c) <= tol
    in_oracle = np.array([oracle_dist(example, p, x) <= tol for p, x in zip(P.ravel(), X.ravel())])
    bad = np.flatnonzero(in_merit != in_oracle)
    if bad.size:
        i = bad[0]
        raise CorpusError(f"{example.id}: oracle disagrees with merit at p={P.ravel()[i]}, x={X.ravel()[i]}")


@lru_cache(maxsize=None)
def corpus_example(id_: str) -> CorpusExample:
    ex = _build(id_)
    validate(ex)
    return ex


def corpus_oracle(example: CorpusExample) -> Callable:
    """Distance oracle ``(p, x) -> float`` for the moduli estimators."""
    return lambda p, x: oracle_dist(example, p, x)
