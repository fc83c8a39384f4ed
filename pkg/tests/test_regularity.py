import math

import numpy as np
import pytest

from sfpkit.corpus import CORPUS_IDS, corpus_example
from sfpkit.family import LinearOpMap, SetMap, SfpFamily, merit
from sfpkit.regularity import (
    AQ_POSITIVE,
    AQ_ZERO_C_POSITIVE,
    RegularityError,
    SamplingPlan,
    drc_holds,
    estimate_tau,
    estimate_tau_global,
    region_value,
    strong_slope,
    tau_from_samples,
)
from helpers import constant_family, point_solution_family
import oracles

# Frozen from oracles.ex33_global_slope() (10^4-point grid, central differences).
EX33_GLOBAL_SLOPE = 1.0


def fam(id_):
    return corpus_example(id_).family


def test_slope_ex33():
    assert strong_slope(fam("ex33"), [1.0], [0.0]) == pytest.approx(2.0)


def test_slope_at_reference_is_zero():
    assert strong_slope(fam("ex31"), [0.0], [0.0]) == 0.0


def test_region_value_ex31_boundary_point():
    # A x below Q and x on the boundary of C: min over [0, 1] of |-(p + 1/2) + t| is reached inside
    C, Q, A = fam("ex31").instantiate([0.25])
    cls, val = region_value(C, Q, A, np.array([-0.25]))
    assert cls == AQ_POSITIVE and val == pytest.approx(0.0, abs=1e-12)


def test_slope_ex31_boundary_point():
    assert strong_slope(fam("ex31"), [0.25], [-0.25]) == pytest.approx(0.0, abs=1e-12)


def test_estimate_ex33():
    est = estimate_tau(fam("ex33"), 0.5, SamplingPlan(20_000, seed=1))
    assert 0.95 <= est.tau_aq <= 1.0
    assert est.tau_c == math.inf and est.tau == est.tau_aq
    assert drc_holds(est, 0.5)[0]


def test_estimate_ex31():
    est = estimate_tau(fam("ex31"), 0.5, SamplingPlan(20_000, seed=1))
    assert est.tau <= 0.05
    ok, w = drc_holds(est, 0.05)
    assert not ok
    # witness sits where A x is below Q(p): close to the boundary point -p or inside C
    assert w.p[0] > 0 and w.x[0] < w.p[0] / (w.p[0] + 0.5)


def test_estimate_ex32_small_parameter_witness():
    est = estimate_tau(fam("ex32"), 0.5, SamplingPlan(20_000, seed=1))
    assert est.tau_aq <= 0.05 and est.tau_c == math.inf
    assert est.min_witness.p[0] == pytest.approx(est.tau_aq, abs=1e-12)


def test_global_ex33_matches_brute_force():
    est = estimate_tau_global(fam("ex33"), [0.0], 10.0, SamplingPlan(10_000))
    assert est.global_ and est.delta == 10.0
    assert est.tau == pytest.approx(EX33_GLOBAL_SLOPE, abs=1e-9)


def test_global_ex34_degenerate_parameter():
    est = estimate_tau_global(fam("ex34"), [0.0], 10.0, SamplingPlan(1000))
    assert est.tau_aq == math.inf and est.tau_c == pytest.approx(1.0)


def test_fully_feasible_family_has_infinite_tau():
    est = estimate_tau_global(constant_family(), [0.0], 0.5, SamplingPlan(1000))
    assert est.tau == math.inf and est.min_witness is None
    assert drc_holds(est, 1e6)[0]


def test_too_few_samples():
    with pytest.raises(RegularityError, match="100"):
        estimate_tau(fam("ex33"), 0.5, SamplingPlan(99))


def test_nonpositive_delta():
    with pytest.raises(RegularityError):
        estimate_tau(fam("ex33"), 0.0, SamplingPlan(1000))


def test_tau_is_min_of_components():
    for id_ in CORPUS_IDS:
        est = estimate_tau(fam(id_), 0.5, SamplingPlan(2000, seed=4))
        assert est.tau == min(est.tau_aq, est.tau_c)


def test_count_prefix_monotone():
    for id_ in CORPUS_IDS:
        small = estimate_tau(fam(id_), 0.5, SamplingPlan(1000, seed=2))
        large = estimate_tau(fam(id_), 0.5, SamplingPlan(100_000, seed=2))
        assert large.tau <= small.tau + 1e-9
        assert large.tau_aq <= small.tau_aq + 1e-9 and large.tau_c <= small.tau_c + 1e-9


def test_nested_radius_monotone():
    rng = np.random.default_rng(5)
    for id_ in CORPUS_IDS:
        f = fam(id_)

        def draw(r, k):
            P = rng.uniform(-r, r, (k, 1))
            P = P[f.in_domain(P)]
            return P, rng.uniform(-r, r, (len(P), 1))

        P1, X1 = draw(0.1, 4000)
        P2, X2 = draw(0.5, 4000)
        t1 = tau_from_samples(f, P1, X1, 0.1)
        t2 = tau_from_samples(f, np.vstack([P1, P2]), np.vstack([X1, X2]), 0.5)
        assert t2.tau <= t1.tau


def test_thread_count_does_not_change_result():
    a = estimate_tau(fam("ex34"), 0.5, SamplingPlan(30_000, seed=8), threads=1)
    b = estimate_tau(fam("ex34"), 0.5, SamplingPlan(30_000, seed=8), threads=3)
    assert (a.tau_aq, a.tau_c) == (b.tau_aq, b.tau_c)
    np.testing.assert_array_equal(a.min_witness.x, b.min_witness.x)


def test_seeds_change_samples():
    a = estimate_tau(fam("ex32"), 0.5, SamplingPlan(1000, seed=1))
    b = estimate_tau(fam("ex32"), 0.5, SamplingPlan(1000, seed=2))
    assert a.tau_aq != b.tau_aq


@pytest.mark.parametrize("id_", CORPUS_IDS)
def test_slope_bounds_descent_rate(id_):
    f = fam(id_)
    rng = np.random.default_rng(11)
    lo = max(-1.0, f.param_lo[0])
    checked = 0
    while checked < 30:
        p, x = rng.uniform(lo, 1.0, 1), rng.uniform(-1, 1, 1)
        if merit(f, p, x) <= 1e-6:
            continue
        slope = strong_slope(f, p, x)
        t = 1e-6
        for d in (-1.0, 1.0):
            assert (merit(f, p, x) - merit(f, p, x + t * d)) / t <= slope + 1e-3
        checked += 1


def test_slope_multidimensional_outer_branch():
    f = point_solution_family()
    # A x = (2, 0) outside Q = {0}: gradient A^T u = (2, 1)
    assert strong_slope(f, [0.0], [1.0, 0.0]) == pytest.approx(math.sqrt(5.0))


def test_slope_uses_q_normal_cone_when_image_on_boundary():
    # C = {x1 <= 0}, Q = [1, inf), A x = x1; at x = (1, 0) the merit is flat (equal to 1)
    f = SfpFamily(SetMap("halfspace", {"a": [1.0, 0.0], "b": 0.0}), SetMap("box", {"lo": [1.0], "hi": [np.inf]}),
                  LinearOpMap([[1.0, 0.0]]), p_ref=[0.0], x_ref=[1.0, 0.0], check_reference=False)
    assert merit(f, [0.0], [1.0, 0.0]) == 1.0
    assert strong_slope(f, [0.0], [1.0, 0.0]) == pytest.approx(0.0, abs=1e-9)
    est = tau_from_samples(f, [[0.0]], [[1.0, 0.0]], 1.0)
    assert est.min_witness.classification == AQ_ZERO_C_POSITIVE
    assert est.tau_c == pytest.approx(0.0, abs=1e-9)


def test_oracle_value_is_frozen():
    assert oracles.ex33_global_slope() == pytest.approx(EX33_GLOBAL_SLOPE, abs=1e-6)
