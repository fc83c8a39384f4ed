import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfpkit.corpus import corpus_example
from sfpkit.family import (
    FamilyError,
    LinearOpMap,
    ParamExpression,
    SetMap,
    SfpFamily,
    adjoint_apply,
    merit,
    merit_batch,
    merit_components,
    opnorm,
)

p0, p1 = ParamExpression.param(0), ParamExpression.param(1)


def test_expression_arithmetic():
    e = 2 * p0 * p1 - abs(p0) + 0.5
    assert e.evaluate([-3.0, 2.0]) == pytest.approx(2 * -3 * 2 - 3 + 0.5)


def test_expression_batch_evaluation():
    e = abs(p0) * p0 * p0
    vals = e.evaluate(np.array([[-0.5], [2.0]]))
    np.testing.assert_allclose(vals, [0.125, 8.0])


def test_degree_cap():
    with pytest.raises(FamilyError):
        _ = p0 * p0 * p0 * p0


def test_abs_only_on_bare_parameter():
    with pytest.raises(FamilyError):
        abs(p0 + 1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.integers(0, 3)), min_size=1, max_size=4),
       st.floats(-2, 2), st.floats(-2, 2))
def test_expression_json_round_trip(terms, a, b):
    e = ParamExpression.const(0.0)
    for coef, deg in terms:
        t = ParamExpression.const(coef)
        for _ in range(deg):
            t = t * p0
        e = e + t * (p1 if deg < 3 else 1)
    back = ParamExpression.from_json(json.loads(json.dumps(e.to_json())))
    assert back.evaluate([a, b]) == pytest.approx(e.evaluate([a, b]), abs=1e-12)


def test_constant_expression_serializes_as_number():
    assert ParamExpression.const(2.5).to_json() == 2.5
    assert ParamExpression.from_json("-inf").evaluate([0.0]) == -np.inf


def test_merit_components_ex31():
    fam = corpus_example("ex31").family
    d_aq, d_c = merit_components(fam, [0.25], [-0.25])
    assert d_aq == pytest.approx(0.4375)
    assert d_c == 0.0


def test_merit_ex34_badly_scaled():
    fam = corpus_example("ex34").family
    assert merit_components(fam, [0.5], [0.0]) == pytest.approx((0.125, 0.0))


def test_merit_zero_iff_solution():
    fam = corpus_example("ex33").family
    assert merit(fam, [1.0], [0.5]) == 0.0
    assert merit(fam, [1.0], [0.49]) > 0


def test_merit_batch_matches_scalar():
    fam = corpus_example("ex34").family
    rng = np.random.default_rng(0)
    P, X = rng.uniform(-1, 1, (50, 1)), rng.uniform(-1, 1, (50, 1))
    d_aq, d_c = merit_batch(fam, P, X)
    for i in range(50):
        assert (d_aq[i], d_c[i]) == pytest.approx(merit_components(fam, P[i], X[i]), abs=1e-15)


def test_reference_pair_must_be_solution():
    with pytest.raises(FamilyError, match="merit"):
        SfpFamily(SetMap("box", {"lo": [1.0], "hi": [2.0]}), SetMap("box", {"lo": [-np.inf], "hi": [np.inf]}),
                  LinearOpMap([[1.0]]), p_ref=[0.0], x_ref=[0.0])


def test_dimension_checks():
    with pytest.raises(FamilyError, match="columns"):
        SfpFamily(SetMap("box", {"lo": [0.0, 0.0], "hi": [1.0, 1.0]}), SetMap("box", {"lo": [0.0], "hi": [1.0]}),
                  LinearOpMap([[1.0]]), p_ref=[0.0], x_ref=[0.0])


def test_parameter_index_beyond_dimension():
    with pytest.raises(FamilyError, match="p1"):
        SfpFamily(SetMap("box", {"lo": [p1], "hi": [np.inf]}), SetMap("box", {"lo": [-np.inf], "hi": [np.inf]}),
                  LinearOpMap([[1.0]]), p_ref=[0.0], x_ref=[0.0], param_dim=1)


def test_instantiation_failure_names_parameter():
    fam = SfpFamily(SetMap("box", {"lo": [p0], "hi": [1.0]}), SetMap("box", {"lo": [-np.inf], "hi": [np.inf]}),
                    LinearOpMap([[1.0]]), p_ref=[0.0], x_ref=[0.5])
    with pytest.raises(FamilyError, match="p="):
        fam.instantiate([2.0])
    with pytest.raises(FamilyError):
        fam.check_domain()


def test_family_json_round_trip():
    fam = corpus_example("ex34").family
    doc = json.loads(json.dumps(fam.to_json()))
    back = SfpFamily.from_json(doc, [0.0], [0.0])
    for p in (-0.7, 0.0, 0.4):
        a, b = fam.instantiate([p]), back.instantiate([p])
        np.testing.assert_array_equal(a[2], b[2])
        np.testing.assert_array_equal(a[0].lo, b[0].lo)
        np.testing.assert_array_equal(a[1].lo, b[1].lo)


def test_adjoint_and_norm():
    fam = corpus_example("ex33").family
    assert adjoint_apply(fam, [1.0], [1.0]) == pytest.approx([2.0])
    assert opnorm(np.array([[3.0, 0.0], [0.0, -4.0]])) == pytest.approx(4.0)


def test_domain_guard():
    fam = corpus_example("ex33").family
    assert fam.in_domain([0.5]) and not fam.in_domain([-0.1])
