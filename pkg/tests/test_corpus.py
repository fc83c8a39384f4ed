import math

import pytest

from sfpkit.corpus import CORPUS_IDS, CorpusError, corpus_example, oracle_dist, validate


def test_ids():
    assert CORPUS_IDS == ("ex31", "ex32", "ex33", "ex34")


@pytest.mark.parametrize("id_", CORPUS_IDS)
def test_reference_pair_is_origin(id_):
    fam = corpus_example(id_).family
    assert list(fam.p_ref) == [0.0] and list(fam.x_ref) == [0.0]


@pytest.mark.parametrize("id_", CORPUS_IDS)
def test_oracle_agrees_with_merit_on_grid(id_):
    validate(corpus_example(id_), size=101)


def test_solution_sets():
    assert corpus_example("ex31").solv_oracle(0.0) == (0.0, 0.0)
    assert corpus_example("ex31").solv_oracle(0.25) is None
    assert corpus_example("ex32").solv_oracle(0.0) == (-math.inf, math.inf)
    assert corpus_example("ex32").solv_oracle(0.5) == (0.5, math.inf)
    assert corpus_example("ex33").solv_oracle(1.0) == (0.5, math.inf)
    assert corpus_example("ex34").solv_oracle(-0.25) == (0.25, math.inf)


def test_oracle_distances():
    assert oracle_dist(corpus_example("ex32"), 0.5, 0.0) == 0.5
    assert oracle_dist(corpus_example("ex33"), 1.0, 2.0) == 0.0
    assert oracle_dist(corpus_example("ex31"), 0.25, 3.0) == math.inf


def test_domain_guard():
    with pytest.raises(CorpusError, match="outside"):
        oracle_dist(corpus_example("ex31"), -0.1, 0.0)
    oracle_dist(corpus_example("ex34"), -5.0, 0.0)


def test_unknown_id():
    with pytest.raises(CorpusError, match="unknown"):
        corpus_example("ex99")


def test_expected_facts_recorded():
    assert corpus_example("ex33").notes["tau_aq"] == 1.0
    assert corpus_example("ex34").notes["aubin"] == 1.0
