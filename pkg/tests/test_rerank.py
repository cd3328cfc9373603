import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rerankvqa.backends import StubReranker, TableReranker
from rerankvqa.captioning import Caption
from rerankvqa.exceptions import BackendError, ValidationError
from rerankvqa.rerank import (CaptionReranker, CaptionSelection, ScoredCaption,
                              rerank_captions, score_pair, select_top_captions)


def scored(values):
    return [ScoredCaption(i, float(v)) for i, v in enumerate(values)]


def brute_force(values, k):
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return order[:k]


def test_tie_goes_to_lower_index():
    assert select_top_captions(scored([0.2, 0.9, 0.9, 0.1]), k=2).ordered == (1, 2)


def test_k_exceeds_count():
    sel = select_top_captions(scored([0.3, 0.7, 0.5]), k=5)
    assert sel.ordered == (1, 2, 0)
    assert sel.scores == (0.7, 0.5, 0.3)


def test_empty_input_flagged():
    sel = select_top_captions([], k=5)
    assert sel.ordered == () and "empty_input" in sel.flags


def test_k_must_be_positive():
    with pytest.raises(ValidationError):
        select_top_captions(scored([1.0]), k=0)


def test_random_vectors_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = int(rng.integers(1, 40))
        v = rng.integers(0, 5, size=n) / 4 if rng.random() < 0.5 else rng.random(n)
        k = int(rng.integers(1, 45))
        assert list(select_top_captions(scored(v), k).ordered) == brute_force(list(v), k)


# quarter-integer values keep translated scores exact in floating point
@given(st.lists(st.integers(-400, 400).map(lambda v: v / 4), min_size=1, max_size=30),
       st.integers(1, 10), st.integers(-200, 200).map(lambda v: v / 4), st.randoms())
def test_selection_invariants(values, k, shift, rnd):
    base = select_top_captions(scored(values), k).ordered
    # scoring is one-to-one, so shuffling input order only relabels indices
    perm = list(range(len(values)))
    rnd.shuffle(perm)
    shuffled = [ScoredCaption(perm[i], values[i]) for i in range(len(values))]
    relabeled = select_top_captions(shuffled, k).ordered
    assert [values[perm.index(j)] for j in relabeled] == [values[i] for i in base]
    assert set(base) <= set(range(len(values))) and len(base) == min(k, len(values))
    shifted = select_top_captions(scored([v + shift for v in values]), k).ordered
    assert shifted == base


def test_stub_deterministic():
    r = StubReranker()
    a = score_pair("what sport?", "a man surfing", r)
    b = score_pair("what sport?", "a man surfing", r)
    assert a == b and r.calls == 2


def test_table_reranker_scores_match_table():
    texts = [f"caption {i}" for i in range(20)]
    table = {t: (i * 37 % 20) / 20 for i, t in enumerate(texts)}
    backend = TableReranker(table)
    got = [score_pair("q?", Caption(t), backend, i).score for i, t in enumerate(texts)]
    assert got == [table[t] for t in texts]
    sel = rerank_captions("q?", [Caption(t) for t in texts], backend, k=5)
    assert list(sel.ordered) == brute_force(got, 5)


def test_backend_failure():
    class Down:
        model_id = "down"

        def score(self, q, c):
            raise OSError("gone")

    with pytest.raises(BackendError) as info:
        score_pair("q?", "c", Down())
    assert info.value.backend_id == "down"


def test_non_finite_backend_score():
    with pytest.raises(BackendError):
        score_pair("q?", "c", TableReranker({}, default=float("nan")))


def test_selection_round_trip():
    sel = CaptionSelection((2, 0), 2, (0.9, 0.1), frozenset({"x"}))
    assert CaptionSelection.from_dict(sel.to_dict()) == sel


def test_transformer():
    caps = [Caption("a cat"), Caption("a dog on grass"), Caption("a dog")]
    rr = CaptionReranker(TableReranker({"a dog": 0.9, "a dog on grass": 0.5}), k=2).fit()
    assert rr.transform([("what?", caps)]) == [[caps[2], caps[1]]]
    with pytest.raises(ValidationError):
        CaptionReranker().fit()
