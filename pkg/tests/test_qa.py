import pytest

from rerankvqa.backends import StubAnswerer
from rerankvqa.captioning import Caption
from rerankvqa.exceptions import BackendError, ValidationError
from rerankvqa.qa import (AnswerCandidate, QAPair, RuleBasedParser, candidate_pairs,
                          default_templates, extract_answer_candidates, filter_qa_pairs,
                          instantiate_questions, parse_template_registry,
                          synthesize_qa_pairs)

REGISTRY = {
    "noun": ["What item is this in this picture?", "What item is that in this picture?"],
    "verb": ["What action is being taken in this picture?",
             "Why is this item in this picture?",
             "Which action is being taken in this picture?",
             "What action is the item doing in this picture?"],
    "adjective": ["How to describe one item in this picture?",
                  "What is the item's ADJ TYPE in this picture?",
                  "What is the ADJ TYPE in this picture?"],
}


def spans(cands):
    return [(c.span, c.pos) for c in cands]


def test_red_ball():
    assert spans(extract_answer_candidates("a red ball")) == [("ball", "noun"),
                                                             ("red", "adjective")]


def test_running():
    assert spans(extract_answer_candidates("running")) == [("running", "verb")]


def test_empty_caption_rejected():
    with pytest.raises(ValidationError):
        extract_answer_candidates("")


def test_candidates_grouped_and_deduped():
    got = spans(extract_answer_candidates("A man riding a red bike with a red helmet"))
    assert got == [("man", "noun"), ("bike", "noun"), ("helmet", "noun"),
                   ("riding", "verb"), ("red", "adjective")]


def test_adj_type_lookup():
    (red,) = [c for c in extract_answer_candidates("a red ball") if c.pos == "adjective"]
    assert red.adj_type == "color"


def test_parser_failure_is_backend_error():
    class Broken:
        backend_id = "broken"

        def tag(self, text):
            raise RuntimeError("boom")

    with pytest.raises(BackendError):
        extract_answer_candidates("a dog", parser=Broken())


def test_registry_matches_table():
    by_pos = {}
    for t in default_templates():
        by_pos.setdefault(t.pos, []).append(t.text)
    assert by_pos == REGISTRY


@pytest.mark.parametrize("pos,count", [("noun", 2), ("verb", 4), ("adjective", 3)])
def test_template_counts(pos, count):
    pairs = instantiate_questions(AnswerCandidate("w", pos, 0, "color" if pos == "adjective"
                                                  else None))
    assert len(pairs) == count
    expected = [q.replace("ADJ TYPE", "color") for q in REGISTRY[pos]]
    assert [p.question for p in pairs] == expected
    assert all(p.answer == "w" for p in pairs)


def test_ball_questions():
    pairs = instantiate_questions(AnswerCandidate("ball", "noun"))
    assert [(p.question, p.answer) for p in pairs] == [
        ("What item is this in this picture?", "ball"),
        ("What item is that in this picture?", "ball")]


def test_color_substitution():
    pairs = instantiate_questions(AnswerCandidate("red", "adjective", 0, "color"))
    assert "What is the item's color in this picture?" in [p.question for p in pairs]


def test_registry_parser_rejects_bad_lines():
    with pytest.raises(ValueError):
        parse_template_registry("x\tpronoun\tWho is it?\n")


def test_question_must_end_with_question_mark():
    with pytest.raises(ValidationError):
        QAPair("What is it", "dog", "noun_1")


class Echo:
    """Answers with whatever answer the pair carries."""

    def __init__(self, pairs):
        self.by_question = {p.question: p.answer for p in pairs}

    def answer_question(self, question, context):
        return self.by_question[question]


class Const:
    def answer_question(self, question, context):
        return "xyz"


def _pairs(caption):
    return candidate_pairs([caption])


def test_filter_echo_all_pass():
    pairs = _pairs("a red ball rolling")
    assert len(filter_qa_pairs(pairs, "a red ball rolling", Echo(pairs))) == len(pairs)


def test_filter_adversarial_none_pass():
    assert filter_qa_pairs(_pairs("a red ball rolling"), "a red ball rolling", Const()) == []


def test_filter_nouns_only():
    caption = "a red ball rolling"
    pairs = _pairs(caption)
    nouns = {p.question for p in pairs if p.template_id.startswith("noun")}

    class NounsOnly:
        def answer_question(self, question, context):
            return "ball" if question in nouns else "xyz"

    kept = filter_qa_pairs(pairs, caption, NounsOnly())
    # hand enumeration: ball/noun x2 pass; rolling/verb x4 and red/adjective x3 fail
    assert [(p.question, p.answer) for p in kept] == [
        ("What item is this in this picture?", "ball"),
        ("What item is that in this picture?", "ball")]
    assert all(p.passed_filter for p in kept)


def test_filter_degraded_mode():
    class Down:
        def answer_question(self, question, context):
            raise BackendError("offline", "down")

    flags = set()
    pairs = _pairs("a dog")
    assert filter_qa_pairs(pairs, "a dog", Down(), flags) == pairs
    assert flags == {"qa_filter_degraded"}


def test_synthesis_cap_and_order():
    caps = [Caption("a red ball rolling"), Caption("a man surfing a wave")]
    raw = candidate_pairs(caps, max_pairs=12)
    assert len(raw) == 12
    assert [p.source_caption_index for p in raw] == [0] * 9 + [1] * 3
    kept = synthesize_qa_pairs(caps, StubAnswerer(), max_pairs=30)
    assert kept and all(p.passed_filter for p in kept)
    assert {p.answer for p in kept} <= {"ball", "rolling", "red", "man", "wave", "surfing"}


def test_pair_round_trip():
    p = QAPair("What item is this in this picture?", "dog", "noun_1", 2, True)
    assert QAPair.from_dict(p.to_dict()) == p


def test_parser_verb_suffix_rule():
    assert RuleBasedParser().tag("zorbing blick") == [("zorbing", "verb"), ("blick", "noun")]
