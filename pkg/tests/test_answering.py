import pytest
from hypothesis import given
from hypothesis import strategies as st

from rerankvqa.answering import (AnswerPrediction, DecodeParams, answer, answer_batch,
                                 normalize_answer, prompt_hash)
from rerankvqa.backends import ScriptedLanguageModel, StubLanguageModel
from rerankvqa.exceptions import BackendError, ValidationError

PROMPT = "Question: What is it?\nAnswer:"


@pytest.mark.parametrize("raw,expected", [
    ("A dog.", "dog"),
    ("The  TWO men", "2 men"),
    ("", ""),
    ("“Surfing”!", "surfing"),
    ("an apple, a pear", "apple pear"),
    ("ten", "10"),
])
def test_normalize(raw, expected):
    assert normalize_answer(raw) == expected


@given(st.text(max_size=40))
def test_normalize_idempotent(text):
    once = normalize_answer(text)
    assert normalize_answer(once) == once


def test_scripted_answer():
    pred = answer(PROMPT, ScriptedLanguageModel(["A dog.\nQuestion:"]))
    assert pred.raw == "A dog." and pred.normalized == "dog"
    assert pred.prompt_hash == prompt_hash(PROMPT)


def test_empty_answer():
    pred = answer(PROMPT, ScriptedLanguageModel([""]))
    assert pred.is_empty and pred.raw == ""


def test_deterministic():
    lm = StubLanguageModel()
    prompt = "Contexts:\nCaption: a dog on grass\n" + PROMPT
    assert answer(prompt, lm) == answer(prompt, lm)


def test_prompt_must_end_with_answer():
    with pytest.raises(ValidationError):
        answer("Question: x?", StubLanguageModel())


def test_backend_error():
    def boom(p):
        raise RuntimeError("cuda")

    with pytest.raises(BackendError):
        answer(PROMPT, ScriptedLanguageModel(boom))


def test_batch_matches_single():
    prompts = [f"Caption: thing {i}\n{PROMPT}" for i in range(4)]
    lm = StubLanguageModel()
    assert answer_batch(prompts, lm) == [answer(p, lm) for p in prompts]


def test_round_trip():
    p = AnswerPrediction("A dog", "dog", "h", "b", DecodeParams(5, 0.0))
    assert AnswerPrediction.from_dict(p.to_dict()) == p
