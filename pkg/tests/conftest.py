from pathlib import Path

import pytest

from rerankvqa.backends import (StubAnswerer, StubCaptioner, StubLanguageModel, StubReranker)
from rerankvqa.evaluation import load_aokvqa, load_okvqa

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def okvqa_paths():
    return FIXTURES / "okvqa_questions.json", FIXTURES / "okvqa_annotations.json"


@pytest.fixture
def okvqa_records(okvqa_paths):
    return load_okvqa(*okvqa_paths)


@pytest.fixture
def aokvqa_records():
    return load_aokvqa(FIXTURES / "aokvqa_val.json", "val")


@pytest.fixture
def stub_backends():
    llm = StubLanguageModel()
    return {
        "captioner": StubCaptioner(),
        "reranker": StubReranker(),
        "summarizer": StubLanguageModel(),
        "llm": llm,
        "answerer": StubAnswerer(),
    }


def total_calls(backends):
    return sum(b.calls for b in backends.values())


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
