import json

from hypothesis import given
from hypothesis import strategies as st

from rerankvqa.cache import StageCache


def test_persists_across_instances(tmp_path):
    StageCache(tmp_path).put("1", "captions", "abc", {"x": [1, 2]})
    assert StageCache(tmp_path).get("1", "captions", "abc") == {"x": [1, 2]}
    assert StageCache(tmp_path).get("1", "captions", "other") is None


def test_last_write_wins(tmp_path):
    c = StageCache(tmp_path)
    c.put("1", "summary", "h", {"text": "old"})
    c.put("1", "summary", "h", {"text": "new"})
    assert StageCache(tmp_path).get("1", "summary", "h") == {"text": "new"}
    assert len((tmp_path / "summary.jsonl").read_text().splitlines()) == 2


def test_torn_line_skipped(tmp_path):
    StageCache(tmp_path).put("1", "qa", "h", [1])
    with open(tmp_path / "qa.jsonl", "a") as f:
        f.write('{"key": ["2", "qa"')
    assert StageCache(tmp_path).get("1", "qa", "h") == [1]


def test_record_fields(tmp_path):
    StageCache(tmp_path).put(7, "answer", "h", {"raw": "dog"})
    rec = json.loads((tmp_path / "answer.jsonl").read_text())
    assert rec["key"] == ["7", "answer", "h"]
    assert {"payload", "created_at", "version"} <= set(rec)


def test_entries(tmp_path):
    c = StageCache(tmp_path)
    c.put("1", "qa", "h", [1])
    c.put("2", "qa", "h", [2])
    assert StageCache(tmp_path).entries("1") == {("qa", "h"): [1]}


json_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.floats(allow_nan=False, allow_infinity=False)
    | st.text(),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(), inner, max_size=4),
    max_leaves=10,
)


@given(json_values)
def test_payload_round_trip(payload):
    c = StageCache()
    stored = c.put("1", "s", "h", payload)
    assert stored == json.loads(json.dumps(payload))
    assert c.get("1", "s", "h") == stored
