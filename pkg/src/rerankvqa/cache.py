"""Append-only JSON-lines cache of per-item stage outputs.

One file per stage (``<cache_dir>/<stage>.jsonl``). Each line is a record
``{"key": [question_id, stage, subhash], "payload": ..., "created_at": ...,
"version": ...}``; on load the last record for a key wins.
"""

import json
import threading
import time
from pathlib import Path

from . import __version__


class StageCache:
    """Stage outputs keyed by ``(question_id, stage, subhash)``.

    With ``cache_dir=None`` the cache lives in memory only.
    """

    def __init__(self, cache_dir=None):
        self.cache_dir = None if cache_dir is None else Path(cache_dir)
        self._data = {}
        self._loaded = set()
        self._locks = {}
        self._guard = threading.Lock()
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _lock(self, stage):
        with self._guard:
            return self._locks.setdefault(stage, threading.Lock())

    def _path(self, stage):
        return self.cache_dir / f"{stage}.jsonl"

    def _ensure_loaded(self, stage):
        if stage in self._loaded:
            return
        with self._lock(stage):
            if stage in self._loaded:
                return
            if self.cache_dir is not None and self._path(stage).exists():
                with open(self._path(stage), encoding="utf-8") as f:
                    for line in f:
                        line = line.strip()
                        if not line:
                            continue
                        try:
                            rec = json.loads(line)
                        except json.JSONDecodeError:
                            # a torn final line from an interrupted run
                            continue
                        self._data[tuple(rec["key"])] = rec["payload"]
            self._loaded.add(stage)

    def get(self, question_id, stage, subhash):
        self._ensure_loaded(stage)
        return self._data.get((str(question_id), stage, subhash))

    def put(self, question_id, stage, subhash, payload):
        self._ensure_loaded(stage)
        key = (str(question_id), stage, subhash)
        # round-trip through JSON so cold and warm runs see identical objects
        text = json.dumps(payload, sort_keys=True)
        payload = json.loads(text)
        with self._lock(stage):
            self._data[key] = payload
            if self.cache_dir is not None:
                rec = {
                    "key": list(key),
                    "payload": payload,
                    "created_at": time.time(),
                    "version": __version__,
                }
                with open(self._path(stage), "a", encoding="utf-8") as f:
                    f.write(json.dumps(rec, sort_keys=True) + "\n")
        return payload

    def entries(self, question_id):
        """All cached payloads for one item, as ``{(stage, subhash): payload}``."""
        if self.cache_dir is not None:
            for path in sorted(self.cache_dir.glob("*.jsonl")):
                self._ensure_loaded(path.stem)
        qid = str(question_id)
        return {(k[1], k[2]): v for k, v in self._data.items() if k[0] == qid}
