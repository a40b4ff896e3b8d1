"""CWE-indexed persistence for mined repair patterns."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import CweLabel
from .extraction import RepairPattern


class StoreRejection(ValueError):
    pass


@dataclass
class StoreStats:
    total: int
    per_cwe: dict[str, int] = field(default_factory=dict)
    actions: dict[str, int] = field(default_factory=dict)


class PatternStore:
    """In-memory pattern collection with JSONL persistence.

    Many readers are fine; writes go through a single owner. At most one
    pattern per source pair: re-inserting for a pair replaces its pattern.
    """

    def __init__(self):
        self._patterns: dict[str, RepairPattern] = {}  # insertion-ordered
        self._by_cwe: dict[str, list[str]] = {}
        self._by_pair: dict[str, str] = {}

    def __len__(self) -> int:
        return len(self._patterns)

    def put(self, pattern: RepairPattern) -> None:
        if not pattern.key_element:
            raise StoreRejection("empty key element")
        if pattern.key_element not in pattern.validation_text:
            raise StoreRejection(
                "key element is not a substring of its validation snapshot")
        if pattern.source_side not in ("added", "deleted"):
            raise StoreRejection(f"bad source_side {pattern.source_side!r}")
        old_id = self._by_pair.get(pattern.pair_id)
        if old_id is not None:
            old = self._patterns.pop(old_id)
            self._by_cwe[old.cwe.id].remove(old_id)
        self._patterns[pattern.pattern_id] = pattern
        self._by_cwe.setdefault(pattern.cwe.id, []).append(pattern.pattern_id)
        self._by_pair[pattern.pair_id] = pattern.pattern_id

    def get(self, pattern_id: str) -> RepairPattern:
        return self._patterns[pattern_id]

    def get_by_pair(self, pair_id: str) -> RepairPattern | None:
        pid = self._by_pair.get(pair_id)
        return self._patterns[pid] if pid is not None else None

    def query_by_cwe(self, cwe_id: str) -> list[RepairPattern]:
        return [self._patterns[pid] for pid in self._by_cwe.get(cwe_id, [])]

    def all_patterns(self) -> list[RepairPattern]:
        return list(self._patterns.values())

    def stats(self) -> StoreStats:
        stats = StoreStats(total=len(self._patterns))
        for pattern in self._patterns.values():
            stats.per_cwe[pattern.cwe.id] = stats.per_cwe.get(pattern.cwe.id, 0) + 1
            stats.actions[pattern.action] = stats.actions.get(pattern.action, 0) + 1
        return stats

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for pattern in self._patterns.values():
                fh.write(json.dumps(pattern_to_record(pattern),
                                    ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PatternStore":
        store = cls()
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                store.put(record_to_pattern(json.loads(line)))
        return store


def pattern_to_record(pattern: RepairPattern) -> dict:
    return {
        "pattern_id": pattern.pattern_id,
        "pair_id": pattern.pair_id,
        "cwe_id": pattern.cwe.id,
        "cwe_name": pattern.cwe.name,
        "action": pattern.action,
        "key_element": pattern.key_element,
        "source_side": pattern.source_side,
        "validation_text": pattern.validation_text,
        "novel_action": pattern.novel_action,
    }


def record_to_pattern(record: dict) -> RepairPattern:
    return RepairPattern(
        pattern_id=record["pattern_id"],
        pair_id=record["pair_id"],
        cwe=CweLabel(id=record["cwe_id"], name=record["cwe_name"]),
        action=record["action"],
        key_element=record["key_element"],
        source_side=record["source_side"],
        validation_text=record["validation_text"],
        novel_action=bool(record.get("novel_action", False)),
    )
