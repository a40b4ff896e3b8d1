"""Readers for the pipeline's JSONL artifacts and training-example builders.

The adapter consumes the pipeline strictly through its file formats: the
dataset/pair records and the pattern-store records. Targets follow the wire
text forms — ``action:key_element`` for the matcher, marked fix regions for
the generator.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .vocab import BOS, EOS, SEP, encode

MARKER_LINES = {"//bug_start", "//bug_end", "//fix_start", "//fix_end"}


@dataclass
class PairRecord:
    pair_id: str
    language: str
    vulnerable: str  # marked function text
    fixed: str       # marked function text
    cwe_id: str
    cwe_name: str
    split: str


@dataclass
class PatternRecord:
    pair_id: str
    cwe_id: str
    cwe_name: str
    action: str
    key_element: str


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def load_pairs(path: str | Path, splits: list[str] | None = None
               ) -> list[PairRecord]:
    pairs = []
    for obj in read_jsonl(path):
        record = PairRecord(
            pair_id=obj["pair_id"], language=obj.get("language", "c"),
            vulnerable=obj["vulnerable"], fixed=obj["fixed"],
            cwe_id=obj["cwe_id"], cwe_name=obj["cwe_name"],
            split=obj.get("split", "train"))
        if splits is None or record.split in splits:
            pairs.append(record)
    return pairs


def load_patterns(path: str | Path) -> list[PatternRecord]:
    return [PatternRecord(pair_id=obj["pair_id"], cwe_id=obj["cwe_id"],
                          cwe_name=obj["cwe_name"], action=obj["action"],
                          key_element=obj["key_element"])
            for obj in read_jsonl(path)]


def fix_region_text(fixed_source: str) -> str:
    """The marked fix regions of a fixed function, markers included."""
    lines = fixed_source.split("\n")
    blocks: list[str] = []
    current: list[str] | None = None
    for line in lines:
        tag = line.strip()
        if tag == "//fix_start":
            current = [line]
        elif tag == "//fix_end":
            if current is not None:
                current.append(line)
                blocks.append("\n".join(current))
                current = None
        elif current is not None:
            current.append(line)
    return "\n".join(blocks)


def matcher_input_text(cwe_id: str, cwe_name: str, vulnerable: str) -> str:
    return f"{cwe_id} {cwe_name}\n{vulnerable}"


def matcher_target_text(action: str, key_element: str) -> str:
    return f"{action}:{key_element}"


@dataclass
class EncodedExample:
    source: list[int]
    target_in: list[int]
    target_out: list[int]
    truncated: bool


def build_matcher_examples(pairs: list[PairRecord],
                           patterns: list[PatternRecord],
                           max_input_len: int, max_output_len: int
                           ) -> tuple[list[EncodedExample], int]:
    """Join pairs to their mined patterns; every pair must have one."""
    by_pair = {p.pair_id: p for p in patterns}
    missing = [p.pair_id for p in pairs if p.pair_id not in by_pair]
    if missing:
        raise ValueError(f"pairs without a validated pattern: {missing[:5]}")
    examples = []
    truncated = 0
    for pair in pairs:
        pattern = by_pair[pair.pair_id]
        source = encode(matcher_input_text(pair.cwe_id, pair.cwe_name,
                                           pair.vulnerable))
        target = encode(matcher_target_text(pattern.action,
                                            pattern.key_element))
        was_truncated = len(source) > max_input_len or \
            len(target) + 1 > max_output_len
        truncated += was_truncated
        source = source[:max_input_len]
        target = target[:max_output_len - 1]
        examples.append(EncodedExample(
            source=source,
            target_in=[BOS] + target,
            target_out=target + [EOS],
            truncated=was_truncated))
    return examples, truncated


def build_generator_examples(pairs: list[PairRecord], max_len: int
                             ) -> tuple[list[EncodedExample], int]:
    """Completion examples: marked function, separator, fix-region text."""
    examples = []
    truncated = 0
    for pair in pairs:
        prompt = encode(pair.vulnerable)
        target = encode(fix_region_text(pair.fixed))
        was_truncated = len(prompt) + len(target) + 3 > max_len
        truncated += was_truncated
        budget = max_len - 3 - len(target)
        if budget < 0:
            target = target[:max_len - 3]
            budget = 0
        prompt = prompt[:budget] if was_truncated else prompt
        examples.append(EncodedExample(
            source=[BOS] + prompt + [SEP],
            target_in=target,       # appended after source when batched
            target_out=target + [EOS],
            truncated=was_truncated))
    return examples, truncated


def data_hash(paths: list[str | Path]) -> str:
    digest = hashlib.sha256()
    for path in paths:
        digest.update(Path(path).read_bytes())
    return digest.hexdigest()
