"""Vul-fix corpus handling: ingestion, bug/fix region markers, validation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .diffing import line_diff, split_lines

LANGUAGES = ("c", "cpp", "java")
SPLITS = ("train", "valid", "test")

BUG_START = "//bug_start"
BUG_END = "//bug_end"
FIX_START = "//fix_start"
FIX_END = "//fix_end"
MARKERS = frozenset({BUG_START, BUG_END, FIX_START, FIX_END})

CWE_ID_RE = re.compile(r"CWE-[0-9]+\Z")


class NoChangeError(ValueError):
    """Old and new sources are identical; there is no fix to mark."""


class DatasetError(ValueError):
    """Unparseable dataset file; carries the offending 1-based line number."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


@dataclass
class CweLabel:
    id: str
    name: str


@dataclass
class VulFixPair:
    pair_id: str
    language: str
    vulnerable_source: str
    fixed_source: str
    raw_vulnerable: str
    raw_fixed: str
    cwe: CweLabel
    cve_description: str | None = None
    split: str = "train"


@dataclass
class ValidationReport:
    pair_id: str
    issues: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues


def is_marker_line(line: str) -> bool:
    return line.strip() in MARKERS


def strip_markers(text: str) -> str:
    lines = [ln for ln in split_lines(text) if not is_marker_line(ln)]
    out = "\n".join(lines)
    if text.endswith("\n") and lines:
        out += "\n"
    return out


def _scan_regions(text: str, start: str, end: str) -> tuple[list[list[str]], bool]:
    """Collect marker-delimited regions. Second value is False on imbalance:
    an end before a start, a nested start, or an unclosed region."""
    regions: list[list[str]] = []
    current: list[str] | None = None
    balanced = True
    for line in split_lines(text):
        tag = line.strip()
        if tag == start:
            if current is not None:
                balanced = False
            current = []
        elif tag == end:
            if current is None:
                balanced = False
            else:
                regions.append(current)
                current = None
        elif current is not None:
            current.append(line)
    if current is not None:
        balanced = False
    return regions, balanced


def bug_regions(text: str) -> tuple[list[list[str]], bool]:
    return _scan_regions(text, BUG_START, BUG_END)


def fix_regions(text: str) -> tuple[list[list[str]], bool]:
    return _scan_regions(text, FIX_START, FIX_END)


def annotate_bug_regions(raw_vulnerable: str, raw_fixed: str,
                         language: str = "c") -> tuple[str, str]:
    """Mark each changed region of the pair with bug/fix marker lines.

    Hunks separated by at least one unchanged line become distinct regions.
    A pure insertion yields an empty bug region at the insertion point, a
    pure deletion an empty fix region. Stripping the markers recovers the
    raw inputs byte-exactly.
    """
    if not raw_vulnerable or not raw_fixed:
        raise ValueError("both sources must be non-empty")
    diff = line_diff(raw_vulnerable, raw_fixed)
    if diff.is_empty():
        raise NoChangeError("vulnerable and fixed sources are identical")

    old_lines, new_lines = diff.old_lines, diff.new_lines
    marked_old: list[str] = []
    marked_new: list[str] = []
    old_pos = new_pos = 0
    for hunk in diff.hunks:
        marked_old.extend(old_lines[old_pos:hunk.old_start])
        marked_old.append(BUG_START)
        marked_old.extend(hunk.deleted)
        marked_old.append(BUG_END)
        old_pos = hunk.old_start + len(hunk.deleted)

        marked_new.extend(new_lines[new_pos:hunk.new_start])
        marked_new.append(FIX_START)
        marked_new.extend(hunk.added)
        marked_new.append(FIX_END)
        new_pos = hunk.new_start + len(hunk.added)
    marked_old.extend(old_lines[old_pos:])
    marked_new.extend(new_lines[new_pos:])

    vulnerable = "\n".join(marked_old)
    fixed = "\n".join(marked_new)
    if raw_vulnerable.endswith("\n"):
        vulnerable += "\n"
    if raw_fixed.endswith("\n"):
        fixed += "\n"
    return vulnerable, fixed


def validate_pair(pair: VulFixPair,
                  expected_language: str | None = None) -> ValidationReport:
    """Check every pair invariant; violations are data, not exceptions."""
    issues: list[tuple[str, str]] = []

    if not CWE_ID_RE.fullmatch(pair.cwe.id):
        issues.append(("CWE_ID_FORMAT",
                       f"cwe id {pair.cwe.id!r} does not match CWE-<digits>"))
    if not pair.cwe.name:
        issues.append(("CWE_NAME_EMPTY", "cwe name is empty"))
    if pair.language not in LANGUAGES:
        issues.append(("LANGUAGE_UNKNOWN",
                       f"language {pair.language!r} not one of {LANGUAGES}"))
    elif expected_language is not None and pair.language != expected_language:
        issues.append(("LANGUAGE_MISMATCH",
                       f"language {pair.language!r} != expected {expected_language!r}"))
    if pair.split not in SPLITS:
        issues.append(("SPLIT_UNKNOWN",
                       f"split {pair.split!r} not one of {SPLITS}"))

    bugs, bug_ok = bug_regions(pair.vulnerable_source)
    fixes, fix_ok = fix_regions(pair.fixed_source)
    if not bug_ok:
        issues.append(("MARKER_IMBALANCE", "bug markers unbalanced or nested"))
    if not fix_ok:
        issues.append(("MARKER_IMBALANCE", "fix markers unbalanced or nested"))
    if bug_ok and fix_ok and len(bugs) != len(fixes):
        issues.append(("REGION_COUNT_MISMATCH",
                       f"{len(bugs)} bug regions vs {len(fixes)} fix regions"))

    if strip_markers(pair.vulnerable_source) != pair.raw_vulnerable:
        issues.append(("STRIP_MISMATCH",
                       "stripping vulnerable_source does not recover raw_vulnerable"))
    if strip_markers(pair.fixed_source) != pair.raw_fixed:
        issues.append(("STRIP_MISMATCH",
                       "stripping fixed_source does not recover raw_fixed"))

    if pair.raw_vulnerable == pair.raw_fixed:
        issues.append(("NO_CHANGE", "vulnerable and fixed sources are identical"))

    return ValidationReport(pair_id=pair.pair_id, issues=issues)


def record_to_pair(record: dict) -> VulFixPair:
    """Build a pair from one dataset record, annotating regions if needed."""
    cwe = CweLabel(id=str(record["cwe_id"]), name=str(record["cwe_name"]))
    vulnerable = str(record["vulnerable"])
    fixed = str(record["fixed"])
    if record.get("pre_annotated", False):
        raw_vulnerable = strip_markers(vulnerable)
        raw_fixed = strip_markers(fixed)
    else:
        raw_vulnerable, raw_fixed = vulnerable, fixed
        try:
            vulnerable, fixed = annotate_bug_regions(
                raw_vulnerable, raw_fixed, str(record["language"]))
        except (NoChangeError, ValueError):
            pass  # leave unmarked; validate_pair flags it
    return VulFixPair(
        pair_id=str(record["pair_id"]),
        language=str(record["language"]),
        vulnerable_source=vulnerable,
        fixed_source=fixed,
        raw_vulnerable=raw_vulnerable,
        raw_fixed=raw_fixed,
        cwe=cwe,
        cve_description=record.get("cve_description"),
        split=str(record.get("split", "train")),
    )


def pair_to_record(pair: VulFixPair) -> dict:
    return {
        "pair_id": pair.pair_id,
        "language": pair.language,
        "vulnerable": pair.vulnerable_source,
        "fixed": pair.fixed_source,
        "cwe_id": pair.cwe.id,
        "cwe_name": pair.cwe.name,
        "cve_description": pair.cve_description,
        "split": pair.split,
        "pre_annotated": True,
    }


REQUIRED_RECORD_KEYS = ("pair_id", "language", "vulnerable", "fixed",
                        "cwe_id", "cwe_name")


def load_dataset(path: str | Path,
                 expected_language: str | None = None) -> list[VulFixPair]:
    """Read a JSONL dataset in file order; no record is silently dropped.

    Data-quality problems (bad CWE ids, marker imbalance, mismatch against
    ``expected_language``) never drop a record here; run validate_pair with
    the same ``expected_language`` to flag them. Only structural problems
    (unreadable file, bad JSON, missing keys) raise.
    """
    path = Path(path)
    pairs: list[VulFixPair] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON: {exc}",
                                   line_number=lineno) from exc
            missing = [k for k in REQUIRED_RECORD_KEYS if k not in record]
            if missing:
                raise DatasetError(
                    f"line {lineno}: missing keys {missing}", line_number=lineno)
            pairs.append(record_to_pair(record))
    return pairs
