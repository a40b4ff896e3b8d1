"""Normalized exact-match scoring, per-CWE reporting, triage statistics."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from difflib import SequenceMatcher

from .corpus import VulFixPair

logger = logging.getLogger(__name__)

_WHITESPACE = " \t\r\n\f\v"
_IDENT_START = frozenset(
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_$")
_IDENT_CONT = _IDENT_START | frozenset("0123456789")
_DIGITS = frozenset("0123456789")

_COMMON_OPERATORS = [
    "<<=", ">>=", "...",
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=",
    "&&", "||", "+=", "-=", "*=", "/=", "%=", "&=", "^=", "|=", "##",
]
_OPERATORS = {
    "c": _COMMON_OPERATORS,
    "cpp": _COMMON_OPERATORS + ["<=>", "->*", "::", ".*"],
    "java": _COMMON_OPERATORS + [">>>=", ">>>", "::", "->"],
}
# longest first so the scanner munches maximally
_OPERATORS = {lang: sorted(ops, key=len, reverse=True)
              for lang, ops in _OPERATORS.items()}


class LexError(ValueError):
    """Unterminated comment or literal; carries the character offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


@dataclass
class TokenSeq:
    tokens: list[str]


def normalize_code(source: str, language: str = "c") -> TokenSeq:
    """Lex ``source`` into comment- and whitespace-free tokens.

    Comment markers inside string/char literals are content; the literals
    themselves become single byte-exact tokens. Preprocessor lines are
    tokenized like any other code.
    """
    if language not in _OPERATORS:
        raise ValueError(f"unsupported language {language!r}")
    operators = _OPERATORS[language]
    tokens: list[str] = []
    src = source
    n = len(src)
    i = 0
    while i < n:
        c = src[i]
        if c in _WHITESPACE:
            i += 1
            continue
        if c == "/" and i + 1 < n:
            nxt = src[i + 1]
            if nxt == "/":
                j = src.find("\n", i + 2)
                i = n if j < 0 else j + 1
                continue
            if nxt == "*":
                j = src.find("*/", i + 2)
                if j < 0:
                    raise LexError("unterminated block comment", i)
                i = j + 2
                continue
        if c in ("\"", "'"):
            j = i + 1
            while j < n:
                if src[j] == "\\":
                    j += 2
                elif src[j] == "\n":
                    raise LexError("unterminated literal", i)
                elif src[j] == c:
                    break
                else:
                    j += 1
            if j >= n:
                raise LexError("unterminated literal", i)
            tokens.append(src[i:j + 1])
            i = j + 1
            continue
        if c in _IDENT_START:
            j = i + 1
            while j < n and src[j] in _IDENT_CONT:
                j += 1
            tokens.append(src[i:j])
            i = j
            continue
        if c in _DIGITS or (c == "." and i + 1 < n and src[i + 1] in _DIGITS):
            # preprocessing-number munch, including exponent signs
            j = i + 1
            while j < n:
                cj = src[j]
                if cj in _IDENT_CONT or cj == ".":
                    j += 1
                elif cj in "+-" and src[j - 1] in "eEpP":
                    j += 1
                else:
                    break
            tokens.append(src[i:j])
            i = j
            continue
        for op in operators:
            if src.startswith(op, i):
                tokens.append(op)
                i += len(op)
                break
        else:
            tokens.append(c)
            i += 1
    return TokenSeq(tokens)


def exact_match(candidate: str, ground_truth: str, language: str = "c") -> bool:
    """Token sequences equal after dropping whitespace and comments.

    A candidate that fails to lex scores False; it never raises here.
    """
    try:
        cand = normalize_code(candidate, language)
    except LexError as exc:
        logger.debug("candidate failed lexing: %s", exc)
        return False
    try:
        gold = normalize_code(ground_truth, language)
    except LexError as exc:
        logger.warning("ground truth failed lexing: %s", exc)
        return False
    return cand == gold


def em_at_k(candidates: list[str], ground_truth: str,
            language: str = "c", k: int = 1) -> bool:
    if k < 1:
        raise ValueError("k must be >= 1")
    return any(exact_match(c, ground_truth, language)
               for c in candidates[:k])


def round_rate(value: float) -> float:
    """Two decimals, round-half-up (presentation convention for rates)."""
    return float(Decimal(repr(value)).quantize(Decimal("0.01"),
                                               rounding=ROUND_HALF_UP))


@dataclass
class CweRow:
    cwe_id: str
    cwe_name: str
    success: int
    total: int
    rate: float


@dataclass
class EvalReport:
    n: int
    em_true: int
    em_percent: float
    k: int
    per_cwe: list[CweRow] = field(default_factory=list)
    em_at_k_curve: list[tuple[int, float]] | None = None


def evaluate_dataset(results: dict[str, list[str]], pairs: list[VulFixPair],
                     k: int, curve_ks: list[int] | None = None) -> EvalReport:
    """EM@k over a test set, aggregated overall and per CWE.

    ``results`` maps pair_id to an ordered candidate list (already spliced
    into full functions); pairs without an entry simply score False.
    """
    known = {p.pair_id for p in pairs}
    unknown = sorted(set(results) - known)
    if unknown:
        raise ValueError(f"results reference unknown pair ids: {unknown}")

    outcomes: dict[str, bool] = {}
    for pair in pairs:
        candidates = results.get(pair.pair_id, [])
        outcomes[pair.pair_id] = em_at_k(candidates, pair.raw_fixed,
                                         pair.language, k)

    n = len(pairs)
    em_true = sum(outcomes.values())
    em_percent = 100.0 * em_true / n if n else 0.0

    per_cwe: dict[str, CweRow] = {}
    for pair in pairs:
        row = per_cwe.get(pair.cwe.id)
        if row is None:
            row = CweRow(pair.cwe.id, pair.cwe.name, 0, 0, 0.0)
            per_cwe[pair.cwe.id] = row
        row.total += 1
        row.success += int(outcomes[pair.pair_id])
    rows = sorted(per_cwe.values(), key=lambda r: (-r.total, r.cwe_id))
    for row in rows:
        row.rate = round_rate(100.0 * row.success / row.total)

    curve = None
    if curve_ks:
        curve = []
        for ck in curve_ks:
            hits = sum(
                em_at_k(results.get(p.pair_id, []), p.raw_fixed, p.language, ck)
                for p in pairs)
            curve.append((ck, 100.0 * hits / n if n else 0.0))

    return EvalReport(n=n, em_true=em_true, em_percent=em_percent, k=k,
                      per_cwe=rows, em_at_k_curve=curve)


def similarity_rank(candidates: list[str], ground_truth: str,
                    top_n: int = 5) -> list[tuple[str, float]]:
    """Top candidates by Ratcliff/Obershelp similarity to the ground truth.

    Raw text, no normalization; ties keep the original candidate order.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    scored = [
        (cand,
         SequenceMatcher(None, cand, ground_truth, autojunk=False).ratio())
        for cand in candidates
    ]
    scored.sort(key=lambda item: -item[1])
    return scored[:top_n]


def cohens_kappa(labels_a: list, labels_b: list) -> float:
    """Chance-corrected agreement between two annotators."""
    if len(labels_a) != len(labels_b):
        raise ValueError("label lists must have equal length")
    n = len(labels_a)
    if n == 0:
        raise ValueError("label lists must be non-empty")
    p_observed = sum(a == b for a, b in zip(labels_a, labels_b)) / n
    counts_a = Counter(labels_a)
    counts_b = Counter(labels_b)
    p_expected = sum(counts_a[lab] * counts_b.get(lab, 0)
                     for lab in counts_a) / (n * n)
    if p_expected == 1.0:
        if p_observed == 1.0:
            return 1.0
        raise ValueError("kappa undefined: expected agreement is 1 "
                         "but observed agreement is not")
    return (p_observed - p_expected) / (1.0 - p_expected)
