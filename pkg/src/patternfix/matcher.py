"""Guidance prediction: top-k (action, key element) candidates per target.

Two backends share one contract: a remote seq2seq model decoded with beam
search, and a local lexical-retrieval fallback ranking same-CWE patterns by
BM25 similarity to the vulnerable code.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

from .corpus import CweLabel
from .extraction import MalformedOutputError, parse_extraction_output
from .gateway import ModelGateway, ModelRequest
from .store import PatternStore

_TOKEN_RE = re.compile(r"[A-Za-z0-9_]+")
_SPACE_RUN = re.compile(r"\s+")

BM25_K1 = 1.2
BM25_B = 0.75


class EmptyGuidanceError(RuntimeError):
    pass


@dataclass
class GuidanceCandidate:
    action: str
    key_element: str
    score: float
    rank: int
    origin: str  # "remote" | "retrieval"
    fallback: bool = False  # retrieval had to widen beyond the request's CWE


@dataclass
class MatchRequest:
    cwe: CweLabel
    vulnerable_source: str
    k: int = 10
    beam_width: int = 10

    def __post_init__(self):
        if not 1 <= self.k <= self.beam_width:
            raise ValueError("need 1 <= k <= beam_width")


@dataclass
class MatchReport:
    n: int
    precision_at_k: float
    recall_at_k: float
    k: int


def tokenize(text: str) -> list[str]:
    """Identifier-level tokens: split on non-word boundaries, lowercase."""
    return [t.lower() for t in _TOKEN_RE.findall(text)]


def bm25_rank(query: str, docs: list[tuple[str, str]],
              k1: float = BM25_K1, b: float = BM25_B) -> list[tuple[str, float]]:
    """Score every doc against the query; descending, ties by ascending id."""
    if not docs:
        return []
    doc_tokens = [(doc_id, tokenize(text)) for doc_id, text in docs]
    n_docs = len(doc_tokens)
    avgdl = sum(len(toks) for _, toks in doc_tokens) / n_docs
    query_terms = sorted(set(tokenize(query)))

    doc_freq: Counter = Counter()
    for _, toks in doc_tokens:
        doc_freq.update(set(toks))

    scored: list[tuple[str, float]] = []
    for doc_id, toks in doc_tokens:
        counts = Counter(toks)
        length_norm = k1 * (1.0 - b + b * (len(toks) / avgdl if avgdl else 0.0))
        score = 0.0
        for term in query_terms:
            tf = counts.get(term, 0)
            if not tf:
                continue
            df = doc_freq[term]
            idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
            score += idf * tf * (k1 + 1.0) / (tf + length_norm)
        scored.append((doc_id, score))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored


def _finalize(raw: list[tuple[str, str, float]], k: int, origin: str,
              fallback: bool = False) -> list[GuidanceCandidate]:
    """Dedup by (action, key), truncate to k, assign consecutive ranks."""
    out: list[GuidanceCandidate] = []
    seen: set[tuple[str, str]] = set()
    for action, key, score in raw:
        pair = (action, key)
        if pair in seen:
            continue
        seen.add(pair)
        out.append(GuidanceCandidate(action=action, key_element=key,
                                     score=score, rank=len(out) + 1,
                                     origin=origin, fallback=fallback))
        if len(out) == k:
            break
    return out


def match_remote(req: MatchRequest, gateway: ModelGateway
                 ) -> list[GuidanceCandidate]:
    """Query the trained seq2seq backend with beam_width beams."""
    response = gateway.call(ModelRequest(
        capability="seq2seq", cwe_id=req.cwe.id, cwe_name=req.cwe.name,
        code=req.vulnerable_source, n=req.beam_width))
    parsed: list[tuple[str, str, float]] = []
    for output in response.outputs:
        try:
            action, key = parse_extraction_output(output.text)
        except MalformedOutputError:
            continue
        parsed.append((action, key, output.score or 0.0))
    candidates = _finalize(parsed, req.k, origin="remote")
    if not candidates:
        raise EmptyGuidanceError("no beam produced a parseable candidate")
    return candidates


def match_retrieval(req: MatchRequest, store: PatternStore
                    ) -> list[GuidanceCandidate]:
    """Rank stored same-CWE patterns by BM25 against the vulnerable code."""
    if len(store) == 0:
        raise EmptyGuidanceError("pattern store is empty")
    pool = store.query_by_cwe(req.cwe.id)
    fallback = not pool
    if fallback:
        pool = store.all_patterns()
    by_id = {p.pattern_id: p for p in pool}
    ranking = bm25_rank(req.vulnerable_source,
                        [(p.pattern_id, p.validation_text) for p in pool])
    raw = [(by_id[pid].action, by_id[pid].key_element, score)
           for pid, score in ranking]
    return _finalize(raw, req.k, origin="retrieval", fallback=fallback)


def normalize_single_space(text: str) -> str:
    return _SPACE_RUN.sub(" ", text.strip())


def _is_correct(candidate: GuidanceCandidate, gold: tuple[str, str],
                mode: str) -> bool:
    action_ok = (normalize_single_space(candidate.action)
                 == normalize_single_space(gold[0]))
    key_ok = (normalize_single_space(candidate.key_element)
              == normalize_single_space(gold[1]))
    if mode == "full":
        return action_ok and key_ok
    if mode == "action_only":
        return action_ok
    if mode == "key_only":
        return key_ok
    raise ValueError(f"unknown mode {mode!r}")


def evaluate_matching(predictions: dict[str, list[GuidanceCandidate]],
                      gold: dict[str, tuple[str, str]],
                      mode: str = "full", k: int = 10) -> MatchReport:
    """Precision@k (per-instance correct fraction, averaged) and Recall@k
    (fraction of instances with at least one correct top-k candidate)."""
    if set(predictions) != set(gold):
        raise ValueError("prediction and gold instance ids differ")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(gold)
    if n == 0:
        raise ValueError("no instances to evaluate")
    hits = 0
    precision_sum = 0.0
    for instance_id, candidates in predictions.items():
        top = candidates[:k]
        correct = sum(_is_correct(c, gold[instance_id], mode) for c in top)
        hits += bool(correct)
        precision_sum += correct / k
    return MatchReport(n=n, precision_at_k=precision_sum / n,
                       recall_at_k=hits / n, k=k)
