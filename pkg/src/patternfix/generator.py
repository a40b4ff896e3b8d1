"""Repair-prompt assembly, sampling fan-out, and completion post-processing."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .corpus import (BUG_END, BUG_START, FIX_END, FIX_START, VulFixPair,
                     bug_regions, fix_regions, is_marker_line, strip_markers)
from .diffing import split_lines
from .evaluation import LexError, normalize_code
from .gateway import GatewayError, ModelGateway, ModelRequest
from .matcher import GuidanceCandidate, bm25_rank

PROMPT_KINDS = ("base", "cwe_prefix", "few_shot_random", "few_shot_rag",
                "guided")

DEFAULT_TEMPERATURE_SCHEDULE = [round(0.1 * i, 1) for i in range(1, 11)]


class MalformedCompletionError(ValueError):
    pass


@dataclass
class PromptMode:
    kind: str
    guidance: GuidanceCandidate | None = None
    exemplars: list[VulFixPair] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in PROMPT_KINDS:
            raise ValueError(f"unknown prompt kind {self.kind!r}")


@dataclass
class SamplingPlan:
    guidance_count: int = 1
    samples_per_guidance: int = 1
    temperature: float = 1.0
    temperature_schedule: list[float] | None = None

    def budget(self) -> int:
        """Total samples: guidance x samples, or schedule x samples."""
        if self.temperature_schedule is not None:
            return len(self.temperature_schedule) * self.samples_per_guidance
        return self.guidance_count * self.samples_per_guidance


@dataclass
class PatchCandidate:
    pair_id: str
    text: str
    guidance: tuple[str, str] | None
    temperature: float
    sample_index: int


@dataclass
class PromptSpec:
    text: str
    guidance: tuple[str, str] | None = None


@dataclass
class PromptFailure:
    prompt_index: int
    error: str


@dataclass
class GenerationResult:
    candidates: list[PatchCandidate]
    failures: list[PromptFailure] = field(default_factory=list)
    requested: int = 0


FEW_SHOT_INSTRUCTION = (
    "If you are a software engineer tasked with repairing vulnerabilities "
    "for {cwe_id} {cwe_name}, generate fixed code to substitute each code "
    "segment enclosed by // bug_start and // bug_end. You can delete, "
    "update, or insert code inside. Please limit your response to the fixed "
    "code of the vulnerable function exclusively. Here's an example:")


def fix_region_text(pair: VulFixPair) -> str:
    """The pair's fix code: its marked fix regions, markers included."""
    regions, balanced = fix_regions(pair.fixed_source)
    if not balanced:
        raise ValueError(f"pair {pair.pair_id} has unbalanced fix markers")
    blocks = [
        "\n".join([FIX_START, *region, FIX_END]) for region in regions
    ]
    return "\n".join(blocks)


def _exemplar_block(exemplar: VulFixPair) -> str:
    return (f"Input: {exemplar.vulnerable_source}\n"
            f"Output: {fix_region_text(exemplar)}")


def build_repair_prompt(pair: VulFixPair, mode: PromptMode) -> str:
    """Deterministic, byte-stable prompt for every supported mode."""
    if mode.kind == "base":
        return pair.vulnerable_source
    if mode.kind == "cwe_prefix":
        return f"{pair.cwe.id} {pair.cwe.name}\n{pair.vulnerable_source}"
    if mode.kind in ("few_shot_random", "few_shot_rag"):
        if not mode.exemplars:
            raise ValueError("few-shot modes require at least one exemplar")
        instruction = FEW_SHOT_INSTRUCTION.replace(
            "{cwe_id}", pair.cwe.id).replace("{cwe_name}", pair.cwe.name)
        blocks = "\n".join(_exemplar_block(ex) for ex in mode.exemplars)
        return f"{pair.vulnerable_source}\n{instruction}\n{blocks}"
    if mode.kind == "guided":
        if mode.guidance is None:
            raise ValueError("guided mode requires a guidance candidate")
        return (f"{pair.vulnerable_source}\n"
                f"// action: {mode.guidance.action}\n"
                f"// key_element: {mode.guidance.key_element}")
    raise ValueError(f"unknown prompt kind {mode.kind!r}")


def select_exemplars(pair: VulFixPair, pool: list[VulFixPair], strategy: str,
                     budget_chars: int, seed: int = 0) -> list[VulFixPair]:
    """Same-CWE exemplars packed greedily under a character budget.

    ``random`` shuffles with the given seed; ``bm25`` ranks candidates by
    lexical similarity of the vulnerable code. Packing stops at the first
    exemplar that would overflow the budget.
    """
    if budget_chars <= 0:
        raise ValueError("budget_chars must be > 0")
    candidates = [p for p in pool
                  if p.cwe.id == pair.cwe.id and p.pair_id != pair.pair_id]
    if strategy == "random":
        candidates = list(candidates)
        random.Random(seed).shuffle(candidates)
    elif strategy == "bm25":
        by_id = {p.pair_id: p for p in candidates}
        ranking = bm25_rank(pair.raw_vulnerable,
                            [(p.pair_id, p.raw_vulnerable) for p in candidates])
        candidates = [by_id[pid] for pid, _ in ranking]
    else:
        raise ValueError(f"unknown exemplar strategy {strategy!r}")

    selected: list[VulFixPair] = []
    used = 0
    for candidate in candidates:
        size = len(_exemplar_block(candidate)) + 1  # joining newline
        if used + size > budget_chars:
            break
        selected.append(candidate)
        used += size
    return selected


def _dedup_key(text: str, language: str):
    try:
        return tuple(normalize_code(text, language).tokens)
    except LexError:
        return ("\x00unlexable", text)


def generate_patches(pair: VulFixPair, prompts: list[PromptSpec],
                     plan: SamplingPlan, gateway: ModelGateway,
                     max_tokens: int = 1024) -> GenerationResult:
    """Fan out sampling over the prompts and dedup the returned candidates.

    A gateway failure on one prompt is recorded and the others proceed.
    ``requested`` counts every sample asked of the gateway, before dedup.
    """
    if plan.budget() < 1:
        raise ValueError("sampling plan budget must be >= 1")
    result = GenerationResult(candidates=[])
    sample_index = 0
    seen: set = set()
    for prompt_index, spec in enumerate(prompts):
        if plan.temperature_schedule is not None:
            batches = [(t, plan.samples_per_guidance)
                       for t in plan.temperature_schedule]
        else:
            batches = [(plan.temperature, plan.samples_per_guidance)]
        for temperature, n in batches:
            result.requested += n
            try:
                response = gateway.call(ModelRequest(
                    capability="complete", prompt=spec.text, n=n,
                    temperature=temperature, max_tokens=max_tokens))
            except GatewayError as exc:
                result.failures.append(PromptFailure(prompt_index, str(exc)))
                continue
            for output in response.outputs:
                sample_index += 1
                if not output.text:
                    continue
                key = _dedup_key(output.text, pair.language)
                if key in seen:
                    continue
                seen.add(key)
                result.candidates.append(PatchCandidate(
                    pair_id=pair.pair_id, text=output.text,
                    guidance=spec.guidance, temperature=temperature,
                    sample_index=sample_index))
    return result


def _completion_fix_regions(completion: str) -> list[list[str]]:
    regions, balanced = fix_regions(completion)
    if not balanced:
        raise MalformedCompletionError("unbalanced fix markers in completion")
    return regions


def extract_fix_region(completion: str, pair: VulFixPair) -> str:
    """Turn a model completion into a candidate fixed function.

    Marker-style completions have each fix region spliced into the matching
    bug region of the stripped vulnerable function; bare completions are
    returned as-is. Either way the result carries no marker lines.
    """
    has_fix_markers = any(ln.strip() in (FIX_START, FIX_END)
                          for ln in split_lines(completion))
    if not has_fix_markers:
        return strip_markers(completion)

    fixes = _completion_fix_regions(completion)
    bugs, balanced = bug_regions(pair.vulnerable_source)
    if not balanced:
        raise MalformedCompletionError(
            f"pair {pair.pair_id} has unbalanced bug markers")
    if len(fixes) != len(bugs):
        raise MalformedCompletionError(
            f"completion has {len(fixes)} fix regions for "
            f"{len(bugs)} bug regions")

    out: list[str] = []
    region = 0
    inside = False
    for line in split_lines(pair.vulnerable_source):
        tag = line.strip()
        if tag == BUG_START:
            inside = True
            out.extend(ln for ln in fixes[region]
                       if not is_marker_line(ln))
            region += 1
        elif tag == BUG_END:
            inside = False
        elif not inside:
            out.append(line)
    text = "\n".join(out)
    if pair.raw_vulnerable.endswith("\n"):
        text += "\n"
    return text
