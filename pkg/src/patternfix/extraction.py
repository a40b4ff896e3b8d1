"""Distill one (action, key element) repair pattern per historical fix.

An instruct model reads the patch diff plus vulnerability metadata and
answers with a single ``action:key_element`` line; the key element is then
checked programmatically to be a verbatim snippet of the patch before the
pattern is accepted.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import CweLabel, NoChangeError, VulFixPair
from .diffing import LineDiff, collect_changed_lines, render_unified
from .gateway import GatewayError, ModelGateway, ModelRequest

REMOVE_ACTION = "Remove Buggy Statement"

# canonical edit-operator inventory the extractor chooses from
SEED_ACTIONS: list[tuple[str, str]] = [
    ("Insert Variable", "introduce a new variable declaration or definition"),
    ("Insert Memset", "zero or initialize a buffer with a memset-style call"),
    ("Insert Release Resource", "add a call that frees or releases a held resource"),
    ("Insert Cast Statement", "add an explicit type conversion"),
    ("Insert Cast Checker", "guard a conversion with a type or width check"),
    ("Insert Range Checker", "guard an access with a bounds or size check"),
    ("Insert Null Pointer Checker", "guard a dereference with a null check"),
    ("Insert Missed Statement", "add a statement the original logic omitted"),
    ("Mutate Control Statement", "change a control-flow construct (break/return/goto)"),
    ("Insert Conditional Expression", "add a condition around existing logic"),
    ("Mutate Conditional Expression", "modify the predicate of an existing condition"),
    ("Insert Method Invocation Expression", "add a call to a function or method"),
    ("Mutate Literal Expression", "change a constant or literal value"),
    ("Mutate Method Invocation Expression", "change a call's target or arguments"),
    ("Mutate Return Statement", "change what a return statement yields"),
    ("Mutate Variable", "replace one variable or field with another"),
    ("Move Statement", "relocate an existing statement"),
    ("Remove Buggy Statement", "delete the faulty statement outright"),
]

_SPACE_RUN = re.compile(r"\s+")


def canonical_label(label: str) -> str:
    """Case-insensitive, single-spaced normal form of an action label."""
    return _SPACE_RUN.sub(" ", label.strip()).lower()


def _token_set(label: str) -> frozenset[str]:
    return frozenset(canonical_label(label).split())


@dataclass
class RepairAction:
    label: str
    seed: bool
    definition: str = ""


@dataclass
class ActionInventory:
    actions: list[RepairAction] = field(default_factory=list)
    version: int = 1

    def labels(self) -> list[str]:
        return [a.label for a in self.actions]

    def find(self, label: str) -> RepairAction | None:
        canon = canonical_label(label)
        for action in self.actions:
            if canonical_label(action.label) == canon:
                return action
        return None

    def contains(self, label: str) -> bool:
        return self.find(label) is not None

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for action in self.actions:
                fh.write(json.dumps({"label": action.label, "seed": action.seed,
                                     "definition": action.definition},
                                    ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ActionInventory":
        actions = []
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                actions.append(RepairAction(label=obj["label"],
                                            seed=bool(obj["seed"]),
                                            definition=obj.get("definition", "")))
        return cls(actions=actions)


def seed_inventory() -> ActionInventory:
    return ActionInventory(
        actions=[RepairAction(label, seed=True, definition=desc)
                 for label, desc in SEED_ACTIONS])


@dataclass
class RepairPattern:
    pattern_id: str
    pair_id: str
    cwe: CweLabel
    action: str
    key_element: str
    source_side: str  # "added" | "deleted"
    validation_text: str  # newline-joined diff lines the key was checked against
    novel_action: bool = False


@dataclass
class ExtractionAttempt:
    response: str
    error: str


@dataclass
class Discarded:
    pair_id: str
    attempts: list[ExtractionAttempt]


class MalformedOutputError(ValueError):
    pass


EXTRACTION_PROMPT_TEMPLATE = """{diff}
{cve_desc}
You are a security vulnerability repair expert reviewing the patch commit for {cwe} {cwe_name}.
Analyze the patch diff and extract ONE security repair pattern.

Step 1 (Select Action): choose ONE action from: {list(repair_actions)} that best describes the syntactic edit operator embodying the core security repair principle of this patch; if none fits, create a new action label in the same style.

Step 2 (Extract Key Element): given the selected action, choose ONE key element from the added lines ("+" lines) that semantically instantiates the action (for Remove Buggy Statement, choose from the deleted lines ("-" lines) instead).
- It MUST be copied verbatim from the added code and be a short contiguous snippet.
- Pick the smallest self-contained fragment that best captures the security mechanism/constraint introduced by the fix; e.g., a guard predicate or a security-critical call.
- Avoid low-signal noise, e.g., large blocks, logging, comments, and temporary variables, and favor security-relevant calls/checks/types over incidental implementation details.

Output (STRICT): output EXACTLY ONE line in the form: action:key_element (no extra text).

Example output: {Insert Release Resource:delete}"""


def build_extraction_prompt(pair: VulFixPair, diff: LineDiff,
                            inventory: ActionInventory) -> str:
    if diff.is_empty():
        raise NoChangeError("cannot extract a pattern from an empty diff")
    # replacement, not str.format: the template's example output line
    # contains literal braces
    prompt = EXTRACTION_PROMPT_TEMPLATE
    prompt = prompt.replace("{diff}", render_unified(diff, 3).rstrip("\n"))
    prompt = prompt.replace("{cve_desc}", pair.cve_description or "")
    prompt = prompt.replace("{cwe_name}", pair.cwe.name)
    prompt = prompt.replace("{cwe}", pair.cwe.id)
    prompt = prompt.replace("{list(repair_actions)}",
                            ", ".join(inventory.labels()))
    return prompt


def parse_extraction_output(text: str) -> tuple[str, str]:
    """Split a single ``action:key_element`` line on its FIRST colon.

    Key elements are code and may themselves contain colons; action labels
    never do. One optional pair of surrounding braces is tolerated.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != 1:
        raise MalformedOutputError(
            f"expected exactly one non-empty line, got {len(lines)}")
    line = lines[0].strip()
    if line.startswith("{") and line.endswith("}"):
        line = line[1:-1].strip()
    if ":" not in line:
        raise MalformedOutputError("missing ':' separator")
    action, _, key = line.partition(":")
    action = action.strip()
    key = key.strip()
    if not action or not key:
        raise MalformedOutputError("action and key element must be non-empty")
    return action, key


def validation_text_for(action_label: str, diff: LineDiff) -> str:
    added, deleted = collect_changed_lines(diff)
    if canonical_label(action_label) == canonical_label(REMOVE_ACTION):
        return "\n".join(deleted)
    return "\n".join(added)


def validate_key_element(action_label: str, key_element: str,
                         diff: LineDiff) -> bool:
    """True iff the key is a verbatim contiguous snippet of the patch.

    Checked against the newline-joined added lines — deleted lines for
    Remove Buggy Statement — so a key may span adjacent changed lines.
    """
    if not key_element:
        return False
    return key_element in validation_text_for(action_label, diff)


def extract_pattern(pair: VulFixPair, diff: LineDiff,
                    inventory: ActionInventory, gateway: ModelGateway,
                    max_attempts: int = 3, temperature: float = 0.0,
                    max_tokens: int = 256) -> RepairPattern | Discarded:
    """Prompt, parse, validate; retry up to ``max_attempts`` times.

    A syntactically valid answer whose action label is not in the inventory
    is still accepted (flagged novel) when its key element validates;
    canonicalization of novel labels happens in a later batch pass.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    prompt = build_extraction_prompt(pair, diff, inventory)
    request = ModelRequest(capability="instruct", prompt=prompt, n=1,
                           temperature=temperature, max_tokens=max_tokens)
    attempts: list[ExtractionAttempt] = []
    for attempt in range(max_attempts):
        try:
            response = gateway.call(request)
        except GatewayError as exc:
            if attempt == max_attempts - 1:
                raise
            attempts.append(ExtractionAttempt("", f"gateway: {exc}"))
            continue
        text = response.outputs[0].text if response.outputs else ""
        try:
            action, key = parse_extraction_output(text)
        except MalformedOutputError as exc:
            attempts.append(ExtractionAttempt(text, f"malformed: {exc}"))
            continue
        if not validate_key_element(action, key, diff):
            attempts.append(ExtractionAttempt(
                text, "key element is not a contiguous substring of the patch"))
            continue
        side = ("deleted"
                if canonical_label(action) == canonical_label(REMOVE_ACTION)
                else "added")
        return RepairPattern(
            pattern_id=f"pat-{pair.pair_id}",
            pair_id=pair.pair_id,
            cwe=pair.cwe,
            action=action,
            key_element=key,
            source_side=side,
            validation_text=validation_text_for(action, diff),
            novel_action=not inventory.contains(action),
        )
    return Discarded(pair_id=pair.pair_id, attempts=attempts)


@dataclass
class MergeEntry:
    kind: str  # "AUTO" | "REVIEW"
    members: list[str]
    canonical: str | None


def canonicalize_actions(novel_labels: list[str], inventory: ActionInventory
                         ) -> tuple[ActionInventory, list[MergeEntry]]:
    """Fold novel labels into the inventory where it is safe to do so.

    Labels equal after canonical normalization merge automatically; labels
    that merely share a token set with an existing action (word order
    differs) or with each other need adjudication and are emitted as REVIEW
    items without touching the inventory. The version bumps iff the action
    list changed.
    """
    merged = ActionInventory(actions=list(inventory.actions),
                             version=inventory.version)
    log: list[MergeEntry] = []

    # bucket by canonical form, first-seen order, preserving surfaces
    buckets: dict[str, list[str]] = {}
    for label in novel_labels:
        buckets.setdefault(canonical_label(label), []).append(label)

    pending: list[tuple[str, list[str]]] = []
    for canon, members in buckets.items():
        existing = merged.find(canon)
        if existing is not None:
            log.append(MergeEntry("AUTO", members=_dedup(members),
                                  canonical=existing.label))
        else:
            pending.append((canon, members))

    # group the remainder by token set: collisions need review
    groups: dict[frozenset[str], list[tuple[str, list[str]]]] = {}
    for canon, members in pending:
        groups.setdefault(frozenset(canon.split()), []).append((canon, members))

    changed = False
    for tokens, group in groups.items():
        inventory_hits = [a.label for a in merged.actions
                          if _token_set(a.label) == tokens]
        if inventory_hits or len(group) > 1:
            members = _dedup([m for _, ms in group for m in ms] + inventory_hits)
            log.append(MergeEntry("REVIEW", members=members, canonical=None))
            continue
        _, members = group[0]
        label = _SPACE_RUN.sub(" ", members[0].strip())
        merged.actions.append(RepairAction(label=label, seed=False))
        changed = True
        log.append(MergeEntry("AUTO", members=_dedup(members), canonical=label))

    if changed:
        merged.version = inventory.version + 1
    return merged, log


def _dedup(items: list[str]) -> list[str]:
    seen: dict[str, None] = {}
    for item in items:
        seen.setdefault(item)
    return list(seen)


def save_merge_log(log: list[MergeEntry], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps({"kind": entry.kind, "members": entry.members,
                                 "canonical": entry.canonical},
                                ensure_ascii=False) + "\n")
