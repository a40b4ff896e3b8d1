"""Line-level diff engine: LCS alignment, hunk extraction, unified rendering."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Hunk:
    """One contiguous block of edits.

    ``old_start``/``new_start`` are 0-based line indexes into the respective
    files; ``deleted`` lines are removed at ``old_start`` and ``added`` lines
    appear at ``new_start``.
    """

    old_start: int
    deleted: list[str]
    new_start: int
    added: list[str]


@dataclass
class LineDiff:
    old_lines: list[str]
    new_lines: list[str]
    hunks: list[Hunk] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not self.hunks


def split_lines(text: str) -> list[str]:
    """Split on '\\n'; a missing final newline still yields a normal last line."""
    parts = text.split("\n")
    if parts and parts[-1] == "":
        parts.pop()
    return parts


def diff_lines(old_lines: list[str], new_lines: list[str]) -> LineDiff:
    """LCS alignment over whole lines (byte-exact equality).

    Among equal-length alignments, deletions are placed as early as possible:
    at each step a deletion is taken whenever it preserves the LCS of the
    remaining suffixes. Deterministic for fixed inputs.
    """
    n, m = len(old_lines), len(new_lines)
    # lcs[i][j] = LCS length of old_lines[i:] vs new_lines[j:]
    lcs = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, below = lcs[i], lcs[i + 1]
        for j in range(m - 1, -1, -1):
            if old_lines[i] == new_lines[j]:
                row[j] = below[j + 1] + 1
            else:
                bj, rj = below[j], row[j + 1]
                row[j] = bj if bj >= rj else rj

    hunks: list[Hunk] = []
    i = j = 0
    region_old = region_new = -1  # start of the open changed region, -1 if none
    while i < n or j < m:
        if i < n and lcs[i + 1][j] == lcs[i][j]:
            if region_old < 0:
                region_old, region_new = i, j
            i += 1
        elif i < n and j < m and old_lines[i] == new_lines[j]:
            if region_old >= 0:
                hunks.append(Hunk(region_old, old_lines[region_old:i],
                                  region_new, new_lines[region_new:j]))
                region_old = -1
            i += 1
            j += 1
        else:
            if region_old < 0:
                region_old, region_new = i, j
            j += 1
    if region_old >= 0:
        hunks.append(Hunk(region_old, old_lines[region_old:i],
                          region_new, new_lines[region_new:j]))
    return LineDiff(list(old_lines), list(new_lines), hunks)


def line_diff(old: str, new: str) -> LineDiff:
    return diff_lines(split_lines(old), split_lines(new))


def apply_hunks(old_lines: list[str], hunks: list[Hunk]) -> list[str]:
    """Replay a diff's hunks over ``old_lines``."""
    out: list[str] = []
    pos = 0
    for hunk in hunks:
        out.extend(old_lines[pos:hunk.old_start])
        out.extend(hunk.added)
        pos = hunk.old_start + len(hunk.deleted)
    out.extend(old_lines[pos:])
    return out


def collect_changed_lines(diff: LineDiff) -> tuple[list[str], list[str]]:
    """All added and deleted lines, concatenated in hunk order."""
    added: list[str] = []
    deleted: list[str] = []
    for hunk in diff.hunks:
        added.extend(hunk.added)
        deleted.extend(hunk.deleted)
    return added, deleted


def render_unified(diff: LineDiff, context: int = 3) -> str:
    """Unified-diff text with '-'/'+' prefixes and ``context`` common lines.

    Hunks whose context windows touch are folded into one @@ group, as in
    standard unified output. Empty diff renders as empty text.
    """
    if context < 0:
        raise ValueError("context must be >= 0")
    if not diff.hunks:
        return ""

    groups: list[list[Hunk]] = [[diff.hunks[0]]]
    for hunk in diff.hunks[1:]:
        prev = groups[-1][-1]
        prev_end = prev.old_start + len(prev.deleted)
        if hunk.old_start - prev_end <= 2 * context:
            groups[-1].append(hunk)
        else:
            groups.append([hunk])

    old = diff.old_lines
    lines: list[str] = []
    for group in groups:
        old_lo = max(group[0].old_start - context, 0)
        last = group[-1]
        old_hi = min(last.old_start + len(last.deleted) + context, len(old))
        new_lo = group[0].new_start - (group[0].old_start - old_lo)
        old_len = old_hi - old_lo
        new_len = old_len + sum(len(h.added) - len(h.deleted) for h in group)
        # unified convention: zero-length ranges report the preceding line
        old_tag = old_lo + 1 if old_len else old_lo
        new_tag = new_lo + 1 if new_len else new_lo
        lines.append(f"@@ -{old_tag},{old_len} +{new_tag},{new_len} @@")
        pos = old_lo
        for hunk in group:
            for k in range(pos, hunk.old_start):
                lines.append(" " + old[k])
            for text in hunk.deleted:
                lines.append("-" + text)
            for text in hunk.added:
                lines.append("+" + text)
            pos = hunk.old_start + len(hunk.deleted)
        for k in range(pos, old_hi):
            lines.append(" " + old[k])
    return "\n".join(lines) + "\n"
