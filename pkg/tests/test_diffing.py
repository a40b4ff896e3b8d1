import random
from functools import lru_cache

from patternfix.diffing import (Hunk, apply_hunks, collect_changed_lines,
                                diff_lines, line_diff, render_unified,
                                split_lines)


def brute_force_lcs_len(old: tuple, new: tuple) -> int:
    """Independent LCS oracle: plain recursion over suffixes."""

    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> int:
        if i == len(old) or j == len(new):
            return 0
        if old[i] == new[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    return rec(0, 0)


def random_lines(rng, max_len=12, alphabet="abcd"):
    return [rng.choice(alphabet) for _ in range(rng.randint(0, max_len))]


def test_split_lines_trailing_newline():
    assert split_lines("x\ny\n") == ["x", "y"]
    assert split_lines("x\ny") == ["x", "y"]
    assert split_lines("") == []
    assert split_lines("\n") == [""]
    assert split_lines("a\n\n") == ["a", ""]


def test_identical_inputs_give_empty_diff():
    diff = line_diff("a\nb\n", "a\nb\n")
    assert diff.hunks == []
    assert diff.is_empty()


def test_single_insertion():
    diff = diff_lines(["a", "b"], ["a", "x", "b"])
    assert len(diff.hunks) == 1
    hunk = diff.hunks[0]
    assert hunk.deleted == []
    assert hunk.added == ["x"]
    assert hunk.old_start == 1
    # brute force agrees this is a minimal alignment
    assert brute_force_lcs_len(("a", "b"), ("a", "x", "b")) == 2


def test_full_deletion():
    diff = diff_lines(["a"], [])
    assert len(diff.hunks) == 1
    assert diff.hunks[0].deleted == ["a"]
    assert diff.hunks[0].added == []


def test_deletions_placed_early_on_ties():
    # both copies of "a" could be deleted; the earlier one must be
    diff = diff_lines(["a", "a"], ["a"])
    assert len(diff.hunks) == 1
    assert diff.hunks[0].old_start == 0
    assert diff.hunks[0].deleted == ["a"]


def test_two_disjoint_hunks():
    old = ["a", "b", "c", "d", "e"]
    new = ["a", "B", "c", "d", "E"]
    diff = diff_lines(old, new)
    assert len(diff.hunks) == 2
    assert diff.hunks[0].deleted == ["b"] and diff.hunks[0].added == ["B"]
    assert diff.hunks[1].deleted == ["e"] and diff.hunks[1].added == ["E"]


def test_round_trip_randomized():
    rng = random.Random(20240811)
    for _ in range(1000):
        old = random_lines(rng)
        new = random_lines(rng)
        diff = diff_lines(old, new)
        assert apply_hunks(old, diff.hunks) == new


def test_minimality_matches_brute_force():
    rng = random.Random(97)
    for _ in range(300):
        old = random_lines(rng)
        new = random_lines(rng)
        diff = diff_lines(old, new)
        added, deleted = collect_changed_lines(diff)
        lcs = brute_force_lcs_len(tuple(old), tuple(new))
        assert len(deleted) == len(old) - lcs
        assert len(added) == len(new) - lcs


def test_hunks_sorted_and_nonempty():
    rng = random.Random(5)
    for _ in range(200):
        old = random_lines(rng)
        new = random_lines(rng)
        diff = diff_lines(old, new)
        last_end = -1
        for hunk in diff.hunks:
            assert hunk.deleted or hunk.added
            assert hunk.old_start > last_end or (hunk.old_start >= last_end
                                                 and not hunk.deleted)
            last_end = hunk.old_start + len(hunk.deleted)


def test_collect_changed_lines_order():
    diff = diff_lines(["a", "b", "c"], ["x", "b", "y", "z"])
    added, deleted = collect_changed_lines(diff)
    assert added == ["x", "y", "z"]
    assert deleted == ["a", "c"]
    empty = diff_lines(["a"], ["a"])
    assert collect_changed_lines(empty) == ([], [])
    mixed = diff_lines(["a"], ["b"])
    assert collect_changed_lines(mixed) == (["b"], ["a"])


def test_render_unified_empty():
    assert render_unified(diff_lines(["a"], ["a"]), 3) == ""


def test_render_unified_single_addition_no_context():
    diff = diff_lines(["a", "b"], ["a", "x", "b"])
    text = render_unified(diff, 0)
    plus_lines = [ln for ln in text.splitlines() if ln.startswith("+")]
    assert plus_lines == ["+x"]


def test_render_unified_plus_lines_match_collect():
    rng = random.Random(13)
    for _ in range(100):
        old = random_lines(rng, alphabet="abcdef")
        new = random_lines(rng, alphabet="abcdef")
        diff = diff_lines(old, new)
        text = render_unified(diff, 3)
        plus = [ln[1:] for ln in text.splitlines()
                if ln.startswith("+") and not ln.startswith("@@")]
        minus = [ln[1:] for ln in text.splitlines() if ln.startswith("-")]
        added, deleted = collect_changed_lines(diff)
        assert plus == added
        assert minus == deleted


def test_render_unified_context_merging():
    old = ["a", "b", "c", "d", "e", "f", "g"]
    new = ["a", "B", "c", "d", "e", "F", "g"]
    merged = render_unified(diff_lines(old, new), 3)
    assert merged.count("@@") == 2  # one header, two @@ tokens
    separate = render_unified(diff_lines(old, new), 1)
    assert separate.count("@@") == 4


def test_apply_hunks_manual():
    hunks = [Hunk(0, ["a"], 0, ["z"]), Hunk(2, [], 2, ["q"])]
    assert apply_hunks(["a", "b", "c"], hunks) == ["z", "b", "q", "c"]
