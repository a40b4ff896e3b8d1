#!/usr/bin/env python3
"""Standalone check for guided-generation runs with a substring-faithful
scripted generator: the expected exact-match fraction is simply the share
of test pairs whose top guidance key element appears verbatim in the gold
fixed function. Reads the pipeline's pairs/guidance artifacts directly and
deliberately imports nothing from the package.

Usage: guidance_em_oracle.py PAIRS_JSONL GUIDANCE_JSONL [--split test]
"""

import argparse
import json

MARKERS = {"//bug_start", "//bug_end", "//fix_start", "//fix_end"}


def strip_marker_lines(text):
    return "\n".join(ln for ln in text.split("\n")
                     if ln.strip() not in MARKERS)


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("pairs")
    parser.add_argument("guidance")
    parser.add_argument("--split", default="test")
    args = parser.parse_args()

    gold = {}
    for record in read_jsonl(args.pairs):
        if record.get("split") == args.split:
            gold[record["pair_id"]] = strip_marker_lines(record["fixed"])

    top_keys = {}
    for entry in read_jsonl(args.guidance):
        if entry.get("candidates"):
            top_keys[entry["pair_id"]] = entry["candidates"][0]["key_element"]

    hits = sum(1 for pair_id, fixed in gold.items()
               if top_keys.get(pair_id, "\x00") in fixed)
    fraction = hits / len(gold) if gold else 0.0
    print(json.dumps({"n": len(gold), "hits": hits, "fraction": fraction}))


if __name__ == "__main__":
    main()
