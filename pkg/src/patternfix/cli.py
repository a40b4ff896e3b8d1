"""Pipeline subcommands: ingest, extract, match, generate, evaluate, report.

Stages communicate only through files under the output directory, so each
one can be re-run or tested independently. Every manifest embeds the config
hash and seed; with mock gateways a re-run reproduces artifacts byte-exactly.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import zlib
from dataclasses import asdict
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import corpus, extraction, generator, matcher, report as reporting
from .diffing import line_diff
from .evaluation import EvalReport, CweRow, evaluate_dataset, round_rate
from .gateway import GatewayConfig, GatewayError, ModelGateway
from .generator import (DEFAULT_TEMPERATURE_SCHEDULE, MalformedCompletionError,
                        PromptMode, PromptSpec, SamplingPlan)
from .matcher import EmptyGuidanceError, MatchRequest
from .store import PatternStore

PROG = "patternfix"


class ConfigError(ValueError):
    pass


class RunConfig:
    """Validated view over the TOML config plus CLI overrides."""

    def __init__(self, config_path: Path, args: argparse.Namespace):
        try:
            raw_bytes = config_path.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        try:
            data = tomllib.loads(raw_bytes.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"invalid config {config_path}: {exc}") from exc

        self.config_hash = hashlib.sha256(raw_bytes).hexdigest()
        self.data = data
        dataset = data.get("dataset", {})
        self.dataset_path = Path(dataset.get("path", "corpus.jsonl"))
        self.language = dataset.get("language", "c")
        if self.language not in corpus.LANGUAGES:
            raise ConfigError(f"dataset.language must be one of {corpus.LANGUAGES}")

        self.seed = args.seed if args.seed is not None \
            else int(data.get("run", {}).get("seed", 0))
        self.out = Path(args.out) if args.out else Path(data.get("run", {})
                                                        .get("out", "out"))
        self.backend = args.backend or data.get("matching", {}) \
            .get("backend", "retrieval")
        self.mode = args.mode or data.get("generation", {}).get("mode", "guided")
        self.k = args.k if args.k is not None \
            else int(data.get("matching", {}).get("k", 10))
        self.samples = args.samples if args.samples is not None \
            else int(data.get("generation", {}).get("samples_per_guidance", 1))
        # the out dir is deliberately absent: artifacts must not depend on it
        self.overrides = {"backend": self.backend, "mode": self.mode,
                          "k": self.k, "samples": self.samples}

    def section(self, name: str) -> dict:
        return self.data.get(name, {})

    def gateway(self, capability: str) -> ModelGateway:
        section = self.data.get("gateway", {}).get(capability)
        if not section or "endpoint" not in section:
            raise ConfigError(f"config has no gateway.{capability}.endpoint")
        cfg = GatewayConfig(
            endpoint=section["endpoint"],
            api_key_env=section.get("api_key_env", ""),
            max_in_flight=int(section.get("max_in_flight", 4)),
            timeout_ms=int(section.get("timeout_ms", 30000)),
            retries=int(section.get("retries", 0)),
            backoff_ms=int(section.get("backoff_ms", 250)),
        )
        return ModelGateway(cfg)

    def manifest(self, stage: str, **extra) -> dict:
        manifest = {"stage": stage, "config_hash": self.config_hash,
                    "seed": self.seed, "overrides": self.overrides}
        manifest.update(extra)
        return manifest


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True,
                               ensure_ascii=False) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, records: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def _finish_manifest(cfg: RunConfig, manifest: dict, paths: list[Path]) -> None:
    manifest["outputs"] = {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in paths}
    _write_json(cfg.out / f"{manifest['stage']}_manifest.json", manifest)


def _load_pairs(cfg: RunConfig, path: Path, splits: list[str] | None,
                include_invalid: bool = False
                ) -> tuple[list[corpus.VulFixPair], int]:
    """Pairs from a stage file, filtered to valid records and chosen splits.

    Returns the kept pairs and the number excluded by validation.
    """
    pairs = corpus.load_dataset(path, cfg.language)
    if splits:
        pairs = [p for p in pairs if p.split in splits]
    if include_invalid:
        return pairs, 0
    kept = [p for p in pairs if corpus.validate_pair(p, cfg.language).ok]
    return kept, len(pairs) - len(kept)


def _pair_seed(base_seed: int, pair_id: str) -> int:
    return base_seed ^ zlib.crc32(pair_id.encode("utf-8"))


# -- stages -------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig, args: argparse.Namespace) -> int:
    if not cfg.dataset_path.exists():
        print(f"{PROG}: dataset not found: {cfg.dataset_path}", file=sys.stderr)
        return 1
    pairs = corpus.load_dataset(cfg.dataset_path, cfg.language)
    records = []
    n_valid = 0
    for pair in pairs:
        validation = corpus.validate_pair(pair, cfg.language)
        n_valid += validation.ok
        record = corpus.pair_to_record(pair)
        record["valid"] = validation.ok
        record["issues"] = [list(issue) for issue in validation.issues]
        records.append(record)
    cfg.out.mkdir(parents=True, exist_ok=True)
    pairs_path = cfg.out / "pairs.jsonl"
    _write_jsonl(pairs_path, records)
    manifest = cfg.manifest("ingest", total=len(pairs), valid=n_valid,
                            invalid=len(pairs) - n_valid)
    _finish_manifest(cfg, manifest, [pairs_path])
    print(f"ingest: {len(pairs)} pairs ({n_valid} valid) -> {pairs_path}")
    return 0


def cmd_extract(cfg: RunConfig, args: argparse.Namespace) -> int:
    section = cfg.section("extraction")
    splits = args.split or section.get("splits", ["train"])
    pairs_path = cfg.out / "pairs.jsonl"
    if not pairs_path.exists():
        print(f"{PROG}: run ingest first: {pairs_path} missing", file=sys.stderr)
        return 1
    pairs, excluded = _load_pairs(cfg, pairs_path, splits,
                                  include_invalid=args.include_invalid)
    gateway = cfg.gateway("instruct")
    inventory = extraction.seed_inventory()

    store = PatternStore()
    discards: list[dict] = []
    novel_labels: list[str] = []
    failures = 0
    for pair in pairs:
        diff = line_diff(pair.raw_vulnerable, pair.raw_fixed)
        if diff.is_empty():
            discards.append({"pair_id": pair.pair_id, "attempts": [],
                             "reason": "no change between sources"})
            continue
        try:
            outcome = extraction.extract_pattern(
                pair, diff, inventory, gateway,
                max_attempts=int(section.get("max_attempts", 3)),
                temperature=float(section.get("temperature", 0.0)),
                max_tokens=int(section.get("max_tokens", 256)))
        except GatewayError as exc:
            failures += 1
            discards.append({"pair_id": pair.pair_id, "attempts": [],
                             "reason": f"gateway error: {exc}"})
            continue
        if isinstance(outcome, extraction.Discarded):
            discards.append({
                "pair_id": outcome.pair_id,
                "attempts": [{"response": a.response, "error": a.error}
                             for a in outcome.attempts],
                "reason": "all attempts failed validation",
            })
            continue
        store.put(outcome)
        if outcome.novel_action:
            novel_labels.append(outcome.action)

    inventory, merge_log = extraction.canonicalize_actions(novel_labels,
                                                           inventory)
    patterns_path = cfg.out / "patterns.jsonl"
    inventory_path = cfg.out / "inventory.jsonl"
    merge_path = cfg.out / "merge_log.jsonl"
    discards_path = cfg.out / "discards.jsonl"
    store.save(patterns_path)
    inventory.save(inventory_path)
    extraction.save_merge_log(merge_log, merge_path)
    _write_jsonl(discards_path, discards)
    stats = store.stats()
    manifest = cfg.manifest(
        "extract", pairs=len(pairs), excluded_invalid=excluded,
        patterns=len(store), discarded=len(discards),
        gateway_failures=failures, novel_labels=sorted(set(novel_labels)),
        splits=splits, patterns_per_cwe=stats.per_cwe,
        action_histogram=stats.actions)
    _finish_manifest(cfg, manifest,
                     [patterns_path, inventory_path, merge_path, discards_path])
    print(f"extract: {len(store)} patterns, {len(discards)} discarded "
          f"-> {patterns_path}")
    return 0


def cmd_match(cfg: RunConfig, args: argparse.Namespace) -> int:
    section = cfg.section("matching")
    split = args.split or [section.get("split", "test")]
    pairs_path = cfg.out / "pairs.jsonl"
    patterns_path = cfg.out / "patterns.jsonl"
    for needed in (pairs_path, patterns_path):
        if not needed.exists():
            print(f"{PROG}: missing input {needed}", file=sys.stderr)
            return 1
    pairs, _ = _load_pairs(cfg, pairs_path, split,
                           include_invalid=args.include_invalid)
    store = PatternStore.load(patterns_path)
    beam_width = max(int(section.get("beam_width", 10)), cfg.k)
    gateway = None
    if cfg.backend in ("remote", "mock"):
        gateway = cfg.gateway("seq2seq")
    elif cfg.backend != "retrieval":
        print(f"{PROG}: unknown backend {cfg.backend!r}", file=sys.stderr)
        return 1

    dump: list[dict] = []
    empty = 0
    for pair in pairs:
        request = MatchRequest(cwe=pair.cwe,
                               vulnerable_source=pair.vulnerable_source,
                               k=cfg.k, beam_width=beam_width)
        try:
            if gateway is None:
                candidates = matcher.match_retrieval(request, store)
            else:
                candidates = matcher.match_remote(request, gateway)
        except (EmptyGuidanceError, GatewayError) as exc:
            empty += 1
            dump.append({"pair_id": pair.pair_id, "candidates": [],
                         "error": str(exc)})
            continue
        dump.append({"pair_id": pair.pair_id, "candidates": [
            {"action": c.action, "key_element": c.key_element,
             "score": c.score, "origin": c.origin, "fallback": c.fallback}
            for c in candidates]})

    guidance_path = cfg.out / "guidance.jsonl"
    _write_jsonl(guidance_path, dump)
    outputs = [guidance_path]

    gold_metrics = None
    if args.gold:
        gold_store = PatternStore.load(Path(args.gold))
        gold = {}
        for pair in pairs:
            pattern = gold_store.get_by_pair(pair.pair_id)
            if pattern is not None:
                gold[pair.pair_id] = (pattern.action, pattern.key_element)
        predictions = {}
        for entry in dump:
            if entry["pair_id"] in gold:
                predictions[entry["pair_id"]] = [
                    matcher.GuidanceCandidate(
                        action=c["action"], key_element=c["key_element"],
                        score=c["score"], rank=i + 1, origin=c["origin"])
                    for i, c in enumerate(entry["candidates"])]
        gold_metrics = {}
        for mode in ("full", "action_only", "key_only"):
            mr = matcher.evaluate_matching(predictions, gold, mode, cfg.k)
            gold_metrics[mode] = {"n": mr.n, "k": mr.k,
                                  "precision_at_k": mr.precision_at_k,
                                  "recall_at_k": mr.recall_at_k}
        report_path = cfg.out / "match_report.json"
        _write_json(report_path, cfg.manifest("match_quality", **gold_metrics))
        outputs.append(report_path)

    manifest = cfg.manifest("match", pairs=len(pairs), empty=empty,
                            backend=cfg.backend, split=split)
    _finish_manifest(cfg, manifest, outputs)
    print(f"match: guidance for {len(pairs) - empty}/{len(pairs)} pairs "
          f"-> {guidance_path}")
    return 0


def _guidance_by_pair(path: Path) -> dict[str, list[matcher.GuidanceCandidate]]:
    by_pair: dict[str, list[matcher.GuidanceCandidate]] = {}
    for entry in _read_jsonl(path):
        by_pair[entry["pair_id"]] = [
            matcher.GuidanceCandidate(
                action=c["action"], key_element=c["key_element"],
                score=c["score"], rank=i + 1, origin=c["origin"],
                fallback=c.get("fallback", False))
            for i, c in enumerate(entry["candidates"])]
    return by_pair


def cmd_generate(cfg: RunConfig, args: argparse.Namespace) -> int:
    section = cfg.section("generation")
    split = args.split or [section.get("split", "test")]
    pairs_path = cfg.out / "pairs.jsonl"
    if not pairs_path.exists():
        print(f"{PROG}: missing input {pairs_path}", file=sys.stderr)
        return 1
    pairs, _ = _load_pairs(cfg, pairs_path, split,
                           include_invalid=args.include_invalid)
    mode_kind = cfg.mode
    if mode_kind not in generator.PROMPT_KINDS:
        print(f"{PROG}: unknown mode {mode_kind!r}", file=sys.stderr)
        return 1

    guidance = {}
    exemplar_pool: list[corpus.VulFixPair] = []
    if mode_kind == "guided":
        guidance_path = cfg.out / "guidance.jsonl"
        if not guidance_path.exists():
            print(f"{PROG}: guided mode needs {guidance_path}", file=sys.stderr)
            return 1
        guidance = _guidance_by_pair(guidance_path)
    elif mode_kind.startswith("few_shot"):
        exemplar_pool, _ = _load_pairs(cfg, pairs_path, ["train"])

    schedule = None
    if mode_kind != "guided":
        schedule = [float(t) for t in section.get("temperature_schedule", [])]
        if not schedule:
            schedule = list(DEFAULT_TEMPERATURE_SCHEDULE)
    guidance_count = int(section.get("guidance_count", cfg.k))
    budget_chars = int(section.get("exemplar_budget_chars", 4000))
    max_tokens = int(section.get("max_tokens", 1024))
    temperature = float(section.get("temperature", 1.0))

    gateway = cfg.gateway("complete")
    records: list[dict] = []
    failures: list[dict] = []
    skipped: list[str] = []
    requested = 0
    for pair in pairs:
        specs: list[PromptSpec] = []
        if mode_kind == "guided":
            candidates = guidance.get(pair.pair_id, [])[:guidance_count]
            if not candidates:
                skipped.append(pair.pair_id)
                continue
            for cand in candidates:
                mode = PromptMode(kind="guided", guidance=cand)
                specs.append(PromptSpec(
                    text=generator.build_repair_prompt(pair, mode),
                    guidance=(cand.action, cand.key_element)))
        elif mode_kind.startswith("few_shot"):
            strategy = "random" if mode_kind == "few_shot_random" else "bm25"
            exemplars = generator.select_exemplars(
                pair, exemplar_pool, strategy, budget_chars,
                seed=_pair_seed(cfg.seed, pair.pair_id))
            if not exemplars:
                skipped.append(pair.pair_id)
                continue
            mode = PromptMode(kind=mode_kind, exemplars=exemplars)
            specs.append(PromptSpec(generator.build_repair_prompt(pair, mode)))
        else:
            mode = PromptMode(kind=mode_kind)
            specs.append(PromptSpec(generator.build_repair_prompt(pair, mode)))

        plan = SamplingPlan(guidance_count=max(len(specs), 1),
                            samples_per_guidance=cfg.samples,
                            temperature=temperature,
                            temperature_schedule=schedule)
        result = generator.generate_patches(pair, specs, plan, gateway,
                                            max_tokens=max_tokens)
        requested += result.requested
        for failure in result.failures:
            failures.append({"pair_id": pair.pair_id,
                             "prompt_index": failure.prompt_index,
                             "error": failure.error})
        for cand in result.candidates:
            records.append({
                "pair_id": cand.pair_id, "text": cand.text,
                "guidance": list(cand.guidance) if cand.guidance else None,
                "temperature": cand.temperature,
                "sample_index": cand.sample_index})

    candidates_path = cfg.out / "candidates.jsonl"
    _write_jsonl(candidates_path, records)
    manifest = cfg.manifest(
        "generate", mode=mode_kind, pairs=len(pairs), split=split,
        candidates=len(records), requested_samples=requested,
        samples_per_guidance=cfg.samples, guidance_count=guidance_count,
        temperature=temperature, temperature_schedule=schedule,
        skipped_pairs=skipped, failures=failures)
    run_manifest_path = cfg.out / "run_manifest.json"
    _write_json(run_manifest_path, manifest)
    _finish_manifest(cfg, manifest, [candidates_path, run_manifest_path])
    print(f"generate[{mode_kind}]: {len(records)} candidates "
          f"({requested} samples requested) -> {candidates_path}")
    return 0


def report_to_dict(rep: EvalReport) -> dict:
    payload = asdict(rep)
    if rep.em_at_k_curve is not None:
        payload["em_at_k_curve"] = [[k, v] for k, v in rep.em_at_k_curve]
    return payload


def report_from_dict(payload: dict) -> EvalReport:
    curve = payload.get("em_at_k_curve")
    return EvalReport(
        n=payload["n"], em_true=payload["em_true"],
        em_percent=payload["em_percent"], k=payload["k"],
        per_cwe=[CweRow(**row) for row in payload["per_cwe"]],
        em_at_k_curve=[(k, v) for k, v in curve] if curve else None)


def cmd_evaluate(cfg: RunConfig, args: argparse.Namespace) -> int:
    section = cfg.section("evaluation")
    split = args.split or [section.get("split", "test")]
    pairs_path = cfg.out / "pairs.jsonl"
    candidates_path = cfg.out / "candidates.jsonl"
    for needed in (pairs_path, candidates_path):
        if not needed.exists():
            print(f"{PROG}: missing input {needed}", file=sys.stderr)
            return 1
    pairs, _ = _load_pairs(cfg, pairs_path, split,
                           include_invalid=args.include_invalid)
    by_pair = {p.pair_id: p for p in pairs}

    results: dict[str, list[str]] = {}
    malformed = 0
    for record in _read_jsonl(candidates_path):
        pair = by_pair.get(record["pair_id"])
        if pair is None:
            continue
        try:
            fixed = generator.extract_fix_region(record["text"], pair)
        except MalformedCompletionError:
            malformed += 1  # counted, never silently dropped; scores as a miss
            continue
        results.setdefault(pair.pair_id, []).append(fixed)

    k = int(section.get("k", cfg.k))
    curve_ks = [int(x) for x in section.get("curve_ks", [])] or None
    rep = evaluate_dataset(results, pairs, k, curve_ks)

    json_path = cfg.out / "eval_report.json"
    payload = cfg.manifest("evaluate", malformed_candidates=malformed,
                           split=split, **report_to_dict(rep))
    _write_json(json_path, payload)
    table_path = cfg.out / "eval_report.txt"
    table_path.write_text(reporting.render_table(rep), encoding="utf-8")
    tsv_path = cfg.out / "eval_report.tsv"
    reporting.write_delimited(rep, tsv_path)
    figures = cfg.out / "figures"
    figures.mkdir(parents=True, exist_ok=True)
    fig_path = figures / "per_cwe_rates.png"
    reporting.plot_per_cwe_rates(rep, fig_path)
    outputs = [json_path, table_path, tsv_path, fig_path]
    if rep.em_at_k_curve:
        curve_path = figures / "em_curve.png"
        reporting.plot_em_curve(rep, curve_path)
        outputs.append(curve_path)
    manifest = cfg.manifest("evaluate_files", malformed_candidates=malformed)
    _finish_manifest(cfg, manifest, outputs)
    print(reporting.render_table(rep), end="")
    print(f"evaluate: EM@{k} = {round_rate(rep.em_percent):.2f}% "
          f"({rep.em_true}/{rep.n}) -> {json_path}")
    return 0


def cmd_report(cfg: RunConfig, args: argparse.Namespace) -> int:
    base_path, other_path = Path(args.base), Path(args.other)
    for needed in (base_path, other_path):
        if not needed.exists():
            print(f"{PROG}: missing report {needed}", file=sys.stderr)
            return 1
    base = report_from_dict(json.loads(base_path.read_text(encoding="utf-8")))
    other = report_from_dict(json.loads(other_path.read_text(encoding="utf-8")))

    cfg.out.mkdir(parents=True, exist_ok=True)
    table = reporting.render_comparison_table(base, other,
                                              args.base_label, args.other_label)
    table_path = cfg.out / "comparison.txt"
    table_path.write_text(table, encoding="utf-8")
    tsv_path = cfg.out / "comparison.tsv"
    reporting.write_comparison_delimited(base, other, tsv_path)
    json_path = cfg.out / "comparison.json"
    _write_json(json_path, cfg.manifest(
        "report", base=report_to_dict(base), other=report_to_dict(other),
        base_label=args.base_label, other_label=args.other_label,
        em_percent_change=round_rate(other.em_percent - base.em_percent)))
    figures = cfg.out / "figures"
    figures.mkdir(parents=True, exist_ok=True)
    fig_path = figures / "rate_comparison.png"
    reporting.plot_rate_comparison(base, other, fig_path,
                                   args.base_label, args.other_label)
    manifest = cfg.manifest("report_files")
    _finish_manifest(cfg, manifest, [table_path, tsv_path, json_path, fig_path])
    print(table, end="")
    return 0


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Repair-pattern mining and pattern-guided patch "
                    "generation pipeline")
    parser.add_argument("--config", default="patternfix.toml",
                        help="TOML config file (default: %(default)s)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override run.seed")
    parser.add_argument("--out", default=None, help="override output dir")
    parser.add_argument("--backend", default=None,
                        choices=["remote", "retrieval", "mock"],
                        help="matcher backend")
    parser.add_argument("--mode", default=None,
                        choices=list(generator.PROMPT_KINDS),
                        help="generation prompt mode")
    parser.add_argument("--k", type=int, default=None,
                        help="candidate count for matching/evaluation")
    parser.add_argument("--samples", type=int, default=None,
                        help="samples per guidance/temperature")
    parser.add_argument("--split", action="append", default=None,
                        help="restrict a stage to these splits (repeatable)")
    parser.add_argument("--include-invalid", action="store_true",
                        help="keep pairs that failed validation")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", help="load, annotate, and validate the dataset")
    sub.add_parser("extract", help="mine one repair pattern per pair")
    match_p = sub.add_parser("match", help="predict guidance per test pair")
    match_p.add_argument("--gold", default=None,
                         help="gold pattern store for matching metrics")
    sub.add_parser("generate", help="sample patch candidates")
    sub.add_parser("evaluate", help="score candidates with exact match")
    report_p = sub.add_parser("report", help="compare two evaluation reports")
    report_p.add_argument("base", help="baseline eval_report.json")
    report_p.add_argument("other", help="comparison eval_report.json")
    report_p.add_argument("--base-label", default="base")
    report_p.add_argument("--other-label", default="ours")
    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "extract": cmd_extract,
    "match": cmd_match,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig(Path(args.config), args)
    except ConfigError as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 1
    cfg.out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, args)
    except (corpus.DatasetError, ConfigError, OSError) as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
