import pytest

from patternfix.corpus import CweLabel, VulFixPair, annotate_bug_regions
from patternfix.gateway import (ModelOutput, ModelResponse,
                                TransientGatewayError)
from patternfix.generator import (DEFAULT_TEMPERATURE_SCHEDULE,
                                  MalformedCompletionError, PatchCandidate,
                                  PromptMode, PromptSpec, SamplingPlan,
                                  build_repair_prompt, extract_fix_region,
                                  fix_region_text, generate_patches,
                                  select_exemplars)
from patternfix.matcher import GuidanceCandidate


def make_pair(pair_id="p1", raw_vuln=None, raw_fixed=None, cwe_id="CWE-787",
              cwe_name="Out-of-bounds Write", split="test"):
    raw_vuln = raw_vuln or "void w(char *b, int n) {\n  b[n] = 0;\n}"
    raw_fixed = raw_fixed or \
        "void w(char *b, int n) {\n  if (n < LEN) b[n] = 0;\n}"
    vuln, fixed = annotate_bug_regions(raw_vuln, raw_fixed)
    return VulFixPair(
        pair_id=pair_id, language="c", vulnerable_source=vuln,
        fixed_source=fixed, raw_vulnerable=raw_vuln, raw_fixed=raw_fixed,
        cwe=CweLabel(cwe_id, cwe_name), split=split)


def guidance(action="Insert Null Pointer Checker", key="p == NULL"):
    return GuidanceCandidate(action=action, key_element=key, score=-1.0,
                             rank=1, origin="remote")


class CountingGateway:
    """Completion stub: returns distinct texts and counts sample requests."""

    def __init__(self, constant=None, fail_on=None):
        self.requests = []
        self.constant = constant
        self.fail_on = fail_on or set()

    def call(self, request):
        index = len(self.requests)
        self.requests.append(request)
        if index in self.fail_on:
            raise TransientGatewayError("scripted failure")
        outputs = []
        for i in range(request.n):
            text = self.constant or f"int fix_{index}_{i}(void) {{}}"
            outputs.append(ModelOutput(text=text))
        return ModelResponse(outputs=outputs)


def test_base_prompt_is_marked_function():
    pair = make_pair()
    assert build_repair_prompt(pair, PromptMode("base")) == \
        pair.vulnerable_source


def test_cwe_prefix_prompt():
    pair = make_pair()
    prompt = build_repair_prompt(pair, PromptMode("cwe_prefix"))
    assert prompt.startswith("CWE-787 Out-of-bounds Write")
    assert prompt.endswith(pair.vulnerable_source)


def test_guided_prompt_trailing_comment_lines():
    pair = make_pair()
    prompt = build_repair_prompt(
        pair, PromptMode("guided", guidance=guidance()))
    lines = prompt.splitlines()
    assert lines[-2] == "// action: Insert Null Pointer Checker"
    assert lines[-1] == "// key_element: p == NULL"
    assert prompt.startswith(pair.vulnerable_source)


def test_guided_prompt_requires_guidance():
    with pytest.raises(ValueError):
        build_repair_prompt(make_pair(), PromptMode("guided"))


def test_few_shot_prompt_contains_example_block():
    pair = make_pair()
    exemplar = make_pair(pair_id="ex1", split="train")
    prompt = build_repair_prompt(
        pair, PromptMode("few_shot_rag", exemplars=[exemplar]))
    assert "Here's an example:" in prompt
    assert f"Input: {exemplar.vulnerable_source}" in prompt
    assert f"Output: {fix_region_text(exemplar)}" in prompt
    assert "// bug_start and // bug_end" in prompt


def test_few_shot_requires_exemplars():
    with pytest.raises(ValueError):
        build_repair_prompt(make_pair(),
                            PromptMode("few_shot_random", exemplars=[]))


def test_fix_region_text_has_markers():
    text = fix_region_text(make_pair())
    assert text.splitlines()[0] == "//fix_start"
    assert text.splitlines()[-1] == "//fix_end"
    assert "if (n < LEN) b[n] = 0;" in text


def test_select_exemplars_same_cwe_only():
    pair = make_pair()
    pool = [make_pair(pair_id="same1"), make_pair(pair_id="same2"),
            make_pair(pair_id="other", cwe_id="CWE-416", cwe_name="UAF"),
            pair]
    chosen = select_exemplars(pair, pool, "random", budget_chars=10 ** 6,
                              seed=1)
    assert {p.pair_id for p in chosen} == {"same1", "same2"}


def test_select_exemplars_no_candidates():
    pair = make_pair()
    assert select_exemplars(pair, [pair], "random", 10 ** 6) == []


def test_select_exemplars_budget_too_small():
    pair = make_pair()
    pool = [make_pair(pair_id="same1")]
    assert select_exemplars(pair, pool, "random", budget_chars=5) == []


def test_select_exemplars_seeded_shuffle_is_deterministic():
    pair = make_pair()
    pool = [make_pair(pair_id=f"s{i}") for i in range(6)]
    one = select_exemplars(pair, pool, "random", 10 ** 6, seed=7)
    two = select_exemplars(pair, pool, "random", 10 ** 6, seed=7)
    assert [p.pair_id for p in one] == [p.pair_id for p in two]


def test_select_exemplars_bm25_puts_near_identical_first():
    pair = make_pair()
    near = make_pair(pair_id="near",
                     raw_vuln="void w(char *b, int n) {\n  b[n] = 1;\n}",
                     raw_fixed="void w(char *b, int n) {\n  if (n < LEN) b[n] = 1;\n}")
    far = make_pair(pair_id="far",
                    raw_vuln="long parse(struct pkt *q) {\n  return q->len;\n}",
                    raw_fixed="long parse(struct pkt *q) {\n  if (!q) return 0;\n  return q->len;\n}")
    chosen = select_exemplars(pair, [far, near], "bm25", 10 ** 6)
    assert chosen[0].pair_id == "near"


def test_generate_budget_counts_all_requested_samples():
    pair = make_pair()
    gateway = CountingGateway()
    specs = [PromptSpec(f"prompt {i}") for i in range(10)]
    plan = SamplingPlan(guidance_count=10, samples_per_guidance=10,
                        temperature=1.0)
    result = generate_patches(pair, specs, plan, gateway)
    assert result.requested == 100
    assert sum(r.n for r in gateway.requests) == 100
    assert len(result.candidates) <= 100


def test_generate_dedups_constant_completion():
    pair = make_pair()
    gateway = CountingGateway(constant="int f(){return 1;}")
    specs = [PromptSpec("p1"), PromptSpec("p2")]
    plan = SamplingPlan(guidance_count=2, samples_per_guidance=5,
                        temperature=1.0)
    result = generate_patches(pair, specs, plan, gateway)
    assert result.requested == 10
    assert len(result.candidates) == 1


def test_generate_dedup_is_token_level():
    pair = make_pair()

    class TwoFormsGateway(CountingGateway):
        def call(self, request):
            self.requests.append(request)
            return ModelResponse(outputs=[
                ModelOutput(text="int f(){return 1;}"),
                ModelOutput(text="int f() { return 1; } // same tokens"),
            ])

    result = generate_patches(pair, [PromptSpec("p")],
                              SamplingPlan(1, 2), TwoFormsGateway())
    assert len(result.candidates) == 1


def test_generate_temperature_schedule_for_base_modes():
    pair = make_pair()
    gateway = CountingGateway()
    plan = SamplingPlan(guidance_count=1, samples_per_guidance=1,
                        temperature_schedule=list(DEFAULT_TEMPERATURE_SCHEDULE))
    result = generate_patches(pair, [PromptSpec("base prompt")], plan, gateway)
    assert result.requested == 10
    assert [r.temperature for r in gateway.requests] == \
        DEFAULT_TEMPERATURE_SCHEDULE
    temps = {c.temperature for c in result.candidates}
    assert temps == set(DEFAULT_TEMPERATURE_SCHEDULE)


def test_generate_partial_failure_keeps_other_prompts():
    pair = make_pair()
    gateway = CountingGateway(fail_on={1})
    specs = [PromptSpec("a", guidance=("A", "k1")),
             PromptSpec("b", guidance=("B", "k2")),
             PromptSpec("c", guidance=("C", "k3"))]
    plan = SamplingPlan(guidance_count=3, samples_per_guidance=1)
    result = generate_patches(pair, specs, plan, gateway)
    assert result.requested == 3
    assert len(result.failures) == 1
    assert result.failures[0].prompt_index == 1
    assert {c.guidance for c in result.candidates} == {("A", "k1"), ("C", "k3")}


def test_generate_records_provenance():
    pair = make_pair()
    gateway = CountingGateway()
    specs = [PromptSpec("a", guidance=("Insert Memset", "memset"))]
    result = generate_patches(pair, specs, SamplingPlan(1, 2, 0.7), gateway)
    for candidate in result.candidates:
        assert isinstance(candidate, PatchCandidate)
        assert candidate.pair_id == "p1"
        assert candidate.guidance == ("Insert Memset", "memset")
        assert candidate.temperature == 0.7
        assert candidate.text


def test_extract_fix_region_splices_known_fixture():
    pair = make_pair()
    completion = "//fix_start\n  if (n < LEN) b[n] = 0;\n//fix_end"
    assert extract_fix_region(completion, pair) == pair.raw_fixed


def test_extract_fix_region_bare_function_passthrough():
    pair = make_pair()
    assert extract_fix_region(pair.raw_fixed, pair) == pair.raw_fixed


def test_extract_fix_region_strips_echoed_markers():
    pair = make_pair()
    result = extract_fix_region(pair.vulnerable_source, pair)
    assert "//bug_start" not in result
    assert result == pair.raw_vulnerable


def test_extract_fix_region_multi_hunk():
    raw_vuln = "a();\nold1();\nb();\nc();\nold2();\nd();"
    raw_fixed = "a();\nnew1();\nb();\nc();\nnew2();\nd();"
    pair = make_pair(raw_vuln=raw_vuln, raw_fixed=raw_fixed)
    completion = ("//fix_start\nnew1();\n//fix_end\n"
                  "//fix_start\nnew2();\n//fix_end")
    assert extract_fix_region(completion, pair) == raw_fixed


def test_extract_fix_region_empty_region_means_deletion():
    raw_vuln = "a();\nbad();\nb();"
    raw_fixed = "a();\nb();"
    pair = make_pair(raw_vuln=raw_vuln, raw_fixed=raw_fixed)
    completion = "//fix_start\n//fix_end"
    assert extract_fix_region(completion, pair) == raw_fixed


def test_extract_fix_region_count_mismatch():
    pair = make_pair()  # one bug region
    completion = ("//fix_start\nx();\n//fix_end\n"
                  "//fix_start\ny();\n//fix_end")
    with pytest.raises(MalformedCompletionError):
        extract_fix_region(completion, pair)


def test_extract_fix_region_imbalance():
    pair = make_pair()
    with pytest.raises(MalformedCompletionError):
        extract_fix_region("//fix_start\nx();", pair)
    with pytest.raises(MalformedCompletionError):
        extract_fix_region("x();\n//fix_end", pair)


def test_sampling_plan_budget():
    assert SamplingPlan(10, 10).budget() == 100
    assert SamplingPlan(1, 3, temperature_schedule=[0.2, 0.4]).budget() == 6
