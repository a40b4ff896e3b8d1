import random
import re

import pytest

from patternfix.corpus import CweLabel, VulFixPair
from patternfix.evaluation import (LexError, cohens_kappa, em_at_k,
                                   evaluate_dataset, exact_match,
                                   normalize_code, round_rate,
                                   similarity_rank)

# -- independent oracle: strip comments first, then regex-tokenize -----------

_ORACLE_TOKEN_RE = re.compile(
    r'"(?:\\.|[^"\\\n])*"'          # string literal
    r"|'(?:\\.|[^'\\\n])*'"         # char literal
    r"|[A-Za-z_$][A-Za-z0-9_$]*"    # identifier / keyword
    r"|\.?[0-9](?:[eEpP][+-]|[A-Za-z0-9_.])*"  # pp-number
    r"|>>>=|<<=|>>=|\.\.\.|<=>|->\*|>>>"
    r"|->|\+\+|--|<<|>>|<=|>=|==|!=|&&|\|\||\+=|-=|\*=|/=|%=|&=|\^=|\|=|##|::|\.\*"
    r"|\S")


def oracle_strip_comments(src: str) -> str:
    out = []
    i, n = 0, len(src)
    state = "code"  # code | line | block | string | char
    quote = ""
    while i < n:
        c = src[i]
        if state == "code":
            if c == "/" and src[i + 1:i + 2] == "/":
                state = "line"
                i += 2
            elif c == "/" and src[i + 1:i + 2] == "*":
                state = "block"
                i += 2
            elif c in "\"'":
                state = "string"
                quote = c
                out.append(c)
                i += 1
            else:
                out.append(c)
                i += 1
        elif state == "line":
            if c == "\n":
                out.append(c)
                state = "code"
            i += 1
        elif state == "block":
            if c == "*" and src[i + 1:i + 2] == "/":
                out.append(" ")
                state = "code"
                i += 2
            else:
                i += 1
        else:  # string/char
            out.append(c)
            if c == "\\" and i + 1 < n:
                out.append(src[i + 1])
                i += 2
                continue
            if c == quote:
                state = "code"
            i += 1
    if state == "block":
        raise ValueError("oracle: unterminated block comment")
    return "".join(out)


def oracle_tokens(src: str) -> list[str]:
    return _ORACLE_TOKEN_RE.findall(oracle_strip_comments(src))


EM_ORACLE_CORPUS = [
    ("int x=1; // trailing comment", "c"),
    ("int  x = 1 ;", "c"),
    ('char *s = "// not a comment";', "c"),
    ("char c = '/'; int y = 2;", "c"),
    ("/* leading */int f(){}", "c"),
    ("int f(){/* inner */return 0;}", "c"),
    ("a /* multi\nline\ncomment */ b", "c"),
    ("x = a/b; // divide", "c"),
    ('printf("/* also content */");', "c"),
    ("for(i=0;i<n;i++){sum+=v[i];}", "c"),
    ("if (p == NULL) return -1;", "c"),
    ("while(a&&b||c){d^=e;}", "c"),
    ("int a = 0x1F + 077 + 1e-5;", "c"),
    ("size_t n = sizeof(struct foo);", "c"),
    ("p->next = q->prev;", "c"),
    ("x <<= 2; y >>= 3;", "c"),
    ("val = cond ? a : b;", "c"),
    ("#include <stdio.h>", "c"),
    ("#define MAX(a,b) ((a)>(b)?(a):(b))", "c"),
    ("u8 buf[16] = {0};", "c"),
    ("return a == b != c;", "c"),
    ("f(a, /* gap */ b);", "c"),
    ("int z = 1 /*c1*/ + /*c2*/ 2;", "c"),
    ('s = "tab\\t and \\"quote\\"";', "c"),
    ("c = 'x'; d = '\\n';", "c"),
    ("long long v = 1ULL << 32;", "c"),
    ("double d = .5e+10;", "c"),
    ("a=b;//x\nc=d;//y\ne=f;", "c"),
    ("auto l = [](int a){ return a; };", "cpp"),
    ("std::vector<int> v;", "cpp"),
    ("auto r = a <=> b;", "cpp"),
    ("T* p = obj->*memptr;", "cpp"),
    ("ns::cls::method();", "cpp"),
    ("int &&rv = std::move(x);", "cpp"),
    ("template<typename T> T id(T x){return x;}", "cpp"),
    ("// whole line\nint g;", "cpp"),
    ("delete[] arr;", "cpp"),
    ("int j = static_cast<int>(f);", "cpp"),
    ("String s = \"// markers /* here */ stay\";", "java"),
    ("int shifted = bits >>> 2;", "java"),
    ("mask >>>= 1;", "java"),
    ("Runnable r = () -> doWork();", "java"),
    ("List<String> names = new ArrayList<>();", "java"),
    ("Supplier<Foo> f = Foo::new;", "java"),
    ("if (idx >= 0 && idx < len) { use(idx); }", "java"),
    ("x += 1; /* java block */ y -= 2;", "java"),
    ("char q = '\\'';", "java"),
    ("double d2 = 3.14e2;", "java"),
    ("// only a comment\n", "c"),
    ("i++; j--; k = i+++j;", "c"),
    ("arr[i] = arr[i] % 7;", "c"),
    ("boolean ok = a instanceof Foo;", "java"),
]


def test_em_oracle_agreement_on_corpus():
    assert len(EM_ORACLE_CORPUS) >= 50
    for source, language in EM_ORACLE_CORPUS:
        assert normalize_code(source, language).tokens == oracle_tokens(source), \
            f"disagreement on {source!r}"


def test_em_oracle_agreement_on_whitespace_permutations():
    for source, language in EM_ORACLE_CORPUS[:20]:
        tokens = normalize_code(source, language).tokens
        # re-spacing the token boundary must not change the sequence
        spaced = "  ".join(tokens)
        assert normalize_code(spaced, language).tokens == tokens
        assert oracle_tokens(spaced) == tokens


def test_normalize_comment_and_whitespace_insensitive():
    a = normalize_code("int x=1; // c", "c")
    b = normalize_code("int  x = 1 ;", "c")
    assert a == b
    assert a.tokens == ["int", "x", "=", "1", ";"]


def test_normalize_literal_protection():
    seq = normalize_code('char *s = "// not a comment";', "c")
    assert '"// not a comment"' in seq.tokens


def test_normalize_block_comment_removal():
    assert normalize_code("/* a */int f(){}", "c").tokens == \
        ["int", "f", "(", ")", "{", "}"]


def test_normalize_unterminated_block_comment():
    with pytest.raises(LexError) as excinfo:
        normalize_code("int x; /* oops", "c")
    assert excinfo.value.offset == 7


def test_normalize_unterminated_string():
    with pytest.raises(LexError):
        normalize_code('char *s = "broken;', "c")


def test_exact_match_basics():
    gold = "int f(){return 0;}"
    assert exact_match(gold, gold, "c")
    assert exact_match("int f() { return 0; } // done", gold, "c")
    assert not exact_match("int g(){return 0;}", gold, "c")
    # lex failure scores false, never raises
    assert not exact_match('char *s = "broken;', gold, "c")


def test_exact_match_symmetric_and_reflexive():
    samples = [s for s, lang in EM_ORACLE_CORPUS if lang == "c"][:10]
    for a in samples:
        assert exact_match(a, a, "c")
        for b in samples:
            assert exact_match(a, b, "c") == exact_match(b, a, "c")


def test_em_at_k():
    gold = "int f(){return 0;}"
    hits = ["int f(){return 0;}"]
    misses = ["int f(){return 1;}"] * 10
    assert em_at_k(hits, gold, "c", 1)
    assert not em_at_k(misses + hits, gold, "c", 10)
    assert em_at_k(misses + hits, gold, "c", 11)
    assert not em_at_k([], gold, "c", 5)


def test_em_at_k_monotone_randomized():
    rng = random.Random(42)
    gold = "int f(){return 0;}"
    pool = ["int f(){return 0;}", "int f(){return 1;}", "bad", "int g(){}"]
    for _ in range(500):
        candidates = [rng.choice(pool) for _ in range(rng.randint(0, 8))]
        values = [em_at_k(candidates, gold, "c", k) for k in range(1, 10)]
        assert values == sorted(values)  # False <= True ordering


def make_pair(pair_id, cwe_id, cwe_name, fixed):
    return VulFixPair(
        pair_id=pair_id, language="c",
        vulnerable_source=f"//bug_start\nold;\n//bug_end",
        fixed_source=f"//fix_start\n{fixed}\n//fix_end",
        raw_vulnerable="old;", raw_fixed=fixed,
        cwe=CweLabel(cwe_id, cwe_name), split="test")


def test_evaluate_dataset_arithmetic():
    pairs = [make_pair(f"p{i}", "CWE-787", "Out-of-bounds Write", f"fix{i};")
             for i in range(4)]
    results = {"p0": ["fix0;"], "p1": ["nope;"], "p2": [], "p3": ["wrong;"]}
    report = evaluate_dataset(results, pairs, k=10)
    assert report.n == 4
    assert report.em_true == 1
    assert report.em_percent == 25.0


def test_evaluate_dataset_per_cwe_conservation_and_order():
    pairs = [
        make_pair("a1", "CWE-787", "Out-of-bounds Write", "fa1;"),
        make_pair("a2", "CWE-787", "Out-of-bounds Write", "fa2;"),
        make_pair("a3", "CWE-787", "Out-of-bounds Write", "fa3;"),
        make_pair("b1", "CWE-416", "Use After Free", "fb1;"),
        make_pair("b2", "CWE-416", "Use After Free", "fb2;"),
    ]
    results = {"a1": ["fa1;"], "b1": ["fb1;"], "b2": ["fb2;"]}
    report = evaluate_dataset(results, pairs, k=1)
    assert [r.cwe_id for r in report.per_cwe] == ["CWE-787", "CWE-416"]
    assert sum(r.success for r in report.per_cwe) == report.em_true == 3
    assert sum(r.total for r in report.per_cwe) == report.n
    row = report.per_cwe[0]
    assert (row.success, row.total, row.rate) == (1, 3, 33.33)


def test_evaluate_dataset_success_total_rate_layout():
    pairs = [make_pair(f"p{i}", "CWE-787", "Out-of-bounds Write", "fix;")
             for i in range(72)]
    results = {f"p{i}": ["fix;"] for i in range(26)}
    report = evaluate_dataset(results, pairs, k=1)
    row = report.per_cwe[0]
    assert (row.success, row.total, row.rate) == (26, 72, 36.11)


def test_evaluate_dataset_unknown_pair():
    pairs = [make_pair("p0", "CWE-787", "Out-of-bounds Write", "fix;")]
    with pytest.raises(ValueError):
        evaluate_dataset({"ghost": ["x"]}, pairs, k=1)


def test_evaluate_dataset_curve_monotone():
    pairs = [make_pair(f"p{i}", "CWE-787", "W", f"fix{i};") for i in range(3)]
    results = {"p0": ["no;", "fix0;"], "p1": ["no;"], "p2": ["fix2;"]}
    report = evaluate_dataset(results, pairs, k=2, curve_ks=[1, 2, 3])
    values = [v for _, v in report.em_at_k_curve]
    assert values == sorted(values)


def test_similarity_identical_and_disjoint():
    ranked = similarity_rank(["abcd", "xyzq"], "abcd")
    assert ranked[0] == ("abcd", 1.0)
    assert ranked[1][1] == 0.0


def test_similarity_hand_traced_value():
    # longest common substring "ab", then "d" on the right: 2*3/8
    (cand, score), = similarity_rank(["abed"], "abcd", top_n=1)
    assert abs(score - 0.75) < 1e-9


def test_similarity_ties_keep_candidate_order():
    ranked = similarity_rank(["ab", "ab", "zz"], "ab", top_n=3)
    assert [c for c, _ in ranked] == ["ab", "ab", "zz"]
    assert all(0.0 <= s <= 1.0 for _, s in ranked)


def test_kappa_perfect_agreement():
    assert cohens_kappa(["x", "y", "x", "z"], ["x", "y", "x", "z"]) == 1.0


def test_kappa_hand_computed_negative():
    assert abs(cohens_kappa([1, 1, 1, 0], [1, 0, 1, 1]) - (-1 / 3)) < 1e-9


def test_kappa_zero_point():
    # p_o == p_e == 0.5 for this arrangement
    a = ["x", "x", "y", "y"]
    b = ["x", "y", "x", "y"]
    assert abs(cohens_kappa(a, b)) < 1e-12


def test_kappa_degenerate_cases():
    assert cohens_kappa(["k", "k"], ["k", "k"]) == 1.0
    with pytest.raises(ValueError):
        cohens_kappa(["a"], ["a", "b"])


def test_round_rate_half_up():
    assert round_rate(36.105) == 36.11
    assert round_rate(36.104) == 36.10
    assert round_rate(0.005) == 0.01
