import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from catchvqa import metrics
from catchvqa.errors import ContractError
from catchvqa.metrics import (
    EmptyInputWarning,
    accuracy,
    bleu,
    build_report,
    corpus_scores,
    format_grid,
    meteor_lite,
    rouge_l,
    vqa_score,
)

# ---------------------------------------------------------------- oracles
# Written independently of the module: plain loops and exhaustive search.


def oracle_bleu(cand, ref):
    if not cand:
        return 0.0
    logs = []
    for n in range(1, 5):
        cgrams = [tuple(cand[i : i + n]) for i in range(len(cand) - n + 1)]
        if not cgrams:
            continue
        rgrams = [tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)]
        matched = 0
        for g in set(cgrams):
            matched += min(cgrams.count(g), rgrams.count(g))
        logs.append(math.log(matched / len(cgrams) if matched else 1e-9))
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * math.exp(sum(logs) / len(logs))


def is_subsequence(sub, seq):
    it = iter(seq)
    return all(any(x == y for y in it) for x in sub)


def oracle_lcs(a, b):
    for k in range(min(len(a), len(b)), 0, -1):
        for idx in itertools.combinations(range(len(a)), k):
            if is_subsequence([a[i] for i in idx], b):
                return k
    return 0


def oracle_rouge(cand, ref):
    lcs = oracle_lcs(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)


def oracle_meteor(cand, ref):
    best = None
    options = [[None] + [j for j, t in enumerate(ref) if t == c] for c in cand]
    for assign in itertools.product(*options):
        used = [j for j in assign if j is not None]
        if len(used) != len(set(used)):
            continue
        m = len(used)
        if m == 0:
            continue
        chunks = 0
        prev = None
        for j in assign:
            if j is None:
                prev = None
                continue
            if prev is None or j != prev + 1:
                chunks += 1
            prev = j
        key = (m, -chunks)
        if best is None or key > best:
            best = key
    if best is None:
        return 0.0
    m, chunks = best[0], -best[1]
    p, r = m / len(cand), m / len(ref)
    f = 10 * p * r / (r + 9 * p)
    return f * (1 - 0.5 * (chunks / m) ** 3)


def fixtures(n=50, seed=123):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        vocab = list("abcde")[: int(rng.integers(2, 6))]
        cand = [vocab[i] for i in rng.integers(0, len(vocab), size=int(rng.integers(1, 8)))]
        ref = [vocab[i] for i in rng.integers(0, len(vocab), size=int(rng.integers(1, 8)))]
        out.append((cand, ref))
    return out


FIXTURES = fixtures()


# ---------------------------------------------------------------- hand fixtures


def test_bleu_brevity_fixture():
    assert bleu("a b c".split(), "a b c d".split()) == pytest.approx(math.exp(1 - 4 / 3), abs=1e-12)
    assert round(bleu("a b c".split(), "a b c d".split()), 4) == 0.7165


def test_rouge_fixture():
    assert rouge_l("a b c d".split(), "a c b d".split()) == 0.75


def test_meteor_fixture():
    assert meteor_lite("b a".split(), "a b".split()) == 0.5


# ---------------------------------------------------------------- oracle equivalence


@pytest.mark.parametrize("cand,ref", FIXTURES)
def test_metrics_match_oracles(cand, ref):
    assert abs(bleu(cand, ref) - oracle_bleu(cand, ref)) < 1e-9
    assert abs(rouge_l(cand, ref) - oracle_rouge(cand, ref)) < 1e-9
    assert abs(meteor_lite(cand, ref) - oracle_meteor(cand, ref)) < 1e-9


def test_fixtures_cover_partial_matches():
    vals = [meteor_lite(c, r) for c, r in FIXTURES]
    assert any(0 < v < 1 for v in vals) and any(v == 0 for v in vals)


# ---------------------------------------------------------------- accuracy / vqa


def test_accuracy_cases():
    g = [[1], [2], [3], [4]]
    assert accuracy(g, g) == 1.0
    assert accuracy([[9]] * 4, g) == 0.0
    assert accuracy([[1], [2], [3], [5]], g) == 0.75


def test_accuracy_length_mismatch():
    with pytest.raises(ContractError):
        accuracy([[1]], [[1], [2]])


def test_vqa_score_is_exact_match():
    assert vqa_score([[]], [[3]]) == 0.0
    p, g = [[1], [2, 3], [4]], [[1], [2], [4]]
    assert vqa_score(p, g) == accuracy(p, g)


# ---------------------------------------------------------------- edge cases


def test_bleu_edges():
    assert bleu(list("abcd"), list("abcd")) == 1.0
    assert bleu([], list("ab")) == 0.0
    assert bleu(list("xy"), list("ab")) < 1e-8
    with pytest.raises(ContractError):
        bleu(list("ab"), [])


def test_rouge_empty_warns():
    with pytest.warns(EmptyInputWarning):
        assert rouge_l([], list("ab")) == 0.0
    assert rouge_l(list("ab"), list("cd")) == 0.0


def test_meteor_empty_warns_and_disjoint():
    with pytest.warns(EmptyInputWarning):
        assert meteor_lite(list("ab"), []) == 0.0
    assert meteor_lite(list("ab"), list("cd")) == 0.0


token_lists = st.lists(st.sampled_from("abcd"), min_size=1, max_size=7)


@given(token_lists)
def test_self_scores(x):
    assert bleu(x, x) == pytest.approx(1.0, abs=1e-12)
    assert rouge_l(x, x) == 1.0
    assert meteor_lite(x, x) == pytest.approx(1 - 0.5 / len(x) ** 3, abs=1e-12)


@given(token_lists, token_lists)
def test_bounds_and_rouge_symmetry(a, b):
    for f in (bleu, rouge_l, meteor_lite):
        assert 0.0 <= f(a, b) <= 1.0 + 1e-12
    assert rouge_l(a, b) == pytest.approx(rouge_l(b, a), abs=1e-15)


def test_corpus_means_permutation_invariant():
    preds = [c for c, _ in FIXTURES[:20]]
    golds = [r for _, r in FIXTURES[:20]]
    a = corpus_scores(preds, golds)
    perm = np.random.default_rng(0).permutation(20)
    b = corpus_scores([preds[i] for i in perm], [golds[i] for i in perm])
    for k in a:
        assert a[k] == pytest.approx(b[k], abs=1e-12)


# ---------------------------------------------------------------- reports


def test_build_report_groups_by_domain():
    rep = build_report([[1], [2], [3]], [[1], [0], [3]], ["x", "y", "x"], config={"seed": 0})
    assert rep.counts == {"x": 2, "y": 1}
    assert rep.score("x") == 1.0 and rep.score("y") == 0.0
    assert rep.overall["accuracy"] == pytest.approx(2 / 3)
    assert rep.mean_over_domains() == 0.5
    again = metrics.EvalReport.from_dict(rep.to_dict())
    assert again.to_json() == rep.to_json()


def test_format_grid_alignment_and_diffs():
    txt = format_grid("t", ["a", "b"], {"base": {"a": 0.5, "b": 0.25}, "new": {"a": 0.6, "b": 0.2}}, baseline={"a": 0.5, "b": 0.25})
    lines = txt.splitlines()
    assert len({len(l) for l in lines}) == 1
    assert "60.0 (+10.0)" in txt and "20.0 (-5.0)" in txt


def test_table_renders_all_metrics():
    rep = build_report([[1]], [[1]], ["x"])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        txt = rep.table("demo")
    for m in metrics.METRICS:
        assert m in txt
