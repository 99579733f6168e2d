"""Answer metrics: exact-match accuracy, VQA score, BLEU, ROUGE-L, METEOR-lite.

All scores are in [0, 1]; tables multiply by 100 for display.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache

from catchvqa.errors import ContractError

BLEU_EPSILON = 1e-9
METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0

METRICS = ("accuracy", "vqa_score", "bleu", "rouge_l", "meteor")


class EmptyInputWarning(UserWarning):
    """A metric received an empty sequence and returned 0."""


def _check_lengths(predictions, golds):
    if len(predictions) != len(golds):
        raise ContractError(f"{len(predictions)} predictions vs {len(golds)} golds")


def accuracy(predictions, golds):
    _check_lengths(predictions, golds)
    if not golds:
        return 0.0
    return sum(list(p) == list(g) for p, g in zip(predictions, golds)) / len(golds)


def vqa_score(predictions, golds):
    """Single gold answer per sample, so this is exact match."""
    return accuracy(predictions, golds)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate, reference, max_order=4):
    reference = list(reference)
    candidate = list(candidate)
    if not reference:
        raise ContractError("BLEU needs a nonempty reference")
    if not candidate:
        return 0.0
    log_sum = 0.0
    orders = 0
    for n in range(1, max_order + 1):
        cand = _ngrams(candidate, n)
        total = sum(cand.values())
        if total == 0:
            continue
        ref = _ngrams(reference, n)
        clipped = sum(min(c, ref[g]) for g, c in cand.items())
        p = clipped / total if clipped else BLEU_EPSILON
        log_sum += math.log(p)
        orders += 1
    c, r = len(candidate), len(reference)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / orders)


def lcs_length(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference):
    candidate, reference = list(candidate), list(reference)
    if not candidate or not reference:
        warnings.warn("rouge_l on empty input", EmptyInputWarning, stacklevel=2)
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


def _best_alignment(candidate, reference):
    """(matches, adjacent links) maximised lexicographically over exact-token alignments.

    Chunks = matches - links. Bitmask DP over reference positions; fine for
    the short answers this package produces (<= 20 tokens).
    """
    cand = tuple(candidate)
    ref = tuple(reference)
    if len(ref) > 20:
        raise ContractError("meteor_lite alignment limited to 20 reference tokens")

    @lru_cache(maxsize=None)
    def go(i, used, prev_j):
        if i == len(cand):
            return (0, 0)
        best = go(i + 1, used, -1)
        for j, tok in enumerate(ref):
            if tok == cand[i] and not used >> j & 1:
                m, links = go(i + 1, used | (1 << j), j)
                cand_score = (m + 1, links + (1 if prev_j >= 0 and j == prev_j + 1 else 0))
                if cand_score > best:
                    best = cand_score
        return best

    return go(0, 0, -1)


def meteor_lite(candidate, reference):
    """Recall-weighted unigram F-mean times a fragmentation penalty; exact matches only."""
    candidate, reference = list(candidate), list(reference)
    if not candidate or not reference:
        warnings.warn("meteor_lite on empty input", EmptyInputWarning, stacklevel=2)
        return 0.0
    matches, links = _best_alignment(candidate, reference)
    if matches == 0:
        return 0.0
    chunks = matches - links
    p = matches / len(candidate)
    r = matches / len(reference)
    fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
    return fmean * (1.0 - penalty)


def corpus_scores(predictions, golds):
    """Mean of every metric over aligned prediction / gold lists."""
    _check_lengths(predictions, golds)
    n = len(golds)
    if n == 0:
        return {m: 0.0 for m in METRICS}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyInputWarning)
        return {
            "accuracy": accuracy(predictions, golds),
            "vqa_score": vqa_score(predictions, golds),
            "bleu": sum(bleu(p, g) for p, g in zip(predictions, golds)) / n,
            "rouge_l": sum(rouge_l(p, g) for p, g in zip(predictions, golds)) / n,
            "meteor": sum(meteor_lite(p, g) for p, g in zip(predictions, golds)) / n,
        }


@dataclass
class EvalReport:
    """Per-domain and overall metrics; ``overall`` is the mean over samples."""

    per_domain: dict
    overall: dict
    counts: dict
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def score(self, domain, metric="accuracy"):
        return self.per_domain[domain][metric]

    def mean_over_domains(self, metric="accuracy"):
        vals = [v[metric] for v in self.per_domain.values()]
        return sum(vals) / len(vals) if vals else 0.0

    def to_dict(self):
        return {
            "per_domain": self.per_domain,
            "overall": self.overall,
            "counts": self.counts,
            "config": self.config,
            "extras": self.extras,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(d["per_domain"], d["overall"], d["counts"], d.get("config", {}), d.get("extras", {}))

    def table(self, title=""):
        return format_grid(
            title,
            list(self.per_domain),
            {m: {d: self.per_domain[d][m] for d in self.per_domain} for m in METRICS},
        )


def build_report(predictions, golds, domain_names, config=None, extras=None):
    """Group aligned lists by domain name and score each group."""
    _check_lengths(predictions, golds)
    groups = {}
    for p, g, d in zip(predictions, golds, domain_names):
        groups.setdefault(d, ([], []))
        groups[d][0].append(p)
        groups[d][1].append(g)
    per_domain = {d: corpus_scores(*groups[d]) for d in groups}
    return EvalReport(
        per_domain=per_domain,
        overall=corpus_scores(predictions, golds),
        counts={d: len(groups[d][0]) for d in groups},
        config=dict(config or {}),
        extras=dict(extras or {}),
    )


def format_grid(title, columns, rows, scale=100.0, digits=1, baseline=None):
    """Aligned text table; ``rows`` maps row label -> {column -> value}.

    With ``baseline`` (same shape as one row), each cell also shows the signed
    change from it in parentheses.
    """
    header = ["" if not title else title] + list(columns)
    lines = []
    for label, vals in rows.items():
        cells = [label]
        for c in columns:
            v = vals.get(c)
            if v is None:
                cells.append("-")
                continue
            txt = f"{v * scale:.{digits}f}"
            if baseline is not None and c in baseline and label != "__base__":
                diff = (v - baseline[c]) * scale
                txt += f" ({diff:+.{digits}f})"
            cells.append(txt)
        lines.append(cells)
    widths = [max(len(str(r[i])) for r in [header] + lines) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(x).ljust(w) if i == 0 else str(x).rjust(w) for i, (x, w) in enumerate(zip(r, widths)))
    out = [fmt(header), "  ".join("-" * w for w in widths)]
    out += [fmt(r) for r in lines]
    return "\n".join(out)
