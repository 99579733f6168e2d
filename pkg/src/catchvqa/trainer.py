"""Backbone pretraining, per-domain adapter training and routed evaluation."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from catchvqa import metrics, vocab
from catchvqa.adapters import AdapterConfig, init_adapter_pair
from catchvqa.errors import ContractError
from catchvqa.hooks import ADAPTER_SLOT, swap_domain
from catchvqa.router import AdapterMixture
from catchvqa.tensor import AdamW, checksum, softmax_cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 16
    max_epochs: int = 5
    early_stop_patience: int = 2
    eval_metric: str = "auto"  # "auto": BLEU for multi-token answers, accuracy otherwise
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, val_metric, wall_time
    stopping_reason: str = ""
    best_epoch: int = 0
    metric: str = ""
    checksums: dict = field(default_factory=dict)

    def to_records(self):
        rows = [dict(r) for r in self.epochs]
        rows.append(
            {
                "summary": True,
                "stopping_reason": self.stopping_reason,
                "best_epoch": self.best_epoch,
                "metric": self.metric,
                "checksums": self.checksums,
            }
        )
        return rows


# ---------------------------------------------------------------- batches


def teacher_batch(dataset, indices):
    """Inputs and weighted targets for teacher-forced answer supervision."""
    sub = [dataset[i] for i in indices]
    full = [list(s.answer) + [vocab.END_ID] for s in sub]
    a = max(len(x) for x in full)
    answer_in = np.full((len(sub), a - 1), vocab.PAD_ID, dtype=np.int64)
    targets = np.full((len(sub), a), vocab.PAD_ID, dtype=np.int64)
    weights = np.zeros((len(sub), a))
    for r, x in enumerate(full):
        answer_in[r, : len(x) - 1] = x[:-1]
        targets[r, : len(x)] = x
        weights[r, : len(x)] = 1.0
    images = np.stack([s.image for s in sub])
    questions = np.array([s.question for s in sub], dtype=np.int64)
    return images, questions, answer_in, targets, weights


def answer_loss(backbone, images, questions, answer_in, targets, weights, prefix=None, inline_adapter=None):
    logits = backbone.answer_logits(images, questions, answer_in, prefix, inline_adapter)
    n_q = questions.shape[1]
    logits = logits[:, n_q - 1 :]
    v = logits.shape[-1]
    return softmax_cross_entropy(logits.reshape(-1, v), targets.reshape(-1), weights.reshape(-1))


def batch_loss(backbone, dataset, indices, prefix=None):
    return answer_loss(backbone, *teacher_batch(dataset, indices), prefix=prefix)


# ---------------------------------------------------------------- pretraining


def pretrain_backbone(backbone, dataset, epochs=10, lr=1e-3, batch_size=32, seed=0, log=None):
    """Train every backbone parameter on mixed-domain answers, then freeze."""
    backbone.params.unfreeze()
    opt = AdamW(backbone.params.trainable(), lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            loss = batch_loss(backbone, dataset, idx)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(order))
        if log is not None:
            log({"stage": "pretrain", "epoch": epoch, "train_loss": history[-1], "wall_time": time.perf_counter() - t0})
    backbone.freeze()
    return history


# ---------------------------------------------------------------- adapters


def select_metric(dataset, requested="auto"):
    if requested != "auto":
        return requested
    multi = any(len(s.answer) > 1 for s in dataset)
    return "bleu" if multi else "accuracy"


def train_adapter_pair(
    backbone,
    domain,
    train,
    val,
    config=TrainConfig(),
    adapter_config=None,
    classifier=None,
    others=(),
    log=None,
):
    """Optimise one domain's prefix and visual adapter on a frozen backbone.

    Validation runs before training (epoch 0) and after every epoch; the best
    epoch's weights are restored on exit. ``others`` are parameter holders
    (classifier, other adapter pairs) whose checksums must not move.
    """
    if not backbone.frozen:
        raise ContractError("refusing to train adapters: backbone has trainable parameters")
    if classifier is not None and not classifier.params.all_frozen():
        raise ContractError("refusing to train adapters: classifier is not frozen")
    adapter_config = adapter_config or AdapterConfig(d_q=backbone.config.d_q, d_v=backbone.config.d_v)
    adapter_config.validate_for(backbone.config)
    pair = init_adapter_pair(domain, adapter_config, seed=config.seed * 1000 + domain.index)

    guarded = {"backbone": backbone.checksum()}
    if classifier is not None:
        guarded["classifier"] = classifier.checksum()
    for o in others:
        guarded[f"adapter.{o.domain.name}"] = o.checksum()

    metric = select_metric(val, config.eval_metric)
    opt = AdamW(pair.params.trainable(), lr=config.learning_rate, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed * 7919 + domain.index)
    train_log = TrainLog(metric=metric)

    def validate():
        preds = generate_with_pair(backbone, pair, val)
        return metrics.corpus_scores(preds, val.answers)[metric]

    best = validate()
    best_state = pair.params.state_dict()
    train_log.epochs.append({"epoch": 0, "train_loss": None, "val_metric": best, "wall_time": 0.0})
    if log is not None:
        log({"stage": "adapter", "domain": domain.name, **train_log.epochs[-1]})
    stale = 0
    train_log.stopping_reason = "max_epochs"
    engine = backbone.hooks
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train))
        total = 0.0
        handles = [engine.register(backbone.vision_site(l), pair.visual.hook(l)) for l in pair.visual.layers]
        try:
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                loss = batch_loss(backbone, train, idx, prefix=pair.prompt.prefix_tensor())
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
        finally:
            for h in handles:
                h.remove()
        score = validate()
        train_log.epochs.append(
            {"epoch": epoch, "train_loss": total / len(order), "val_metric": score, "wall_time": time.perf_counter() - t0}
        )
        if log is not None:
            log({"stage": "adapter", "domain": domain.name, **train_log.epochs[-1]})
        if score > best:
            best, stale = score, 0
            best_state = pair.params.state_dict()
            train_log.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                train_log.stopping_reason = f"no improvement for {stale} epochs"
                break
    pair.params.load_state_dict(best_state)
    pair.params.freeze()

    after = {"backbone": backbone.checksum()}
    if classifier is not None:
        after["classifier"] = classifier.checksum()
    for o in others:
        after[f"adapter.{o.domain.name}"] = o.checksum()
    if after != guarded:
        raise ContractError(f"frozen parameters changed during adapter training: {guarded} -> {after}")
    train_log.checksums = after
    return pair, train_log


# ---------------------------------------------------------------- generation / evaluation


def _chunks(n, size):
    for start in range(0, n, size):
        yield np.arange(start, min(n, start + size))


def generate_plain(backbone, dataset, indices=None, batch_size=250):
    """Adapterless greedy answers (no prefix, no adapter hooks)."""
    indices = np.arange(len(dataset)) if indices is None else np.asarray(indices)
    out = {}
    images, questions = dataset.images, dataset.questions
    for part in _chunks(len(indices), batch_size):
        idx = indices[part]
        answers = backbone.generate(images[idx], questions[idx], prefix=_no_prefix())
        out.update(zip(idx.tolist(), answers))
    return [out[i] for i in indices.tolist()]


def _no_prefix():
    from catchvqa.backbone import _NO_PREFIX

    return _NO_PREFIX


def generate_with_pair(backbone, pair, dataset, indices=None, batch_size=250, use_prompt=True, use_visual=True, inline=False):
    """Greedy answers with one adapter pair active (via hooks, or inlined)."""
    indices = np.arange(len(dataset)) if indices is None else np.asarray(indices)
    images, questions = dataset.images, dataset.questions
    prefix = pair.prompt.prefix_tensor() if use_prompt else _no_prefix()
    handles = []
    if use_visual and not inline:
        handles = [backbone.hooks.register(backbone.vision_site(l), pair.visual.hook(l)) for l in pair.visual.layers]
    try:
        out = []
        for part in _chunks(len(indices), batch_size):
            idx = indices[part]
            out.extend(
                backbone.generate(
                    images[idx],
                    questions[idx],
                    prefix=prefix,
                    inline_adapter=pair.visual if (inline and use_visual) else None,
                )
            )
        return out
    finally:
        for h in handles:
            h.remove()


def generate_routed(backbone, registry, dataset, selected, batch_size=250, use_prompt=True, use_visual=True, inline=False):
    """Answers when sample i is served by adapter pair ``selected[i]`` (None = no adapters).

    Samples are grouped by their pair and the pair is made active through
    :func:`swap_domain` (or inlined for the hardcoded build).
    """
    preds = [None] * len(dataset)
    groups = {}
    for i, d in enumerate(selected):
        groups.setdefault(d, []).append(i)
    for d in sorted(groups, key=lambda x: (-1, "") if x is None else (x.index, x.name)):
        idx = np.array(groups[d])
        if d is None:
            answers = generate_plain(backbone, dataset, idx, batch_size)
        elif inline or not (use_prompt and use_visual):
            answers = generate_with_pair(
                backbone, registry.get(d), dataset, idx, batch_size, use_prompt, use_visual, inline
            )
        else:
            swap_domain(backbone, registry, d)
            try:
                answers = _generate_bound(backbone, dataset, idx, batch_size)
            finally:
                backbone.hooks.clear(ADAPTER_SLOT)
                backbone.bind_prefix(None)
        for i, a in zip(idx.tolist(), answers):
            preds[i] = a
    return preds


def _generate_bound(backbone, dataset, indices, batch_size):
    images, questions = dataset.images, dataset.questions
    out = []
    for part in _chunks(len(indices), batch_size):
        idx = indices[part]
        out.extend(backbone.generate(images[idx], questions[idx]))
    return out


def generate_mixture(backbone, pairs, dataset, weights, batch_size=250):
    """Soft routing: per-sample weighted mix of adapter outputs."""
    images, questions = dataset.images, dataset.questions
    out = []
    for part in _chunks(len(dataset), batch_size):
        mix = AdapterMixture(pairs, weights[part])
        uninstall = mix.install(backbone)
        try:
            out.extend(backbone.generate(images[part], questions[part]))
        finally:
            uninstall()
    return out


def evaluate(
    backbone,
    dataset,
    router=None,
    policy="hard",
    temperature=1.0,
    seed=0,
    draws=1,
    use_prompt=True,
    use_visual=True,
    inline=False,
    config=None,
):
    """Route, generate and score ``dataset``; returns an EvalReport.

    ``policy`` is one of hard / soft / random / oracle / fixed / none.
    Random routing averages ``draws`` independent uniform draws per sample.
    """
    golds = dataset.answers
    names = [s.domain.name for s in dataset]
    extras = {"policy": policy}
    cfg = dict(config or {})
    cfg.update({"policy": policy, "temperature": temperature, "seed": seed, "draws": draws})
    if policy == "none":
        preds = generate_plain(backbone, dataset)
        return _report(preds, golds, names, cfg, extras)

    registry = router.registry
    gold_domains = [s.domain for s in dataset]
    if policy == "soft":
        decisions = router.decide(dataset.images, "soft", temperature=temperature)
        weights = np.stack([d.weights for d in decisions])
        preds = generate_mixture(backbone, [registry.get(d) for d in router.domains], dataset, weights)
        extras["mean_max_weight"] = float(weights.max(axis=1).mean())
        extras["argmax_domains"] = _histogram(router.domains[k].name for k in weights.argmax(axis=1))
        return _report(preds, golds, names, cfg, extras)

    if policy == "random":
        rng = np.random.default_rng(seed)
        choice = np.stack(
            [[d.selected for d in router.decide(dataset.images, "random", rng=rng)] for _ in range(draws)], axis=1
        )
        memo = {}
        for d in router.domains:
            idx = [i for i in range(len(dataset)) if d in choice[i]]
            if idx:
                answers = generate_with_pair(backbone, registry.get(d), dataset, idx)
                memo.update({(i, d): a for i, a in zip(idx, answers)})
        per_draw = [
            metrics.build_report([memo[(i, choice[i][r])] for i in range(len(dataset))], golds, names)
            for r in range(draws)
        ]
        report = _average_reports(per_draw, cfg, extras)
        report.extras["selected"] = _histogram(d.name for d in choice.reshape(-1))
        report.extras["predictions_sha256"] = predictions_digest(
            [memo[(i, choice[i][r])] for r in range(draws) for i in range(len(dataset))]
        )
        return report

    decisions = router.decide(dataset.images, policy, gold=gold_domains)
    selected = [d.selected for d in decisions]
    extras["selected"] = _histogram(d.name for d in selected)
    extras["routing_accuracy"] = float(np.mean([s == g for s, g in zip(selected, gold_domains)]))
    preds = generate_routed(backbone, registry, dataset, selected, use_prompt=use_prompt, use_visual=use_visual, inline=inline)
    return _report(preds, golds, names, cfg, extras)


def predictions_digest(preds):
    """Short content hash of a prediction list, for bit-identity checks across runs."""
    blob = json.dumps([[int(t) for t in p] for p in preds], separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _report(preds, golds, names, cfg, extras):
    extras["predictions_sha256"] = predictions_digest(preds)
    return metrics.build_report(preds, golds, names, cfg, extras)


def _histogram(names):
    out = {}
    for n in names:
        out[n] = out.get(n, 0) + 1
    return dict(sorted(out.items()))


def _average_reports(reports, cfg, extras):
    first = reports[0]
    per_domain = {
        d: {m: float(np.mean([r.per_domain[d][m] for r in reports])) for m in metrics.METRICS} for d in first.per_domain
    }
    overall = {m: float(np.mean([r.overall[m] for r in reports])) for m in metrics.METRICS}
    return metrics.EvalReport(per_domain, overall, dict(first.counts), cfg, dict(extras))


def adapter_accuracy_matrix(backbone, registry, dataset, domains):
    """Per-sample correctness of every (sample, adapter) pairing: [N, K] of 0/1."""
    golds = dataset.answers
    mat = np.zeros((len(dataset), len(domains)))
    for k, d in enumerate(domains):
        preds = generate_with_pair(backbone, registry.get(d), dataset)
        mat[:, k] = [float(p == g) for p, g in zip(preds, golds)]
    return mat


def frozen_checksums(backbone, classifier=None, pairs=()):
    out = {"backbone": backbone.checksum()}
    if classifier is not None:
        out["classifier"] = classifier.checksum()
    out.update({f"adapter.{p.domain.name}": checksum(p.params) for p in pairs})
    return out


def describe(config):
    return asdict(config)
