"""Acceptance criteria 1-10.

Criteria 2, 4-7 and 9 need the desk-scale workspace (default config, about
15 minutes from scratch on one core). Set CATCHVQA_ACCEPTANCE_DIR to keep it
between runs; timings and campaign checksums measured on the first build are
stored there in acceptance.json and reused.
"""

import json
import os
import shutil
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import record
from test_harness import TINY
from test_metrics import FIXTURES, oracle_bleu, oracle_meteor, oracle_rouge

from catchvqa import cli
from catchvqa import domains as D
from catchvqa import harness as H
from catchvqa.adapters import AdapterConfig, init_adapter_pair
from catchvqa.backbone import _NO_PREFIX, Backbone, BackboneConfig
from catchvqa.metrics import accuracy, bleu, meteor_lite, rouge_l
from catchvqa.router import DomainClassifier, classifier_accuracy, train_classifier
from catchvqa.synthdata import gen_dataset
from catchvqa.trainer import frozen_checksums, teacher_batch, answer_loss
from catchvqa.tensor import grad_check

DESK_ENV = "CATCHVQA_ACCEPTANCE_DIR"
STAMP = "acceptance.json"


def pts(x):
    return f"{100 * x:.1f}"


# ---------------------------------------------------------------- desk workspace


def _build_desk(ws):
    """Full pipeline from nothing, timed, with checksums around the adapter campaign."""
    t0 = time.perf_counter()
    ws.data()
    bb = ws.backbone()
    clf = ws.classifier()
    before = frozen_checksums(bb, clf)
    t1 = time.perf_counter()
    ws.adapters()
    campaign = time.perf_counter() - t1
    after = frozen_checksums(bb, clf)
    reloaded = frozen_checksums(Backbone.load(ws.backbone_dir() / "backbone.ckpt"), DomainClassifier.load(ws.classifier_path()))
    main = H.run_main(ws)
    H.emit_report(ws, "main", main)
    return {
        "build_id": H.build_id(),
        "config_hash": ws.config.config_hash(),
        "checksums_before": before,
        "checksums_after": after,
        "checksums_reloaded": reloaded,
        "campaign_seconds": campaign,
        "main_seconds": time.perf_counter() - t0,
        "main_rows": main["rows"],
    }


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = Path(os.environ.get(DESK_ENV) or tmp_path_factory.mktemp("desk"))
    ws = H.Workspace(H.ExperimentConfig.from_dict({"output_dir": str(root)}))
    stamp = root / STAMP
    if stamp.exists():
        info = json.loads(stamp.read_text())
        if info["build_id"] != H.build_id() or info["config_hash"] != ws.config.config_hash():
            pytest.fail(f"{root} was built by different code or config; empty it or unset {DESK_ENV}")
    else:
        if (root / "artifacts").exists():
            pytest.fail(f"{root} holds artifacts but no {STAMP}; timings would be meaningless, empty it first")
        info = _build_desk(ws)
        stamp.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return ws, info


# ---------------------------------------------------------------- 1. gradients


def test_c01_gradient_check():
    # default widths and adapter; 8 vision blocks are the fewest that host
    # layers 4 and 8 and keep 2 x 4896 forward passes inside the time limit
    cfg = BackboneConfig(vision_layers=8)
    bb = Backbone(cfg, seed=0)
    bb.freeze()
    pair = init_adapter_pair(D.ARITH, AdapterConfig(d_q=cfg.d_q, d_v=cfg.d_v), seed=0)
    rng = np.random.default_rng(1)
    for p in pair.params:
        # W2 starts at zero, which would make every W1/b1 gradient vanish
        p.assign(rng.normal(0.0, 0.1, size=p.shape))
    for layer in pair.visual.layers:
        bb.hooks.register(bb.vision_site(layer), pair.visual.hook(layer))
    train = gen_dataset(n_per_domain=10, seed=3)[0].by_domain(D.ARITH)
    batch = teacher_batch(train, [0])  # a five-token answer

    def loss():
        return answer_loss(bb, *batch, prefix=pair.prompt.prefix_tensor())

    params = list(pair.params)
    n = sum(p.tensor.data.size for p in params)
    eps, tol = 1e-4, 1e-5
    # a central difference cannot resolve slopes below ~|L| * machine eps / eps;
    # gradients smaller than that over tol are compared in absolute terms
    floor = abs(loss().item()) * np.finfo(np.float64).eps / eps / tol
    t0 = time.perf_counter()
    err = grad_check(loss, params, eps=eps, floor=floor)
    took = time.perf_counter() - t0
    record(
        1,
        err < tol and took < 120,
        f"max relative error {err:.2e} over all {n} adapter coordinates (limit 1e-5, floor {floor:.1e}), "
        f"{took:.0f}s (limit 120s)",
    )


# ---------------------------------------------------------------- 2. frozen backbone


@pytest.mark.slow
def test_c02_frozen_conservation(desk):
    _, info = desk
    before, after, disk = info["checksums_before"], info["checksums_after"], info["checksums_reloaded"]
    ok = before == after == disk and set(before) == {"backbone", "classifier"}
    record(2, ok, f"backbone {before['backbone'][:12]} classifier {before['classifier'][:12]} " + ("unchanged" if ok else "CHANGED"))


# ---------------------------------------------------------------- 3. hooks


@pytest.mark.slow
def test_c03_hook_identity(desk):
    ws, _ = desk
    bb = ws.backbone()
    test = ws.data()[2]
    images, questions = test.images, test.questions
    base = bb.generate(images, questions, prefix=_NO_PREFIX, return_logits=True)

    zero_cfg = ws.config.adapter_config(prefix_len=0)
    zero = init_adapter_pair(D.COUNT, zero_cfg, seed=ws.config.seed)
    handles = [bb.hooks.register(bb.vision_site(l), zero.visual.hook(l)) for l in zero.visual.layers]
    out = bb.generate(images, questions, prefix=zero.prompt.prefix_tensor(), return_logits=True)
    for h in handles:
        h.remove()
    identity = out[0] == base[0] and out[1].tobytes() == base[1].tobytes()

    trained = ws.adapter(D.CHART)
    handles = [bb.hooks.register(bb.vision_site(l), trained.visual.hook(l)) for l in trained.visual.layers]
    hooked = bb.generate(images, questions, prefix=trained.prompt.prefix_tensor(), return_logits=True)
    for h in handles:
        h.remove()
    after = bb.generate(images, questions, prefix=_NO_PREFIX, return_logits=True)
    changed = hooked[1].tobytes() != base[1].tobytes()
    restored = after[0] == base[0] and after[1].tobytes() == base[1].tobytes()

    inline = bb.generate(
        images, questions, prefix=trained.prompt.prefix_tensor(), inline_adapter=trained.visual, return_logits=True
    )
    same_inline = inline[0] == hooked[0] and inline[1].tobytes() == hooked[1].tobytes()
    record(
        3,
        identity and changed and restored and same_inline,
        f"on {len(test)} test samples: zero adapters identical={identity}, remove restores={restored}, "
        f"inline == hooked={same_inline}",
    )


# ---------------------------------------------------------------- 4. main result


@pytest.mark.slow
def test_c04_main_result(desk):
    _, info = desk
    rows = info["main_rows"]
    base, catch = rows["Frozen baseline"], rows["CATCH (hard routing)"]
    gains = {d.name: catch[d.name] - base[d.name] for d in D.BUILTIN}
    mean_gain = catch["mean"] - base["mean"]
    secs = info["main_seconds"]
    ok = all(g > 0 for g in gains.values()) and mean_gain >= 0.05 and secs <= 1800
    per = ", ".join(f"{k} {pts(base[k])}->{pts(catch[k])}" for k in gains)
    record(4, ok, f"{per}; mean +{pts(mean_gain)} points (need >= 5.0); {secs / 60:.1f} min from scratch (limit 30)")


# ---------------------------------------------------------------- 5. routing


@pytest.fixture(scope="module")
def routing(desk):
    return H.run_routing(desk[0])


@pytest.mark.slow
def test_c05_routing_ordering(routing):
    m = {k: v["mean"] for k, v in routing["rows"].items()}
    hard, soft, cold = m["Hard (classifier)"], m["Soft (latent similarity)"], m["Soft (T->0)"]
    rand, enum = m["Random selection"], m["Random (enumeration)"]
    ok = hard >= soft >= rand and hard - rand >= 0.05 and abs(cold - hard) <= 0.001 and abs(rand - enum) <= 0.01
    record(
        5,
        ok,
        f"hard {pts(hard)} soft {pts(soft)} random {pts(rand)}; hard-random {pts(hard - rand)} (need >= 5.0); "
        f"|cold soft - hard| {pts(abs(cold - hard))} (limit 0.1); |random - enumeration| {pts(abs(rand - enum))} (limit 1.0)",
    )


# ---------------------------------------------------------------- 6. ablation


@pytest.mark.slow
def test_c06_ablation(desk):
    payload = H.run_ablation(desk[0])
    rows = payload["rows"]
    full = rows["Full Model"]

    def worst_drop(name):
        return max(full[d.name] - rows[name][d.name] for d in D.BUILTIN)

    drop_v, drop_p = worst_drop("w/o Visual Adapter"), worst_drop("w/o Prompt Adapter")
    fixed = rows["w/o Domain Classifier"]["mean"]
    footnote = bool(payload["footnotes"]) and "0.9" in payload["footnotes"][0]
    ok = drop_v >= 0.02 and drop_p >= 0.02 and fixed < full["mean"] and payload["hook_injection_bit_identical"] and footnote
    record(
        6,
        ok,
        f"largest drop w/o visual {pts(drop_v)}, w/o prompt {pts(drop_p)} (need >= 2.0 each); "
        f"fixed adapter mean {pts(fixed)} vs full {pts(full['mean'])}; "
        f"hook injection bit-identical={payload['hook_injection_bit_identical']}, footnote={footnote}",
    )


# ---------------------------------------------------------------- 7. cross-domain


@pytest.mark.slow
def test_c07_crossdomain(desk):
    rows = H.run_crossdomain(desk[0])["rows"]
    held, inside, chance = rows["Held-out (soft routing)"], rows["In-training (CATCH)"], rows["Random answer"]
    ok = all(chance[d.name] < held[d.name] < inside[d.name] for d in D.BUILTIN)
    per = ", ".join(f"{d.name} {pts(chance[d.name])} < {pts(held[d.name])} < {pts(inside[d.name])}" for d in D.BUILTIN)
    record(7, ok, per)


# ---------------------------------------------------------------- 8. metrics


def test_c08_metric_oracles():
    worst = 0.0
    for cand, ref in FIXTURES:
        worst = max(
            worst,
            abs(bleu(cand, ref) - oracle_bleu(cand, ref)),
            abs(rouge_l(cand, ref) - oracle_rouge(cand, ref)),
            abs(meteor_lite(cand, ref) - oracle_meteor(cand, ref)),
        )
    preds = [c for c, _ in FIXTURES]
    golds = [r if i % 3 else c for i, (c, r) in enumerate(FIXTURES)]  # some exact hits
    brute = sum(1 for p, g in zip(preds, golds) if list(p) == list(g)) / len(golds)
    worst = max(worst, abs(accuracy(preds, golds) - brute))
    hand = (
        round(bleu("a b c".split(), "a b c d".split()), 4) == 0.7165
        and rouge_l("a b c d".split(), "a c b d".split()) == 0.75
        and meteor_lite("b a".split(), "a b".split()) == 0.5
    )
    record(8, worst < 1e-9 and hand and len(FIXTURES) == 50, f"max deviation {worst:.1e} on 50 fixtures; hand fixtures exact={hand}")


# ---------------------------------------------------------------- 9. classifier


@pytest.mark.slow
def test_c09_classifier(desk):
    ws, _ = desk
    train, _, test = ws.data()
    c = ws.config
    t0 = time.perf_counter()
    clf = train_classifier(train, list(D.BUILTIN), epochs=c.classifier_epochs, lr=c.classifier_lr, seed=c.seed)
    took = time.perf_counter() - t0
    acc = classifier_accuracy(clf, test)
    record(9, acc >= 0.95 and took < 120, f"held-out accuracy {pts(acc)}% (need >= 95), trained in {took:.0f}s (limit 120s)")


# ---------------------------------------------------------------- 10. determinism


def test_c10_cli_determinism(tmp_path):
    out = tmp_path / "runs"
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps({**TINY, "output_dir": str(out)}))
    verbs = {"main": "main", "ablate": "ablation", "routing": "routing", "crossdomain": "crossdomain"}
    runs = []
    for _ in range(2):
        shutil.rmtree(out, ignore_errors=True)
        for verb in verbs:
            assert cli.main([verb, "--config", str(cfg)]) == 0
        runs.append({name: (out / "reports" / f"{name}.json").read_bytes() for name in verbs.values()})
    same = [name for name in verbs.values() if runs[0][name] == runs[1][name]]
    record(10, len(same) == len(verbs), f"{len(same)}/{len(verbs)} reports byte-identical across two from-scratch runs")
