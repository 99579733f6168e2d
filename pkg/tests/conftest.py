import re

import numpy as np
import pytest

from catchvqa import synthdata as S
from catchvqa.adapters import AdapterConfig
from catchvqa.backbone import Backbone, BackboneConfig

SMALL = BackboneConfig(d_v=16, d_q=16, vision_layers=4, decoder_layers=1, heads=2, init_std=0.2)
SMALL_ADAPTER = AdapterConfig(prefix_len=3, d_q=16, d_v=16, bottleneck=4, layers=(2, 4), init_std=0.2)


@pytest.fixture(scope="session")
def tiny_data():
    return S.gen_dataset(n_per_domain=30, seed=11)


@pytest.fixture
def small_backbone():
    bb = Backbone(SMALL, seed=5)
    bb.freeze()
    return bb


def randomize(pair, seed=0, scale=0.3):
    """Give every adapter parameter a nonzero value (W2 starts at zero)."""
    rng = np.random.default_rng(seed)
    for p in pair.params:
        p.assign(rng.normal(0.0, scale, size=p.shape))
    return pair


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE = {}  # criterion number -> (title, passed, detail)
ACCEPTANCE_TITLES = {
    1: "adapter gradients match central differences",
    2: "backbone and classifier bit-identical across the adapter campaign",
    3: "hook identity and reversibility",
    4: "routed adapters beat the frozen baseline on every domain",
    5: "routing ordering hard >= soft >= random",
    6: "ablation directions",
    7: "held-out domains between random answer and in-training score",
    8: "metrics match brute-force oracles",
    9: "domain classifier held-out accuracy",
    10: "CLI reruns give byte-identical JSON reports",
}


def record(n, passed, detail):
    ACCEPTANCE[n] = (ACCEPTANCE_TITLES[n], bool(passed), detail)
    assert passed, f"criterion {n}: {detail}"


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that was run (tests are named test_cNN_*)."""
    seen = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = re.search(r"test_acceptance\.py::test_c(\d+)_", getattr(rep, "nodeid", ""))
            if m and rep.when == "call" or (m and outcome == "error"):
                seen[int(m.group(1))] = outcome
    if not seen:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(seen):
        title = ACCEPTANCE_TITLES[n]
        if n in ACCEPTANCE:
            _, ok, detail = ACCEPTANCE[n]
            ok = ok and seen[n] == "passed"
        else:
            ok, detail = False, f"{seen[n]} before a result was recorded"
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
