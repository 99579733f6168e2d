import json
import shutil

import pytest

from catchvqa import cli
from catchvqa import domains as D
from catchvqa import harness as H
from catchvqa.errors import ConfigError, MissingArtifactError

TINY = dict(
    n_per_domain=20,
    pretrain_per_domain=20,
    backbone=dict(d_v=16, d_q=16, vision_layers=12, decoder_layers=1, heads=2, init_std=0.2),
    pretrain_epochs=1,
    pretrain_batch=16,
    classifier_epochs=15,
    classifier_lr=3e-3,
    adapter_epochs=1,
    adapter_lr=1e-2,
    layers=(4, 8),
    prefix_len=3,
    bottleneck=4,
    random_draws=3,
)


def tiny(tmp_path, **kw):
    return H.ExperimentConfig.from_dict({**TINY, "output_dir": str(tmp_path), **kw})


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    """One trained tiny workspace shared by the read-only experiment tests."""
    out = tmp_path_factory.mktemp("runs")
    ws = H.Workspace(tiny(out))
    ws.write_registry_manifest()
    return out


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        tiny(tmp_path, experiment="nope")
    with pytest.raises(ConfigError):
        tiny(tmp_path, policy="weird")
    with pytest.raises(ConfigError):
        tiny(tmp_path, temperature=0)
    with pytest.raises(ConfigError):
        H.ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        tiny(tmp_path, backbone={"d_v": 15})


def test_config_hash_tracks_every_field(tmp_path):
    base = tiny(tmp_path)
    assert base.config_hash() == tiny(tmp_path).config_hash()
    changes = dict(seed=1, prefix_len=4, layers=(2, 4), temperature=0.5, policy="soft", experiment="routing")
    hashes = {base.config_hash()}
    for k, v in changes.items():
        hashes.add(tiny(tmp_path, **{k: v}).config_hash())
    assert len(hashes) == len(changes) + 1


def test_unwritable_output_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ConfigError):
        H.Workspace(tiny(blocker / "sub"))


def test_missing_artifact_names_command(tmp_path):
    ws = H.Workspace(tiny(tmp_path), build=False)
    with pytest.raises(MissingArtifactError) as info:
        ws.backbone()
    assert info.value.command.startswith("catchvqa pretrain")
    with pytest.raises(MissingArtifactError) as info:
        ws.adapter(D.COUNT)
    assert info.value.command.startswith("catchvqa gen-data")
    H.Workspace(tiny(tmp_path)).data()
    with pytest.raises(MissingArtifactError) as info:
        H.Workspace(tiny(tmp_path), build=False).adapter(D.COUNT)
    assert info.value.command.startswith("catchvqa pretrain")


def test_artifacts_keyed_by_config(built):
    a = H.Workspace(tiny(built), build=False)
    b = H.Workspace(tiny(built, prefix_len=5), build=False)
    assert a.backbone_dir() == b.backbone_dir()
    assert a.adapter_dir(a.config.adapter_config()) != b.adapter_dir(b.config.adapter_config())
    assert (a.adapter_dir(a.config.adapter_config()) / "registry.json").exists()


def test_main_report(built):
    ws = H.Workspace(tiny(built), build=False)
    json_path, txt_path = H.emit_report(ws, "main", H.run_main(ws))
    rep = json.loads(json_path.read_text())
    assert set(rep["rows"]) == {"Frozen baseline", "CATCH (hard routing)"}
    for r in rep["reports"].values():
        assert len(r["per_domain"]) == 4
        assert all(len(m) == 5 for m in r["per_domain"].values())
    assert set(rep["artifacts"]) == {"dataset_manifest_sha256", "backbone", "classifier", "adapters"}
    txt = txt_path.read_text()
    assert rep["footer"]["config_hash"] in txt and rep["footer"]["build_id"] in txt
    # text and JSON agree value for value
    for label, row in rep["rows"].items():
        line = next(l for l in txt.splitlines() if l.startswith(label))
        for v in (row["count"], row["mean"]):
            assert f"{100 * v:.1f}" in line


def test_ablation_contracts(built):
    ws = H.Workspace(tiny(built), build=False)
    rep = H.run_ablation(ws)
    assert list(rep["rows"]) == [
        "Full Model",
        "w/o Prompt Adapter",
        "w/o Visual Adapter",
        "w/o Domain Classifier",
        "w/o Hook Injection",
    ]
    assert rep["hook_injection_bit_identical"]
    assert rep["rows"]["w/o Hook Injection"] == rep["rows"]["Full Model"]
    assert len(rep["routing_log"]["w/o Domain Classifier"]) == 1
    assert "0.9-1.2" in rep["footnotes"][0]


def test_routing_report(built):
    ws = H.Workspace(tiny(built), build=False)
    rep = H.run_routing(ws)
    assert {"Hard (classifier)", "Soft (latent similarity)", "Soft (T->0)", "Random selection", "Random (enumeration)"} == set(
        rep["rows"]
    )
    assert set(rep["accuracy_matrix"]) == {"count", "anomaly", "arith", "chart"}


def test_crossdomain_protocol(built):
    with pytest.raises(MissingArtifactError, match="catchvqa crossdomain"):
        H.run_crossdomain(H.Workspace(tiny(built), build=False))
    ws = H.Workspace(tiny(built))  # trains the three-domain classifiers
    rep = H.run_crossdomain(ws)
    assert [r["held_out"] for r in rep["runs"]] == ["count", "anomaly", "arith", "chart"]
    for r in rep["runs"]:
        assert r["held_out"] not in r["trained_on"] and len(r["trained_on"]) == 3
    assert rep["rows"]["Random answer"]["count"] == pytest.approx(0.1)


@pytest.mark.parametrize("what,n", [("layers", 4), ("prefix", 4)])
def test_sweeps(tmp_path, what, n):
    ws = H.Workspace(tiny(tmp_path, n_per_domain=8, adapter_epochs=1))
    rep = H.run_sweeps(ws, what)
    assert len(rep["rows"]) == n
    assert len(rep["artifacts"]["points"]) == n
    if what == "layers":
        assert "mid_ge_late" in rep
    else:
        assert rep["l10_gap_to_best"] >= 0 or "l=10" not in rep["rows"]


# ---------------------------------------------------------------- CLI


def write_cfg(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**{k: list(v) if isinstance(v, tuple) else v for k, v in TINY.items()}, **kw}))
    return str(path)


def test_cli_rerun_is_byte_identical(tmp_path, capsys):
    out = tmp_path / "runs"
    cfg = write_cfg(tmp_path)
    assert cli.main(["main", "--config", cfg, "--out", str(out)]) == 0
    first = (out / "reports" / "main.json").read_bytes()
    shutil.rmtree(out)
    assert cli.main(["main", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "reports" / "main.json").read_bytes() == first


def test_cli_missing_artifact_error_json(tmp_path, capsys):
    code = cli.main(["eval", "--config", write_cfg(tmp_path), "--out", str(tmp_path / "empty"), "--no-build"])
    err = json.loads(capsys.readouterr().err)
    assert code != 0
    assert err["error"] == "missing_artifact" and err["command"].startswith("catchvqa pretrain")
    assert "--config" in err["command"]


def test_cli_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"experiment": "main", "prefix_len": 10, "oops": 1}')
    assert cli.main(["main", "--config", str(bad), "--out", str(tmp_path)]) != 0
    assert json.loads(capsys.readouterr().err)["error"] == "config"


def test_cli_output_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(H.OUTPUT_ENV, str(tmp_path / "envout"))
    assert cli.main(["gen-data", "--config", write_cfg(tmp_path)]) == 0
    assert (tmp_path / "envout" / "data" / "manifest.json").exists()


def test_cli_sites(tmp_path, capsys):
    assert cli.main(["sites", "--config", write_cfg(tmp_path), "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("vision.block.1 ")


def test_cli_report(tmp_path, capsys):
    assert cli.main(["report", "--out", str(tmp_path)]) != 0
    capsys.readouterr()
    cfg = write_cfg(tmp_path)
    cli.main(["main", "--config", cfg, "--out", str(tmp_path)])
    capsys.readouterr()
    assert cli.main(["report", "--out", str(tmp_path)]) == 0
    assert "#### main" in capsys.readouterr().out
