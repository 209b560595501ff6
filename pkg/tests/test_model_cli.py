from __future__ import annotations

import json

import numpy as np
import pytest

from ftconv.cli import main
from ftconv.errors import ConfigError, WeightFileError
from ftconv.faults import CorpusEntry, FaultSpec, GroundTruth
from ftconv.harness import (
    CORRECTION_STAGES,
    generate_corpus,
    run_baseline,
    run_campaign,
    run_protected,
)
from ftconv.model import (
    LayerConfig,
    ModelConfig,
    build_model,
    decode_weights,
    demo_config,
    encode_weights,
    load_model,
    random_weights,
    save_config,
    save_weights,
)
from ftconv.workflow import LayerPlan, save_plans


def test_weights_roundtrip_bit_identical(tmp_path):
    cfg = demo_config()
    w = random_weights(cfg, 1)
    save_config(tmp_path / "m.json", cfg)
    save_weights(tmp_path / "m.bin", w)
    m = load_model(tmp_path / "m.json", tmp_path / "m.bin")
    for (W, B), layer in zip(w, m.layers):
        assert layer.W.tobytes() == W.tobytes()
        assert (B is None and layer.B is None) or layer.B.tobytes() == B.tobytes()
    assert (tmp_path / "m.bin").read_bytes()[:4] == b"FTCN"


def test_truncated_weights_name_expected_size():
    buf = encode_weights(random_weights(demo_config(), 1))
    with pytest.raises(WeightFileError, match=f"expected {len(buf)} bytes"):
        decode_weights(buf[:-3])
    with pytest.raises(WeightFileError, match="header needs"):
        decode_weights(buf[:10])
    with pytest.raises(WeightFileError, match="magic"):
        decode_weights(b"XXXX" + buf[4:])


def test_weights_must_match_config():
    cfg = demo_config()
    w = random_weights(cfg, 1)
    with pytest.raises(WeightFileError):
        build_model(cfg, w[:2])
    W, B = w[0]
    with pytest.raises(WeightFileError):
        build_model(cfg, [(W[:-1], B[:-1])] + w[1:])
    bad = W.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(WeightFileError):
        build_model(cfg, [(bad, B)] + w[1:])


def test_config_validation():
    with pytest.raises(ConfigError):
        LayerConfig("x", N=1, Ch=1, H=5, M=1, R=2, U=2, pad=0)
    with pytest.raises(ConfigError):
        LayerConfig("x", N=1, Ch=3, H=5, M=4, R=3, G=2)
    a = LayerConfig("a", 1, 1, 8, 4, 3)
    with pytest.raises(ConfigError):
        ModelConfig((a, LayerConfig("b", 1, 4, 8, 4, 3)))
    with pytest.raises(ConfigError):
        ModelConfig.from_json({"layers": [{"name": "a", "bogus": 1}]})
    cfg = demo_config()
    assert ModelConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg


def test_protected_clean_equals_baseline(demo_model):
    D = demo_model.make_input(0)
    base = run_baseline(demo_model, D)
    prot = run_protected(demo_model, D)
    np.testing.assert_array_equal(base.output, prot.output)
    for a, b in zip(base.layer_outputs, prot.layer_outputs):
        np.testing.assert_array_equal(a, b)
    assert all(not r.detected for r in prot.reports)


def test_campaign_report_reconciles(demo_model):
    corpus = generate_corpus(demo_model, 60, seed=2)
    rep = run_campaign(demo_model, corpus, seed=2)
    s = rep.summary()
    assert s["entries"] == 60 == s["above_threshold"] + s["benign"]
    assert s["detection_rate"] == 1.0 and s["recovery_rate"] == 1.0
    assert sum(s["stage_counts"].values()) == s["detected"]
    assert set(s["stage_counts"]) == set(CORRECTION_STAGES)
    assert sum(s["stage_distribution"].values()) == pytest.approx(1.0)
    assert sum(s["by_target"].values()) == 60
    assert rep.ok and s["failures"] == []


def test_campaign_rejects_mismatched_corpus(demo_model):
    bad = CorpusEntry(0, FaultSpec(7, "output_block", i=0, j=0), GroundTruth("block", [(0, 0)]))
    with pytest.raises(ConfigError):
        run_campaign(demo_model, [bad])


# ---------------------------------------------------------------- CLI

@pytest.fixture()
def files(tmp_path):
    cfg, w = tmp_path / "m.json", tmp_path / "m.bin"
    assert main(["init-model", "--config", str(cfg), "--weights", str(w), "--seed", "3"]) == 0
    return tmp_path, str(cfg), str(w)


def test_cli_baseline_and_protected(files, capsys):
    tmp, cfg, w = files
    args = ["--config", cfg, "--weights", w, "--seed", "4"]
    assert main(["run", "--mode", "baseline", *args, "--output", str(tmp / "b.npy")]) == 0
    assert main(["run", "--mode", "protected", *args, "--output", str(tmp / "p.npy"),
                 "--json", str(tmp / "p.json")]) == 0
    np.testing.assert_array_equal(np.load(tmp / "b.npy"), np.load(tmp / "p.npy"))
    doc = json.loads((tmp / "p.json").read_text())
    assert [l["resolving_stage"] for l in doc["layers"]] == ["none"] * 3
    assert "mode: protected" in capsys.readouterr().out


def test_cli_campaign(files, capsys):
    tmp, cfg, w = files
    corpus = str(tmp / "c.jsonl")
    assert main(["corpus", "--config", cfg, "--weights", w, "--runs", "40", "--seed", "1", "--output", corpus]) == 0
    rc = main(["run", "--mode", "campaign", "--config", cfg, "--weights", w, "--corpus", corpus,
               "--seed", "1", "--json", str(tmp / "r.json")])
    assert rc == 0
    s = json.loads((tmp / "r.json").read_text())["summary"]
    assert s["entries"] == 40 and s["detection_rate"] == 1.0


def test_cli_profile_then_protected(files):
    tmp, cfg, w = files
    plan = str(tmp / "plan.json")
    assert main(["run", "--mode", "profile", "--config", cfg, "--weights", w, "--plan", plan, "--reps", "3"]) == 0
    plans = json.loads((tmp / "plan.json").read_text())
    assert set(plans) == {"conv1", "conv2", "conv3"}
    # flip one flag by hand and check the protected run honours it
    plans["conv2"]["rc_enabled"] = not plans["conv2"]["rc_enabled"]
    (tmp / "plan.json").write_text(json.dumps(plans))
    assert main(["run", "--mode", "protected", "--config", cfg, "--weights", w, "--plan", plan,
                 "--json", str(tmp / "p.json")]) == 0
    layers = json.loads((tmp / "p.json").read_text())["layers"]
    assert [l["rc_enabled"] for l in layers] == [plans[n]["rc_enabled"] for n in ("conv1", "conv2", "conv3")]


def test_cli_exit_codes(files, tmp_path, capsys):
    tmp, cfg, w = files
    assert main(["run", "--mode", "baseline", "--config", str(tmp / "none.json"), "--weights", w]) == 3
    (tmp / "trunc.bin").write_bytes(open(w, "rb").read()[:30])
    assert main(["run", "--mode", "baseline", "--config", cfg, "--weights", str(tmp / "trunc.bin")]) == 3
    assert main(["run", "--mode", "campaign", "--config", cfg, "--weights", w]) == 2
    bad = tmp / "bad.json"
    bad.write_text(json.dumps({"layers": [{"name": "a", "N": 1, "Ch": 1, "H": 5, "M": 1, "R": 2, "U": 2}]}))
    assert main(["run", "--mode", "baseline", "--config", str(bad), "--weights", w]) == 2
    save_plans(tmp / "plan.json", {"nope": LayerPlan()})
    assert main(["run", "--mode", "protected", "--config", cfg, "--weights", w, "--plan", str(tmp / "plan.json")]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_integrity_exit_code(files, monkeypatch):
    import ftconv.workflow as wf

    tmp, cfg, w = files
    real = wf.conv_forward

    def broken(*a, **k):
        O = real(*a, **k)
        O[0, :, 0, 0] += 2.0
        O[:, 0, 1, 1] += 3.0
        return O

    monkeypatch.setattr(wf, "conv_forward", broken)
    assert main(["run", "--mode", "protected", "--config", cfg, "--weights", w]) == 4


def test_cli_deterministic_outputs(files):
    tmp, cfg, w = files
    out = []
    for k in range(2):
        c, r = tmp / f"c{k}.jsonl", tmp / f"r{k}.json"
        main(["corpus", "--config", cfg, "--weights", w, "--runs", "30", "--seed", "9", "--output", str(c)])
        main(["run", "--mode", "campaign", "--config", cfg, "--weights", w, "--corpus", str(c),
              "--seed", "9", "--json", str(r)])
        out.append((c.read_bytes(), r.read_bytes()))
    assert out[0] == out[1]
