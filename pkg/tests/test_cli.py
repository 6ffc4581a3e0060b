import csv
import json

import numpy as np
import pytest

from lrmoe.cli import main
from lrmoe.model import MoeModel, deserialize, serialize

FAST = ["--epochs-e2e", "10", "--epochs-gate", "5"]


@pytest.fixture
def toy(tmp_path):
    assert main(["toy", "--out", str(tmp_path)]) == 0
    enc = tmp_path / "enc"
    rc = main(["encode", "--log", str(tmp_path / "toy_log.csv"), "--schema", str(tmp_path / "toy_schema.json"),
               "--out", str(enc)])
    assert rc == 0
    return tmp_path, enc


def _model(path):
    return deserialize(path.read_text())


def test_toy_pipeline(toy, capsys):
    root, enc = toy
    for name in ("dictionary.json", "train.csv", "valid.csv", "test.csv", "manifest_encode.json"):
        assert (enc / name).exists()
    assert main(["train", "--data", str(enc), *FAST]) == 0
    for name in ("model.json", "train_report.csv", "manifest_train.json"):
        assert (enc / name).exists()
    capsys.readouterr()
    assert main(["evaluate", "--model", str(enc / "model.json"), "--data", str(enc)]) == 0
    out = capsys.readouterr().out
    assert "AUC" in out and "complexity" in out
    manifest = json.loads((enc / "manifest_train.json").read_text())
    assert manifest["config"]["m"] == 6 and manifest["config"]["lambda_r"] == 0.1


def test_sparsity_and_baseline_shapes(toy):
    _, enc = toy
    assert main(["train", "--data", str(enc), "--out", str(enc / "a"), "--m", "2", "--ktop", "2", *FAST]) == 0
    m = _model(enc / "a" / "model.json")
    assert m.m == 2
    assert np.count_nonzero(np.any(m.gate_weights != 0, axis=0)) <= 2
    assert all(np.count_nonzero(w) <= 2 for w in m.expert_weights)
    assert main(["train", "--data", str(enc), "--out", str(enc / "b"), "--m", "1", "--ktop", "ALL",
                 "--lambda-r", "0", *FAST]) == 0
    b = _model(enc / "b" / "model.json")
    assert b.m == 1 and b.gate_weights.shape == (1, b.d)


def test_same_seed_byte_identical(toy):
    _, enc = toy
    for sub in ("r1", "r2"):
        assert main(["train", "--data", str(enc), "--out", str(enc / sub), "--seed", "7", *FAST]) == 0
    assert (enc / "r1" / "model.json").read_bytes() == (enc / "r2" / "model.json").read_bytes()
    assert (enc / "r1" / "train_report.csv").read_bytes() == (enc / "r2" / "train_report.csv").read_bytes()


def test_env_override_and_flag_precedence(toy, monkeypatch):
    _, enc = toy
    monkeypatch.setenv("LRMOE_M", "3")
    assert main(["train", "--data", str(enc), "--out", str(enc / "e"), *FAST]) == 0
    assert _model(enc / "e" / "model.json").m == 3
    assert main(["train", "--data", str(enc), "--out", str(enc / "f"), "--m", "2", *FAST]) == 0
    assert _model(enc / "f" / "model.json").m == 2


def test_config_file(toy, tmp_path):
    _, enc = toy
    cfg = tmp_path / "cfg.toml"
    cfg.write_text('m = 2\nk_top = "ALL"\nepochs_e2e = 3\nepochs_gate = 1\n')
    assert main(["train", "--data", str(enc), "--out", str(enc / "c"), "--config", str(cfg)]) == 0
    assert _model(enc / "c" / "model.json").m == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"m": 2, "momentum": 0.9}')
    assert main(["train", "--data", str(enc), "--config", str(bad)]) == 2


def test_replay_reproduces(toy):
    _, enc = toy
    out = enc / "rp"
    assert main(["train", "--data", str(enc), "--out", str(out), *FAST]) == 0
    first = (out / "model.json").read_bytes()
    (out / "model.json").unlink()
    assert main(["replay", str(out / "manifest_train.json")]) == 0
    assert (out / "model.json").read_bytes() == first


def test_malformed_schema_exit_2(toy, tmp_path, capsys):
    root, _ = toy
    schema = json.loads((root / "toy_schema.json").read_text())
    cols = schema.get("columns", schema)
    ts = next(k for k, v in cols.items() if v == "timestamp")
    cols.pop(ts)
    (tmp_path / "bad_schema.json").write_text(json.dumps(schema))
    rc = main(["encode", "--log", str(root / "toy_log.csv"), "--schema", str(tmp_path / "bad_schema.json"),
               "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "timestamp" in capsys.readouterr().err


def test_empty_log_exit_3(toy, tmp_path):
    root, _ = toy
    header = (root / "toy_log.csv").read_text().splitlines()[0]
    (tmp_path / "empty.csv").write_text(header + "\n")
    rc = main(["encode", "--log", str(tmp_path / "empty.csv"), "--schema", str(root / "toy_schema.json"),
               "--out", str(tmp_path / "x")])
    assert rc == 3


def test_divergence_exit_4(toy):
    _, enc = toy
    rc = main(["train", "--data", str(enc), "--out", str(enc / "d"), "--lr-experts", "1e308",
               "--lr-gate", "1e308", "--lambda-r", "0", *FAST])
    assert rc == 4


def test_dimension_mismatch_exit_5(toy):
    _, enc = toy
    assert main(["train", "--data", str(enc), *FAST]) == 0
    model = _model(enc / "model.json")
    rc = main(["predict", "--model", str(enc / "model.json"), "--values", ",".join(["0"] * (model.d + 1))])
    assert rc == 5


def test_predict_zero_model(tmp_path, capsys):
    zero = MoeModel(np.zeros((2, 3)), np.zeros(2), np.zeros((2, 3)), np.zeros(2))
    (tmp_path / "zero.json").write_text(serialize(zero))
    assert main(["predict", "--model", str(tmp_path / "zero.json"), "--values", "0,0,0"]) == 0
    out = capsys.readouterr().out
    assert "probability      0.500000" in out and "selected expert  0" in out


def test_predict_from_log(toy, capsys):
    root, enc = toy
    assert main(["train", "--data", str(enc), *FAST]) == 0
    rc = main(["predict", "--model", str(enc / "model.json"), "--log", str(root / "toy_log.csv"),
               "--schema", str(root / "toy_schema.json"), "--dictionary", str(enc / "dictionary.json"),
               "--case", "case00", "--prefix-len", "2"])
    assert rc == 0
    assert "probability" in capsys.readouterr().out


def test_compare_csv(toy):
    _, enc = toy
    assert main(["compare", "--data", str(enc), "--dataset", "toy", "--m", "2", "--ktop", "4", *FAST]) == 0
    with open(enc / "comparison.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["MoE", "1-LR"]
    assert rows[1]["m"] == "1" and rows[1]["k_top"] == "ALL"


@pytest.mark.parametrize("fmt", ["md", "json", "csv"])
def test_explain_formats(toy, fmt):
    _, enc = toy
    assert main(["train", "--data", str(enc), "--m", "2", "--ktop", "3", *FAST]) == 0
    out = enc / f"expl.{fmt}"
    args = ["explain", "--model", str(enc / "model.json"), "--format", fmt, "--out", str(out)]
    assert main(args) == 0
    text = out.read_text()
    if fmt == "json":
        assert len(json.loads(text)["experts"]) == 2
    elif fmt == "csv":
        assert text.startswith("role,index,feature,weight")
    else:
        assert "## Experts" in text and "## Gate" in text
    assert main(args[:3] + ["--dictionary", str(enc / "dictionary.json"), "--raw-units", "--out", str(out)]) == 0
