import numpy as np
import pytest

from avisam import io
from avisam.cli import run_cli

MINI_CONFIG = """\
[model]
n_filters = 8
d_emb = 8
hidden = 8
n_blocks = 1

[train]
lr_max = 0.001
warmup_n = 2
batch_size = 2
max_epochs = 2
"""


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    for name, seed, n in (("train", 1, 4), ("val", 2, 2), ("test", 3, 3)):
        assert run_cli(["simulate", "--out", str(root / name), "--n", str(n), "--duration", "0.5",
                        "--seed", str(seed)]) == 0
    (root / "mini.ini").write_text(MINI_CONFIG)
    return root


def test_simulate_writes_consistent_files(dataset):
    recs = list(io.iter_manifest(dataset / "test" / "manifest.jsonl"))
    assert len(recs) == 3
    rec = recs[0]
    mix = io.read_wav(dataset / "test" / rec["mixture"])
    srcs = [io.read_wav(dataset / "test" / s) for s in rec["sources"]]
    assert len(mix) == 8000
    # 16-bit quantization of each file bounds the sum identity error
    assert np.max(np.abs(mix - sum(srcs))) <= 3 / 32768
    assert io.read_visual(dataset / "test" / rec["visuals"][0]).frames.shape == (13, 12)


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("AVISAM_SEED", "5")
    assert run_cli(["simulate", "--out", str(tmp_path / "a"), "--n", "1", "--duration", "0.5"]) == 0
    assert run_cli(["simulate", "--out", str(tmp_path / "b"), "--n", "1", "--duration", "0.5", "--seed", "5"]) == 0
    assert (tmp_path / "a" / "s00000_mix.wav").read_bytes() == (tmp_path / "b" / "s00000_mix.wav").read_bytes()
    monkeypatch.setenv("AVISAM_SEED", "abc")
    assert run_cli(["simulate", "--out", str(tmp_path / "c"), "--n", "1"]) == 2


def test_simulate_train_eval_extract(dataset, tmp_path, capsys):
    ckpt = tmp_path / "model.ckpt"
    assert run_cli(["train", "--config", str(dataset / "mini.ini"), "--out", str(ckpt),
                    "--train", str(dataset / "train" / "manifest.jsonl"),
                    "--val", str(dataset / "val" / "manifest.jsonl")]) == 0
    assert ckpt.exists() and (tmp_path / "model.ckpt.ini").exists()
    assert len(io.read_table(str(ckpt) + ".history.csv")) == 2

    table = tmp_path / "metrics.csv"
    assert run_cli(["eval", "--model", str(ckpt), "--manifest", str(dataset / "test" / "manifest.jsonl"),
                    "--out", str(table)]) == 0
    rows = io.read_table(table)
    assert len(rows) == 3 * 2
    assert {(r["sample_id"], r["visibility_mode"]) for r in rows} == {
        (f"s{i:05d}", m) for i in range(3) for m in ("1-spk", "2-spk")}
    assert "2-spk" in capsys.readouterr().out

    rec = next(io.iter_manifest(dataset / "test" / "manifest.jsonl"))
    base = dataset / "test"
    assert run_cli(["extract", "--model", str(ckpt), "--mixture", str(base / rec["mixture"]),
                    "--visual", str(base / rec["visuals"][0]), "--visual", str(base / rec["visuals"][1]),
                    "--out", str(tmp_path / "ex")]) == 0
    assert len(io.read_wav(tmp_path / "ex" / "speaker1.wav")) == 8000


def test_errors_are_single_line(tmp_path, capsys):
    code = run_cli(["eval", "--model", str(tmp_path / "missing.ckpt"), "--manifest", "x.jsonl"])
    err = capsys.readouterr().err
    assert code != 0
    assert err.startswith("error: ") and err.count("\n") == 1


def test_usage_error_exit_code(capsys):
    assert run_cli(["frobnicate"]) == 2
    assert capsys.readouterr().err.startswith("error: usage:")


def test_bad_config_section(tmp_path, dataset):
    (tmp_path / "c.ini").write_text("[optimizer]\nlr = 1\n")
    assert run_cli(["train", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "m.ckpt"),
                    "--train", str(dataset / "train" / "manifest.jsonl"),
                    "--val", str(dataset / "val" / "manifest.jsonl")]) == 2
