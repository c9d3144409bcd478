import csv
import json

import numpy as np
import pytest

from multiblank import cli
from multiblank.data import SynthConfig, save_dataset, synth_generate
from multiblank.loss import LossResult

SMALL_TRAIN = ["--steps", "20", "--synth-count", "30", "--synth-test-count", "8",
               "--train-batch-size", "4", "--hidden", "8", "--enc-dim", "8",
               "--embed-dim", "4", "--joint-dim", "8"]


def read_json(path):
    with open(path) as f:
        return json.load(f)


def strip_volatile(report):
    return {k: v for k, v in report.items() if k not in ("timestamp", "timing", "artifacts")}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("models")
    paths = {}
    for name, blanks, sigma in [("base", "1", "0"), ("multi", "1,2,4", "0.05")]:
        out = root / name
        code = cli.main(["train", "--blanks", blanks, "--sigma", sigma, "--out", str(out),
                         *SMALL_TRAIN])
        assert code == 0
        paths[name] = out / "checkpoint.json"
    return paths


def test_verify_small(tmp_path):
    code = cli.main(["verify", "--trials", "30", "--grad-trials", "5", "--out", str(tmp_path)])
    assert code == 0
    rep = read_json(tmp_path / "verify_report.json")
    assert rep["metrics"]["max_loss_deviation"] <= 1e-9
    assert rep["metrics"]["max_grad_relative_error"] <= 1e-4
    assert rep["metrics"]["passed"] is True


def test_verify_zero_trials(tmp_path):
    code = cli.main(["verify", "--trials", "0", "--grad-trials", "0", "--out", str(tmp_path)])
    assert code == 0
    assert read_json(tmp_path / "verify_report.json")["metrics"]["max_loss_deviation"] == 0.0


def test_verify_detects_corrupted_recursion(tmp_path, monkeypatch):
    real = cli.loss_and_grad

    def corrupted(z, labels, config):
        res = real(z, labels, config)
        return LossResult(res.loss + 1e-3, res.grad, res.lattices, res.occupancy)

    monkeypatch.setattr(cli, "loss_and_grad", corrupted)
    code = cli.main(["verify", "--trials", "5", "--grad-trials", "0", "--out", str(tmp_path)])
    assert code == cli.EXIT_FAILURE


def test_verify_cap(tmp_path):
    assert cli.main(["verify", "--max-T", "13", "--out", str(tmp_path)]) == cli.EXIT_USAGE


@pytest.mark.parametrize("blanks", ["2,4", "1,x", ""])
def test_bad_blanks(tmp_path, blanks):
    assert cli.main(["verify", "--blanks", blanks, "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_unknown_command():
    assert cli.main(["frobnicate"]) == cli.EXIT_USAGE


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"trials": 3, "grad_trials": 0, "seed": 9}))
    out = tmp_path / "out"
    assert cli.main(["verify", "--config", str(cfg), "--seed", "4", "--out", str(out)]) == 0
    rep = read_json(out / "verify_report.json")
    assert rep["config"]["trials"] == 3
    assert rep["config"]["seed"] == 4


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert cli.main(["verify", "--config", str(cfg)]) == cli.EXIT_USAGE


def test_missing_config_file(tmp_path):
    assert cli.main(["verify", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_IO


def test_train_outputs(trained):
    out = trained["multi"].parent
    rep = read_json(out / "train_report.json")
    assert rep["config"]["blank_set"] == [1, 2, 4]
    assert rep["config"]["sigma"] == 0.05
    assert len(rep["metrics"]["loss_curve"]) == 20
    with open(out / "loss_curve.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "loss"] and len(rows) == 21


def test_train_is_deterministic(tmp_path, trained):
    out = tmp_path / "again"
    assert cli.main(["train", "--blanks", "1,2,4", "--sigma", "0.05", "--out", str(out),
                     *SMALL_TRAIN]) == 0
    assert (out / "checkpoint.json").read_bytes() == trained["multi"].read_bytes()
    assert strip_volatile(read_json(out / "train_report.json"))["metrics"] == \
        strip_volatile(read_json(trained["multi"].parent / "train_report.json"))["metrics"]


def test_train_unreadable_data(tmp_path):
    assert cli.main(["train", "--data", str(tmp_path / "missing.jsonl"), "--out",
                     str(tmp_path)]) == cli.EXIT_IO


def test_train_from_file(tmp_path):
    data = tmp_path / "train.jsonl"
    save_dataset(synth_generate(SynthConfig(count=10, seed=3)), data)
    out = tmp_path / "o"
    assert cli.main(["train", "--data", str(data), "--test-data", str(data), "--out", str(out),
                     "--steps", "3", "--hidden", "4", "--enc-dim", "4", "--embed-dim", "2",
                     "--joint-dim", "4"]) == 0
    assert read_json(out / "train_report.json")["metrics"]["train_utterances"] == 10


def test_decode_batch_one_repeatable(tmp_path, trained):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["decode", "--checkpoint", str(trained["multi"]),
                         "--synth-test-count", "8", "--out", str(out)]) == 0
    assert (a / "decode.csv").read_bytes() == (b / "decode.csv").read_bytes()
    ra, rb = read_json(a / "decode_report.json"), read_json(b / "decode_report.json")
    assert strip_volatile(ra) == strip_volatile(rb)


def test_decode_baseline_steps(tmp_path, trained):
    out = tmp_path / "d"
    assert cli.main(["decode", "--checkpoint", str(trained["base"]), "--synth-test-count", "8",
                     "--max-symbols", "100", "--out", str(out)]) == 0
    with open(out / "decode.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    for row in rows:
        n_tokens = len(row["hypothesis"].split())
        assert int(row["steps"]) == int(row["frames"]) + n_tokens


def test_decode_batched(tmp_path, trained):
    out = tmp_path / "d4"
    assert cli.main(["decode", "--checkpoint", str(trained["multi"]), "--synth-test-count", "8",
                     "--batch-size", "4", "--out", str(out)]) == 0
    rep = read_json(out / "decode_report.json")
    assert rep["config"]["batch_size"] == 4
    assert rep["metrics"]["utterances"] == 8


def test_decode_dim_mismatch(tmp_path, trained):
    data = tmp_path / "wide.jsonl"
    save_dataset(synth_generate(SynthConfig(V=8, F=10, count=2)), data)
    assert cli.main(["decode", "--checkpoint", str(trained["multi"]), "--data", str(data),
                     "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_decode_missing_checkpoint(tmp_path):
    assert cli.main(["decode", "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_bench(tmp_path, trained):
    out = tmp_path / "bench"
    assert cli.main(["bench", "--baseline", str(trained["base"]), "--candidate",
                     str(trained["multi"]), "--synth-test-count", "8", "--out", str(out)]) == 0
    rep = read_json(out / "bench_report.json")
    m = rep["metrics"]
    assert m["step_speedup_pct"] == pytest.approx(
        (m["baseline_steps"] / m["candidate_steps"] - 1) * 100)
    assert "baseline_seconds" in rep["timing"]
    with open(out / "bench.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["metric", "baseline", "candidate"]
    assert rows[1][0] == "total_steps"


def test_bench_identical_is_zero(tmp_path, trained):
    out = tmp_path / "same"
    assert cli.main(["bench", "--baseline", str(trained["multi"]), "--candidate",
                     str(trained["multi"]), "--synth-test-count", "5", "--out", str(out)]) == 0
    assert read_json(out / "bench_report.json")["metrics"]["step_speedup_pct"] == 0.0


def test_bench_vocab_mismatch(tmp_path, trained):
    other = tmp_path / "v5"
    assert cli.main(["train", "--vocab", "5", "--out", str(other), *SMALL_TRAIN]) == 0
    assert cli.main(["bench", "--baseline", str(trained["base"]), "--candidate",
                     str(other / "checkpoint.json"), "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_emissions(tmp_path, trained):
    out = tmp_path / "em"
    assert cli.main(["emissions", "--checkpoint", str(trained["base"]), "--synth-test-count", "8",
                     "--out", str(out)]) == 0
    with open(out / "emissions.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["kind", "count"]
    assert [r[0] for r in rows[1:]] == ["label", "blank_1"]
    rep = read_json(out / "emissions_report.json")
    assert rep["metrics"]["total"] == rep["metrics"]["total_steps"]
    assert (out / "emissions.csv").read_bytes().endswith(b"\n")
    assert b"\r" not in (out / "emissions.csv").read_bytes()


def test_report_rejects_non_finite():
    with pytest.raises(ValueError):
        cli.make_report("x", {}, {"a": [1.0, float("nan")]})


def test_relative_error_floor():
    assert cli.relative_error(np.array([0.0]), np.array([1e-9]))[0] == pytest.approx(1e-3)
