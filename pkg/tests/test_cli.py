"""End-to-end tests of the command-line application."""

import csv
import json

import pytest

from src.main_app import COMMANDS, build_parser, main
from src.threshold_mask import load_profiles

TOY_FC = {
    "network": {
        "fixture": None,
        "layers": [{"kind": "fc", "c_in": 10, "c_out": 5}, {"kind": "fc", "c_out": 10}],
    },
    "storage": {"threshold_kinds": ["conv", "fc"], "n_max": 3},
}

TINY_TRAINING = {
    "seed": 3,
    "trainer": {"epochs": 1, "parent_epochs": 2, "finetune_epochs": 1, "batch_size": 50},
    "dataset": {"input_shape": [1, 6, 6], "samples_per_class": 25, "child_samples": 60},
}


@pytest.fixture
def run(tmp_path, out_dir):
    """Run the CLI with logs and results under tmp_path."""

    def _run(*args, out=None):
        argv = list(args) + ["--out", str(out or out_dir), "--log-dir", str(tmp_path / "logs")]
        return main(argv)

    return _run


def _write_config(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_parser_knows_every_command():
    parser = build_parser()
    for command in COMMANDS:
        assert parser.parse_args([command]).command == command
    assert main(["frobnicate"]) == 2


def test_toy_storage(run, tmp_path, out_dir):
    assert run("storage", "--config", _write_config(tmp_path, "toy.json", TOY_FC)) == 0
    rows = _rows(out_dir / "storage.csv")
    assert [r["n_children"] for r in rows] == ["1", "2", "3"]
    third = rows[2]
    assert (third["conventional_bytes"], third["mime_bytes"]) == ("800", "230")
    assert round(float(third["ratio"]), 3) == 3.478
    assert third["exceeds_n_times"] == "true"

    summary = json.loads((out_dir / "storage_summary.json").read_text())
    assert summary["n_weights"] == 100
    assert summary["n_thresholds"] == 5
    assert summary["config_sources"][-1] == "flags"


def test_vgg_storage(run, out_dir):
    assert run("storage") == 0
    rows = _rows(out_dir / "storage.csv")
    assert len(rows) == 8
    assert float(rows[2]["ratio"]) == pytest.approx(3.7868, abs=1e-4)


def test_energy_against_itself(run, out_dir):
    assert run("energy", "--cases", "case1") == 0
    with open(out_dir / "energy.csv", encoding="utf-8") as f:
        header = f.readline().strip()
    assert header == "layer,mode,case,E_DRAM,E_cache,E_reg,E_MAC,total,savings_vs_case1"
    rows = _rows(out_dir / "energy.csv")
    assert len(rows) == 2 * 9
    assert all(float(r["savings_vs_case1"]) == 1.0 for r in rows)


def test_energy_singular_mode(run, out_dir):
    assert run("energy", "--mode", "singular") == 0
    rows = _rows(out_dir / "energy.csv")
    assert {r["mode"] for r in rows} == {"singular"}
    conv2 = {r["case"]: float(r["savings_vs_case1"]) for r in rows if r["layer"] == "conv2"}
    assert conv2["case3"] == pytest.approx(2.326, abs=1e-3)
    assert conv2["case2"] < conv2["case3"]


def test_throughput(run, out_dir):
    assert run("throughput", "--mode", "singular", "--cases", "case3") == 0
    rows = {r["layer"]: r for r in _rows(out_dir / "throughput.csv")}
    assert float(rows["conv9"]["throughput_norm"]) == pytest.approx(2.816, abs=1e-3)


def test_ablate(run, out_dir):
    assert run("ablate") == 0
    ablation = _rows(out_dir / "ablation.csv")
    ratios = {(r["layer"], r["variant"]): float(r["ratio_vs_case_a"]) for r in ablation}
    assert all(ratio == 1.0 for (_, variant), ratio in ratios.items() if variant == "CaseA")
    assert ratios[("conv2", "CaseC")] == 1.0
    assert 1.0 < ratios[("conv9", "CaseC")] < ratios[("conv9", "CaseB")]
    assert {r["pe_count"] for r in ablation if r["variant"] == "CaseB"} == {"256"}
    pruned = {r["layer"]: r for r in _rows(out_dir / "pruned.csv")}
    assert float(pruned["conv2"]["mime_advantage"]) < 1.0
    assert float(pruned["conv4"]["mime_advantage"]) < 1.0


def test_fixture_sparsity_tables(run, out_dir):
    assert run("sparsity") == 0
    rows = _rows(out_dir / "sparsity.csv")
    assert {"task": "cifar10", "layer": "conv9", "sparsity": "0.6449"} in rows
    assert {"task": "cifar10", "layer": "conv15", "sparsity": "0.657"} in rows
    accuracy = _rows(out_dir / "accuracy.csv")
    assert accuracy[0] == {"task": "parent", "mode": "relu", "accuracy": "73.36"}
    assert len(_rows(out_dir / "sparsity_relu.csv")) == 33


def test_interpolated_energy_covers_every_conv(run, out_dir):
    assert run("energy", "--interpolate", "--mode", "pipelined", "--cases", "case3") == 0
    layers = [r["layer"] for r in _rows(out_dir / "energy.csv")]
    assert layers == [f"conv{k}" for k in range(1, 14)]


@pytest.mark.parametrize("doc,args", [
    (None, ["--pe", "0"]),
    ({"network": {"fixture": "resnet"}}, []),
    ({"schedule": {"tasks": ["cifar10", "svhn"]}}, []),
    ({"layers": ["conv1"]}, []),
])
def test_configuration_errors_exit_with_2(run, tmp_path, doc, args):
    if doc is not None:
        args = ["--config", _write_config(tmp_path, "bad.json", doc)] + args
    assert run("energy", *args) == 2


def test_measured_sparsity_without_profiles(run):
    assert run("energy", "--sparsity-source", "measured") == 2
    assert run("sparsity", "--sparsity-source", "measured") == 2


def test_malformed_case_token_exits_with_2(run):
    assert run("energy", "--cases", "pruned:abc") == 2


def test_logging_follows_config(tmp_path, out_dir, capsys):
    config = _write_config(tmp_path, "quiet.json", {
        "logging": {"dir": str(tmp_path / "cfglogs"), "level": "WARNING"},
    })
    assert main(["storage", "--config", config, "--out", str(out_dir)]) == 0
    log_file = tmp_path / "cfglogs" / "mime.log"
    assert "Running command 'storage'" in log_file.read_text()
    assert "Running command" not in capsys.readouterr().out

    assert main(["storage", "--config", config, "--out", str(out_dir),
                 "--log-dir", str(tmp_path / "flaglogs"), "--log-level", "INFO"]) == 0
    assert (tmp_path / "flaglogs" / "mime.log").exists()
    assert "Running command 'storage'" in capsys.readouterr().out


def test_config_error_is_logged_with_default_logging(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    config = _write_config(tmp_path, "bad.json", {"hardware": {"pe_count": 0}})
    assert main(["energy", "--config", config, "--out", str(tmp_path / "out")]) == 2
    assert "pe_count" in (tmp_path / "logs" / "mime_errors.log").read_text()


def test_saved_settings_repeat_the_run(run, tmp_path, out_dir):
    assert run("storage", "--config", _write_config(tmp_path, "toy.json", TOY_FC)) == 0
    saved = out_dir / "settings.yaml"
    second = tmp_path / "second"
    assert run("storage", "--config", str(saved), out=second) == 0
    assert (second / "storage.csv").read_text() == (out_dir / "storage.csv").read_text()


@pytest.mark.slow
def test_train_then_measure(run, tmp_path):
    config = _write_config(tmp_path, "tiny.json", TINY_TRAINING)
    first, second = tmp_path / "first", tmp_path / "second"
    assert run("train", "--config", config, out=first) == 0
    assert run("train", "--config", config, out=second) == 0

    checkpoint = first / "checkpoints" / "parent.json"
    assert checkpoint.read_bytes() == (second / "checkpoints" / "parent.json").read_bytes()
    assert (first / "thresholds" / "child2.json").exists()
    metrics = _rows(first / "metrics.csv")
    assert {"parent", "child2", "child3", "child2-finetuned", "child2-pruned"} <= {r["task"] for r in metrics}
    summary = json.loads((first / "train_summary.json").read_text())
    assert set(summary["children"]) == {"child2", "child3"}
    assert 0.0 <= summary["children"]["child3"]["pruned_accuracy"] <= 1.0

    profiles_path = first / "sparsity_profiles.json"
    energy_out = tmp_path / "energy"
    assert run("energy", "--sparsity-source", "measured", "--profiles", str(profiles_path), out=energy_out) == 0
    rows = _rows(energy_out / "energy.csv")
    assert {r["layer"] for r in rows} == {"conv1", "conv2", "fc1", "fc2"}

    measured_out = tmp_path / "measured"
    assert run("sparsity", "--config", config, "--sparsity-source", "measured",
               "--checkpoint", str(checkpoint), out=measured_out) == 0
    assert load_profiles(measured_out / "sparsity_profiles.json") == load_profiles(profiles_path)
    tasks = {r["task"] for r in _rows(measured_out / "sparsity.csv")}
    assert tasks == {"child2", "child2-relu", "child3", "child3-relu"}
