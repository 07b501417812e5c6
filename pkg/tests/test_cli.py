import json

import numpy as np
import pytest

from tglink import cli, tgraph
from tglink.errors import ConfigError

TINY = [
    "dataset=synth",
    "synth.n_src=20", "synth.n_dst=10", "synth.n_events=400",
    "synth.feature_dim=4", "synth.n_regimes=2",
    "embed_dim=6", "batch_size=50", "epochs=2", "time_dim=4",
    "k_neg=10", "n_buckets=5", "dropout_rate=0.1",
]


def tiny_config(out_dir, extra=(), seed=3):
    return cli.load_config(overrides=TINY + list(extra), seed=seed, out_dir=str(out_dir))


# --------------------------------------------------------------------- config

def test_config_defaults_and_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nepochs = 7\nummu.alpha = 2.0\n\nseed = 5\n")
    config = cli.load_config(str(cfg_file), overrides=["epochs=9"], seed=11)
    assert config["epochs"] == 9            # override beats file
    assert config["seed"] == 11             # flag beats everything
    assert config["ummu.alpha"] == 2.0      # file beats default
    assert config["k_neg"] == 50            # default


def test_config_unknown_key_rejected(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("no_such_key = 1\n")
    with pytest.raises(ConfigError) as err:
        cli.load_config(str(cfg_file))
    assert "no_such_key" in str(err.value)
    with pytest.raises(ConfigError):
        cli.load_config(overrides=["bogus=1"])


def test_config_bad_value_rejected():
    with pytest.raises(ConfigError):
        cli.load_config(overrides=["epochs=three"])
    with pytest.raises(ConfigError):
        cli.load_config(overrides=["split_ratios=0.5,0.5"])
    with pytest.raises(ConfigError):
        cli.load_config(overrides=["dropout_rate=1.5"])


def test_config_echo_carries_provenance():
    config = cli.load_config(overrides=TINY, seed=1)
    echo = config.echo()
    assert echo["code_version"]
    assert echo["rng_algorithm"] == "pcg64"
    assert echo["split_policy"] == "event_count"
    assert echo["seed"] == 1


# ---------------------------------------------------------------------- synth

def test_cmd_synth_round_trip_and_sidecar(tmp_path):
    config = tiny_config(tmp_path / "out")
    csv_path, sidecar_path = cli.cmd_synth(config)
    loaded = tgraph.load_events(csv_path)
    assert len(loaded) == 400
    sidecar = json.loads(open(sidecar_path).read())
    assert sidecar["spec"]["seed"] == 3
    assert sidecar["n_events"] == 400


def test_cmd_synth_default_size_within_time_budget(tmp_path):
    import time

    config = cli.load_config(seed=1, out_dir=str(tmp_path / "out"))
    start = time.perf_counter()
    csv_path, _ = cli.cmd_synth(config)
    assert time.perf_counter() - start < 10.0
    assert len(tgraph.load_events(csv_path)) == 20_000


# ---------------------------------------------------------------------- train

def test_cmd_train_writes_log_and_checkpoint(tmp_path):
    config = tiny_config(tmp_path / "out")
    checkpoint_path, log_path = cli.cmd_train(config)
    log = json.loads(open(log_path).read())
    assert len(log["epochs"]) == 2
    assert all("mean_loss" in row and "val_ap" in row for row in log["epochs"])
    assert log["config"]["k_neg"] == 10
    from tglink.model import load_checkpoint

    params, echo = load_checkpoint(checkpoint_path)
    assert echo["seed"] == 3
    assert params.dims == (6, 4, 4)


def test_cmd_train_zero_epochs_gives_initial_checkpoint(tmp_path):
    config = tiny_config(tmp_path / "out", extra=["epochs=0"])
    checkpoint_path, log_path = cli.cmd_train(config)
    log = json.loads(open(log_path).read())
    assert log["epochs"] == []
    from tglink.model import ModelParams, load_checkpoint
    from tglink.numcore import Rng

    params, _ = load_checkpoint(checkpoint_path)
    fresh = ModelParams.init(Rng(3).stream("init"), 6, 4, 4)
    for name, tens in fresh.tensors.items():
        assert np.array_equal(params[name].data, tens.data)


def test_cmd_train_rerun_is_byte_identical(tmp_path):
    config = tiny_config(tmp_path / "out")
    first = {p: open(p, "rb").read() for p in cli.cmd_train(config)}
    second = {p: open(p, "rb").read() for p in cli.cmd_train(config)}
    assert first == second


# ----------------------------------------------------------------------- eval

def trained(tmp_path, extra=()):
    config = tiny_config(tmp_path / "out", extra=extra)
    checkpoint_path, _ = cli.cmd_train(config)
    return config, checkpoint_path


def test_cmd_eval_report_shape_and_echo(tmp_path):
    config, checkpoint = trained(tmp_path)
    json_path, csv_path = cli.cmd_eval(config, checkpoint)
    report = json.loads(open(json_path).read())
    assert report["config"]["k_neg"] == 10
    assert len(report["per_bucket"]) == 5
    lines = open(csv_path).read().strip().splitlines()
    assert len(lines) == 1 + 5 + 1  # header + n_buckets + overall
    assert sum(r["n_events"] for r in report["per_bucket"]) == 320  # 80% of 400


def test_cmd_eval_rerun_is_byte_identical(tmp_path):
    config, checkpoint = trained(tmp_path)
    first = {p: open(p, "rb").read() for p in cli.cmd_eval(config, checkpoint)}
    second = {p: open(p, "rb").read() for p in cli.cmd_eval(config, checkpoint)}
    assert first == second


def test_cmd_eval_rejects_dimension_mismatch(tmp_path):
    config, checkpoint = trained(tmp_path)
    other = cli.load_config(overrides=TINY + ["embed_dim=8"], seed=3,
                            out_dir=str(tmp_path / "other"))
    with pytest.raises(ConfigError):
        cli.cmd_eval(other, checkpoint)


# --------------------------------------------------------------------- ablate

def test_cmd_ablate_table_shape_and_labels(tmp_path):
    config = tiny_config(tmp_path / "out", extra=["epochs=1"])
    csv_path, json_path = cli.cmd_ablate(config)
    lines = open(csv_path).read().strip().splitlines()
    assert len(lines) == 6  # header + five variants
    labels = [line.split(",")[0].strip('"') for line in lines[1:]]
    assert labels == ["UmmU", "w/o U", "w/o mmU", "w/o m", "disabled"]
    report = json.loads(open(json_path).read())
    assert set(report["variants"]) == set(labels)
    for label in labels:
        row = report["variants"][label]
        assert np.isfinite(row["ap"]) and np.isfinite(row["mrr"])


def test_cmd_ablate_full_differs_from_disabled(tmp_path):
    config = tiny_config(tmp_path / "out", extra=["epochs=1"])
    _, json_path = cli.cmd_ablate(config)
    report = json.loads(open(json_path).read())
    full = report["variants"]["UmmU"]
    disabled = report["variants"]["disabled"]
    assert (full["ap"], full["mrr"]) != (disabled["ap"], disabled["mrr"])


# ----------------------------------------------------------------------- main

def test_main_success_and_exit_codes(tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(["synth", "--out", str(out), "--seed", "4",
                   "--override", "synth.n_events=50"])
    assert rc == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert len(printed) == 2 and printed[0].endswith("synth_data.csv")

    rc = cli.main(["train", "--out", str(out), "--override", "nonsense=1"])
    captured = capsys.readouterr()
    assert rc == 2
    assert "error" in captured.err and "\n" not in captured.err.strip()


def test_main_eval_requires_checkpoint(tmp_path, capsys):
    with pytest.raises(SystemExit):
        cli.main(["eval", "--out", str(tmp_path)])
    capsys.readouterr()
