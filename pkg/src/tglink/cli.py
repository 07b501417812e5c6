"""Command-line entry point: train, eval, ablate and synth runs.

Configuration comes from a flat key=value file plus repeatable
--override KEY=VALUE flags (flag wins over file). Every emitted report
embeds the fully resolved config, the code version, the PRNG algorithm and
the seed, so a report suffices to reproduce its run. Reruns with identical
config and seed produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

from . import __version__
from .errors import ConfigError
from .evalmetrics import bucketed_eval, evaluate
from .model import (Adam, MemoryState, ModelParams, TrainConfig, TrainStreams,
                    advance_memory, load_checkpoint, save_checkpoint, train_epoch)
from .numcore import Rng
from .synthgen import SynthSpec, generate, write_csv
from .tgraph import SplitSpec, chronological_split, load_events
from .ummu import UmmuConfig

SPLIT_POLICY = "event_count"

# variant display labels for the ablation table
ABLATION_ROWS = (
    ("UmmU", True, "full"),
    ("w/o U", True, "no_U"),
    ("w/o mmU", True, "no_mmU"),
    ("w/o m", True, "no_m"),
    ("disabled", False, "full"),
)


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_ratios(text):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"split_ratios needs three values, got {text!r}")
    return tuple(parts)


# key -> (parser, default)
KNOWN_KEYS = {
    "dataset": (str, "synth"),
    "split_ratios": (_parse_ratios, (0.1, 0.1, 0.8)),
    "embed_dim": (int, 100),
    "batch_size": (int, 200),
    "epochs": (int, 10),
    "learning_rate": (float, 1e-3),
    "dropout_rate": (float, 0.1),
    "time_dim": (int, 8),
    "seed": (int, 0),
    "k_neg": (int, 50),
    "n_buckets": (int, 10),
    "out_dir": (str, "runs/out"),
    "ummu.enabled": (_parse_bool, True),
    "ummu.alpha": (float, 1.0),
    "ummu.apply_prob": (float, 1.0),
    "ummu.sigma_floor": (float, 1e-5),
    "ummu.hook_layer": (str, "after_layer_1"),
    "ummu.variant": (str, "full"),
    "synth.n_src": (int, 200),
    "synth.n_dst": (int, 100),
    "synth.n_events": (int, 20_000),
    "synth.feature_dim": (int, 16),
    "synth.n_regimes": (int, 4),
    "synth.drift_rate": (float, 1.0),
    "synth.noise_std": (float, 0.1),
}


@dataclass
class RunConfig:
    """Fully resolved run settings; validated before any work starts."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def train_config(self):
        return TrainConfig(
            embed_dim=self["embed_dim"], batch_size=self["batch_size"],
            epochs=self["epochs"], learning_rate=self["learning_rate"],
            dropout_rate=self["dropout_rate"], seed=self["seed"],
            time_dim=self["time_dim"])

    def ummu_config(self):
        return UmmuConfig(
            alpha=self["ummu.alpha"], apply_prob=self["ummu.apply_prob"],
            sigma_floor=self["ummu.sigma_floor"], hook_layer=self["ummu.hook_layer"],
            enabled=self["ummu.enabled"], variant=self["ummu.variant"])

    def synth_spec(self):
        return SynthSpec(
            n_src=self["synth.n_src"], n_dst=self["synth.n_dst"],
            n_events=self["synth.n_events"], feature_dim=self["synth.feature_dim"],
            n_regimes=self["synth.n_regimes"], drift_rate=self["synth.drift_rate"],
            noise_std=self["synth.noise_std"], seed=self["seed"])

    def split_spec(self):
        return SplitSpec(self["split_ratios"])

    def validate(self):
        self.train_config()
        self.ummu_config()
        self.synth_spec()
        self.split_spec()
        if self["k_neg"] < 1 or self["n_buckets"] < 1:
            raise ConfigError("k_neg and n_buckets must be >= 1")

    def echo(self):
        """The reproducibility record embedded in every report."""
        out = {k: (list(v) if isinstance(v, tuple) else v)
               for k, v in sorted(self.values.items())}
        out["code_version"] = __version__
        out["rng_algorithm"] = Rng.algorithm
        out["split_policy"] = SPLIT_POLICY
        return out


def _parse_assignment(text, source):
    if "=" not in text:
        raise ConfigError(f"{source}: expected KEY=VALUE, got {text!r}")
    key, _, raw = text.partition("=")
    key, raw = key.strip(), raw.strip()
    if key not in KNOWN_KEYS:
        raise ConfigError(f"{source}: unknown config key {key!r}")
    parser, _ = KNOWN_KEYS[key]
    try:
        return key, parser(raw)
    except ValueError as exc:
        raise ConfigError(f"{source}: bad value for {key}: {exc}") from None


def load_config(config_path=None, overrides=(), seed=None, out_dir=None):
    """Resolve defaults < config file < --override flags < --seed/--out."""
    values = {k: default for k, (_, default) in KNOWN_KEYS.items()}
    if config_path is not None:
        with open(config_path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, value = _parse_assignment(line, f"{config_path}:{line_no}")
                values[key] = value
    for text in overrides:
        key, value = _parse_assignment(text, "--override")
        values[key] = value
    if seed is not None:
        values["seed"] = int(seed)
    if out_dir is not None:
        values["out_dir"] = str(out_dir)
    config = RunConfig(values)
    config.validate()
    return config


def _load_dataset(config):
    if config["dataset"] == "synth":
        return generate(config.synth_spec())
    return load_events(config["dataset"])


def _dump_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _train_run(config, stream, ummu_cfg):
    """Train on the train split; returns (best params, epoch history)."""
    train_cfg = config.train_config()
    train, val, _ = chronological_split(stream, config.split_spec())
    seed = config["seed"]
    params = ModelParams.init(Rng(seed).stream("init"), train_cfg.embed_dim,
                              stream.feature_dim, train_cfg.time_dim)
    optimizer = Adam(params, lr=train_cfg.learning_rate)
    streams = TrainStreams.for_seed(seed)
    best = (None, -1.0, None)  # (params, val_ap, epoch)
    history = []
    for epoch in range(train_cfg.epochs):
        memory = MemoryState.zeros(stream.n_src_nodes, stream.n_dst_nodes,
                                   train_cfg.embed_dim)
        mean_loss = train_epoch(params, memory, train, train_cfg, ummu_cfg,
                                streams, optimizer)
        record = {"epoch": epoch, "mean_loss": mean_loss,
                  "val_ap": None, "val_mrr": None}
        if len(val):
            val_memory = memory.copy()
            val_ap, val_mrr = evaluate(params, val_memory, val, config["k_neg"],
                                       Rng(seed).stream("val_negatives"),
                                       train_cfg.batch_size)
            record["val_ap"], record["val_mrr"] = val_ap, val_mrr
            if val_ap > best[1]:
                best = (params.copy(), val_ap, epoch)
        history.append(record)
    if best[0] is None:
        best = (params.copy(), None, None)
    return best[0], {"epochs": history, "best_epoch": best[2], "best_val_ap": best[1]}


def _eval_run(config, stream, params, variant):
    """Advance memory through train+val, then bucket-evaluate the test split."""
    train_cfg = config.train_config()
    train, val, test = chronological_split(stream, config.split_spec())
    memory = MemoryState.zeros(stream.n_src_nodes, stream.n_dst_nodes,
                               train_cfg.embed_dim)
    for part in (train, val):
        if len(part):
            advance_memory(params, memory, part, train_cfg.batch_size)
    return bucketed_eval(params, memory, test, config["n_buckets"], config["k_neg"],
                         Rng(config["seed"]).stream("eval_negatives"),
                         train_cfg.batch_size, config=config.echo(),
                         seed=config["seed"], variant=variant)


def cmd_synth(config):
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    stream = generate(config.synth_spec())
    csv_path = os.path.join(out_dir, "synth_data.csv")
    write_csv(stream, csv_path)
    sidecar = {"spec": config.synth_spec().to_dict(), "n_events": len(stream),
               "code_version": __version__, "rng_algorithm": Rng.algorithm}
    _dump_json(os.path.join(out_dir, "synth_data.json"), sidecar)
    return [csv_path, os.path.join(out_dir, "synth_data.json")]


def cmd_train(config):
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    stream = _load_dataset(config)
    params, log = _train_run(config, stream, config.ummu_config())
    checkpoint_path = os.path.join(out_dir, "checkpoint.bin")
    save_checkpoint(checkpoint_path, params, config.echo())
    log_path = os.path.join(out_dir, "training_log.json")
    _dump_json(log_path, {"config": config.echo(), "seed": config["seed"], **log})
    return [checkpoint_path, log_path]


def cmd_eval(config, checkpoint_path):
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    params, _ = load_checkpoint(checkpoint_path)
    stream = _load_dataset(config)
    want_dims = (config["embed_dim"], stream.feature_dim, config["time_dim"])
    if tuple(params.dims) != want_dims:
        raise ConfigError(
            f"checkpoint dims {tuple(params.dims)} incompatible with configured {want_dims}")
    report = _eval_run(config, stream, params, config["ummu.variant"])
    json_path = os.path.join(out_dir, "eval_report.json")
    csv_path = os.path.join(out_dir, "eval_buckets.csv")
    report.write_json(json_path)
    report.write_csv(csv_path)
    return [json_path, csv_path]


def cmd_ablate(config):
    """Train and evaluate all augmentation variants plus the disabled baseline.

    Every row uses the same seed, so initialization, batching, negatives and
    the evaluation candidate sets are shared; rows differ only in how the
    intermediate embeddings are transformed.
    """
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    stream = _load_dataset(config)
    reports = {}
    for label, enabled, variant in ABLATION_ROWS:
        ummu_cfg = UmmuConfig(
            alpha=config["ummu.alpha"], apply_prob=config["ummu.apply_prob"],
            sigma_floor=config["ummu.sigma_floor"], hook_layer=config["ummu.hook_layer"],
            enabled=enabled, variant=variant)
        params, _ = _train_run(config, stream, ummu_cfg)
        reports[label] = _eval_run(config, stream, params,
                                   variant if enabled else "disabled")

    n_buckets = config["n_buckets"]
    csv_path = os.path.join(out_dir, "ablation_table.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        header = ["variant", "ap", "mrr"]
        for b in range(n_buckets):
            header += [f"bucket_{b}_ap", f"bucket_{b}_mrr"]
        fh.write(",".join(header) + "\n")
        for label, _, _ in ABLATION_ROWS:
            report = reports[label]
            cells = [f'"{label}"', repr(report.ap), repr(report.mrr)]
            for row in report.per_bucket:
                cells.append("" if row.ap is None else repr(row.ap))
                cells.append("" if row.mrr is None else repr(row.mrr))
            fh.write(",".join(cells) + "\n")
    json_path = os.path.join(out_dir, "ablation_report.json")
    _dump_json(json_path, {
        "config": config.echo(), "seed": config["seed"],
        "variants": {label: reports[label].to_dict() for label, _, _ in ABLATION_ROWS},
    })
    return [csv_path, json_path]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tglink",
        description="continuous-time dynamic-graph link prediction runs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "eval", "ablate", "synth"):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", default=None, help="key=value config file")
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--out", default=None, help="output directory")
        cmd.add_argument("--override", action="append", default=[],
                         metavar="KEY=VALUE")
        if name == "eval":
            cmd.add_argument("--checkpoint", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.override, args.seed, args.out)
        if args.command == "synth":
            written = cmd_synth(config)
        elif args.command == "train":
            written = cmd_train(config)
        elif args.command == "eval":
            written = cmd_eval(config, args.checkpoint)
        else:
            written = cmd_ablate(config)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"tglink {args.command}: error: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
