"""Experiment suites, seed aggregation, and configuration plumbing.

The three suites mirror the offline comparisons the framework is built
around: sample-transfer settings, adaptive-distillation ablations, and
one-time versus continual transfer across refresh checkpoints.  Every suite
runs each configuration over a seed list and reports per-seed rows plus
mean and standard error aggregates.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace

import numpy as np
import yaml

from .datagen import DataConfig
from .metrics import MetricsRow
from .trainer import TrainConfig, run_experiment

SUITES = ("sample_transfer", "adaptive_ablation", "transfer_setting")

# Desk benchmark: small enough that a full suite runs in minutes, large
# enough that the orderings are stable across seeds.
BENCHMARK_DATA = DataConfig(
    n_users=600,
    n_items=400,
    latent_dim=8,
    seq_len=10,
    target_user_frac=0.20,
    target_item_frac=0.15,
    target_window_records=1500,
    source_target_ratio=20.0,
    drift_angle=0.15,
)

BENCHMARK_TRAIN = TrainConfig(
    batch_size=256,
    window_count=4,
    delta_t_windows=2,
    embed_dim=16,
    tower=(64, 32),
)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    data: DataConfig
    train: TrainConfig


@dataclass(frozen=True)
class AggregateRow:
    experiment: str
    checkpoint: str
    mean_auc: float
    stderr_auc: float
    n_seeds: int


def suite_specs(kind: str, data: DataConfig, train: TrainConfig) -> list:
    if kind == "sample_transfer":
        return [
            ExperimentSpec(mode, data, replace(train, sample_mode=mode))
            for mode in ("only_target", "merge_all", "gst_only", "gst_and_da")
        ]
    if kind == "adaptive_ablation":
        base = replace(train, sample_mode="gst_and_da")
        return [
            ExperimentSpec("full", data, base),
            ExperimentSpec("no_gate", data, replace(base, disable_gate=True)),
            ExperimentSpec("no_intensity", data, replace(base, disable_intensity=True)),
        ]
    if kind == "transfer_setting":
        dt = train.delta_t_windows
        windows = 2 * dt + 1
        base = replace(train, window_count=windows, eval_windows=(0, dt, 2 * dt))
        return [
            ExperimentSpec("one_time", data, replace(base, transfer_mode="one_time")),
            ExperimentSpec("continual", data, replace(base, transfer_mode="continual")),
        ]
    raise ValueError(f"unknown suite {kind!r} (choose from {SUITES})")


def run_suite(kind: str, data: DataConfig, train: TrainConfig, seeds=DEFAULT_SEEDS):
    """All suite cells over all seeds; returns (rows, aggregates)."""
    if not seeds:
        raise ValueError("run_suite: seed list must be non-empty")
    rows: list[MetricsRow] = []
    for spec in suite_specs(kind, data, train):
        for seed in seeds:
            rows.extend(run_experiment(spec.data, spec.train, seed, name=spec.name))
    return rows, aggregate(rows)


def aggregate(rows) -> list:
    """Mean and standard error of AUC per (experiment, checkpoint)."""
    groups: dict = {}
    order = []
    for r in rows:
        key = (r.experiment, r.checkpoint)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r.auc)
    out = []
    for key in order:
        vals = np.asarray(groups[key])
        stderr = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        out.append(AggregateRow(key[0], key[1], float(vals.mean()), stderr, len(vals)))
    return out


def render_rows(rows) -> str:
    headers = ["experiment", "seed", "checkpoint", "sample_mode", "transfer_mode",
               "fusion_mode", "auc", "l_y", "l_di", "l_da"]
    table = [headers]
    for r in rows:
        table.append([
            r.experiment, str(r.seed), r.checkpoint, r.sample_mode, r.transfer_mode,
            r.fusion_mode, f"{r.auc:.4f}", f"{r.l_y:.4f}", f"{r.l_di:.4f}", f"{r.l_da:.4f}",
        ])
    return _align(table)


def render_aggregates(aggs) -> str:
    table = [["experiment", "checkpoint", "mean_auc", "stderr", "seeds"]]
    for a in aggs:
        table.append([a.experiment, a.checkpoint, f"{a.mean_auc:.4f}",
                      f"{a.stderr_auc:.4f}", str(a.n_seeds)])
    return _align(table)


def _align(table) -> str:
    widths = [max(len(row[c]) for row in table) for c in range(len(table[0]))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# configuration files: nested yaml with dotted-key overrides

TRAIN_FIELD_DOCS = {
    "learning_rate": "step size shared by all four optimizers",
    "accumulator_decay": "Adagrad accumulator decay in (0, 1]",
    "batch_size": "records per optimization step (>= 2 when domain adaptation runs)",
    "window_count": "number of training windows",
    "delta_t_windows": "windows between source-model refreshes (the transfer granularity)",
    "transfer_mode": "one_time | continual",
    "sample_mode": "only_target | merge_all | gst_only | gst_and_da",
    "disable_gate": "ablation: replace the learned gate with a fixed 0.5 fusion mix",
    "disable_fusion": "keep the adapted representation out of the model entirely",
    "disable_intensity": "ablation: unit distillation weight for every sample",
    "alpha": "weight of the distillation loss term",
    "beta": "weight of the domain-discriminator loss term",
    "source_epochs": "epochs per source-model training phase",
    "embed_dim": "id embedding width",
    "tower": "hidden widths of the prediction tower",
    "adapter_hidden": "adapter hidden width",
    "disc_hidden": "discriminator hidden width",
    "gst_fanout_cap": "per-node neighbor cap during graph expansion",
    "gst_max_nodes": "total cap on expanded (non-seed) nodes",
    "gst_two_hop": "include co-click two-hop expansion",
    "eval_windows": "training windows after which to evaluate (default: last only)",
    "checkpoint_dir": "directory for per-window model checkpoints (optional)",
}

DATA_FIELD_DOCS = {
    "n_users": "user vocabulary size",
    "n_items": "item vocabulary size",
    "latent_dim": "latent dimension of the generative model",
    "seq_len": "behavior sequence length",
    "target_user_frac": "fraction of users in the target sub-channel",
    "target_item_frac": "fraction of items in the target sub-channel",
    "target_window_records": "target-domain records per window",
    "source_target_ratio": "source volume as a multiple of target volume",
    "drift_angle": "radians of latent rotation per window",
    "bias_target": "label logit bias in the target domain",
    "bias_source": "label logit bias in the source domain",
    "logit_scale": "scale of the latent dot product in the label logit",
    "numeric_noise": "noise level on numeric features",
    "affinity_item_tilt": "strength of affinity-based item choice in the source domain",
    "target_activity_boost": "activity multiplier for target users",
}


def config_reference() -> str:
    lines = ["# data section (synthetic world)"]
    for f in dataclasses.fields(DataConfig):
        doc = DATA_FIELD_DOCS.get(f.name, "")
        lines.append(f"data.{f.name} = {f.default!r}  # {doc}")
    lines.append("")
    lines.append("# train section (experiment)")
    for f in dataclasses.fields(TrainConfig):
        doc = TRAIN_FIELD_DOCS.get(f.name, "")
        lines.append(f"train.{f.name} = {f.default!r}  # {doc}")
    lines.append("")
    lines.append("# experiment section: name (str), seeds (list of int)")
    return "\n".join(lines)


def _coerce_section(cls, values: dict):
    valid = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in valid:
            raise ValueError(f"unknown {cls.__name__} field {key!r}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def load_config(path, overrides=()):
    """Read a yaml config with `data`, `train`, and `experiment` sections,
    then apply dotted-key overrides like `train.alpha=0.25`."""
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError("config root must be a mapping")
    for section in raw:
        if section not in ("data", "train", "experiment"):
            raise ValueError(f"unknown config section {section!r}")
    raw.setdefault("data", {})
    raw.setdefault("train", {})
    raw.setdefault("experiment", {})
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} must look like section.key=value")
        dotted, value = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2 or parts[0] not in ("data", "train", "experiment"):
            raise ValueError(f"override key {dotted!r} must be data.*, train.* or experiment.*")
        raw[parts[0]][parts[1]] = yaml.safe_load(value)
    data = _coerce_section(DataConfig, raw["data"])
    train = _coerce_section(TrainConfig, raw["train"])
    exp = dict(raw["experiment"])
    exp.setdefault("name", "experiment")
    exp.setdefault("seeds", list(DEFAULT_SEEDS))
    if not exp["seeds"]:
        raise ValueError("experiment.seeds must be non-empty")
    data.validate()
    train.validate()
    return data, train, exp
