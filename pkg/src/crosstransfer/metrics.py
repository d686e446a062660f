"""AUC, result rows, and deterministic metrics files.

Emitted metrics files contain only run-deterministic fields so a rerun with
the same config and seed is byte-identical; wall-clock timings go to a
separate sidecar file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

METRICS_FILE_VERSION = "crosstransfer-metrics-v1"


def auc(scores, labels) -> float:
    """Rank-based AUC with tie correction: P(pos > neg) + P(tie)/2."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"auc: {scores.shape} scores vs {labels.shape} labels")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"auc: need both classes, got {n_pos} positive / {n_neg} negative")
    ranks = rankdata(scores)
    return (ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class MetricsRow:
    experiment: str
    seed: int
    checkpoint: str            # t, t+dt, t+2dt, ...
    sample_mode: str
    transfer_mode: str
    fusion_mode: str
    disable_intensity: bool
    auc: float
    l_y: float
    l_di: float
    l_da: float
    seconds: float             # wall clock; sidecar only, never in metrics files


_COLUMNS = [
    "experiment", "seed", "checkpoint", "sample_mode", "transfer_mode",
    "fusion_mode", "disable_intensity", "auc", "l_y", "l_di", "l_da",
]
_FLOAT_COLUMNS = {"auc", "l_y", "l_di", "l_da"}


def _cell(row: MetricsRow, col: str) -> str:
    v = getattr(row, col)
    if col in _FLOAT_COLUMNS:
        return format(v, ".17g")
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def emit(rows, path, fmt: str) -> None:
    """Write rows in the given order as csv or json; rereads round-trip exactly.

    Both formats carry a leading version field: a `version` column in csv,
    a top-level `version` key in json.
    """
    if not rows:
        raise ValueError("emit: no rows")
    if fmt == "csv":
        lines = [",".join(["version"] + _COLUMNS)]
        for r in rows:
            lines.append(",".join([METRICS_FILE_VERSION] + [_cell(r, c) for c in _COLUMNS]))
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        payload = {
            "version": METRICS_FILE_VERSION,
            "rows": [
                {c: (format(getattr(r, c), ".17g") if c in _FLOAT_COLUMNS else getattr(r, c))
                 for c in _COLUMNS}
                for r in rows
            ],
        }
        text = json.dumps(payload, indent=1) + "\n"
    else:
        raise ValueError(f"emit: unknown format {fmt!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def emit_timings(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#{METRICS_FILE_VERSION}\nexperiment,seed,checkpoint,seconds\n")
        for r in rows:
            fh.write(f"{r.experiment},{r.seed},{r.checkpoint},{r.seconds:.3f}\n")


def _row_from_strings(values: dict) -> MetricsRow:
    return MetricsRow(
        experiment=values["experiment"],
        seed=int(values["seed"]),
        checkpoint=values["checkpoint"],
        sample_mode=values["sample_mode"],
        transfer_mode=values["transfer_mode"],
        fusion_mode=values["fusion_mode"],
        disable_intensity=(str(values["disable_intensity"]).lower() == "true"),
        auc=float(values["auc"]),
        l_y=float(values["l_y"]),
        l_di=float(values["l_di"]),
        l_da=float(values["l_da"]),
        seconds=0.0,
    )


def read_metrics(path) -> list:
    """Read either emitted format back into rows (seconds come back as 0)."""
    text = open(path, encoding="utf-8").read()
    if text.lstrip().startswith("{"):
        payload = json.loads(text)
        if payload.get("version") != METRICS_FILE_VERSION:
            raise ValueError(f"unsupported metrics version {payload.get('version')!r}")
        return [_row_from_strings(r) for r in payload["rows"]]
    lines = text.splitlines()
    header = lines[0].split(",") if lines else []
    if header != ["version"] + _COLUMNS:
        raise ValueError("metrics header does not match the documented column order")
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        values = dict(zip(header, line.split(",")))
        if values["version"] != METRICS_FILE_VERSION:
            raise ValueError(f"unsupported metrics file version {values['version']!r}")
        rows.append(_row_from_strings(values))
    return rows


def rows_equal_on_metrics(a: MetricsRow, b: MetricsRow) -> bool:
    da, db = asdict(a), asdict(b)
    da.pop("seconds")
    db.pop("seconds")
    return da == db
