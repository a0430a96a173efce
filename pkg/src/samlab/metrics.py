"""Per-iteration metrics records and their CSV serialization.

The column order below is the stable on-disk schema; every metrics file
starts with exactly this header. Floats are written with ``repr`` so reading
a file back reproduces every value bit-exactly; empty cells mean "not
measured this iteration" and load as ``None``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

FIELD_ORDER = [
    "iteration",
    "epoch",
    "train_loss",
    "eval_loss",
    "eval_accuracy",
    "l2_sgd",
    "l2_psf",
    "psf_stale",
    "l2_sgd_subset",
    "l2_psf_subset",
    "sampled",
    "p",
    "s",
    "v",
    "r",
    "c_var",
    "c_norm",
    "v_fallback",
    "dot_sgd_psf",
    "cumulative_grad_evals",
    "wall_clock_seconds",
]

_INT_FIELDS = {"iteration", "epoch", "cumulative_grad_evals"}
_BOOL_FIELDS = {"psf_stale", "sampled", "v_fallback"}
WALL_CLOCK_FIELDS = {"wall_clock_seconds"}


@dataclass
class MetricsRecord:
    iteration: int
    epoch: int
    train_loss: float
    l2_sgd: float
    sampled: bool
    cumulative_grad_evals: int
    wall_clock_seconds: float
    eval_loss: float | None = None
    eval_accuracy: float | None = None
    l2_psf: float | None = None
    psf_stale: bool | None = None
    l2_sgd_subset: float | None = None
    l2_psf_subset: float | None = None
    p: float | None = None
    s: float | None = None
    v: float | None = None
    r: float | None = None
    c_var: float | None = None
    c_norm: float | None = None
    v_fallback: bool | None = None
    dot_sgd_psf: float | None = None


assert set(FIELD_ORDER) == {f.name for f in fields(MetricsRecord)}


def _format(name, value):
    if value is None:
        return ""
    if name in _BOOL_FIELDS:
        return "1" if value else "0"
    if name in _INT_FIELDS:
        return str(int(value))
    return repr(float(value))


def _parse(name, cell):
    if cell == "":
        return None
    if name in _BOOL_FIELDS:
        return cell == "1"
    if name in _INT_FIELDS:
        return int(cell)
    return float(cell)


def write_metrics_csv(path, records) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIELD_ORDER)
        for rec in records:
            writer.writerow([_format(name, getattr(rec, name)) for name in FIELD_ORDER])


def read_metrics_csv(path) -> list[MetricsRecord]:
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != FIELD_ORDER:
            raise ValueError(f"unexpected metrics header in {path}")
        records = []
        for row in reader:
            kwargs = {name: _parse(name, cell) for name, cell in zip(FIELD_ORDER, row)}
            records.append(MetricsRecord(**kwargs))
    return records
