"""Experiment harness: config files, seeded runs, metrics on disk, reports.

A run directory holds one subdirectory per seed, each with the metrics
stream (``metrics.csv``), the norm trace (``norm_trace.csv``), and a
``summary.json``; the parsed config snapshot and the cross-seed aggregate
live at the top. Everything except wall-clock columns is reproducible
bit-for-bit from the config.

Report columns, in order: method, n_seeds, accuracy_mean, accuracy_std,
sampling_mean, sampling_std, grad_evals_mean, grad_evals_std, ais_mean,
ais_std, grad_evals_vs_ref. The "±" values are population standard
deviations over seeds.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import batches_per_epoch, generate_dataset, train_test_split
from .diagnostics import norm_trace, write_norm_trace
from .errors import ConfigurationError, NumericError
from .metrics import read_metrics_csv, write_metrics_csv
from .objectives import (ObjectiveSpec, make_mlp_classifier, make_quadratic,
                         make_rosenbrock, make_sharp_flat)
from .optim import OptimizerConfig, run_sam, run_sam_k, run_sgd, run_vsam
from .params import ParamVector
from .sampler import SamplerConfig

OPTIMIZERS = ("sgd", "sam", "sam_k", "vsam")
OUTPUT_ROOT_ENV = "SAMLAB_OUTPUT_ROOT"


@dataclass
class ExperimentConfig:
    objective: ObjectiveSpec
    optimizer: str
    opt: OptimizerConfig
    seeds: list[int]
    output_dir: str
    dataset: dict | None = None          # {"kind", "n", "noise", "seed"}
    sampler: SamplerConfig | None = None  # vsam only
    iterations: int | None = None
    epochs: int | None = None
    batch_size: int | None = None
    k: int | None = None                 # sam_k only
    w0: list[float] | None = None        # analytic objectives only

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if not self.seeds:
            raise ConfigurationError("need at least one seed")
        if (self.iterations is None) == (self.epochs is None):
            raise ConfigurationError("give exactly one of iterations or epochs")
        if self.iterations is not None and self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if self.epochs is not None:
            if self.epochs < 1:
                raise ConfigurationError("epochs must be >= 1")
            if self.dataset is None:
                raise ConfigurationError("epochs require a dataset")
        if self.dataset is not None and self.batch_size is None:
            raise ConfigurationError("a dataset requires a batch_size")
        if self.optimizer == "vsam" and self.sampler is None:
            raise ConfigurationError("vsam requires a sampler config")
        if self.optimizer == "sam_k" and (self.k is None or self.k < 1):
            raise ConfigurationError("sam_k requires k >= 1")
        if self.w0 is not None and self.objective.kind == "mlp_classifier":
            raise ConfigurationError("w0 override applies to analytic objectives only")


@dataclass
class RunSummary:
    iterations: int
    sampling_number: int
    grad_evals: int
    final_train_loss: float
    ais: float
    wall_clock_seconds: float
    d_per_epoch: int
    epochs_completed: float
    final_eval_loss: float | None = None
    final_eval_accuracy: float | None = None
    speedup_vs_ref: float | None = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, payload):
        return cls(**payload)


def compute_ais(d: float, e: float, t: float) -> float:
    """Average examples processed per second: d * e / t."""
    if d <= 0 or e <= 0 or t <= 0:
        raise ConfigurationError("AIS inputs must all be positive")
    return d * e / t


def grad_eval_ratio(run_a: RunSummary, run_b: RunSummary) -> float:
    """Hardware-independent cost ratio of two runs over equal iterations."""
    if run_a.iterations != run_b.iterations:
        raise ConfigurationError("gradient-evaluation ratio needs equal iteration counts")
    return run_a.grad_evals / run_b.grad_evals


# ---------------------------------------------------------------------------
# config file parsing (strict: unknown keys are errors)

def _take(payload: dict, allowed, required, context: str) -> dict:
    unknown = set(payload) - set(allowed)
    if unknown:
        raise ConfigurationError(f"unknown keys in {context}: {sorted(unknown)}")
    missing = set(required) - set(payload)
    if missing:
        raise ConfigurationError(f"missing keys in {context}: {sorted(missing)}")
    return payload


def _objective_from_dict(payload: dict) -> ObjectiveSpec:
    kind = payload.get("kind")
    wd = payload.get("weight_decay", 0.0)
    if kind == "quadratic":
        _take(payload, {"kind", "a", "b", "weight_decay"}, {"kind", "a"}, "objective")
        return make_quadratic(payload["a"], payload.get("b"), wd)
    if kind == "rosenbrock":
        _take(payload, {"kind", "dim", "weight_decay"}, {"kind"}, "objective")
        return make_rosenbrock(payload.get("dim", 2), wd)
    if kind == "sharp_flat":
        _take(payload, {"kind", "width_sharp", "width_flat", "depth_gap", "separation"},
              {"kind", "width_sharp", "width_flat", "depth_gap", "separation"}, "objective")
        return make_sharp_flat(payload["width_sharp"], payload["width_flat"],
                               payload["depth_gap"], payload["separation"])
    if kind == "mlp_classifier":
        _take(payload, {"kind", "layer_sizes", "activation", "weight_decay"},
              {"kind", "layer_sizes"}, "objective")
        return make_mlp_classifier(payload["layer_sizes"],
                                   payload.get("activation", "tanh"), wd)
    raise ConfigurationError(f"unknown objective kind {kind!r}")


def _objective_to_dict(spec: ObjectiveSpec) -> dict:
    if spec.kind == "quadratic":
        return {"kind": spec.kind, "a": spec.a.tolist(), "b": spec.b.tolist(),
                "weight_decay": spec.weight_decay}
    if spec.kind == "rosenbrock":
        return {"kind": spec.kind, "dim": spec.dim, "weight_decay": spec.weight_decay}
    if spec.kind == "sharp_flat":
        return {"kind": spec.kind, "width_sharp": spec.width_sharp,
                "width_flat": spec.width_flat, "depth_gap": spec.depth_gap,
                "separation": spec.separation}
    return {"kind": spec.kind, "layer_sizes": list(spec.layer_sizes),
            "activation": spec.activation, "weight_decay": spec.weight_decay}


_OPT_KEYS = {"eta0", "rho", "gamma", "momentum", "lr_schedule", "grad_eval_budget"}
_SAMPLER_KEYS = {"n_window", "m_slices", "alpha", "s1", "i_start", "p_max",
                 "subset_segments", "eps", "force"}
_TOP_KEYS = {"objective", "dataset", "optimizer", "optimizer_config", "sampler_config",
             "iterations", "epochs", "batch_size", "seeds", "output_dir", "k", "w0"}
_DATASET_KEYS = {"kind", "n", "noise", "seed"}


def config_from_dict(payload: dict) -> ExperimentConfig:
    _take(payload, _TOP_KEYS, {"objective", "optimizer", "output_dir"}, "config")
    objective = _objective_from_dict(dict(payload["objective"]))
    opt = OptimizerConfig(**_take(dict(payload.get("optimizer_config", {})),
                                  _OPT_KEYS, set(), "optimizer_config"))
    sampler = None
    if "sampler_config" in payload:
        sampler = SamplerConfig(**_take(dict(payload["sampler_config"]),
                                        _SAMPLER_KEYS, set(), "sampler_config"))
    dataset = None
    if "dataset" in payload:
        dataset = dict(_take(dict(payload["dataset"]), _DATASET_KEYS,
                             {"kind", "n", "seed"}, "dataset"))
        dataset.setdefault("noise", 0.0)
    return ExperimentConfig(
        objective=objective,
        optimizer=payload["optimizer"],
        opt=opt,
        sampler=sampler,
        dataset=dataset,
        iterations=payload.get("iterations"),
        epochs=payload.get("epochs"),
        batch_size=payload.get("batch_size"),
        seeds=list(payload.get("seeds", [0, 1, 2])),  # three-seed fan-out default
        output_dir=payload["output_dir"],
        k=payload.get("k"),
        w0=payload.get("w0"),
    )


def config_to_dict(config: ExperimentConfig) -> dict:
    payload = {
        "objective": _objective_to_dict(config.objective),
        "optimizer": config.optimizer,
        "optimizer_config": asdict(config.opt),
        "seeds": list(config.seeds),
        "output_dir": config.output_dir,
    }
    if config.sampler is not None:
        payload["sampler_config"] = asdict(config.sampler)
    if config.dataset is not None:
        payload["dataset"] = dict(config.dataset)
    for key in ("iterations", "epochs", "batch_size", "k", "w0"):
        value = getattr(config, key)
        if value is not None:
            payload[key] = value
    return payload


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# running experiments

def resolve_output_dir(output_dir) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    path = Path(output_dir)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _plan_iterations(config, dataset):
    if config.iterations is not None:
        return config.iterations
    train, _ = train_test_split(dataset)
    return config.epochs * batches_per_epoch(train.n, config.batch_size)


def run_experiment(config: ExperimentConfig) -> Path:
    """Execute every seed of the experiment; returns the output directory."""
    out = resolve_output_dir(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)

    dataset = None
    if config.dataset is not None:
        ds = config.dataset
        dataset = generate_dataset(ds["kind"], ds["n"], ds["noise"], ds["seed"])
    iterations = _plan_iterations(config, dataset)

    summaries = {}
    for seed in config.seeds:
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        try:
            result = _dispatch(config, dataset, iterations, seed)
        except NumericError as err:
            partial = getattr(err, "partial_records", [])
            write_metrics_csv(seed_dir / "metrics.csv", partial)
            with open(seed_dir / "error.json", "w", encoding="utf-8") as fh:
                json.dump({"error": str(err), "iteration": err.iteration}, fh, indent=2)
            continue
        write_metrics_csv(seed_dir / "metrics.csv", result.records)
        write_norm_trace(seed_dir / "norm_trace.csv", norm_trace(result.records))
        summary = summarize(result.records, dataset, config.batch_size)
        with open(seed_dir / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        summaries[seed] = summary

    _write_aggregate(out, summaries)
    return out


def _dispatch(config, dataset, iterations, seed):
    w0 = None
    if config.w0 is not None:
        w0 = ParamVector(np.asarray(config.w0, dtype=np.float64))
    common = dict(batch_size=config.batch_size, w0=w0)
    if config.optimizer == "sgd":
        return run_sgd(config.objective, dataset, config.opt, iterations, seed, **common)
    if config.optimizer == "sam":
        return run_sam(config.objective, dataset, config.opt, iterations, seed, **common)
    if config.optimizer == "sam_k":
        return run_sam_k(config.objective, dataset, config.opt, config.k,
                         iterations, seed, **common)
    return run_vsam(config.objective, dataset, config.opt, config.sampler,
                    iterations, seed, **common)


def summarize(records, dataset, batch_size) -> RunSummary:
    """Fold a metrics stream into its run summary."""
    if not records:
        raise ConfigurationError("cannot summarize an empty run")
    last = records[-1]
    sampling_number = sum(1 for r in records if r.sampled)
    if dataset is not None:
        train, _ = train_test_split(dataset)
        d_per_epoch = train.n
        epochs_completed = len(records) / batches_per_epoch(train.n, batch_size)
    else:
        d_per_epoch = 1
        epochs_completed = float(len(records))
    final_eval_loss = final_eval_acc = None
    for rec in reversed(records):
        if rec.eval_loss is not None:
            final_eval_loss = rec.eval_loss
            final_eval_acc = rec.eval_accuracy
            break
    return RunSummary(
        iterations=len(records),
        sampling_number=sampling_number,
        grad_evals=last.cumulative_grad_evals,
        final_train_loss=last.train_loss,
        final_eval_loss=final_eval_loss,
        final_eval_accuracy=final_eval_acc,
        ais=compute_ais(d_per_epoch, epochs_completed, last.wall_clock_seconds),
        wall_clock_seconds=last.wall_clock_seconds,
        d_per_epoch=d_per_epoch,
        epochs_completed=epochs_completed,
    )


def _mean_std(values):
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def _write_aggregate(out: Path, summaries: dict) -> None:
    payload = {"seeds": sorted(summaries), "per_seed": {}, "mean": {}, "std": {}}
    for seed, summary in summaries.items():
        payload["per_seed"][str(seed)] = summary.to_dict()
    if summaries:
        for field_name in ("sampling_number", "grad_evals", "ais", "final_train_loss"):
            mean, std = _mean_std([getattr(s, field_name) for s in summaries.values()])
            payload["mean"][field_name] = mean
            payload["std"][field_name] = std
        accs = [s.final_eval_accuracy for s in summaries.values()
                if s.final_eval_accuracy is not None]
        if accs:
            mean, std = _mean_std(accs)
            payload["mean"]["final_eval_accuracy"] = mean
            payload["std"]["final_eval_accuracy"] = std
    with open(out / "aggregate.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# verification

def verify_run(run_dir) -> tuple[bool, list[str]]:
    """Recompute every summary quantity from the metrics stream and compare.

    Returns (all_passed, per-check report lines). Checks the schema header,
    the gradient-evaluation accounting (increment 2 on sampled rows, 1
    otherwise, total = iterations + sampling number), and that the stored
    summary matches a recomputation.
    """
    run_dir = Path(run_dir)
    lines = []
    ok = True

    def check(name, passed, detail=""):
        nonlocal ok
        ok = ok and passed
        lines.append(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))

    try:
        records = read_metrics_csv(run_dir / "metrics.csv")
        check("metrics schema header", True)
    except Exception as err:  # noqa: BLE001 - report any read failure as a check
        check("metrics schema header", False, str(err))
        return ok, lines

    if not records:
        check("non-empty trace", False)
        return ok, lines

    expected = 0
    increments_ok = True
    for rec in records:
        expected += 2 if rec.sampled else 1
        if rec.cumulative_grad_evals != expected:
            increments_ok = False
            break
    check("grad-eval increments (2 sampled / 1 reused)", increments_ok)

    nondecreasing = all(b.cumulative_grad_evals >= a.cumulative_grad_evals
                        for a, b in zip(records, records[1:]))
    check("cumulative grad evals non-decreasing", nondecreasing)

    sampling_number = sum(1 for r in records if r.sampled)
    total = records[-1].cumulative_grad_evals
    check("total = iterations + sampling number",
          total == len(records) + sampling_number,
          f"{total} vs {len(records)} + {sampling_number}")

    summary_path = run_dir / "summary.json"
    if summary_path.exists():
        with open(summary_path, "r", encoding="utf-8") as fh:
            stored = RunSummary.from_dict(json.load(fh))
        check("summary iterations", stored.iterations == len(records))
        check("summary sampling number", stored.sampling_number == sampling_number)
        check("summary grad evals", stored.grad_evals == total)
        check("summary final train loss",
              stored.final_train_loss == records[-1].train_loss)
        recomputed_ais = compute_ais(stored.d_per_epoch, stored.epochs_completed,
                                     stored.wall_clock_seconds)
        check("summary AIS consistent with D*E/T",
              math.isclose(stored.ais, recomputed_ais, rel_tol=1e-12))
    else:
        check("summary present", False)

    trace_path = run_dir / "norm_trace.csv"
    if trace_path.exists():
        from .diagnostics import read_norm_trace
        stored_rows = read_norm_trace(trace_path)
        check("norm trace matches metrics", stored_rows == norm_trace(records))
    else:
        check("norm trace present", False)

    return ok, lines


# ---------------------------------------------------------------------------
# comparison report

REPORT_FIELDS = [
    "method", "n_seeds", "accuracy_mean", "accuracy_std", "sampling_mean",
    "sampling_std", "grad_evals_mean", "grad_evals_std", "ais_mean", "ais_std",
    "grad_evals_vs_ref",
]


def _method_label(config_payload):
    name = config_payload["optimizer"]
    if name == "sam_k":
        return f"sam_{config_payload['k']}"
    return name


def compare_report(run_dirs) -> tuple[str, list[dict]]:
    """Cross-method table over completed runs: mean ± population std per seed.

    Runs missing summaries are excluded and reported as warning rows. The
    cost ratio column is each method's mean gradient evaluations over the
    'sam' run's mean (when a sam run is present).
    """
    if len(run_dirs) < 2:
        raise ConfigurationError("comparison needs at least two run directories")
    rows = []
    warnings = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        try:
            with open(run_dir / "config.json", "r", encoding="utf-8") as fh:
                payload = json.load(fh)
            summaries = []
            for seed in payload["seeds"]:
                with open(run_dir / f"seed_{seed}" / "summary.json", encoding="utf-8") as fh:
                    summaries.append(RunSummary.from_dict(json.load(fh)))
        except (OSError, json.JSONDecodeError) as err:
            warnings.append(f"WARNING: excluded incomplete run {run_dir}: {err}")
            continue
        accs = [s.final_eval_accuracy for s in summaries if s.final_eval_accuracy is not None]
        acc_mean, acc_std = _mean_std(accs) if accs else (None, None)
        samp_mean, samp_std = _mean_std([s.sampling_number for s in summaries])
        evals_mean, evals_std = _mean_std([s.grad_evals for s in summaries])
        ais_mean, ais_std = _mean_std([s.ais for s in summaries])
        rows.append({
            "method": _method_label(payload),
            "n_seeds": len(summaries),
            "accuracy_mean": acc_mean, "accuracy_std": acc_std,
            "sampling_mean": samp_mean, "sampling_std": samp_std,
            "grad_evals_mean": evals_mean, "grad_evals_std": evals_std,
            "ais_mean": ais_mean, "ais_std": ais_std,
            "grad_evals_vs_ref": None,
        })
    ref = next((r for r in rows if r["method"] == "sam"), None)
    if ref is not None:
        for row in rows:
            row["grad_evals_vs_ref"] = row["grad_evals_mean"] / ref["grad_evals_mean"]
    text = _render_report(rows, warnings)
    return text, rows


def _fmt(value):
    if value is None:
        return "-"
    if isinstance(value, int):
        return str(value)
    return f"{value:.6g}"


def _render_report(rows, warnings):
    header = ["method", "seeds", "accuracy", "sampling", "grad_evals", "ais", "evals/sam"]
    best = {}
    if rows:
        with_acc = [r for r in rows if r["accuracy_mean"] is not None]
        if with_acc:
            best["accuracy"] = max(r["accuracy_mean"] for r in with_acc)
        best["sampling"] = min(r["sampling_mean"] for r in rows)
        best["ais"] = max(r["ais_mean"] for r in rows)
    lines = ["\t".join(header)]
    for row in rows:
        acc = "-"
        if row["accuracy_mean"] is not None:
            star = "*" if row["accuracy_mean"] == best.get("accuracy") else ""
            acc = f"{row['accuracy_mean']:.4f}±{row['accuracy_std']:.4f}{star}"
        samp_star = "*" if row["sampling_mean"] == best.get("sampling") else ""
        ais_star = "*" if row["ais_mean"] == best.get("ais") else ""
        lines.append("\t".join([
            row["method"], str(row["n_seeds"]), acc,
            f"{_fmt(row['sampling_mean'])}±{_fmt(row['sampling_std'])}{samp_star}",
            f"{_fmt(row['grad_evals_mean'])}±{_fmt(row['grad_evals_std'])}",
            f"{_fmt(row['ais_mean'])}±{_fmt(row['ais_std'])}{ais_star}",
            _fmt(row["grad_evals_vs_ref"]),
        ]))
    lines.extend(warnings)
    return "\n".join(lines)


def write_report_csv(path, rows) -> None:
    import csv as _csv
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = _csv.writer(fh)
        writer.writerow(REPORT_FIELDS)
        for row in rows:
            writer.writerow(["" if row[f] is None else row[f] for f in REPORT_FIELDS])
