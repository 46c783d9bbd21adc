"""Diagnostic statistics: accuracy, confidence-vs-accuracy bins, exit-layer
distributions, per-layer uncertainty histograms, and speed sweeps.

Everything here is a pure function of (model snapshot, dataset,
parameters); rerunning writes identical files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import no_grad
from .data import EncodedBatch
from .errors import ContractError
from .flops import trace_flops
from .inference import InferenceTrace, adaptive_infer, uncertainty_rows
from .model import EarlyExitTransformer


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise ContractError("accuracy needs equal-length, non-empty inputs")
    return float(np.mean(predictions == labels))


def classifier_names(num_layers: int) -> list[str]:
    return [f"student{i}" for i in range(num_layers - 1)] + ["teacher"]


def _all_heads_eval(model: EarlyExitTransformer, dataset: EncodedBatch,
                    batch_size: int = 128):
    """(uncertainty, correct) per classifier over the whole set, no exits."""
    num_layers = model.config.num_layers
    u_rows, correct_rows = [], []
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            batch = dataset.take(np.arange(start, min(start + batch_size, len(dataset))))
            result = model.full_forward(batch, training=False)
            outs = [s.probs.data for s in result.students] + [result.teacher.probs.data]
            u_rows.append(np.stack([uncertainty_rows(p) for p in outs], axis=0))
            preds = np.stack([np.argmax(p, axis=1) for p in outs], axis=0)
            correct_rows.append(preds == batch.labels[None, :])
    u = np.concatenate(u_rows, axis=1)          # [heads, samples]
    correct = np.concatenate(correct_rows, axis=1)
    assert u.shape[0] == num_layers
    return u, correct


@dataclass
class LuhaReport:
    """Per-classifier accuracy within uniform uncertainty bins on [0, 1]."""

    bin_edges: np.ndarray
    per_classifier: dict[str, list[tuple[float, float, int, float | None]]] = field(
        default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["classifier", "bin_lo", "bin_hi", "count", "accuracy"])
            for name, rows in self.per_classifier.items():
                for lo, hi, count, acc in rows:
                    writer.writerow([name, repr(lo), repr(hi), count,
                                     "" if acc is None else repr(acc)])

    def to_dict(self) -> dict:
        return {
            name: [{"bin_lo": lo, "bin_hi": hi, "count": count, "accuracy": acc}
                   for lo, hi, count, acc in rows]
            for name, rows in self.per_classifier.items()
        }


def luha_bins(model: EarlyExitTransformer, dataset: EncodedBatch,
              bin_count: int = 10) -> LuhaReport:
    """Bin every sample by each classifier's uncertainty (full forward, no
    early exits) and report per-bin accuracy; empty bins carry a null."""
    if dataset.labels is None:
        raise ContractError("confidence-accuracy bins need a labeled dataset")
    u, correct = _all_heads_eval(model, dataset)
    edges = np.linspace(0.0, 1.0, bin_count + 1)
    report = LuhaReport(bin_edges=edges)
    for head_idx, name in enumerate(classifier_names(model.config.num_layers)):
        assignment = np.clip(np.digitize(u[head_idx], edges[1:-1], right=False),
                             0, bin_count - 1)
        rows = []
        for b in range(bin_count):
            inside = assignment == b
            count = int(inside.sum())
            acc = float(correct[head_idx][inside].mean()) if count else None
            rows.append((float(edges[b]), float(edges[b + 1]), count, acc))
        report.per_classifier[name] = rows
    return report


def luha_terciles(model: EarlyExitTransformer, dataset: EncodedBatch) -> dict[str, tuple[float, float]]:
    """(lowest-uncertainty-tercile accuracy, highest-tercile accuracy) per
    classifier; the robust form of the bins used for acceptance checks."""
    u, correct = _all_heads_eval(model, dataset)
    third = u.shape[1] // 3
    if third == 0:
        raise ContractError("terciles need at least 3 samples")
    out = {}
    for head_idx, name in enumerate(classifier_names(model.config.num_layers)):
        order = np.argsort(u[head_idx], kind="stable")
        low = correct[head_idx][order[:third]]
        high = correct[head_idx][order[-third:]]
        out[name] = (float(low.mean()), float(high.mean()))
    return out


def exit_layer_distribution(trace: InferenceTrace) -> np.ndarray:
    """Fraction of samples exiting at each layer; sums to 1."""
    if not trace.samples:
        raise ContractError("exit_layer_distribution needs a non-empty trace")
    counts = np.bincount(trace.exit_layers(), minlength=trace.num_layers)
    return counts / len(trace.samples)


@dataclass
class UncertaintyHistograms:
    """Per-layer histograms of uncertainties among samples reaching the layer."""

    speed: float
    bin_edges: np.ndarray
    counts: np.ndarray       # [L, bins]
    populations: np.ndarray  # samples reaching each layer

    def to_dict(self) -> dict:
        return {
            "speed": self.speed,
            "bin_edges": [float(e) for e in self.bin_edges],
            "populations": [int(p) for p in self.populations],
            "counts": [[int(c) for c in row] for row in self.counts],
        }


def uncertainty_histograms(model: EarlyExitTransformer, dataset: EncodedBatch,
                           speed, bin_count: int = 10) -> UncertaintyHistograms:
    """Histogram the uncertainties recorded at each layer during an
    adaptive run: layer i covers exactly the samples that survived to i."""
    trace = adaptive_infer(model, dataset, speed)
    edges = np.linspace(0.0, 1.0, bin_count + 1)
    num_layers = model.config.num_layers
    counts = np.zeros((num_layers, bin_count), dtype=np.int64)
    populations = np.zeros(num_layers, dtype=np.int64)
    for layer in range(num_layers):
        values = [s.uncertainties[layer] for s in trace.samples
                  if layer in s.uncertainties]
        populations[layer] = len(values)
        if values:
            hist, _ = np.histogram(values, bins=edges)
            counts[layer] = hist
    speed_value = speed.value if hasattr(speed, "value") else float(speed)
    return UncertaintyHistograms(speed=speed_value, bin_edges=edges,
                                 counts=counts, populations=populations)


@dataclass
class SweepReport:
    """One row per speed: accuracy, cost, speedup, and exit fractions."""

    num_layers: int
    rows: list[dict] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            header = ["speed", "accuracy", "avg_flops", "speedup"]
            header += [f"exit_frac_{i}" for i in range(self.num_layers)]
            writer.writerow(header)
            for row in self.rows:
                record = [repr(row["speed"]), repr(row["accuracy"]),
                          repr(row["avg_flops"]), repr(row["speedup"])]
                record += [repr(f) for f in row["exit_fractions"]]
                writer.writerow(record)

    def to_dict(self) -> dict:
        return {"rows": self.rows}


def speed_sweep(model: EarlyExitTransformer, dataset: EncodedBatch,
                speeds) -> SweepReport:
    """Adaptive inference, cost, and accuracy at each requested speed."""
    if dataset.labels is None:
        raise ContractError("speed_sweep needs a labeled dataset")
    n = dataset.ids.shape[1]
    report = SweepReport(num_layers=model.config.num_layers)
    for speed in speeds:
        trace = adaptive_infer(model, dataset, speed)
        avg, speedup = trace_flops(trace, model.config, n)
        report.rows.append({
            "speed": float(speed.value if hasattr(speed, "value") else speed),
            "accuracy": accuracy(trace.predictions(), dataset.labels),
            "avg_flops": float(avg),
            "speedup": float(speedup),
            "exit_fractions": [float(f) for f in exit_layer_distribution(trace)],
        })
    return report
