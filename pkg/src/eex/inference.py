"""Uncertainty-gated early-exit inference with batch sifting.

Each sample leaves the batch at the first layer whose head is confident
enough: exit happens iff the head's normalized-entropy uncertainty is
strictly below the speed threshold. Samples that never cross take the
final layer's (teacher's) prediction unconditionally. The surviving
batch physically shrinks layer by layer, so no compute is spent on
samples that already exited.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad
from .data import EncodedBatch
from .errors import ConfigError, ContractError
from .model import EarlyExitTransformer

_PROB_TOL = 1e-6


@dataclass(frozen=True)
class Speed:
    """Exit threshold in [0, 1]; higher means earlier exits."""

    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ConfigError(f"speed must lie in [0, 1], got {self.value}")


def uncertainty(p: np.ndarray) -> float:
    """Normalized entropy of a probability row, in [0, 1].

    Defined as sum(p*ln p)/ln(1/N) with 0*ln 0 taken as 0, clamped
    against rounding. Uniform rows give 1, one-hot rows give 0.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise ContractError("uncertainty needs a probability row with N >= 2")
    if abs(p.sum() - 1.0) > _PROB_TOL or p.min() < 0:
        raise ContractError("uncertainty input is not a probability vector")
    return float(uncertainty_rows(p[None, :])[0])


def uncertainty_rows(p: np.ndarray) -> np.ndarray:
    """Vectorized normalized entropy over the rows of [B, N]."""
    p = np.asarray(p, dtype=np.float64)
    ent = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0).sum(axis=1)
    u = ent / np.log(1.0 / p.shape[1])
    return np.clip(u, 0.0, 1.0)


@dataclass(frozen=True)
class SampleTrace:
    index: int
    exit_layer: int
    prediction: int
    probabilities: np.ndarray            # final head's row
    uncertainties: dict[int, float]      # layer -> uncertainty, executed heads only


@dataclass
class InferenceTrace:
    num_layers: int
    samples: list[SampleTrace] = field(default_factory=list)
    layer_entry_counts: np.ndarray = None   # active samples entering each layer
    labels: np.ndarray | None = None

    def exit_layers(self) -> np.ndarray:
        return np.array([s.exit_layer for s in self.samples], dtype=np.int64)

    def predictions(self) -> np.ndarray:
        return np.array([s.prediction for s in self.samples], dtype=np.int64)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            header = ["sample_id", "exit_layer", "prediction", "label"]
            header += [f"u_{i}" for i in range(self.num_layers)]
            writer.writerow(header)
            for s in self.samples:
                label = "" if self.labels is None else int(self.labels[s.index])
                row = [s.index, s.exit_layer, s.prediction, label]
                row += [repr(s.uncertainties[i]) if i in s.uncertainties else ""
                        for i in range(self.num_layers)]
                writer.writerow(row)


def _speed_value(speed) -> float:
    return speed.value if isinstance(speed, Speed) else Speed(float(speed)).value


def adaptive_infer(model: EarlyExitTransformer, batch: EncodedBatch,
                   speed) -> InferenceTrace:
    """Layer-by-layer sifting run over the whole batch.

    At layers 0..L-2 the layer's student head scores the still-active
    samples; a sample exits iff its uncertainty is strictly below the
    speed (ties continue). Layer L-1 is unconditional: survivors take
    the teacher's prediction. The teacher's uncertainty is recorded for
    diagnostics but never gates anything. Once everyone has exited the
    remaining layers are skipped entirely.
    """
    threshold = _speed_value(speed)
    n_samples = len(batch)
    if n_samples == 0:
        raise ContractError("adaptive_infer needs a non-empty batch")
    num_layers = model.config.num_layers

    exit_layer = np.full(n_samples, -1, dtype=np.int64)
    prediction = np.zeros(n_samples, dtype=np.int64)
    prob_rows: list[np.ndarray | None] = [None] * n_samples
    uncertainties: list[dict[int, float]] = [dict() for _ in range(n_samples)]
    entry_counts = np.zeros(num_layers, dtype=np.int64)

    with no_grad():
        active = np.arange(n_samples)
        h = model.embed(batch, training=False)
        mask = batch.mask
        for layer in range(num_layers):
            entry_counts[layer] = active.shape[0]
            h = model.encoder_layer(h, mask, layer, training=False)
            is_last = layer == num_layers - 1
            head = model.teacher if is_last else model.students[layer]
            out = model.head_forward(h, mask, head, training=False)
            probs = out.probs.data
            u = uncertainty_rows(probs)
            for local, sample in enumerate(active):
                uncertainties[sample][layer] = float(u[local])
            exits = np.ones_like(u, dtype=bool) if is_last else u < threshold
            for local in np.nonzero(exits)[0]:
                sample = active[local]
                exit_layer[sample] = layer
                prediction[sample] = int(np.argmax(probs[local]))
                prob_rows[sample] = probs[local].copy()
            keep = ~exits
            if not keep.any():
                break
            active = active[keep]
            h = Tensor(h.data[keep])
            mask = mask[keep]

    samples = [
        SampleTrace(index=i, exit_layer=int(exit_layer[i]),
                    prediction=int(prediction[i]), probabilities=prob_rows[i],
                    uncertainties=uncertainties[i])
        for i in range(n_samples)
    ]
    return InferenceTrace(num_layers=num_layers, samples=samples,
                          layer_entry_counts=entry_counts, labels=batch.labels)


def fixed_layer_infer(model: EarlyExitTransformer, batch: EncodedBatch,
                      k: int) -> InferenceTrace:
    """Run exactly k encoder layers for every sample and take the k-th
    head's prediction (the teacher when k equals the layer count). No
    other head runs, so each sample is charged a single classifier pass."""
    num_layers = model.config.num_layers
    if not 1 <= k <= num_layers:
        raise ConfigError(f"fixed layer count {k} outside [1, {num_layers}]")
    if len(batch) == 0:
        raise ContractError("fixed_layer_infer needs a non-empty batch")

    with no_grad():
        h = model.embed(batch, training=False)
        for layer in range(k):
            h = model.encoder_layer(h, batch.mask, layer, training=False)
        head = model.teacher if k == num_layers else model.students[k - 1]
        out = model.head_forward(h, batch.mask, head, training=False)
        probs = out.probs.data
        u = uncertainty_rows(probs)

    entry_counts = np.zeros(num_layers, dtype=np.int64)
    entry_counts[:k] = len(batch)
    samples = [
        SampleTrace(index=i, exit_layer=k - 1,
                    prediction=int(np.argmax(probs[i])),
                    probabilities=probs[i].copy(),
                    uncertainties={k - 1: float(u[i])})
        for i in range(len(batch))
    ]
    return InferenceTrace(num_layers=num_layers, samples=samples,
                          layer_entry_counts=entry_counts, labels=batch.labels)
