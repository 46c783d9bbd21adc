"""Staged training: backbone+teacher fine-tuning, student self-distillation,
and the everything-at-once variant used for ablations.

Exactly one parameter group is trainable per stage. Fine-tuning updates
the backbone and teacher against hard labels with students untouched;
self-distillation then trains the students toward the frozen teacher's
soft labels; the joint variant trains all heads on hard labels in a
single stage. Per-epoch shuffling is a pure function of (seed, stage,
epoch), so identical runs are bit-identical.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .data import EncodedBatch
from .errors import ConfigError, ContractError
from .flops import full_model_flops, trace_flops
from .inference import adaptive_infer
from .model import EarlyExitTransformer
from .optim import OptimizerConfig, adamw_step

STAGE_FINE_TUNE = "fine_tune"
STAGE_SELF_DISTILL = "self_distill"
STAGE_JOINT = "joint_ablation"
_STAGE_SALT = {STAGE_FINE_TUNE: 1, STAGE_SELF_DISTILL: 2, STAGE_JOINT: 3}

_PROB_TOL = 1e-6


@dataclass(frozen=True)
class TrainPlan:
    stage: str
    epochs: int = 3
    batch_size: int = 32
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    reference_speed: float = 0.5
    checkpoint_path: str | None = None

    def validate(self) -> None:
        if self.stage not in _STAGE_SALT:
            raise ConfigError(f"unknown training stage {self.stage!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0.0 <= self.reference_speed <= 1.0:
            raise ConfigError("reference_speed must lie in [0, 1]")
        self.optimizer.validate()


@dataclass
class ConvergenceLog:
    """One row per completed epoch: loss plus dev-set behaviour."""

    rows: list[tuple[str, int, float, float, float]] = field(default_factory=list)

    def append(self, stage, epoch, train_loss, dev_acc, avg_flops):
        self.rows.append((stage, int(epoch), float(train_loss),
                          float(dev_acc), float(avg_flops)))

    def extend(self, other: "ConvergenceLog"):
        self.rows.extend(other.rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["stage", "epoch", "train_loss", "dev_acc", "avg_flops"])
            for stage, epoch, loss, acc, flops in self.rows:
                writer.writerow([stage, epoch, repr(loss), repr(acc), repr(flops)])


# -- losses ---------------------------------------------------------------


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Batch-mean -log softmax(logits)[label], evaluated in log space."""
    return ad.cross_entropy_with_logits(logits, labels)


def _check_prob_rows(data: np.ndarray, name: str) -> None:
    if data.ndim != 2:
        raise ContractError(f"{name} must be [B, N] probability rows")
    if np.max(np.abs(data.sum(axis=1) - 1.0)) > _PROB_TOL or np.min(data) < 0:
        raise ContractError(f"{name} rows are not probability vectors")


def kl_divergence(p_s: Tensor, p_t) -> Tensor:
    """Batch-mean KL(student || teacher); the teacher side is a constant."""
    q = p_t.data if isinstance(p_t, Tensor) else np.asarray(p_t, dtype=np.float64)
    _check_prob_rows(p_s.data, "student probabilities")
    _check_prob_rows(q, "teacher probabilities")
    return ad.kl_to_const(p_s, q)


def distill_loss(p_s_list: list[Tensor], p_t) -> Tensor:
    """Sum of the students' KL divergences against the shared teacher rows."""
    if not p_s_list:
        raise ContractError("distill_loss needs at least one student output")
    total = kl_divergence(p_s_list[0], p_t)
    for p_s in p_s_list[1:]:
        total = total + kl_divergence(p_s, p_t)
    return total


# -- shared loop machinery -------------------------------------------------


def _epoch_order(plan: TrainPlan, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng([plan.seed, _STAGE_SALT[plan.stage], epoch])
    return rng.permutation(n)


def _batches(encoded: EncodedBatch, order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield encoded.take(order[start:start + batch_size])


def _resolve_optimizer(plan: TrainPlan, n_examples: int) -> OptimizerConfig:
    steps_per_epoch = -(-n_examples // plan.batch_size)
    return dataclasses.replace(plan.optimizer,
                               total_steps=plan.epochs * steps_per_epoch)


def teacher_predictions(model: EarlyExitTransformer, encoded: EncodedBatch,
                        batch_size: int = 128) -> np.ndarray:
    """Teacher-head argmax over the whole set, inference mode."""
    preds = []
    with no_grad():
        for start in range(0, len(encoded), batch_size):
            batch = encoded.take(np.arange(start, min(start + batch_size, len(encoded))))
            out = model.teacher_forward(batch, training=False)
            preds.append(np.argmax(out.probs.data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _teacher_dev_accuracy(model, dev_set: EncodedBatch) -> float:
    preds = teacher_predictions(model, dev_set)
    return float(np.mean(preds == dev_set.labels))


def _adaptive_dev_point(model, dev_set: EncodedBatch, speed: float):
    trace = adaptive_infer(model, dev_set, speed)
    preds = np.array([s.prediction for s in trace.samples])
    acc = float(np.mean(preds == dev_set.labels))
    avg, _ = trace_flops(trace, model.config, dev_set.ids.shape[1])
    return acc, avg


def _snapshot(model) -> list[np.ndarray]:
    return [p.data.copy() for p in model.parameters()]


def _restore(model, snapshot: list[np.ndarray]) -> None:
    for p, data in zip(model.parameters(), snapshot):
        p.data = data.copy()


# -- stages ----------------------------------------------------------------


def fine_tune(model: EarlyExitTransformer, train_set: EncodedBatch,
              dev_set: EncodedBatch, plan: TrainPlan) -> ConvergenceLog:
    """Train backbone + teacher on hard labels; students stay frozen and
    are never executed. Keeps the epoch with the best teacher dev
    accuracy (earliest epoch wins ties)."""
    plan.validate()
    if plan.stage != STAGE_FINE_TUNE:
        raise ConfigError(f"fine_tune called with stage {plan.stage!r}")
    if len(train_set) == 0:
        raise ConfigError("fine_tune needs a non-empty training set")
    if train_set.labels is None or dev_set.labels is None:
        raise ConfigError("fine_tune needs labeled train and dev sets")

    model.set_trainable(backbone_and_teacher=True, students=False)
    opt = _resolve_optimizer(plan, len(train_set))
    drop_rng = np.random.default_rng([plan.seed, _STAGE_SALT[plan.stage]])
    log = ConvergenceLog()
    full_cost = float(full_model_flops(model.config, train_set.ids.shape[1]))
    best_acc, best_state = -1.0, None
    step = 0
    for epoch in range(1, plan.epochs + 1):
        losses = []
        for batch in _batches(train_set, _epoch_order(plan, epoch, len(train_set)),
                              plan.batch_size):
            out = model.teacher_forward(batch, training=True, rng=drop_rng)
            loss = cross_entropy(out.logits, batch.labels)
            ad.backward(loss)
            step += 1
            adamw_step(model.parameters(), opt, step)
            losses.append(float(loss.data))
        dev_acc = _teacher_dev_accuracy(model, dev_set)
        log.append(plan.stage, epoch, np.mean(losses), dev_acc, full_cost)
        if dev_acc > best_acc:
            best_acc, best_state = dev_acc, _snapshot(model)
    _restore(model, best_state)
    return log


def self_distill(model: EarlyExitTransformer, unlabeled_set: EncodedBatch,
                 dev_set: EncodedBatch, plan: TrainPlan) -> ConvergenceLog:
    """Train student heads toward the frozen teacher's soft labels.

    Labels in `unlabeled_set`, if any, are ignored. Teacher targets and
    the hidden states feeding each student come from a dropout-free pass
    and carry no gradient; only head-internal dropout is active. Keeps
    the final-epoch parameters.
    """
    plan.validate()
    if plan.stage != STAGE_SELF_DISTILL:
        raise ConfigError(f"self_distill called with stage {plan.stage!r}")
    if len(unlabeled_set) == 0:
        raise ConfigError("self_distill needs a non-empty distillation set")

    model.set_trainable(backbone_and_teacher=False, students=True)
    opt = _resolve_optimizer(plan, len(unlabeled_set))
    drop_rng = np.random.default_rng([plan.seed, _STAGE_SALT[plan.stage]])
    log = ConvergenceLog()
    step = 0
    for epoch in range(1, plan.epochs + 1):
        losses = []
        for batch in _batches(unlabeled_set,
                              _epoch_order(plan, epoch, len(unlabeled_set)),
                              plan.batch_size):
            with no_grad():
                frozen = model.full_forward(batch, training=False)
                hidden = [Tensor(h.data) for h in frozen.hidden]
                p_t = frozen.teacher.probs.data
            student_probs = [
                model.head_forward(hidden[i], batch.mask, model.students[i],
                                   training=True, rng=drop_rng).probs
                for i in range(model.config.num_layers - 1)
            ]
            loss = distill_loss(student_probs, p_t)
            ad.backward(loss)
            step += 1
            adamw_step(model.parameters(), opt, step)
            losses.append(float(loss.data))
        acc, avg = _adaptive_dev_point(model, dev_set, plan.reference_speed)
        log.append(plan.stage, epoch, np.mean(losses), acc, avg)
    return log


def joint_train_ablation(model: EarlyExitTransformer, train_set: EncodedBatch,
                         dev_set: EncodedBatch, plan: TrainPlan) -> ConvergenceLog:
    """Single-stage variant: every head trains on hard labels at once."""
    plan.validate()
    if plan.stage != STAGE_JOINT:
        raise ConfigError(f"joint_train_ablation called with stage {plan.stage!r}")
    if len(train_set) == 0:
        raise ConfigError("joint training needs a non-empty training set")
    if train_set.labels is None or dev_set.labels is None:
        raise ConfigError("joint training needs labeled train and dev sets")

    model.set_trainable(backbone_and_teacher=True, students=True)
    opt = _resolve_optimizer(plan, len(train_set))
    drop_rng = np.random.default_rng([plan.seed, _STAGE_SALT[plan.stage]])
    log = ConvergenceLog()
    step = 0
    for epoch in range(1, plan.epochs + 1):
        losses = []
        for batch in _batches(train_set, _epoch_order(plan, epoch, len(train_set)),
                              plan.batch_size):
            result = model.full_forward(batch, training=True, rng=drop_rng)
            loss = cross_entropy(result.teacher.logits, batch.labels)
            for student in result.students:
                loss = loss + cross_entropy(student.logits, batch.labels)
            ad.backward(loss)
            step += 1
            adamw_step(model.parameters(), opt, step)
            losses.append(float(loss.data))
        acc, avg = _adaptive_dev_point(model, dev_set, plan.reference_speed)
        log.append(plan.stage, epoch, np.mean(losses), acc, avg)
    return log
