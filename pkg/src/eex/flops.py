"""Analytic floating-point operation accounting.

Convention (fixed here, documented once): two operations per
multiply-accumulate, dense projection matmuls only. Encoder
self-attention counts its four d->d projections (4*2*n*d^2) and the
feed-forward its two matmuls (2*2*n*d*d_ff). Attention score/context
products, softmax, layernorm, bias adds, and activations are excluded.
Embedding lookups are gathers, not matmuls, and count as zero. The head
counts its bottleneck projection, four bottleneck-width attention
projections, the same-width projection, and the class projection of the
single pooled position.

A trace is charged per sample: the executed encoder layers plus one
classifier pass per head that actually ran (adaptive runs record one
uncertainty per executed head; fixed-layer traces record exactly one).
The speedup baseline is the full encoder with only the teacher head, a
plain one-classifier model of the same size.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ContractError
from .model import ModelConfig


@dataclass(frozen=True)
class FlopsBreakdown:
    """Raw operation counts per component for one sequence."""

    self_attention_projections: int
    feedforward: int
    classifier_fc1: int
    classifier_attention: int
    classifier_fc2: int
    classifier_out: int
    embedding: int = 0

    @property
    def transformer_total(self) -> int:
        return self.self_attention_projections + self.feedforward

    @property
    def classifier_total(self) -> int:
        return (self.classifier_fc1 + self.classifier_attention
                + self.classifier_fc2 + self.classifier_out)

    def to_dict(self) -> dict:
        return {
            "self_attention_projections": self.self_attention_projections,
            "feedforward": self.feedforward,
            "transformer_total": self.transformer_total,
            "classifier_fc1": self.classifier_fc1,
            "classifier_attention": self.classifier_attention,
            "classifier_fc2": self.classifier_fc2,
            "classifier_out": self.classifier_out,
            "classifier_total": self.classifier_total,
            "embedding": self.embedding,
        }


def breakdown(cfg: ModelConfig, n: int) -> FlopsBreakdown:
    """Per-component counts for one sequence of length n."""
    d, dff, dc = cfg.hidden_dim, cfg.ffn_dim, cfg.classifier_dim
    return FlopsBreakdown(
        self_attention_projections=4 * 2 * n * d * d,
        feedforward=2 * 2 * n * d * dff,
        classifier_fc1=2 * n * d * dc,
        classifier_attention=4 * 2 * n * dc * dc,
        classifier_fc2=2 * n * dc * dc,
        classifier_out=2 * dc * cfg.num_classes,
        embedding=0,
    )


def transformer_flops(cfg: ModelConfig, n: int) -> int:
    """One encoder layer's cost for a length-n sequence."""
    return breakdown(cfg, n).transformer_total


def classifier_flops(cfg: ModelConfig, n: int) -> int:
    """One classification head's cost for a length-n sequence."""
    return breakdown(cfg, n).classifier_total


def full_model_flops(cfg: ModelConfig, n: int) -> int:
    """All encoder layers plus a single (teacher) classifier pass."""
    parts = breakdown(cfg, n)
    return (parts.embedding + cfg.num_layers * parts.transformer_total
            + parts.classifier_total)


def trace_flops(trace, cfg: ModelConfig, n: int) -> tuple[float, float]:
    """(sample-averaged FLOPs, speedup vs the one-classifier full model).

    Reproducible from the trace CSV alone: each sample costs its executed
    layers times the per-layer total plus its recorded head executions
    times the per-head total.
    """
    if not trace.samples:
        raise ContractError("trace_flops needs a non-empty trace")
    parts = breakdown(cfg, n)
    total = 0
    for s in trace.samples:
        layers_run = s.exit_layer + 1
        heads_run = len(s.uncertainties)
        total += (parts.embedding + layers_run * parts.transformer_total
                  + heads_run * parts.classifier_total)
    average = total / len(trace.samples)
    return average, full_model_flops(cfg, n) / average


def millions(count) -> float:
    return count / 1e6
