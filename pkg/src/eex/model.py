"""Early-exit transformer classifier: encoder stack plus one classification
head per layer.

The backbone is a BERT-style post-layernorm encoder (learned token,
position, and segment embeddings; multi-head self-attention; GELU
feed-forward). The head on the final layer is the teacher; every earlier
layer carries a student head with the same architecture but its own
parameters: a bottleneck projection, single-head self-attention at the
bottleneck width, a same-width projection, then a class projection of the
position-0 vector.

Initialization draws every weight from N(0, 0.02^2) using numpy's PCG64
generator seeded with [seed, 0]; draws happen in parameter declaration
order (embeddings, blocks 0..L-1, teacher head, student heads 0..L-2).
Biases start at zero and layernorm gains at one, consuming no draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import EncodedBatch
from .errors import ConfigError, ShapeError
from .optim import Parameter

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    """Dimensional hyperparameters. Defaults are the desk-scale setup."""

    num_layers: int = 4        # L; at least 2 so one student head exists
    hidden_dim: int = 32       # d
    num_heads: int = 2         # H; must divide d
    ffn_dim: int = 128         # feed-forward width, conventionally 4*d
    classifier_dim: int = 16   # head bottleneck width
    num_classes: int = 2
    vocab_size: int = 64
    max_len: int = 32
    dropout: float = 0.1

    def validate(self) -> None:
        if self.num_layers < 2:
            raise ConfigError("num_layers must be >= 2 (at least one student head)")
        if self.hidden_dim < 1 or self.hidden_dim % self.num_heads != 0:
            raise ConfigError("hidden_dim must be positive and divisible by num_heads")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.ffn_dim < 1 or self.classifier_dim < 1 or self.num_heads < 1:
            raise ConfigError("ffn_dim, classifier_dim, and num_heads must be positive")
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must cover the four reserved tokens")
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden_dim": self.hidden_dim,
            "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim,
            "classifier_dim": self.classifier_dim,
            "num_classes": self.num_classes,
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class HeadOutput:
    logits: Tensor   # [B, N], pre-softmax
    probs: Tensor    # [B, N], rows sum to 1


@dataclass(frozen=True)
class ForwardResult:
    teacher: HeadOutput
    students: list[HeadOutput]   # length L-1, index i belongs to layer i
    hidden: list[Tensor]         # length L, outputs of blocks 0..L-1


def _linear(x: Tensor, w: Parameter, b: Parameter) -> Tensor:
    return ad.matmul(x, w) + b


class _ParamFactory:
    """Creates named parameters, drawing weights in declaration order."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: list[Parameter] = []

    def weight(self, name, *shape) -> Parameter:
        p = Parameter(name, self.rng.normal(0.0, INIT_STD, size=shape))
        self.params.append(p)
        return p

    def zeros(self, name, *shape) -> Parameter:
        p = Parameter(name, np.zeros(shape))
        self.params.append(p)
        return p

    def ones(self, name, *shape) -> Parameter:
        p = Parameter(name, np.ones(shape))
        self.params.append(p)
        return p


class EncoderBlock:
    """Post-layernorm transformer block with padding-masked attention."""

    def __init__(self, make: _ParamFactory, cfg: ModelConfig, prefix: str):
        d, dff = cfg.hidden_dim, cfg.ffn_dim
        self.num_heads = cfg.num_heads
        self.head_dim = d // cfg.num_heads
        self.wq = make.weight(f"{prefix}.attn.wq", d, d)
        self.bq = make.zeros(f"{prefix}.attn.bq", d)
        self.wk = make.weight(f"{prefix}.attn.wk", d, d)
        self.bk = make.zeros(f"{prefix}.attn.bk", d)
        self.wv = make.weight(f"{prefix}.attn.wv", d, d)
        self.bv = make.zeros(f"{prefix}.attn.bv", d)
        self.wo = make.weight(f"{prefix}.attn.wo", d, d)
        self.bo = make.zeros(f"{prefix}.attn.bo", d)
        self.attn_gain = make.ones(f"{prefix}.attn.ln_gain", d)
        self.attn_bias = make.zeros(f"{prefix}.attn.ln_bias", d)
        self.w1 = make.weight(f"{prefix}.ffn.w1", d, dff)
        self.b1 = make.zeros(f"{prefix}.ffn.b1", dff)
        self.w2 = make.weight(f"{prefix}.ffn.w2", dff, d)
        self.b2 = make.zeros(f"{prefix}.ffn.b2", d)
        self.ffn_gain = make.ones(f"{prefix}.ffn.ln_gain", d)
        self.ffn_bias = make.zeros(f"{prefix}.ffn.ln_bias", d)

    def forward(self, h: Tensor, mask: np.ndarray, dropout_p: float,
                training: bool, rng: np.random.Generator | None) -> Tensor:
        batch, n, d = h.shape
        heads, hd = self.num_heads, self.head_dim

        def split(x):
            return ad.swapaxes(ad.reshape(x, (batch, n, heads, hd)), 1, 2)

        q = split(_linear(h, self.wq, self.bq))
        k = split(_linear(h, self.wk, self.bk))
        v = split(_linear(h, self.wv, self.bv))
        scores = ad.scale(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / np.sqrt(hd))
        probs = ad.masked_softmax(scores, mask)
        if training and dropout_p > 0:
            probs = ad.dropout(probs, dropout_p, rng)
        ctx = ad.reshape(ad.swapaxes(ad.matmul(probs, v), 1, 2), (batch, n, d))
        h = ad.layernorm(h + _linear(ctx, self.wo, self.bo),
                         self.attn_gain, self.attn_bias)
        u = ad.gelu(_linear(h, self.w1, self.b1))
        if training and dropout_p > 0:
            u = ad.dropout(u, dropout_p, rng)
        h = ad.layernorm(h + _linear(u, self.w2, self.b2),
                         self.ffn_gain, self.ffn_bias)
        return h


class ClassifierHead:
    """Bottleneck classification head shared in shape by teacher and students."""

    def __init__(self, make: _ParamFactory, cfg: ModelConfig, prefix: str):
        d, dc, n_cls = cfg.hidden_dim, cfg.classifier_dim, cfg.num_classes
        self.name = prefix
        self.bottleneck = dc
        self.fc1_w = make.weight(f"{prefix}.fc1.w", d, dc)
        self.fc1_b = make.zeros(f"{prefix}.fc1.b", dc)
        self.wq = make.weight(f"{prefix}.attn.wq", dc, dc)
        self.bq = make.zeros(f"{prefix}.attn.bq", dc)
        self.wk = make.weight(f"{prefix}.attn.wk", dc, dc)
        self.bk = make.zeros(f"{prefix}.attn.bk", dc)
        self.wv = make.weight(f"{prefix}.attn.wv", dc, dc)
        self.bv = make.zeros(f"{prefix}.attn.bv", dc)
        self.wo = make.weight(f"{prefix}.attn.wo", dc, dc)
        self.bo = make.zeros(f"{prefix}.attn.bo", dc)
        self.fc2_w = make.weight(f"{prefix}.fc2.w", dc, dc)
        self.fc2_b = make.zeros(f"{prefix}.fc2.b", dc)
        self.out_w = make.weight(f"{prefix}.out.w", dc, n_cls)
        self.out_b = make.zeros(f"{prefix}.out.b", n_cls)

    def forward(self, h: Tensor, mask: np.ndarray, dropout_p: float,
                training: bool, rng: np.random.Generator | None) -> HeadOutput:
        z = _linear(h, self.fc1_w, self.fc1_b)
        if training and dropout_p > 0:
            z = ad.dropout(z, dropout_p, rng)
        q = _linear(z, self.wq, self.bq)
        k = _linear(z, self.wk, self.bk)
        v = _linear(z, self.wv, self.bv)
        scores = ad.scale(ad.matmul(q, ad.swapaxes(k, -1, -2)),
                          1.0 / np.sqrt(self.bottleneck))
        probs = ad.masked_softmax(scores, mask)
        if training and dropout_p > 0:
            probs = ad.dropout(probs, dropout_p, rng)
        a = _linear(ad.matmul(probs, v), self.wo, self.bo)
        f = _linear(a, self.fc2_w, self.fc2_b)
        if training and dropout_p > 0:
            f = ad.dropout(f, dropout_p, rng)
        logits = _linear(ad.first_position(f), self.out_w, self.out_b)
        return HeadOutput(logits=logits, probs=ad.softmax(logits))


class EarlyExitTransformer:
    """The full parameter set plus forward passes.

    Parameters are immutable during inference; training mutates them from
    a single thread (the owner).
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        make = _ParamFactory(np.random.default_rng([int(seed), 0]))
        d = config.hidden_dim
        self.token_emb = make.weight("embeddings.token", config.vocab_size, d)
        self.position_emb = make.weight("embeddings.position", config.max_len, d)
        self.segment_emb = make.weight("embeddings.segment", 2, d)
        self.emb_gain = make.ones("embeddings.ln_gain", d)
        self.emb_bias = make.zeros("embeddings.ln_bias", d)
        self.blocks = [EncoderBlock(make, config, f"block{i}")
                       for i in range(config.num_layers)]
        self.teacher = ClassifierHead(make, config, "teacher")
        self.students = [ClassifierHead(make, config, f"student{i}")
                         for i in range(config.num_layers - 1)]
        self._params = make.params

    # -- parameter groups ------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self._params)

    def backbone_parameters(self) -> list[Parameter]:
        """Embeddings, encoder blocks, and the teacher head."""
        return [p for p in self._params
                if not p.name.startswith("student")]

    def student_parameters(self) -> list[Parameter]:
        return [p for p in self._params if p.name.startswith("student")]

    def set_trainable(self, backbone_and_teacher: bool, students: bool) -> None:
        for p in self.backbone_parameters():
            p.trainable = backbone_and_teacher
        for p in self.student_parameters():
            p.trainable = students

    def state_bytes(self) -> bytes:
        """Concatenated parameter payloads, for bit-exact comparisons."""
        return b"".join(np.ascontiguousarray(p.data).tobytes() for p in self._params)

    # -- forward passes ----------------------------------------------------

    def embed(self, batch: EncodedBatch, training: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
        n = batch.ids.shape[1]
        if n > self.config.max_len:
            raise ShapeError(
                f"sequence length {n} exceeds max_len {self.config.max_len}"
            )
        tok = ad.embedding(self.token_emb, batch.ids)
        pos = ad.embedding(self.position_emb, np.arange(n))
        seg = ad.embedding(self.segment_emb, batch.segments)
        e = ad.layernorm(tok + pos + seg, self.emb_gain, self.emb_bias)
        if training and self.config.dropout > 0:
            e = ad.dropout(e, self.config.dropout, rng)
        return e

    def encoder_layer(self, h_prev: Tensor, mask: np.ndarray, block_index: int,
                      training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        if not 0 <= block_index < self.config.num_layers:
            raise ConfigError(f"block index {block_index} outside [0, {self.config.num_layers})")
        return self.blocks[block_index].forward(
            h_prev, mask, self.config.dropout, training, rng)

    def head_forward(self, h: Tensor, mask: np.ndarray, head: ClassifierHead,
                     training: bool = False,
                     rng: np.random.Generator | None = None) -> HeadOutput:
        return head.forward(h, mask, self.config.dropout, training, rng)

    def teacher_forward(self, batch: EncodedBatch, training: bool = False,
                        rng: np.random.Generator | None = None) -> HeadOutput:
        """Backbone plus teacher head only; student heads never run."""
        h = self.embed(batch, training, rng)
        for i in range(self.config.num_layers):
            h = self.encoder_layer(h, batch.mask, i, training, rng)
        return self.head_forward(h, batch.mask, self.teacher, training, rng)

    def full_forward(self, batch: EncodedBatch, training: bool = False,
                     rng: np.random.Generator | None = None) -> ForwardResult:
        """Run all layers and every head unconditionally."""
        hidden: list[Tensor] = []
        students: list[HeadOutput] = []
        h = self.embed(batch, training, rng)
        for i in range(self.config.num_layers):
            h = self.encoder_layer(h, batch.mask, i, training, rng)
            hidden.append(h)
            if i < self.config.num_layers - 1:
                students.append(
                    self.head_forward(h, batch.mask, self.students[i], training, rng))
        teacher = self.head_forward(h, batch.mask, self.teacher, training, rng)
        return ForwardResult(teacher=teacher, students=students, hidden=hidden)
