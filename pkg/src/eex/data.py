"""Corpus loading, vocabulary, encoding, and the synthetic benchmark task."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3
RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")


@dataclass(frozen=True)
class Vocab:
    """Token <-> id mapping with four reserved ids at the front."""

    token_to_id: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def to_json(self) -> str:
        return json.dumps(self.token_to_id, sort_keys=True)

    @classmethod
    def from_mapping(cls, mapping: dict[str, int]) -> "Vocab":
        for i, tok in enumerate(RESERVED):
            if mapping.get(tok) != i:
                raise DataError(f"vocabulary is missing reserved token {tok} at id {i}")
        ids = sorted(mapping.values())
        if ids != list(range(len(mapping))):
            raise DataError("vocabulary ids must be a bijection onto 0..V-1")
        return cls(dict(mapping))


@dataclass
class Dataset:
    """Labeled (or unlabeled) text examples for one split."""

    examples: list[tuple[str, int | None]]
    split: str = "train"
    num_classes: int = 2
    label_names: list[str] = field(default_factory=lambda: ["0", "1"])

    def __len__(self) -> int:
        return len(self.examples)


@dataclass
class EncodedBatch:
    """Model-ready id matrices; position 0 of every row is [CLS]."""

    ids: np.ndarray        # [B, n] int64
    mask: np.ndarray       # [B, n] 1 for real tokens, 0 for padding
    segments: np.ndarray   # [B, n] int64
    labels: np.ndarray | None = None  # [B] int64

    def __post_init__(self):
        if self.ids.size and not np.all(self.ids[:, 0] == CLS_ID):
            raise ContractError("position 0 of every encoded row must be [CLS]")

    def __len__(self) -> int:
        return self.ids.shape[0]

    def take(self, indices) -> "EncodedBatch":
        labels = None if self.labels is None else self.labels[indices]
        return EncodedBatch(self.ids[indices], self.mask[indices],
                            self.segments[indices], labels)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def load_tsv(path, num_classes: int | None = None) -> Dataset:
    """Read `label<TAB>text` lines; blank lines are skipped.

    Any malformed line raises a DataError naming its 1-based line number.
    """
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise DataError(f"{path}: line {lineno}: expected label<TAB>text")
            label_str, text = line.split("\t", 1)
            try:
                label = int(label_str)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-integer label {label_str!r}") from None
            if label < 0:
                raise DataError(f"{path}: line {lineno}: negative label {label}")
            if num_classes is not None and label >= num_classes:
                raise DataError(
                    f"{path}: line {lineno}: label {label} outside [0, {num_classes})"
                )
            examples.append((text, label))
    n = num_classes
    if n is None:
        n = max((lab for _, lab in examples), default=1) + 1
        n = max(n, 2)
    return Dataset(examples, split="train", num_classes=n,
                   label_names=[str(i) for i in range(n)])


def build_vocab(dataset: Dataset, max_size: int) -> Vocab:
    """Frequency-ranked vocabulary, ties broken lexicographically."""
    if len(dataset) == 0:
        raise DataError("cannot build a vocabulary from an empty dataset")
    if max_size <= len(RESERVED):
        raise DataError(f"max_size must exceed {len(RESERVED)} reserved entries")
    counts = Counter()
    for text, _ in dataset.examples:
        counts.update(tokenize(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    mapping = {tok: i for i, tok in enumerate(RESERVED)}
    for tok, _ in ranked[: max_size - len(RESERVED)]:
        mapping[tok] = len(mapping)
    return Vocab(mapping)


def encode(text: str, vocab: Vocab, n_max: int):
    """[CLS] + tokens + [SEP], truncated to n_max and padded with [PAD].

    Returns (ids, mask, segments) as int64/int64/int64 arrays of length
    n_max. Over-length text keeps the first n_max-2 tokens and still ends
    with [SEP]. Segments are all zero (single-sentence tasks).
    """
    toks = [vocab.id_for(t) for t in tokenize(text)]
    ids = [CLS_ID] + toks[: n_max - 2] + [SEP_ID]
    mask = [1] * len(ids)
    pad = n_max - len(ids)
    ids += [PAD_ID] * pad
    mask += [0] * pad
    return (np.asarray(ids, dtype=np.int64),
            np.asarray(mask, dtype=np.int64),
            np.zeros(n_max, dtype=np.int64))


def encode_dataset(dataset: Dataset, vocab: Vocab, n_max: int) -> EncodedBatch:
    n = len(dataset)
    ids = np.zeros((n, n_max), dtype=np.int64)
    mask = np.zeros((n, n_max), dtype=np.int64)
    seg = np.zeros((n, n_max), dtype=np.int64)
    labels = np.zeros(n, dtype=np.int64)
    has_labels = True
    for i, (text, label) in enumerate(dataset.examples):
        ids[i], mask[i], seg[i] = encode(text, vocab, n_max)
        if label is None:
            has_labels = False
        else:
            labels[i] = label
    return EncodedBatch(ids, mask, seg, labels if has_labels else None)


# -- synthetic benchmark task --------------------------------------------
#
# Binary classification over a 40-word vocabulary. Easy samples are decided
# by which keyword family occurs more often (pure token counts). Hard
# samples embed the keyword region between filler spans and add a negator
# word: ahead of the keyword region it flips the label, after the region it
# is inert, so token counts alone cannot decide them.

SIDE_A_WORDS = ("good", "great", "fine", "nice", "super",
                "happy", "bright", "solid", "sweet", "calm")
SIDE_B_WORDS = ("bad", "awful", "poor", "sad", "gross",
                "dull", "weak", "sour", "grim", "rough")
FILLER_WORDS = ("the", "a", "it", "was", "day", "thing", "time", "place",
                "stuff", "bit", "sort", "kind", "deal", "case", "part",
                "way", "lot", "side", "end")
NEGATOR_WORD = "not"

MIN_LEN = 8
MAX_LEN = 24


KEYWORD_NOISE = 0.12   # chance each keyword slot draws from the wrong side
LABEL_NOISE = 0.02     # chance the final label flips outright


def _keyword_region(rng: np.random.Generator, total: int):
    """Keyword tokens for a latent side; returns (tokens, side).

    Each slot independently draws from the opposite side with probability
    KEYWORD_NOISE, so the observed count margin is graded evidence: short
    or unlucky samples are genuinely ambiguous, long clean ones are
    overwhelming. The label is the latent side regardless.
    """
    side = int(rng.integers(0, 2))
    dom, other = (SIDE_A_WORDS, SIDE_B_WORDS) if side == 0 else (SIDE_B_WORDS, SIDE_A_WORDS)
    words = []
    for _ in range(total):
        pool = other if rng.random() < KEYWORD_NOISE else dom
        words.append(pool[rng.integers(0, len(pool))])
    return words, side


def _fillers(rng: np.random.Generator, count: int) -> list[str]:
    return [FILLER_WORDS[rng.integers(0, len(FILLER_WORDS))] for _ in range(count)]


def _assemble(rng: np.random.Generator, length: int, n_keywords: int):
    """prefix fillers + keyword region + suffix fillers, both ends non-empty."""
    keywords, side = _keyword_region(rng, n_keywords)
    n_fill = length - n_keywords
    n_prefix = int(rng.integers(1, n_fill))
    return _fillers(rng, n_prefix), keywords, _fillers(rng, n_fill - n_prefix), side


def _easy_sample(rng: np.random.Generator):
    # Long keyword region: evidence is strong despite slot noise.
    length = int(rng.integers(MIN_LEN, MAX_LEN + 1))
    n_keywords = int(rng.integers(6, min(12, length - 2) + 1))
    prefix, keywords, suffix, side = _assemble(rng, length, n_keywords)
    label = 1 - side if rng.random() < LABEL_NOISE else side
    return " ".join(prefix + keywords + suffix), label


def _hard_sample(rng: np.random.Generator):
    # Short keyword region (weak evidence) plus an order-sensitive negator.
    length = int(rng.integers(MIN_LEN, MAX_LEN + 1))
    n_keywords = int(rng.integers(4, min(7, length - 4) + 1))
    prefix, keywords, suffix, side = _assemble(rng, length - 1, n_keywords)
    flips = bool(rng.integers(0, 2))
    if flips:
        # Negator ahead of the keyword region inverts the label.
        pos = int(rng.integers(0, len(prefix) + 1))
        prefix.insert(pos, NEGATOR_WORD)
        label = 1 - side
    else:
        pos = int(rng.integers(0, len(suffix) + 1))
        suffix.insert(pos, NEGATOR_WORD)
        label = side
    if rng.random() < LABEL_NOISE:
        label = 1 - label
    return " ".join(prefix + keywords + suffix), label


def is_hard_sample(text: str) -> bool:
    """Hard samples are exactly those containing the negator word."""
    return NEGATOR_WORD in tokenize(text)


def generate_synthetic(seed: int, size: int, difficulty_mix=(0.7, 0.3)) -> Dataset:
    """Deterministic synthetic corpus with the given (easy, hard) mix."""
    easy_frac, hard_frac = difficulty_mix
    if abs(easy_frac + hard_frac - 1.0) > 1e-9 or easy_frac < 0 or hard_frac < 0:
        raise ContractError("difficulty_mix fractions must be non-negative and sum to 1")
    rng = np.random.default_rng([int(seed), 91])
    examples = []
    for i in range(size):
        if rng.random() < easy_frac:
            text, label = _easy_sample(rng)
        else:
            text, label = _hard_sample(rng)
        examples.append((text, label))
    return Dataset(examples, split="all", num_classes=2, label_names=["side_a", "side_b"])


def split_index(i: int) -> str:
    """Deterministic 80/10/10 split by a hash of the sample index."""
    digest = hashlib.sha256(str(i).encode()).digest()
    bucket = digest[0] % 10
    if bucket < 8:
        return "train"
    return "dev" if bucket == 8 else "test"


def split_dataset(dataset: Dataset) -> dict[str, Dataset]:
    parts: dict[str, list] = {"train": [], "dev": [], "test": []}
    for i, ex in enumerate(dataset.examples):
        parts[split_index(i)].append(ex)
    return {
        name: Dataset(exs, split=name, num_classes=dataset.num_classes,
                      label_names=list(dataset.label_names))
        for name, exs in parts.items()
    }


def save_tsv(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for text, label in dataset.examples:
            fh.write(f"{label}\t{text}\n")
