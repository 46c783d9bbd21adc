"""Corpus handling, encoding, and the synthetic task's difficulty contract."""

import numpy as np
import pytest

from eex.data import (CLS_ID, PAD_ID, SEP_ID, UNK_ID, Dataset, build_vocab,
                      encode, encode_dataset, generate_synthetic,
                      is_hard_sample, load_tsv, save_tsv, split_dataset,
                      tokenize)
from eex.errors import ContractError, DataError


class TestLoadTsv:
    def test_single_line(self, tmp_path):
        path = tmp_path / "data.tsv"
        path.write_text("1\thello world\n", encoding="utf-8")
        ds = load_tsv(path)
        assert ds.examples == [("hello world", 1)]

    def test_empty_file_is_valid(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("", encoding="utf-8")
        assert len(load_tsv(path)) == 0

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "data.tsv"
        path.write_text("0\ta\n\n1\tb\n", encoding="utf-8")
        assert len(load_tsv(path)) == 2

    def test_non_integer_label_names_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("x\ty\n", encoding="utf-8")
        with pytest.raises(DataError, match="line 1"):
            load_tsv(path)

    def test_missing_tab_names_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("0\tok\nnotab\n", encoding="utf-8")
        with pytest.raises(DataError, match="line 2"):
            load_tsv(path)

    def test_label_out_of_range(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("5\ttext\n", encoding="utf-8")
        with pytest.raises(DataError, match="line 1"):
            load_tsv(path, num_classes=2)


class TestVocab:
    def test_frequency_order(self):
        ds = Dataset([("a a b", 0)])
        vocab = build_vocab(ds, max_size=6)
        assert vocab.token_to_id["a"] == 4
        assert vocab.token_to_id["b"] == 5

    def test_tie_broken_lexicographically(self):
        ds = Dataset([("pear apple pear apple", 0)])
        vocab = build_vocab(ds, max_size=8)
        assert vocab.token_to_id["apple"] == 4
        assert vocab.token_to_id["pear"] == 5

    def test_rebuild_deterministic(self):
        ds = Dataset([("c b a c b c", 0), ("d d", 1)])
        assert build_vocab(ds, 10).token_to_id == build_vocab(ds, 10).token_to_id

    def test_truncation_keeps_most_frequent(self):
        ds = Dataset([("a a a b b c", 0)])
        vocab = build_vocab(ds, max_size=6)
        assert "c" not in vocab.token_to_id
        assert vocab.size == 6

    def test_unknown_token_maps_to_unk(self):
        ds = Dataset([("a", 0)])
        vocab = build_vocab(ds, 6)
        assert vocab.id_for("never-seen") == UNK_ID


class TestEncode:
    def setup_method(self):
        self.vocab = build_vocab(Dataset([("hi there you", 0)]), 10)

    def test_short_text_padded(self):
        ids, mask, seg = encode("hi", self.vocab, n_max=5)
        assert ids[0] == CLS_ID and ids[2] == SEP_ID
        assert list(ids[3:]) == [PAD_ID, PAD_ID]
        assert list(mask) == [1, 1, 1, 0, 0]
        assert np.all(seg == 0)

    def test_overlength_truncated_and_sealed(self):
        ids, mask, _ = encode("hi there you hi there you", self.vocab, n_max=4)
        assert len(ids) == 4
        assert ids[0] == CLS_ID and ids[-1] == SEP_ID
        assert np.all(mask == 1)

    def test_empty_text(self):
        ids, mask, _ = encode("", self.vocab, n_max=4)
        assert list(ids) == [CLS_ID, SEP_ID, PAD_ID, PAD_ID]

    def test_lowercasing(self):
        assert tokenize("Hi THERE") == ["hi", "there"]

    def test_encoded_dataset_positions(self):
        ds = Dataset([("hi", 0), ("there you", 1)])
        batch = encode_dataset(ds, self.vocab, 6)
        assert np.all(batch.ids[:, 0] == CLS_ID)
        np.testing.assert_array_equal(batch.labels, [0, 1])


def bag_of_words_oracle_accuracy(train, test, vocab_tokens):
    """Accuracy of a token-count logistic regression, the order-blind oracle."""
    from sklearn.linear_model import LogisticRegression

    index = {tok: i for i, tok in enumerate(vocab_tokens)}

    def featurize(ds):
        x = np.zeros((len(ds), len(index)))
        y = np.zeros(len(ds), dtype=int)
        for row, (text, label) in enumerate(ds.examples):
            for tok in tokenize(text):
                x[row, index[tok]] += 1.0
            y[row] = label
        return x, y

    x_train, y_train = featurize(train)
    x_test, y_test = featurize(test)
    clf = LogisticRegression(max_iter=2000).fit(x_train, y_train)
    return clf.score(x_test, y_test)


class TestSyntheticTask:
    def test_deterministic(self):
        a = generate_synthetic(seed=7, size=50)
        b = generate_synthetic(seed=7, size=50)
        assert a.examples == b.examples

    def test_seed_changes_content(self):
        a = generate_synthetic(seed=7, size=50)
        b = generate_synthetic(seed=8, size=50)
        assert a.examples != b.examples

    def test_lengths_and_vocabulary_size(self):
        ds = generate_synthetic(seed=0, size=300)
        tokens = set()
        for text, _ in ds.examples:
            words = tokenize(text)
            assert 8 <= len(words) <= 25  # negator may extend a hard sample by one
            tokens.update(words)
        assert len(tokens) <= 40

    def test_bad_mix_rejected(self):
        with pytest.raises(ContractError):
            generate_synthetic(0, 10, difficulty_mix=(0.5, 0.6))

    def test_easy_subset_is_count_separable(self):
        ds = generate_synthetic(seed=0, size=1500, difficulty_mix=(1.0, 0.0))
        tokens = sorted({t for text, _ in ds.examples for t in tokenize(text)})
        train = Dataset(ds.examples[:1200])
        test = Dataset(ds.examples[1200:])
        acc = bag_of_words_oracle_accuracy(train, test, tokens)
        assert acc >= 0.95

    def test_hard_subset_defeats_count_oracle(self):
        ds = generate_synthetic(seed=0, size=1500, difficulty_mix=(0.0, 1.0))
        tokens = sorted({t for text, _ in ds.examples for t in tokenize(text)})
        train = Dataset(ds.examples[:1200])
        test = Dataset(ds.examples[1200:])
        acc = bag_of_words_oracle_accuracy(train, test, tokens)
        assert acc <= 0.75

    def test_difficulty_gap_at_least_15_points(self):
        easy = generate_synthetic(seed=3, size=1500, difficulty_mix=(1.0, 0.0))
        hard = generate_synthetic(seed=3, size=1500, difficulty_mix=(0.0, 1.0))

        def oracle(ds):
            tokens = sorted({t for text, _ in ds.examples for t in tokenize(text)})
            return bag_of_words_oracle_accuracy(
                Dataset(ds.examples[:1200]), Dataset(ds.examples[1200:]), tokens)

        assert oracle(easy) - oracle(hard) >= 0.15

    def test_hard_samples_marked_by_negator(self):
        ds = generate_synthetic(seed=1, size=400, difficulty_mix=(0.0, 1.0))
        assert all(is_hard_sample(text) for text, _ in ds.examples)
        easy = generate_synthetic(seed=1, size=400, difficulty_mix=(1.0, 0.0))
        assert not any(is_hard_sample(text) for text, _ in easy.examples)

    def test_split_fractions_and_roundtrip(self, tmp_path):
        ds = generate_synthetic(seed=0, size=2000)
        parts = split_dataset(ds)
        assert sum(len(p) for p in parts.values()) == 2000
        assert 0.7 < len(parts["train"]) / 2000 < 0.9
        path = tmp_path / "train.tsv"
        save_tsv(parts["train"], path)
        reloaded = load_tsv(path, num_classes=2)
        assert reloaded.examples == parts["train"].examples
