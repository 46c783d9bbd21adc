"""Early-exit semantics: threshold rule, sifting equivalence, monotonicity."""

import numpy as np
import pytest

from eex.autodiff import no_grad
from eex.errors import ConfigError, ContractError
from eex.inference import (Speed, adaptive_infer, fixed_layer_infer,
                           uncertainty, uncertainty_rows)
from eex.model import EarlyExitTransformer, ModelConfig

from test_model import TINY, make_batch


@pytest.fixture(scope="module")
def model():
    return EarlyExitTransformer(TINY, seed=0)


@pytest.fixture(scope="module")
def batch():
    return make_batch(np.random.default_rng(42), TINY, batch_size=16)


class TestUncertainty:
    @pytest.mark.parametrize("n", [2, 3, 7])
    def test_uniform_is_one(self, n):
        assert uncertainty(np.full(n, 1.0 / n)) == pytest.approx(1.0)

    @pytest.mark.parametrize("n", [2, 5])
    def test_one_hot_is_zero(self, n):
        p = np.zeros(n)
        p[0] = 1.0
        assert uncertainty(p) == 0.0

    def test_frozen_binary_value(self):
        # direct evaluation of the normalized entropy at p=(0.9, 0.1)
        expected = (0.9 * np.log(0.9) + 0.1 * np.log(0.1)) / np.log(0.5)
        assert uncertainty(np.array([0.9, 0.1])) == pytest.approx(expected)
        assert expected == pytest.approx(0.4690, abs=1e-4)

    def test_unnormalized_rejected(self):
        with pytest.raises(ContractError):
            uncertainty(np.array([0.5, 0.6]))

    def test_single_class_rejected(self):
        with pytest.raises(ContractError):
            uncertainty(np.array([1.0]))

    def test_rows_in_unit_interval(self, rng):
        logits = rng.normal(size=(200, 5)) * 4
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        u = uncertainty_rows(p)
        assert np.all((u >= 0.0) & (u <= 1.0))


class TestSpeed:
    def test_bounds(self):
        Speed(0.0)
        Speed(1.0)
        with pytest.raises(ConfigError):
            Speed(1.5)
        with pytest.raises(ConfigError):
            Speed(-0.1)


class TestAdaptiveInfer:
    def test_speed_zero_everyone_reaches_teacher(self, model, batch):
        trace = adaptive_infer(model, batch, 0.0)
        assert np.all(trace.exit_layers() == TINY.num_layers - 1)
        with no_grad():
            teacher = model.full_forward(batch).teacher.probs.data
        np.testing.assert_array_equal(trace.predictions(),
                                      np.argmax(teacher, axis=1))
        # Exact same arrays: the sifting run at speed 0 never shrinks.
        for s in trace.samples:
            np.testing.assert_array_equal(s.probabilities, teacher[s.index])

    def test_speed_one_exit_rule(self, model, batch):
        # Exit needs uncertainty strictly below the threshold; float-exactly
        # uniform rows (uncertainty 1.0) must proceed instead.
        trace = adaptive_infer(model, batch, 1.0)
        for s in trace.samples:
            if s.uncertainties[0] < 1.0:
                assert s.exit_layer == 0
            else:
                assert s.exit_layer > 0

    def test_speed_one_everyone_exits_at_layer_zero_when_non_uniform(self, batch):
        # Break the untrained head's symmetry so every output row is
        # measurably non-uniform; then speed 1.0 exits everything at layer 0.
        model = EarlyExitTransformer(TINY, seed=0)
        model.students[0].out_b.data[:] = [2.0, -2.0]
        trace = adaptive_infer(model, batch, 1.0)
        assert np.all(trace.exit_layers() == 0)

    def test_uncertainties_recorded_up_to_exit(self, model, batch):
        trace = adaptive_infer(model, batch, 0.5)
        for s in trace.samples:
            assert sorted(s.uncertainties) == list(range(s.exit_layer + 1))
            # survivors crossed every earlier gate
            for layer in range(s.exit_layer):
                assert s.uncertainties[layer] >= 0.5
            if s.exit_layer < TINY.num_layers - 1:
                assert s.uncertainties[s.exit_layer] < 0.5

    def test_single_sample_oracle_equivalence(self, model, batch):
        """Batched sifting must match running each sample alone."""
        for speed in (0.1, 0.3, 0.5, 0.8):
            batched = adaptive_infer(model, batch, speed)
            for i in range(len(batch)):
                alone = adaptive_infer(model, batch.take(np.array([i])), speed)
                assert alone.samples[0].exit_layer == batched.samples[i].exit_layer
                assert alone.samples[0].prediction == batched.samples[i].prediction

    def test_brute_force_first_crossing_rule(self, model, batch):
        """Recompute exits from a full no-exit forward pass."""
        with no_grad():
            result = model.full_forward(batch)
        all_probs = [s.probs.data for s in result.students] + [result.teacher.probs.data]
        for speed in (0.2, 0.5, 0.9):
            trace = adaptive_infer(model, batch, speed)
            for i, s in enumerate(trace.samples):
                expected_exit = TINY.num_layers - 1
                for layer in range(TINY.num_layers - 1):
                    if uncertainty(all_probs[layer][i]) < speed:
                        expected_exit = layer
                        break
                assert s.exit_layer == expected_exit
                assert s.prediction == np.argmax(all_probs[expected_exit][i])

    def test_exit_layers_monotone_in_speed(self, model, batch):
        speeds = np.linspace(0.0, 1.0, 11)
        exits = np.stack([adaptive_infer(model, batch, s).exit_layers()
                          for s in speeds])
        assert np.all(np.diff(exits, axis=0) <= 0)

    def test_entry_counts_shrink(self, model, batch):
        trace = adaptive_infer(model, batch, 0.6)
        counts = trace.layer_entry_counts
        assert counts[0] == len(batch)
        assert np.all(np.diff(counts) <= 0)
        exits_at = np.bincount(trace.exit_layers(), minlength=TINY.num_layers)
        survivors = len(batch) - np.cumsum(exits_at)
        np.testing.assert_array_equal(counts[1:], survivors[:-1])

    def test_batch_composition_invariance(self, model, batch):
        half = batch.take(np.arange(0, len(batch), 2))
        full_trace = adaptive_infer(model, batch, 0.5)
        half_trace = adaptive_infer(model, half, 0.5)
        for j, i in enumerate(range(0, len(batch), 2)):
            assert half_trace.samples[j].exit_layer == full_trace.samples[i].exit_layer
            assert half_trace.samples[j].prediction == full_trace.samples[i].prediction

    def test_empty_batch_rejected(self, model, batch):
        with pytest.raises(ContractError):
            adaptive_infer(model, batch.take(np.array([], dtype=int)), 0.5)

    def test_csv_export(self, model, batch, tmp_path):
        trace = adaptive_infer(model, batch, 0.5)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("sample_id,exit_layer,prediction,label,u_0")
        assert len(lines) == len(batch) + 1
        # executed layers have a value, later ones are blank
        first = trace.samples[0]
        cells = lines[1].split(",")
        for layer in range(TINY.num_layers):
            filled = cells[4 + layer] != ""
            assert filled == (layer in first.uncertainties)


class TestFixedLayer:
    def test_k_equals_depth_matches_teacher(self, model, batch):
        trace = fixed_layer_infer(model, batch, TINY.num_layers)
        with no_grad():
            teacher = model.full_forward(batch).teacher.probs.data
        np.testing.assert_array_equal(trace.predictions(),
                                      np.argmax(teacher, axis=1))
        assert np.all(trace.exit_layers() == TINY.num_layers - 1)

    def test_k_one_matches_first_student(self, model, batch):
        trace = fixed_layer_infer(model, batch, 1)
        with no_grad():
            student0 = model.full_forward(batch).students[0].probs.data
        np.testing.assert_array_equal(trace.predictions(),
                                      np.argmax(student0, axis=1))

    def test_exactly_one_head_recorded(self, model, batch):
        trace = fixed_layer_infer(model, batch, 2)
        for s in trace.samples:
            assert list(s.uncertainties) == [1]

    def test_k_out_of_range(self, model, batch):
        with pytest.raises(ConfigError):
            fixed_layer_infer(model, batch, 0)
        with pytest.raises(ConfigError):
            fixed_layer_infer(model, batch, TINY.num_layers + 1)
