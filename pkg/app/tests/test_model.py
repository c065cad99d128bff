"""
Tests for the numpy encoder-decoder.
"""

import math

import numpy as np
import pytest

from app.core.exceptions import DataError
from app.schemas.experiment import ModelConfig
from app.services.model import (
    attention,
    attention_weights,
    backward,
    cross_entropy,
    decode_logits,
    encode,
    forward,
    greedy_decode_ids,
    init_params,
    loss_and_grads,
    mean_loss,
    param_names,
    param_shapes,
    relative_position_index,
)
from app.services.tokenizer import EOS_ID, PAD_ID, EncodedExample, TokenSequence


def make_example(par_id, src, label_id):
    return EncodedExample(
        par_id=par_id,
        src=TokenSequence(tuple(src)),
        tgt_in=TokenSequence((PAD_ID, label_id)),
        targets=TokenSequence((label_id, EOS_ID)),
    )


def randomized_params(config: ModelConfig, seed: int = 3):
    """Initialized params with non-trivial norm scales and bias tables."""
    params = init_params(config)
    rng = np.random.default_rng(seed)
    for name, array in params.arrays.items():
        if name.endswith("_norm"):
            array += 0.1 * rng.standard_normal(array.shape)
        elif name.endswith("rel_bias"):
            array += 0.5 * rng.standard_normal(array.shape)
    return params


class TestInitParams:
    """Test parameter initialization."""

    def test_deterministic(self, tiny_model_config):
        """Same config and seed give identical arrays."""
        a = init_params(tiny_model_config)
        b = init_params(tiny_model_config)
        for name in param_names(tiny_model_config):
            np.testing.assert_array_equal(a.arrays[name], b.arrays[name])

    def test_bias_tables_zero_and_norms_one(self, tiny_model_config):
        params = init_params(tiny_model_config)
        assert not params.arrays["enc.rel_bias"].any()
        assert not params.arrays["dec.rel_bias"].any()
        np.testing.assert_array_equal(params.arrays["enc.final_norm"], np.ones(16))

    def test_shapes_follow_config(self, tiny_model_config):
        params = init_params(tiny_model_config)
        shapes = param_shapes(tiny_model_config)
        assert list(params.arrays) == list(shapes)
        for name, shape in shapes.items():
            assert params.arrays[name].shape == shape
        assert params.arrays["enc.rel_bias"].shape == (2, 9)
        assert params.arrays["embed"].shape == (32, 16)

    def test_head_dimension(self):
        """d_model 64 with 4 heads gives 16 per head."""
        assert ModelConfig(vocab_size=10, d_model=64, n_heads=4).d_head == 16

    def test_weight_scale(self):
        config = ModelConfig(vocab_size=400, d_model=64, seed=5)
        embed = init_params(config).arrays["embed"]
        assert abs(embed.mean()) < 0.01
        assert embed.std() == pytest.approx(1 / 8, rel=0.05)

    def test_untied_output_adds_head(self, tiny_model_config):
        config = tiny_model_config.model_copy(update={"tie_embeddings": False})
        assert param_names(config)[-1] == "lm_head"
        assert "lm_head" not in param_names(tiny_model_config)


class TestAttention:
    """Test scaled dot-product attention."""

    def test_single_unmasked_position_returns_its_value(self):
        q = np.array([[0.3, -1.0]])
        k = np.array([[1.0, 2.0], [0.5, 0.5], [-1.0, 0.0]])
        v = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        mask = np.array([[False, True, False]])
        np.testing.assert_allclose(attention(q, k, v, mask), [[3.0, 4.0]])

    def test_equal_scores_average_values(self):
        q = np.array([[1.0]])
        k = np.array([[2.0], [2.0]])
        v = np.array([[4.0], [0.0]])
        np.testing.assert_allclose(attention(q, k, v), [[2.0]])

    def test_hand_softmax(self):
        """Scores (ln 3, 0) weight the values 0.75 / 0.25."""
        q = np.array([[1.0]])
        k = np.array([[math.log(3.0)], [0.0]])
        v = np.array([[4.0], [0.0]])
        np.testing.assert_allclose(attention_weights(q, k), [[0.75, 0.25]])
        np.testing.assert_allclose(attention(q, k, v), [[3.0]])

    def test_rel_bias_shifts_scores(self):
        q = np.zeros((1, 1))
        k = np.zeros((2, 1))
        v = np.array([[4.0], [0.0]])
        bias = np.array([[math.log(3.0), 0.0]])
        np.testing.assert_allclose(attention(q, k, v, rel_bias=bias), [[3.0]])

    def test_fully_masked_row_raises(self):
        q = np.ones((2, 2))
        k = np.ones((2, 2))
        mask = np.array([[True, False], [False, False]])
        with pytest.raises(ValueError):
            attention(q, k, k, mask)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        q = rng.standard_normal((3, 5, 4))
        k = rng.standard_normal((3, 7, 4))
        mask = rng.random((3, 5, 7)) < 0.6
        mask[..., 0] = True
        weights = attention_weights(q, k, mask, rel_bias=rng.standard_normal((3, 5, 7)))
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-9)
        assert not weights[~mask].any()


class TestRelativePositions:
    """Test relative offset indexing."""

    def test_offsets_are_clipped(self):
        idx = relative_position_index(3, 6, 2)
        assert idx.shape == (3, 6)
        assert idx[0].tolist() == [2, 3, 4, 4, 4, 4]
        assert idx[2].tolist() == [0, 1, 2, 3, 4, 4]


class TestForward:
    """Test the teacher-forced forward pass."""

    def test_shape_and_finiteness(self, tiny_model_config):
        params = init_params(tiny_model_config)
        logits = forward(params, [3, 7, 9, 1], [0, 4])
        assert logits.shape == (2, 32)
        assert np.isfinite(logits).all()

    def test_deterministic(self, tiny_model_config):
        params = randomized_params(tiny_model_config)
        np.testing.assert_array_equal(
            forward(params, [3, 7, 9, 1], [0, 4, 5]),
            forward(params, [3, 7, 9, 1], [0, 4, 5]),
        )

    def test_split_forward_matches(self, tiny_model_config):
        params = randomized_params(tiny_model_config)
        memory = encode(params, [3, 7, 9, 1])
        assert memory.shape == (4, 16)
        np.testing.assert_array_equal(
            decode_logits(params, memory, [0, 4]),
            forward(params, [3, 7, 9, 1], [0, 4]),
        )

    def test_source_order_matters(self, tiny_model_config):
        params = randomized_params(tiny_model_config)
        a = forward(params, [3, 7, 9, 11, 1], [0, 4])
        b = forward(params, [11, 9, 7, 3, 1], [0, 4])
        assert not np.allclose(a, b)

    def test_causality(self, tiny_model_config):
        """Logits at position t ignore decoder inputs after t."""
        params = randomized_params(tiny_model_config)
        src = [3, 8, 12, 1]
        a = forward(params, src, [0, 4, 10, 20])
        b = forward(params, src, [0, 4, 17, 2])
        np.testing.assert_allclose(a[:2], b[:2], rtol=0, atol=1e-12)
        assert not np.allclose(a[2], b[2])

    def test_batch_independent(self, tiny_model_config):
        """An example's contribution does not depend on its batch mates."""
        params = randomized_params(tiny_model_config)
        ex_a = make_example("a", [3, 7, 9, 1], 4)
        ex_b = make_example("b", [10, 11, 1], 5)
        loss_a, _ = loss_and_grads(params, [ex_a])
        loss_b, _ = loss_and_grads(params, [ex_b])
        loss_ab, _ = loss_and_grads(params, [ex_a, ex_b])
        assert loss_ab == pytest.approx((loss_a + loss_b) / 2, abs=1e-12)

    def test_too_long_sequence_raises(self, tiny_model_config):
        params = init_params(tiny_model_config)
        with pytest.raises(DataError):
            forward(params, [3] * 17, [0, 4])

    def test_out_of_vocabulary_id_raises(self, tiny_model_config):
        params = init_params(tiny_model_config)
        with pytest.raises(DataError):
            forward(params, [3, 32, 1], [0, 4])


class TestCrossEntropy:
    """Test the token loss."""

    def test_perfect_prediction(self):
        logits = np.array([[0.0, 1e4, 0.0]])
        assert cross_entropy(logits, [1]) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_logits(self):
        assert cross_entropy(np.zeros((3, 4)), [0, 1, 3]) == pytest.approx(math.log(4))

    def test_hand_computed_mean(self):
        """Target probabilities 0.5 and 0.25 average to (ln 2 + ln 4) / 2."""
        logits = np.log(np.array([[0.5, 0.25, 0.25], [0.25, 0.5, 0.25]]))
        loss = cross_entropy(logits, [0, 2])
        assert loss == pytest.approx((math.log(2) + math.log(4)) / 2)
        assert loss == pytest.approx(1.0397, abs=1e-4)

    def test_pad_positions_excluded(self):
        logits = np.log(np.array([[0.5, 0.5], [0.9, 0.1]]))
        assert cross_entropy(logits, [0, 1], pad_mask=[False, True]) == pytest.approx(math.log(2))

    def test_all_padded_raises(self):
        with pytest.raises(DataError):
            cross_entropy(np.zeros((2, 3)), [0, 1], pad_mask=[True, True])

    def test_initial_loss_near_uniform(self, tiny_model_config):
        params = init_params(tiny_model_config)
        rng = np.random.default_rng(11)
        losses = []
        for _ in range(20):
            src = rng.integers(3, 32, size=8).tolist()
            targets = rng.integers(0, 32, size=4).tolist()
            losses.append(cross_entropy(forward(params, src, [0] + targets[:-1]), targets))
        assert abs(np.mean(losses) - math.log(32)) < 0.1 * math.log(32)


class TestGradients:
    """Test analytic gradients against finite differences."""

    def test_finite_difference_check(self, tiny_model_config):
        """Central differences (h=1e-5) agree within 1e-3 relative / 1e-8 absolute."""
        params = randomized_params(tiny_model_config)
        batch = [
            make_example("a", [3, 9, 14, 20, 27, 1], 4),
            make_example("b", [5, 30, 8, 1], 5),
        ]
        _, grads = loss_and_grads(params, batch)

        h = 1e-5
        checked = passed = 0
        failures = []
        for name, array in params.arrays.items():
            flat = array.reshape(-1)
            grad = grads[name].reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + h
                plus = mean_loss(params, batch)
                flat[i] = original - h
                minus = mean_loss(params, batch)
                flat[i] = original
                numeric = (plus - minus) / (2 * h)
                diff = abs(numeric - grad[i])
                ok = diff <= max(1e-8, 1e-3 * max(abs(numeric), abs(grad[i])))
                checked += 1
                passed += ok
                if not ok:
                    failures.append((name, i, numeric, grad[i]))

        assert checked == params.n_parameters
        assert passed / checked >= 0.99, failures[:10]

    def test_unused_embedding_row_only_gets_output_gradient(self, tiny_model_config):
        """Untied: an unused token's embedding row has zero gradient."""
        config = tiny_model_config.model_copy(update={"tie_embeddings": False})
        params = randomized_params(config)
        grads = backward(params, [3, 6, 9, 1], [0, 4], [4, 1])
        np.testing.assert_array_equal(grads["embed"][31], np.zeros(16))
        assert grads["lm_head"][31].any()

    def test_tied_unused_row_matches_output_path(self, tiny_model_config):
        """Tied: the unused row's gradient is exactly the output-projection term."""
        tied = randomized_params(tiny_model_config)
        untied_config = tiny_model_config.model_copy(update={"tie_embeddings": False})
        untied_arrays = dict(tied.copy().arrays)
        untied_arrays["lm_head"] = tied.arrays["embed"].copy()
        untied = type(tied)(untied_config, untied_arrays)

        tied_grads = backward(tied, [3, 6, 9, 1], [0, 4], [4, 1])
        untied_grads = backward(untied, [3, 6, 9, 1], [0, 4], [4, 1])
        np.testing.assert_allclose(tied_grads["embed"][31], untied_grads["lm_head"][31], rtol=0, atol=1e-15)

    def test_duplicated_example_leaves_gradients_unchanged(self, tiny_model_config):
        params = randomized_params(tiny_model_config)
        ex = make_example("a", [3, 9, 14, 1], 5)
        loss_1, grads_1 = loss_and_grads(params, [ex])
        loss_2, grads_2 = loss_and_grads(params, [ex, ex])
        assert loss_2 == pytest.approx(loss_1, abs=1e-12)
        for name in grads_1:
            np.testing.assert_allclose(grads_2[name], grads_1[name], rtol=1e-12, atol=1e-15)

    def test_backward_matches_batch_of_one(self, tiny_model_config):
        params = randomized_params(tiny_model_config)
        ex = make_example("a", [3, 9, 14, 1], 5)
        _, batch_grads = loss_and_grads(params, [ex])
        grads = backward(params, ex.src, ex.tgt_in, ex.targets)
        for name in grads:
            np.testing.assert_allclose(grads[name], batch_grads[name], rtol=1e-12, atol=1e-15)

    def test_empty_batch_raises(self, tiny_model_config):
        with pytest.raises(DataError):
            loss_and_grads(init_params(tiny_model_config), [])


class TestGreedyDecodeIds:
    """Test id-level greedy decoding."""

    def test_stops_at_max_len(self, tiny_model_config):
        params = randomized_params(tiny_model_config)
        ids = greedy_decode_ids(params, [3, 9, 1], max_len=3)
        assert len(ids) <= 3
        assert EOS_ID not in ids

    def test_eos_argmax_gives_empty(self, tiny_model_config):
        config = tiny_model_config.model_copy(update={"tie_embeddings": False})
        params = randomized_params(config)
        head = params.arrays["lm_head"]
        # Read the decoder state through an identity head, then point EOS at it
        head[:] = 0.0
        head[:16] = np.eye(16)
        state = decode_logits(params, encode(params, [3, 9, 1]), [PAD_ID])[-1, :16].copy()
        head[:] = 0.0
        head[EOS_ID] = state
        assert greedy_decode_ids(params, [3, 9, 1], max_len=1) == []
        assert greedy_decode_ids(params, [3, 9, 1], max_len=3) == []

    def test_ties_pick_lowest_id(self, tiny_model_config):
        config = tiny_model_config.model_copy(update={"tie_embeddings": False})
        params = randomized_params(config)
        params.arrays["lm_head"][:] = 0.0
        assert greedy_decode_ids(params, [3, 9, 1], max_len=3) == [PAD_ID, PAD_ID, PAD_ID]
