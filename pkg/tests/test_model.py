"""Encoder forward/backward: shapes, invariances, gradient correctness."""
import numpy as np
import pytest

from conftest import desk_model_config, probe_batch, tiny_model_config
from profpred.alphabet import PAD_ID, VOCAB_SIZE
from profpred.exceptions import (
    InvalidConfigError,
    LengthExceededError,
    TokenOutOfRangeError,
)
from profpred.model import (
    ModelConfig,
    backward,
    compute_loss,
    forward,
    grad_check,
    init_params,
    tensor_shapes,
)
from profpred.seeding import derive_rng


class TestConfigAndInit:
    def test_same_seed_same_params(self):
        cfg = tiny_model_config(seed=5)
        p1 = init_params(cfg)
        p2 = init_params(cfg)
        for name in p1.names():
            assert np.array_equal(p1[name], p2[name])

    def test_divisibility_enforced(self):
        with pytest.raises(InvalidConfigError):
            ModelConfig(hidden_dim=65, num_heads=4)

    def test_parameter_count_closed_form(self):
        cfg = desk_model_config()
        params = init_params(cfg)
        d, f, v, p = cfg.hidden_dim, cfg.ff_dim, cfg.vocab_size, cfg.max_positions
        per_layer = 4 * (d * d + d) + 2 * (2 * d) + (d * f + f) + (f * d + d)
        expected = (v * d) + (p * d) + 2 * d + cfg.num_layers * per_layer \
            + (d * v + v) + (d * 20 + 20)
        assert params.num_parameters() == expected

    def test_shapes_follow_config(self):
        cfg = tiny_model_config()
        shapes = tensor_shapes(cfg)
        assert shapes["token_embed"] == (VOCAB_SIZE, cfg.hidden_dim)
        assert shapes["layer0.ff.w1"] == (cfg.hidden_dim, cfg.ff_dim)

    def test_paper_scale_constructible(self):
        cfg = ModelConfig.paper_scale()
        assert cfg.hidden_dim == 768 and cfg.num_layers == 12
        assert tensor_shapes(cfg)["token_embed"] == (VOCAB_SIZE, 768)

    def test_dropout_rate_validated(self):
        with pytest.raises(InvalidConfigError):
            ModelConfig(dropout_rate=1.0)


class TestForward:
    def test_attention_rows_sum_to_one(self, tiny_params):
        batch = probe_batch()
        out = forward(tiny_params, batch.tokens, return_attention=True)
        for probs in out.attention:
            assert np.max(np.abs(probs.sum(axis=-1) - 1.0)) < 1e-6

    def test_profile_probs_normalized_and_positive(self, tiny_params):
        batch = probe_batch()
        out = forward(tiny_params, batch.tokens)
        assert np.max(np.abs(out.profile_probs.sum(axis=-1) - 1.0)) < 1e-6
        assert (out.profile_probs > 0).all()

    def test_identical_sequences_identical_rows(self, tiny_params):
        tokens = np.tile(np.arange(5, dtype=np.int64)[None, :], (2, 1))
        out = forward(tiny_params, tokens)
        assert np.array_equal(out.hidden_states[0], out.hidden_states[1])
        assert np.array_equal(out.vocab_logits[0], out.vocab_logits[1])

    def test_eval_forward_is_pure(self, tiny_params):
        batch = probe_batch()
        out1 = forward(tiny_params, batch.tokens)
        out2 = forward(tiny_params, batch.tokens)
        assert np.array_equal(out1.hidden_states, out2.hidden_states)

    def test_padding_invariance(self, tiny_params):
        tokens = np.arange(5, dtype=np.int64)[None, :]
        padded = np.concatenate(
            [tokens, np.full((1, 3), PAD_ID, dtype=np.int64)], axis=1)
        out_short = forward(tiny_params, tokens)
        out_long = forward(tiny_params, padded)
        assert np.max(np.abs(out_long.hidden_states[0, :5]
                             - out_short.hidden_states[0])) < 1e-5
        assert np.max(np.abs(out_long.profile_probs[0, :5]
                             - out_short.profile_probs[0])) < 1e-5

    def test_token_out_of_range(self, tiny_params):
        with pytest.raises(TokenOutOfRangeError):
            forward(tiny_params, np.array([[0, 25]], dtype=np.int64))

    def test_length_exceeded(self, tiny_params):
        with pytest.raises(LengthExceededError):
            forward(tiny_params, np.zeros((1, 9), dtype=np.int64))

    def test_dropout_needs_rng_and_changes_output(self):
        cfg = tiny_model_config(dropout_rate=0.2)
        params = init_params(cfg)
        tokens = np.arange(6, dtype=np.int64)[None, :]
        with pytest.raises(InvalidConfigError):
            forward(params, tokens, train=True)
        out_train = forward(params, tokens, train=True,
                            rng=derive_rng(1, "drop"))
        out_eval = forward(params, tokens)
        assert not np.allclose(out_train.hidden_states, out_eval.hidden_states)


class TestBackward:
    def test_zero_gradient_step_leaves_loss(self, tiny_params):
        batch = probe_batch()
        loss1, grads, _ = backward(tiny_params, batch, "pp")
        for name in tiny_params.names():
            tiny_params[name][...] -= 0.0 * grads[name]
        loss2, _ = compute_loss(tiny_params, batch, "pp")
        assert loss1 == loss2

    def test_joint_lambda_one_equals_mlm(self, tiny_params):
        batch = probe_batch()
        loss_joint, grads_joint, _ = backward(tiny_params, batch, "joint",
                                              lam=1.0)
        loss_mlm, grads_mlm, _ = backward(tiny_params, batch, "mlm")
        assert loss_joint == loss_mlm
        for name in grads_mlm:
            assert np.array_equal(grads_joint[name], grads_mlm[name])

    def test_joint_lambda_zero_equals_pp(self, tiny_params):
        batch = probe_batch()
        loss_joint, grads_joint, _ = backward(tiny_params, batch, "joint",
                                              lam=0.0)
        loss_pp, grads_pp, _ = backward(tiny_params, batch, "pp")
        assert loss_joint == loss_pp
        for name in grads_pp:
            assert np.array_equal(grads_joint[name], grads_pp[name])

    def test_joint_gradient_is_lambda_mix(self, tiny_params):
        batch = probe_batch()
        lam = 0.3
        p64 = tiny_params.astype(np.float64)
        _, g_joint, _ = backward(p64, batch, "joint", lam=lam)
        _, g_mlm, _ = backward(p64, batch, "mlm")
        _, g_pp, _ = backward(p64, batch, "pp")
        for name in g_joint:
            mixed = lam * g_mlm[name] + (1 - lam) * g_pp[name]
            assert np.allclose(g_joint[name], mixed, atol=1e-12)

    def test_loss_matches_reference_losses(self, tiny_params):
        from profpred.losses import kl_divergence, mlm_loss

        batch = probe_batch()
        out = forward(tiny_params.astype(np.float64), batch.tokens)
        loss_pp, _ = compute_loss(tiny_params.astype(np.float64), batch, "pp")
        manual = 0.0
        B, T = batch.tokens.shape
        for b in range(B):
            seq = sum(kl_divergence(batch.labels[b, i],
                                    out.profile_probs[b, i])
                      for i in range(T) if batch.label_mask[b, i])
            manual += seq / batch.lengths[b]
        assert loss_pp == pytest.approx(manual / B, rel=1e-9)

        loss_mlm, _ = compute_loss(tiny_params.astype(np.float64), batch, "mlm")
        manual = 0.0
        for b in range(B):
            idx = np.flatnonzero(batch.mlm_mask[b])
            manual += mlm_loss(out.vocab_logits[b, idx],
                               batch.mlm_targets[b, idx],
                               sequence_length=int(batch.lengths[b]))
        assert loss_mlm == pytest.approx(manual / B, rel=1e-9)


class TestGradCheck:
    @pytest.mark.parametrize("objective", ["pp", "mlm", "joint"])
    def test_tiny_config_gradients(self, tiny_params, objective):
        batch = probe_batch()
        report = grad_check(tiny_params, batch, objective, lam=0.3)
        assert report.passed, report.format()
        assert report.overall_max < 1e-3

    def test_corrupted_gradient_detected(self, tiny_params):
        # zero out the largest-magnitude analytic entry and verify the
        # report flags that tensor
        batch = probe_batch()
        p64 = tiny_params.astype(np.float64)
        _, analytic, _ = backward(p64, batch, "pp")

        from profpred.model import GradCheckReport, _fd_sweep
        corrupt_name = max(
            analytic, key=lambda n: np.max(np.abs(analytic[n])))
        flat = analytic[corrupt_name].reshape(-1)
        flat[int(np.argmax(np.abs(flat)))] = 0.0
        max_err, worst = _fd_sweep(p64, batch, {"pp": analytic}, 0.5,
                                   1e-3, "length")
        report = GradCheckReport(objective="pp", tolerance=1e-3,
                                 max_rel_error=max_err["pp"],
                                 worst_entry=worst["pp"])
        assert not report.passed
        assert report.max_rel_error[corrupt_name] >= 1e-3

    def test_pp_only_batch_supported(self, tiny_params):
        batch = probe_batch(with_mlm=False)
        report = grad_check(tiny_params, batch, "pp")
        assert report.passed


class TestOverfitSanity:
    @pytest.mark.parametrize("objective", ["pp", "mlm", "joint"])
    def test_loss_decreases_on_repeated_batch(self, objective):
        cfg = tiny_model_config(hidden_dim=16, ff_dim=32, num_heads=2)
        params = init_params(cfg)
        batch = probe_batch(seed=3)
        initial, _ = compute_loss(params, batch, objective, lam=0.5)
        for _ in range(50):
            _, grads, _ = backward(params, batch, objective, lam=0.5)
            for name in params.names():
                params[name][...] -= 0.5 * grads[name]
        final, _ = compute_loss(params, batch, objective, lam=0.5)
        assert final < initial
