"""Stage-by-stage oracles for the convolutional autoencoder: embedding,
encoder, decoder, attention, reconstruction head, and the composed pipeline."""

import numpy as np
import pytest

from convens import autodiff as ad
from convens.autodiff import Tensor, no_grad
from convens.model import (CaeConfig, attend, cae_forward, decode, embed, encode,
                           init_cae, init_embedding, reconstruct,
                           reconstruct_embedded, window_errors)

TOY = CaeConfig(window_size=4, input_dim=2, embed_dim=3, layers=1, kernel_size=3)


def zero_like_params(params):
    return {k: Tensor(np.zeros_like(v.data), requires_grad=True)
            for k, v in params.items()}


def toy_params(cfg=TOY, seed=0):
    rng = np.random.default_rng(seed)
    return init_embedding(cfg, rng), init_cae(cfg, rng)


def np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def np_conv(x, kernel, bias, padding):
    """Independent direct convolution used to compose stage oracles."""
    w = x.shape[0]
    c_out, c_in, k = kernel.shape
    left = (k - 1) // 2 if padding == "same" else k - 1
    out = np.tile(bias, (w, 1)).astype(float)
    for t in range(w):
        for j in range(k):
            src = t + j - left
            if 0 <= src < w:
                out[t] += kernel[:, :, j] @ x[src]
    return out


def np_glu(x, params, prefix, padding):
    content = np_conv(x, params[f"{prefix}/content/kernel"].data,
                      params[f"{prefix}/content/bias"].data, padding)
    gate = np_conv(x, params[f"{prefix}/gate/kernel"].data,
                   params[f"{prefix}/gate/bias"].data, padding)
    return content * np_sigmoid(gate)


class TestEmbed:
    def test_zero_params_give_zero(self):
        emb, _ = toy_params()
        zeros = zero_like_params(emb)
        out = embed(Tensor(np.random.default_rng(0).normal(size=(4, 2))), zeros)
        np.testing.assert_array_equal(out.data, np.zeros((4, 3)))

    def test_position_sensitivity(self):
        emb, _ = toy_params(seed=3)
        window = np.tile([[0.5, -0.25]], (4, 1))  # identical observations
        out = embed(Tensor(window), emb).data
        assert not np.allclose(out[0], out[1])

    def test_matches_per_timestep_oracle(self):
        emb, _ = toy_params(seed=5)
        rng = np.random.default_rng(6)
        window = rng.normal(size=(4, 2))
        got = embed(Tensor(window), emb).data
        wv, bv = emb["embedding/value_weight"].data, emb["embedding/value_bias"].data
        wp, bp = emb["embedding/position_weight"].data, emb["embedding/position_bias"].data
        for t in range(4):
            content = np.tanh(wv @ window[t] + bv)
            position = np.tanh(wp[:, 0] * ((t + 1) / 4) + bp)
            np.testing.assert_allclose(got[t], content + position, rtol=1e-12)

    def test_batched_matches_single(self):
        emb, _ = toy_params(seed=7)
        rng = np.random.default_rng(8)
        windows = rng.normal(size=(3, 4, 2))
        batched = embed(Tensor(windows), emb).data
        for i in range(3):
            single = embed(Tensor(windows[i]), emb).data
            np.testing.assert_array_equal(batched[i], single)


class TestEncode:
    def test_zero_params_pass_through(self):
        _, params = toy_params()
        zeros = zero_like_params(params)
        x = np.random.default_rng(1).normal(size=(4, 3))
        states = encode(Tensor(x), zeros, TOY)
        assert len(states) == TOY.layers + 1
        for state in states:
            np.testing.assert_array_equal(state.data, x)

    def test_single_layer_matches_composition(self):
        _, params = toy_params(seed=9)
        rng = np.random.default_rng(10)
        x = rng.normal(size=(4, 3))
        got = encode(Tensor(x), params, TOY)[1].data
        gated = np_glu(x, params, "encoder/0/glu", "same")
        conv = np_conv(gated, params["encoder/0/kernel"].data,
                       params["encoder/0/bias"].data, "same")
        np.testing.assert_allclose(got, np.tanh(conv) + x, rtol=1e-10, atol=1e-12)

    def test_shapes_at_every_layer(self):
        cfg = CaeConfig(window_size=6, input_dim=2, embed_dim=5, layers=3,
                        kernel_size=3)
        rng = np.random.default_rng(11)
        params = init_cae(cfg, rng)
        states = encode(Tensor(rng.normal(size=(6, 5))), params, cfg)
        assert len(states) == 4
        for state in states:
            assert state.shape == (6, 5)


class TestAttend:
    def test_identical_encoder_states_collapse(self):
        rng = np.random.default_rng(12)
        d_layer = rng.normal(size=(5, 3))
        e_row = rng.normal(size=3)
        e_layer = np.tile(e_row, (5, 1))
        out = attend(Tensor(d_layer), Tensor(e_layer),
                     Tensor(rng.normal(size=(3, 3))), Tensor(rng.normal(size=3)))
        np.testing.assert_allclose(out.data, d_layer + e_row, atol=1e-12)

    def test_two_step_hand_computation(self):
        d_layer = np.array([[1.0, 0.0], [0.0, 1.0]])
        e_layer = np.array([[0.5, -0.5], [1.0, 2.0]])
        w_attn = np.array([[2.0, 0.0], [0.0, 1.0]])
        b_attn = np.array([0.1, -0.2])
        out = attend(Tensor(d_layer), Tensor(e_layer), Tensor(w_attn),
                     Tensor(b_attn)).data
        z = d_layer @ w_attn.T + b_attn
        for t in range(2):
            logits = np.array([z[t] @ e_layer[0], z[t] @ e_layer[1]])
            weights = np.exp(logits - logits.max())
            weights /= weights.sum()
            context = weights[0] * e_layer[0] + weights[1] * e_layer[1]
            np.testing.assert_allclose(out[t], d_layer[t] + context, rtol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(13)
        d_layer = Tensor(rng.normal(size=(6, 4)))
        e_layer = Tensor(rng.normal(size=(6, 4)))
        summary = ad.linear(d_layer, Tensor(rng.normal(size=(4, 4))),
                            Tensor(rng.normal(size=4)))
        alpha = ad.softmax_rows(ad.matmul(summary, ad.transpose_last2(e_layer)))
        np.testing.assert_allclose(alpha.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_context_in_convex_hull(self):
        rng = np.random.default_rng(14)
        e_layer = rng.normal(size=(4, 3))
        d_layer = rng.normal(size=(4, 3))
        out = attend(Tensor(d_layer), Tensor(e_layer),
                     Tensor(rng.normal(size=(3, 3))), Tensor(np.zeros(3))).data
        context = out - d_layer
        lo, hi = e_layer.min(axis=0), e_layer.max(axis=0)
        assert np.all(context >= lo - 1e-9) and np.all(context <= hi + 1e-9)


class TestDecode:
    def test_zero_params_direct_evaluation(self):
        # Zero parameters and zero-parameter encoder states E^(l) = X: the
        # activation is tanh(X) at every layer, attention adds the per-row
        # mean of X (uniform weights), and the residual chains them up.
        _, params = toy_params()
        zeros = zero_like_params(params)
        rng = np.random.default_rng(15)
        x = rng.normal(size=(4, 3))
        states = [Tensor(x) for _ in range(TOY.layers + 1)]
        got = decode(Tensor(x), states, zeros, TOY).data

        d = x.copy()
        for _ in range(TOY.layers + 1):
            d = np.tanh(x) + d
            d = d + np.tile(x.mean(axis=0), (4, 1))
        np.testing.assert_allclose(got, d, rtol=1e-10, atol=1e-12)

    def test_causal_path_bitwise(self):
        # With attention off and zero encoder states, the decoder conv path
        # at time <= t must be bitwise independent of inputs after t.
        cfg = CaeConfig(window_size=6, input_dim=2, embed_dim=3, layers=2,
                        kernel_size=3, use_attention=False)
        params = init_cae(cfg, np.random.default_rng(16))
        zero_states = [Tensor(np.zeros((6, 3))) for _ in range(cfg.layers + 1)]
        rng = np.random.default_rng(17)
        x1 = rng.normal(size=(6, 3))
        t = 2
        x2 = x1.copy()
        x2[t + 1 :] += rng.normal(size=(3, 3))
        out1 = decode(Tensor(x1), zero_states, params, cfg).data
        out2 = decode(Tensor(x2), zero_states, params, cfg).data
        assert np.array_equal(out1[: t + 1], out2[: t + 1])
        assert not np.array_equal(out1[t + 1 :], out2[t + 1 :])

    def test_output_shape(self):
        _, params = toy_params(seed=18)
        x = Tensor(np.random.default_rng(19).normal(size=(4, 3)))
        states = encode(x, params, TOY)
        assert decode(x, states, params, TOY).shape == (4, 3)

    def test_layer_count_mismatch(self):
        _, params = toy_params()
        x = Tensor(np.zeros((4, 3)))
        with pytest.raises(ValueError, match="encoder states"):
            decode(x, [x], params, TOY)


class TestReconstruct:
    def test_zero_params_zero_output(self):
        _, params = toy_params()
        zeros = zero_like_params(params)
        out = reconstruct(Tensor(np.random.default_rng(20).normal(size=(4, 3))),
                          zeros, TOY)
        np.testing.assert_array_equal(out.data, np.zeros((4, 3)))

    def test_matches_composition(self):
        _, params = toy_params(seed=21)
        rng = np.random.default_rng(22)
        d_final = rng.normal(size=(3, 3))
        cfg = CaeConfig(window_size=3, input_dim=2, embed_dim=3, layers=1,
                        kernel_size=3)
        got = reconstruct(Tensor(d_final), params, cfg).data
        gated = np_glu(d_final, params, "recon/glu", "same")
        conv = np_conv(gated, params["recon/kernel"].data,
                       params["recon/bias"].data, "same")
        np.testing.assert_allclose(got, np.tanh(conv), rtol=1e-10, atol=1e-12)

    def test_shape_matches_embedded_input(self):
        _, params = toy_params(seed=23)
        out = reconstruct(Tensor(np.zeros((4, 3))), params, TOY)
        assert out.shape == (4, 3)


class TestCaeForward:
    def test_pipeline_shapes(self):
        emb, params = toy_params(seed=24)
        x, x_hat = cae_forward(Tensor(np.zeros((4, 2))), emb, params, TOY)
        assert x.shape == (4, 3) and x_hat.shape == (4, 3)

    def test_deterministic(self):
        emb, params = toy_params(seed=25)
        window = Tensor(np.random.default_rng(26).normal(size=(4, 2)))
        a = cae_forward(window, emb, params, TOY)[1].data
        b = cae_forward(window, emb, params, TOY)[1].data
        assert np.array_equal(a, b)

    def test_matches_stage_composition(self):
        emb, params = toy_params(seed=27)
        window = Tensor(np.random.default_rng(28).normal(size=(4, 2)))
        x, x_hat = cae_forward(window, emb, params, TOY)
        x2 = embed(window, emb)
        states = encode(x2, params, TOY)
        d = decode(x2, states, params, TOY)
        expected = reconstruct(d, params, TOY)
        np.testing.assert_array_equal(x.data, x2.data)
        np.testing.assert_array_equal(x_hat.data, expected.data)


class TestWindowErrors:
    def test_zero_for_equal(self):
        x = np.random.default_rng(29).normal(size=(4, 3))
        np.testing.assert_array_equal(window_errors(x, x), np.zeros(4))

    def test_three_four_five(self):
        x = np.array([[3.0, 4.0]])
        np.testing.assert_array_equal(window_errors(x, np.zeros((1, 2))), [25.0])

    def test_nonnegative(self):
        rng = np.random.default_rng(30)
        errs = window_errors(rng.normal(size=(6, 3)), rng.normal(size=(6, 3)))
        assert np.all(errs >= 0)


class TestEndToEndGradient:
    def test_full_loss_matches_fd_sampled(self):
        # toy config per the gradient-correctness contract; the full-coordinate
        # sweep lives in the acceptance suite
        cfg = CaeConfig(window_size=8, input_dim=2, embed_dim=4, layers=2,
                        kernel_size=3)
        rng = np.random.default_rng(31)
        emb = init_embedding(cfg, rng)
        params = init_cae(cfg, rng)
        windows = rng.normal(size=(2, 8, 2))
        with no_grad():
            target = embed(Tensor(windows), emb).data.copy()

        def build():
            x = embed(Tensor(windows), emb)
            x_hat = reconstruct_embedded(x, params, cfg)
            from convens.ensemble import loss_first
            return loss_first(Tensor(target), x_hat)

        report = ad.grad_check(build, {**emb, **params}, tolerance=1e-4,
                               max_coords_per_tensor=6, seed=32)
        assert report.passed, (report.max_rel_err, report.worst_param)
