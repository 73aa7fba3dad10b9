import math

import numpy as np
import pytest

from pairforge.ref_injector import (
    AttentionInputs,
    HiddenStates,
    InjectorWeights,
    attention_backward,
    attention_forward,
    concat_kv,
    init_weights,
    lora_project,
    random_inputs,
    random_weights,
    run_property_suite,
)


def small_inputs(rng, l_ref=2, batch=1, lq=2, lk=2, dim=4):
    return random_inputs(rng, batch, lq, lk, l_ref, dim)


class TestHiddenStates:
    def test_requires_3d(self):
        with pytest.raises(ValueError):
            HiddenStates(np.zeros((2, 3)))

    def test_zero_length_allowed(self):
        h = HiddenStates(np.zeros((1, 0, 4)))
        assert h.length == 0

    def test_non_finite_rejected(self):
        bad = np.zeros((1, 2, 3))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            HiddenStates(bad)

    def test_from_array_casts(self):
        h = HiddenStates.from_array([[[1, 2], [3, 4]]])
        assert h.values.dtype == np.float64
        assert (h.batch, h.length, h.dim) == (1, 2, 2)


class TestInjectorWeights:
    def test_rank_exceeding_dim_rejected(self):
        with pytest.raises(ValueError, match="rank 3 exceeds"):
            InjectorWeights(
                w_down_k=np.zeros((3, 2)), w_up_k=np.zeros((2, 3)),
                w_down_v=np.zeros((3, 2)), w_up_v=np.zeros((2, 3)),
            )

    def test_rank_equal_dim_allowed(self):
        w = InjectorWeights(
            w_down_k=np.eye(3), w_up_k=np.eye(3),
            w_down_v=np.eye(3), w_up_v=np.eye(3),
        )
        assert w.rank == 3

    def test_shape_consistency(self):
        with pytest.raises(ValueError, match="w_up_k shape"):
            InjectorWeights(
                w_down_k=np.zeros((1, 4)), w_up_k=np.zeros((3, 1)),
                w_down_v=np.zeros((1, 4)), w_up_v=np.zeros((4, 1)),
            )


class TestLoraProject:
    def test_identity_composition(self):
        rng = np.random.default_rng(0)
        h = rng.normal(size=(2, 3, 4))
        out = lora_project(h, np.eye(4), np.eye(4))
        assert np.allclose(out, h, atol=1e-15)

    def test_zero_up_gives_zero(self):
        rng = np.random.default_rng(1)
        h = rng.normal(size=(1, 3, 4))
        out = lora_project(h, rng.normal(size=(2, 4)), np.zeros((4, 2)))
        assert np.all(out == 0.0)

    def test_two_step_matmul_oracle(self):
        h = np.array([[[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]]])  # 1x2x3
        w_down = np.array([[0.2, -0.1, 0.4]])  # r=1
        w_up = np.array([[1.0], [0.0], [-2.0]])  # d=3
        out = lora_project(h, w_down, w_up)
        for t in range(2):
            mid = w_down @ h[0, t]
            assert np.allclose(out[0, t], w_up @ mid, atol=1e-15)

    def test_rank_bound_on_features(self):
        rng = np.random.default_rng(2)
        h = rng.normal(size=(2, 6, 8))
        out = lora_project(h, rng.normal(size=(2, 8)), rng.normal(size=(8, 2)))
        sv = np.linalg.svd(out.reshape(-1, 8), compute_uv=False)
        assert sv[2] / sv[0] < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            lora_project(np.zeros((1, 2, 3)), np.zeros((1, 4)), np.zeros((4, 1)))


class TestConcatKv:
    def test_empty_reference_identity(self):
        rng = np.random.default_rng(3)
        k = rng.normal(size=(1, 3, 4))
        v = rng.normal(size=(1, 3, 4))
        kt, vt = concat_kv(k, v, np.zeros((1, 0, 4)), np.zeros((1, 0, 4)))
        assert np.array_equal(kt, k) and np.array_equal(vt, v)

    def test_ordering_and_split_round_trip(self):
        rng = np.random.default_rng(4)
        k, v = rng.normal(size=(1, 2, 3)), rng.normal(size=(1, 2, 3))
        k_ref, v_ref = rng.normal(size=(1, 3, 3)), rng.normal(size=(1, 3, 3))
        kt, vt = concat_kv(k, v, k_ref, v_ref)
        assert kt.shape[1] == 5
        assert np.array_equal(kt[:, :2], k) and np.array_equal(kt[:, 2:], k_ref)
        assert np.array_equal(vt[:, :2], v) and np.array_equal(vt[:, 2:], v_ref)

    def test_batch_mismatch(self):
        with pytest.raises(ValueError):
            concat_kv(np.zeros((1, 2, 3)), np.zeros((1, 2, 3)),
                      np.zeros((2, 1, 3)), np.zeros((2, 1, 3)))


class TestAttentionForward:
    def test_single_key_returns_value(self):
        rng = np.random.default_rng(5)
        v = rng.normal(size=(1, 1, 4))
        inputs = AttentionInputs(
            q=rng.normal(size=(1, 1, 4)), k=rng.normal(size=(1, 1, 4)), v=v,
            h_ref=HiddenStates(np.zeros((1, 0, 4))),
        )
        out = attention_forward(inputs, random_weights(4, 2, rng))
        assert np.allclose(out, v, atol=1e-15)

    def test_empty_reference_equals_vanilla(self):
        rng = np.random.default_rng(6)
        inputs = small_inputs(rng, l_ref=0)
        weights = random_weights(4, 2, rng)
        out = attention_forward(inputs, weights)
        scale = 1.0 / math.sqrt(4)
        z = scale * np.einsum("bid,bjd->bij", inputs.q, inputs.k)
        z -= z.max(axis=2, keepdims=True)
        e = np.exp(z)
        expected = np.einsum("bij,bjc->bic", e / e.sum(axis=2, keepdims=True),
                             inputs.v)
        assert np.abs(out - expected).max() <= 1e-12

    def test_two_logit_hand_expansion(self):
        q = np.array([[[1.0, 2.0]]])
        k = np.array([[[0.5, -1.0]]])
        v = np.array([[[3.0, 4.0]]])
        h = HiddenStates(np.array([[[2.0, 1.0]]]))
        weights = InjectorWeights(
            w_down_k=np.array([[0.3, 0.4]]), w_up_k=np.array([[0.5], [-0.2]]),
            w_down_v=np.array([[0.1, -0.1]]), w_up_v=np.array([[1.0], [2.0]]),
        )
        out = attention_forward(AttentionInputs(q, k, v, h), weights)
        k_ref = np.array([0.5, -0.2])  # w_up_k * (w_down_k . h) = 1.0
        v_ref = np.array([0.1, 0.2])
        scale = 1.0 / math.sqrt(2)
        z0 = scale * float(q[0, 0] @ k[0, 0])
        z1 = scale * float(q[0, 0] @ k_ref)
        peak = max(z0, z1)
        e0, e1 = math.exp(z0 - peak), math.exp(z1 - peak)
        expected = (e0 * v[0, 0] + e1 * v_ref) / (e0 + e1)
        assert np.allclose(out[0, 0], expected, rtol=1e-12)

    def test_reference_permutation_exact(self):
        rng = np.random.default_rng(7)
        inputs = small_inputs(rng, l_ref=5)
        weights = random_weights(4, 2, rng)
        base = attention_forward(inputs, weights)
        for _ in range(4):
            perm = rng.permutation(5)
            shuffled = AttentionInputs(
                q=inputs.q, k=inputs.k, v=inputs.v,
                h_ref=HiddenStates(inputs.h_ref.values[:, perm, :]),
            )
            assert np.array_equal(attention_forward(shuffled, weights), base)

    def test_row_sums(self):
        rng = np.random.default_rng(8)
        inputs = small_inputs(rng, l_ref=3)
        _, attn = attention_forward(inputs, random_weights(4, 2, rng),
                                    return_weights=True)
        assert np.abs(attn.sum(axis=2) - 1.0).max() <= 1e-12
        assert attn.min() >= 0.0

    def test_zero_init_weights_give_zero_reference_keys(self):
        weights = init_weights(dim=4, rank=2, seed=0)
        rng = np.random.default_rng(9)
        h = rng.normal(size=(1, 3, 4))
        assert np.all(lora_project(h, weights.w_down_k, weights.w_up_k) == 0.0)

    def test_dim_mismatch_with_weights(self):
        rng = np.random.default_rng(10)
        inputs = small_inputs(rng, dim=4)
        with pytest.raises(ValueError, match="dim"):
            attention_forward(inputs, random_weights(8, 2, rng))

    def test_no_keys_at_all(self):
        rng = np.random.default_rng(11)
        inputs = AttentionInputs(
            q=rng.normal(size=(1, 2, 4)), k=np.zeros((1, 0, 4)),
            v=np.zeros((1, 0, 4)), h_ref=HiddenStates(np.zeros((1, 0, 4))),
        )
        with pytest.raises(ValueError, match="zero keys"):
            attention_forward(inputs, random_weights(4, 2, rng))


class TestAttentionBackward:
    def test_zero_upstream_zero_grads(self):
        rng = np.random.default_rng(12)
        inputs = small_inputs(rng)
        grads = attention_backward(inputs, random_weights(4, 2, rng),
                                   np.zeros((1, 2, 4)))
        for g in grads.values():
            assert np.all(g == 0.0)

    def test_zero_up_projection_zeroes_down_grad(self):
        rng = np.random.default_rng(13)
        inputs = small_inputs(rng)
        weights = InjectorWeights(
            w_down_k=rng.normal(size=(2, 4)), w_up_k=np.zeros((4, 2)),
            w_down_v=rng.normal(size=(2, 4)), w_up_v=np.zeros((4, 2)),
        )
        grads = attention_backward(inputs, weights, rng.normal(size=(1, 2, 4)))
        assert np.all(grads["w_down_k"] == 0.0)
        assert np.all(grads["w_down_v"] == 0.0)

    def test_matches_in_test_finite_differences(self):
        rng = np.random.default_rng(14)
        inputs = small_inputs(rng, l_ref=2, batch=1, lq=2, lk=2, dim=4)
        weights = random_weights(4, 2, rng)
        grad = rng.normal(size=(1, 2, 4))
        analytic = attention_backward(inputs, weights, grad)

        tensors = {
            "q": inputs.q.copy(), "k": inputs.k.copy(), "v": inputs.v.copy(),
            "h_ref": inputs.h_ref.values.copy(),
            "w_down_k": weights.w_down_k.copy(), "w_up_k": weights.w_up_k.copy(),
            "w_down_v": weights.w_down_v.copy(), "w_up_v": weights.w_up_v.copy(),
        }

        def loss():
            out = attention_forward(
                AttentionInputs(tensors["q"], tensors["k"], tensors["v"],
                                HiddenStates(tensors["h_ref"])),
                InjectorWeights(tensors["w_down_k"], tensors["w_up_k"],
                                tensors["w_down_v"], tensors["w_up_v"]),
            )
            return float(np.vdot(grad, out))

        step = 1e-5
        for name, tensor in tensors.items():
            fd = np.zeros_like(tensor)
            flat, flat_fd = tensor.reshape(-1), fd.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = loss()
                flat[i] = orig - step
                down = loss()
                flat[i] = orig
                flat_fd[i] = (up - down) / (2 * step)
            rel = np.linalg.norm(analytic[name] - fd) / max(
                np.linalg.norm(fd), 1e-12
            )
            assert rel < 1e-4, f"{name}: rel err {rel}"

    def test_upstream_shape_checked(self):
        rng = np.random.default_rng(15)
        inputs = small_inputs(rng)
        with pytest.raises(ValueError, match="upstream_grad"):
            attention_backward(inputs, random_weights(4, 2, rng),
                               np.zeros((1, 3, 4)))


class TestPropertySuite:
    def test_all_properties_pass(self):
        for seed in (0, 1, 17):
            results = run_property_suite(seed)
            assert all(r.passed for r in results), [
                (r.name, r.detail) for r in results if not r.passed
            ]

    def test_covers_expected_properties(self):
        names = {r.name for r in run_property_suite(0)}
        assert names == {
            "empty_reference_equivalence",
            "reference_permutation_invariance",
            "softmax_row_sums",
            "gradient_check",
            "low_rank_bound",
            "scale_cancellation",
        }
