"""Core tensor ops: hand-computed examples, stability, tape mechanics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dialoguecse.tensor as T
from dialoguecse.errors import DegenerateVectorError, EmptyPoolError, ShapeError
from dialoguecse.tensor import Tensor, backward, no_grad, reset_tape, tape


@pytest.fixture(autouse=True)
def _clean_tape():
    reset_tape()
    yield
    reset_tape()


def t64(data, rg=False):
    return Tensor(data, requires_grad=rg, dtype=T.DOUBLE)


class TestMatmul:
    def test_identity(self):
        m = t64([[1.0, 2.0], [3.0, 4.0]])
        eye = t64(np.eye(2))
        assert np.array_equal(T.matmul(eye, m).data, m.data)

    def test_dot_product(self):
        out = T.matmul(t64([[1.0, 2.0]]), t64([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(t64(np.zeros((2, 3))), t64(np.zeros((2, 3))))

    def test_associativity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, b, c = (t64(rng.normal(size=(3, 4))), t64(rng.normal(size=(4, 5))),
                       t64(rng.normal(size=(5, 2))))
            left = T.matmul(T.matmul(a, b), c).data
            right = T.matmul(a, T.matmul(b, c)).data
            assert np.allclose(left, right, atol=1e-9)


class TestSoftmaxRows:
    def test_symmetry(self):
        assert np.allclose(T.softmax_rows(t64([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_closed_form(self):
        out = T.softmax_rows(t64([[math.log(2), 0.0]])).data
        assert np.allclose(out, [[2 / 3, 1 / 3]], atol=1e-12)

    def test_extreme_logits_stay_finite(self):
        with np.errstate(over="raise"):
            out = T.softmax_rows(t64([[1000.0, 0.0]])).data
        # arbitrary-precision oracle: exp(-1000)/(1+exp(-1000)) ~ 5.08e-435,
        # far below the double underflow threshold, so 0.0 is the correct
        # rounded value and the large entry rounds to 1.0
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 50
        small = mpmath.exp(-1000) / (1 + mpmath.exp(-1000))
        assert float(small) == 0.0
        assert out[0, 0] == pytest.approx(1.0, abs=1e-15)
        assert out[0, 1] == 0.0

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        out = T.softmax_rows(t64(rng.normal(scale=5, size=(8, 13)))).data
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-9)
        assert (out >= 0).all()

    @given(st.floats(min_value=-50, max_value=50))
    @settings(max_examples=30, deadline=None)
    def test_shift_invariance(self, c):
        x = np.linspace(-2, 3, 12).reshape(3, 4)
        base = T.softmax_rows(t64(x)).data
        shifted = T.softmax_rows(t64(x + c)).data
        assert np.allclose(base, shifted, atol=1e-12)


class TestRelu:
    def test_elementwise(self):
        assert T.relu(t64([[-1.0, 0.0, 2.0]])).data.tolist() == [[0.0, 0.0, 2.0]]

    def test_all_negative(self):
        assert np.array_equal(T.relu(t64(-np.ones((3, 3)))).data, np.zeros((3, 3)))

    def test_subgradient_indicator(self):
        x = t64([[-1.0, 2.0]], rg=True)
        backward(T.sum_all(T.relu(x)))
        assert x.grad.tolist() == [[0.0, 1.0]]

    def test_subgradient_at_zero_is_zero(self):
        x = t64([[0.0]], rg=True)
        backward(T.sum_all(T.relu(x)))
        assert x.grad.tolist() == [[0.0]]


class TestLayerNormRows:
    def test_constant_row(self):
        gain, bias = t64(np.ones((1, 3))), t64(np.zeros((1, 3)))
        out = T.layer_norm_rows(t64([[1.0, 1.0, 1.0]]), gain, bias, 1e-5).data
        assert np.array_equal(out, np.zeros((1, 3)))

    def test_two_point_row(self):
        gain, bias = t64(np.ones((1, 2))), t64(np.zeros((1, 2)))
        out = T.layer_norm_rows(t64([[1.0, 3.0]]), gain, bias, 1e-12).data
        assert np.allclose(out, [[-1.0, 1.0]], atol=1e-6)

    def test_standardizes_random_rows(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(5, 16))
        gain, bias = t64(np.ones((1, 16))), t64(np.zeros((1, 16)))
        out = T.layer_norm_rows(t64(x), gain, bias, 1e-8).data
        assert np.allclose(out.mean(axis=1), 0.0, atol=1e-9)
        # population variance of the output approaches 1 as eps -> 0
        assert np.allclose(out.var(axis=1), x.var(axis=1) / (x.var(axis=1) + 1e-8), atol=1e-9)

    def test_eps_must_be_positive(self):
        gain, bias = t64(np.ones((1, 2))), t64(np.zeros((1, 2)))
        with pytest.raises(ValueError):
            T.layer_norm_rows(t64([[1.0, 2.0]]), gain, bias, 0.0)


class TestMaskedMeanRows:
    def test_full_mask(self):
        out = T.masked_mean_rows(t64([[2.0, 4.0], [6.0, 8.0]]), np.array([1, 1]))
        assert out.data.tolist() == [[4.0, 6.0]]

    def test_single_active_row(self):
        out = T.masked_mean_rows(t64([[2.0, 4.0], [9.0, 9.0]]), np.array([1, 0]))
        assert out.data.tolist() == [[2.0, 4.0]]

    def test_prefix_mask_equals_unmasked_mean_of_prefix(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 3))
        out = T.masked_mean_rows(t64(x), np.array([1, 1, 1, 0, 0])).data
        assert np.array_equal(out, x[:3].mean(axis=0, keepdims=True))

    def test_all_ones_mask_equals_row_mean_exactly(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(6, 4))
        out = T.masked_mean_rows(t64(x), np.ones(6, dtype=int)).data
        assert np.array_equal(out, x.mean(axis=0, keepdims=True))

    def test_empty_mask_rejected(self):
        with pytest.raises(EmptyPoolError):
            T.masked_mean_rows(t64(np.ones((2, 2))), np.zeros(2, dtype=int))


class TestCosine:
    def test_scale_invariance(self):
        v = t64([[1.0, 2.0, 3.0]])
        assert T.cosine(v, T.scale(v, 2.0)).item() == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert T.cosine(t64([[1.0, 0.0]]), t64([[0.0, 1.0]])).item() == 0.0

    def test_antiparallel(self):
        v = t64([[0.5, -2.0, 1.0]])
        assert T.cosine(v, T.neg(v)).item() == pytest.approx(-1.0, abs=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateVectorError):
            T.cosine(t64([[0.0, 0.0]]), t64([[1.0, 1.0]]))


class TestAttention:
    def test_weights_are_convex_over_active_positions(self):
        # with every value row equal to c, a convex combination returns c
        rng = np.random.default_rng(5)
        q, k = t64(rng.normal(size=(4, 4))), t64(rng.normal(size=(4, 4)))
        c = np.array([1.0, -2.0, 0.5, 3.0])
        v = t64(np.tile(c, (4, 1)))
        out = T.attention(q, k, v, np.array([1, 1, 1, 0]), n_heads=2).data
        assert np.allclose(out, np.tile(np.concatenate([c[:2], c[2:]]), (4, 1)), atol=1e-12)

    def test_masked_keys_have_exactly_zero_weight(self):
        rng = np.random.default_rng(6)
        q = t64(rng.normal(size=(4, 4)))
        k1, v1 = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        k2, v2 = k1.copy(), v1.copy()
        k2[3], v2[3] = 99.0, -99.0  # masked row: must not matter at all
        mask = np.array([1, 1, 1, 0])
        out1 = T.attention(q, t64(k1), t64(v1), mask, 2).data
        out2 = T.attention(q, t64(k2), t64(v2), mask, 2).data
        assert np.array_equal(out1, out2)

    def test_all_masked_rejected(self):
        z = t64(np.zeros((2, 4)))
        with pytest.raises(EmptyPoolError):
            T.attention(z, z, z, np.array([0, 0]), 2)

    def test_packed_segments_are_independent(self):
        rng = np.random.default_rng(7)
        qa, ka, va = (rng.normal(size=(3, 4)) for _ in range(3))
        qb, kb, vb = (rng.normal(size=(3, 4)) for _ in range(3))
        masks = np.array([[1, 1, 0], [1, 1, 1]])
        packed = T.attention_batch(
            t64(np.vstack([qa, qb])), t64(np.vstack([ka, kb])), t64(np.vstack([va, vb])),
            masks, 2,
        ).data
        solo_a = T.attention(t64(qa), t64(ka), t64(va), masks[0], 2).data
        solo_b = T.attention(t64(qb), t64(kb), t64(vb), masks[1], 2).data
        assert np.allclose(packed[:3], solo_a, atol=1e-12)
        assert np.allclose(packed[3:], solo_b, atol=1e-12)


class TestTape:
    def test_fanout_accumulates(self):
        x = t64([[3.0]], rg=True)
        backward(T.add(x, x))
        assert x.grad.tolist() == [[2.0]]

    def test_each_node_visited_once(self):
        x = t64([[1.0, 2.0]], rg=True)
        y = T.mul(x, x)
        z = T.sum_all(T.add(y, y))
        n_nodes = len(tape())
        calls = {"n": 0}
        for node in tape():
            original = node.backward

            def wrapped(g, original=original):
                calls["n"] += 1
                return original(g)

            node.backward = wrapped
        backward(z)
        assert calls["n"] == n_nodes
        assert np.allclose(x.grad, [[4.0, 8.0]])  # d/dx 2x^2

    def test_no_grad_suppresses_recording(self):
        x = t64([[1.0]], rg=True)
        with no_grad():
            y = T.mul(x, x)
        assert len(tape()) == 0
        assert not y.requires_grad

    def test_constant_inputs_not_recorded(self):
        out = T.mul(t64([[2.0]]), t64([[3.0]]))
        assert len(tape()) == 0
        assert not out.requires_grad

    def test_gather_accumulates_duplicate_ids(self):
        table = t64(np.arange(6.0).reshape(3, 2), rg=True)
        out = T.gather_rows(table, np.array([1, 1, 0]))
        backward(T.sum_all(out))
        assert table.grad.tolist() == [[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]]


class TestPrecision:
    def test_mixed_precision_rejected(self):
        a = Tensor([[1.0]], dtype=T.SINGLE)
        b = Tensor([[1.0]], dtype=T.DOUBLE)
        with pytest.raises(ShapeError, match="precision"):
            T.add(a, b)

    def test_ops_preserve_dtype(self):
        a = Tensor(np.ones((2, 2)), dtype=T.SINGLE)
        for out in (T.relu(a), T.softmax_rows(a), T.scale(a, 2.0), T.exp(a)):
            assert out.dtype == np.float32

    def test_rank_guard(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 2, 2)))


class TestStructuralOps:
    def test_slice_concat_roundtrip(self):
        rng = np.random.default_rng(8)
        x = t64(rng.normal(size=(3, 5)))
        parts = [T.slice_cols(x, 0, 2), T.slice_cols(x, 2, 5)]
        assert np.array_equal(T.concat_cols(parts).data, x.data)

    def test_slice_rows(self):
        x = t64(np.arange(12.0).reshape(4, 3), rg=True)
        out = T.slice_rows(x, 1, 3)
        assert np.array_equal(out.data, x.data[1:3])
        backward(T.sum_all(out))
        assert np.array_equal(x.grad, np.array([[0.0] * 3, [1.0] * 3, [1.0] * 3, [0.0] * 3]))

    def test_finite_outputs_on_finite_inputs(self):
        rng = np.random.default_rng(9)
        x = t64(rng.normal(scale=3, size=(4, 6)))
        for out in (T.softmax_rows(x), T.sigmoid(x), T.softplus(x), T.relu(x)):
            assert np.isfinite(out.data).all()
