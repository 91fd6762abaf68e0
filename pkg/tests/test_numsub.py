import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypernie.numsub import (Adam, BatchNorm, CooPairs, Parameter, Tensor, adam_step, alloc_log,
                             chunked_map_reduce, dropout, gelu, grad_check, layer_norm,
                             leaky_relu, matmul, n_chunks, pair_scores, scatter_softmax,
                             segment_softmax, segment_weighted_sum)
from hypernie.numsub import tensor as T


def dense_masked_softmax(values, rows, cols, n_rows, n_cols, over="rows"):
    """Oracle: scatter values into a dense matrix with -inf off the pattern."""
    M = np.full((n_rows, n_cols), -np.inf)
    M[rows, cols] = values
    axis = 0 if over == "rows" else 1
    top = M.max(axis=axis, keepdims=True)
    top[~np.isfinite(top)] = 0.0
    E = np.exp(M - top)
    S = E / np.where(E.sum(axis=axis, keepdims=True) == 0, 1, E.sum(axis=axis, keepdims=True))
    return S[rows, cols]


def random_pairs(rng, n_rows, n_cols, density):
    mask = rng.random((n_rows, n_cols)) < density
    rows, cols = np.nonzero(mask)
    return CooPairs.from_unsorted(rows, cols, n_rows, n_cols)


class TestScatterSoftmax:
    def test_equal_values(self):
        np.testing.assert_allclose(scatter_softmax(np.zeros(2), [0, 0], 1), [0.5, 0.5])

    def test_singleton(self):
        assert scatter_softmax(np.array([3.7]), [0], 1).tolist() == [1.0]

    def test_closed_form(self):
        np.testing.assert_allclose(scatter_softmax(np.array([np.log(2), 0.0]), [0, 0], 1),
                                   [2 / 3, 1 / 3], rtol=1e-15)

    def test_large_values_stable(self):
        out = scatter_softmax(np.array([1000.0, 1000.0, -1000.0]), [0, 0, 1], 2)
        np.testing.assert_allclose(out, [0.5, 0.5, 1.0])

    def test_matches_dense_masked_oracle(self):
        rng = np.random.default_rng(0)
        pairs = random_pairs(rng, 64, 32, 0.1)
        vals = rng.standard_normal(pairs.nnz) * 3
        got = scatter_softmax(vals, pairs.cols, 32, chunk_size=7)
        want = dense_masked_softmax(vals, pairs.rows, pairs.cols, 64, 32, over="rows")
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10 ** 6), st.floats(-50, 50))
    def test_sums_to_one_and_shift_invariant(self, seed, shift):
        rng = np.random.default_rng(seed)
        n_seg = int(rng.integers(1, 10))
        seg = np.sort(rng.integers(0, n_seg, int(rng.integers(1, 60))))
        vals = rng.standard_normal(len(seg)) * 5
        out = scatter_softmax(vals, seg, n_seg)
        sums = np.bincount(seg, out, minlength=n_seg)
        present = np.bincount(seg, minlength=n_seg) > 0
        np.testing.assert_allclose(sums[present], 1.0, atol=1e-9)
        np.testing.assert_allclose(scatter_softmax(vals + shift, seg, n_seg), out, atol=1e-9)


class TestChunking:
    @pytest.mark.parametrize("C", [1, 7, 64, None])
    def test_softmax_chunk_invariance(self, C):
        rng = np.random.default_rng(1)
        pairs = random_pairs(rng, 40, 20, 0.2)
        vals = rng.standard_normal((pairs.nnz, 3))
        ref = scatter_softmax(vals, pairs.cols, 20)
        got = scatter_softmax(vals, pairs.cols, 20, chunk_size=C)
        assert np.array_equal(got, ref)

    def test_chunk_count(self):
        seg = np.zeros(20, dtype=int)
        out, count = chunked_map_reduce(20, 7, lambda sl: np.ones(sl.stop - sl.start), seg, 1)
        assert count == 3 == n_chunks(20, 7)
        assert out.tolist() == [20.0]

    def test_c1_vs_full(self):
        rng = np.random.default_rng(2)
        seg = np.sort(rng.integers(0, 5, 100))
        x = rng.standard_normal(100)
        a, _ = chunked_map_reduce(100, 1, lambda sl: np.exp(x[sl]), seg, 5)
        b, _ = chunked_map_reduce(100, 100, lambda sl: np.exp(x[sl]), seg, 5)
        assert np.abs(a - b).max() <= 1e-12

    def test_bad_chunk(self):
        with pytest.raises(ValueError):
            scatter_softmax(np.zeros(3), [0, 0, 0], 1, chunk_size=-1)

    def test_sparse_kernels_never_allocate_dense(self):
        rng = np.random.default_rng(3)
        pairs = random_pairs(rng, 200, 100, 0.02)
        q = Tensor(rng.standard_normal((200, 2, 4)))
        k = Tensor(rng.standard_normal((100, 2, 4)))
        with alloc_log() as log:
            s = pair_scores(q, k, pairs.rows, pairs.cols, 0.5, chunk_size=16)
        assert log.count("pair_scores") == 1
        assert log.largest() == s.data.nbytes <= 4 * pairs.nnz * 2 * 8


class TestCooPairs:
    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            CooPairs(np.array([1, 0]), np.array([0, 0]), 2, 1)

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            CooPairs(np.array([0, 0]), np.array([0, 0]), 2, 1)

    def test_from_unsorted_dedups(self):
        p = CooPairs.from_unsorted([1, 0, 1], [0, 1, 0], 2, 2)
        assert p.rows.tolist() == [1, 0] and p.cols.tolist() == [0, 1]


def _f64(rng, *shape):
    return Parameter(rng.standard_normal(shape))


class TestTapeGradients:
    """Every tape op against central differences in double precision."""

    rng = np.random.default_rng(7)

    @pytest.mark.parametrize("name,fn", [
        ("add_mul", lambda a, b: ((a + b) * a).sum()),
        ("div", lambda a, b: (a / (b * b + 1.0)).sum()),
        ("pow_exp_log", lambda a, b: (T.exp(a * 0.3) + T.log(b * b + 1.0) + a ** 3).sum()),
        ("sigmoid_sqrt", lambda a, b: (T.sigmoid(a) * T.sqrt(b * b + 0.5)).sum()),
        ("leaky_gelu", lambda a, b: (leaky_relu(a) * gelu(b)).sum()),
        ("matmul", lambda a, b: (matmul(a, b.T) ** 2).mean()),
        ("reduce_reshape", lambda a, b: (a.sum(axis=0) * b.mean(axis=0)).reshape(1, 3).sum()),
        ("getitem_concat", lambda a, b: (T.concat([a[1:], b[:-1]], axis=1) ** 2).sum()),
        ("log_softmax", lambda a, b: (T.log_softmax(matmul(a, b.T), axis=0) * a[:, :1]).sum()),
        ("layer_norm", lambda a, b: (layer_norm(a, b[0], b[1]) ** 3).sum()),
        ("gather_segsum", lambda a, b: (T.segment_sum(T.gather(a, [0, 2, 2, 3]), [1, 0, 1, 1], 2)
                                        * b[:2]).sum()),
        ("where_mask", lambda a, b: (T.where_mask(a * b, a.data > 0) ** 2).sum()),
    ])
    def test_op(self, name, fn):
        a, b = _f64(self.rng, 4, 3), _f64(self.rng, 4, 3)
        assert grad_check(lambda: fn(a, b), [a, b], eps=1e-6) <= 1e-6

    def test_segment_ops(self):
        rng = np.random.default_rng(8)
        pairs = random_pairs(rng, 12, 6, 0.4)
        q, k = _f64(rng, 12, 2, 3), _f64(rng, 6, 2, 3)
        v = _f64(rng, 12, 2, 3)
        w = Tensor(rng.standard_normal((6, 2, 3)))

        def loss():
            s = pair_scores(q, k, pairs.rows, pairs.cols, 0.7, chunk_size=5)
            alpha = segment_softmax(s, pairs.cols, 6, chunk_size=3)
            out = segment_weighted_sum(alpha, v, pairs.rows, pairs.cols, 6, chunk_size=4)
            return (out * w).sum()

        assert grad_check(loss, [q, k, v]) <= 1e-6

    def test_quadratic(self):
        w = Parameter(np.array([3.0]))
        w.zero_grad()
        (w * w).sum().backward()
        assert w.grad[0] == 6.0
        assert grad_check(lambda: (w * w).sum(), [w]) <= 1e-8

    def test_zero_parameters_vacuous(self):
        assert grad_check(lambda: Tensor(np.array(1.0)), []) == 0.0

    def test_non_finite_loss(self):
        w = Parameter(np.array([-1.0]))
        with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
            grad_check(lambda: T.log(w).sum(), [w])

    def test_grad_accumulates_over_shared_use(self):
        w = Parameter(np.array([2.0]))
        w.zero_grad()
        (w * w + w).sum().backward()
        assert w.grad[0] == 5.0

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_no_grad_records_nothing(self):
        w = Parameter(np.ones(2))
        with T.no_grad():
            y = w * 2.0
        assert y._backward is None


class TestDenseKernels:
    def test_layer_norm_constant(self):
        out = layer_norm(Tensor(np.full((2, 5), 3.0))).data
        np.testing.assert_array_equal(out, 0.0)

    def test_dropout_rate_zero_identity(self):
        x = Tensor(np.arange(6.0))
        assert dropout(x, 0.0, np.random.default_rng(0)) is x

    def test_dropout_eval_identity(self):
        x = Tensor(np.arange(6.0))
        assert dropout(x, 0.5, np.random.default_rng(0), training=False) is x

    def test_dropout_seeded_and_inverted(self):
        x = Tensor(np.ones(10000))
        a = dropout(x, 0.3, np.random.default_rng(1)).data
        b = dropout(x, 0.3, np.random.default_rng(1)).data
        np.testing.assert_array_equal(a, b)
        assert set(np.unique(a)) == {0.0, 1 / 0.7}
        assert abs(a.mean() - 1.0) < 0.05

    def test_leaky_relu_slope(self):
        np.testing.assert_allclose(leaky_relu(Tensor(np.array([-1.0, 2.0]))).data, [-0.2, 2.0])

    def test_gelu_values(self):
        from math import erf, sqrt
        x = np.array([-1.0, 0.0, 0.5])
        want = [v * 0.5 * (1 + erf(v / sqrt(2))) for v in x]
        np.testing.assert_allclose(gelu(Tensor(x)).data, want, rtol=1e-14)

    def test_batch_norm_train_and_eval(self):
        bn = BatchNorm(3, np.float64)
        x = np.random.default_rng(0).standard_normal((50, 3)) * 2 + 1
        y = bn(Tensor(x)).data
        np.testing.assert_allclose(y.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=0))
        np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=0))
        bn.eval()
        e1, e2 = bn(Tensor(x)).data, bn(Tensor(x)).data
        np.testing.assert_array_equal(e1, e2)
        np.testing.assert_allclose(e1, (x - bn.running_mean) / np.sqrt(bn.running_var + 1e-5))

    def test_batch_norm_width_mismatch(self):
        with pytest.raises(ValueError):
            BatchNorm(3)(Tensor(np.ones((2, 4))))


class TestAdam:
    def test_hand_stepped(self):
        w = np.array([1.0])
        m, v = np.zeros(1), np.zeros(1)
        g = 2 * w
        adam_step(w, g, m, v, 1, lr=0.1)
        # m_hat = 2, v_hat = 4 after bias correction, so the step is lr * 2 / (2 + eps)
        np.testing.assert_allclose(w, 1.0 - 0.1 * 2 / (2 + 1e-8), rtol=1e-15)
        assert w[0] < 1.0

    def test_decoupled_weight_decay(self):
        w = np.array([1.0])
        adam_step(w, np.zeros(1), np.zeros(1), np.zeros(1), 1, lr=0.1, weight_decay=0.5)
        np.testing.assert_allclose(w, 0.95)

    def test_minimizes_quadratic(self):
        p = Parameter(np.array([1.0, -2.0]))
        opt = Adam([p], lr=0.1)
        for _ in range(300):
            opt.zero_grad()
            (p * p).sum().backward()
            opt.step()
        assert np.abs(p.data).max() < 1e-2

    def test_rejects_non_finite_gradient(self):
        p = Parameter(np.array([1.0]))
        p.grad[...] = np.nan
        with pytest.raises(FloatingPointError):
            Adam([p]).step()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(np.ones(2), np.ones(3), np.zeros(2), np.zeros(2), 1, 0.1)
