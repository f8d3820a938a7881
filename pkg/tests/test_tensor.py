"""Tests for the tape-based autodiff core.

The main oracle is central finite differences: for random small graphs the
analytic gradient must match (f(x+eps) - f(x-eps)) / 2 eps with relative
error below 1e-4. Structural behaviours (fan-out accumulation, tape reuse,
determinism) are asserted directly.
"""

import numpy as np
import pytest

import attnctc.tensor as T
from attnctc.tensor import (
    GradTape,
    LstmParams,
    ShapeError,
    DomainError,
    Tensor,
    add,
    add_n,
    backward,
    clip_global_norm,
    concat,
    div,
    exp,
    gather,
    init_lstm,
    log,
    log_softmax,
    logaddexp,
    logsumexp,
    lstm_cell,
    matmul,
    mean,
    mul,
    narrow,
    neg,
    reshape,
    row,
    sigmoid,
    softmax,
    sub,
    sum as tsum,
    tanh,
    transpose,
    uniform_init,
)


def numeric_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar-valued f at x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-4)
    return float(np.max(np.abs(a - b) / denom))


class TestForwardValues:
    def test_softmax_huge_gap_is_finite(self):
        """softmax([1000, 0]) must not overflow."""
        y = softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y.sum(), 1.0, rtol=0, atol=1e-12)
        assert y[0] > 0.999999

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = rng.normal(size=(4, 9)) * rng.uniform(0.1, 30)
            y = softmax(Tensor(x), axis=-1).data
            np.testing.assert_allclose(y.sum(axis=-1), np.ones(4), atol=1e-12)

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=7)
        a = softmax(Tensor(x)).data
        b = softmax(Tensor(x + 123.456)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_softmax_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=8)
        perm = rng.permutation(8)
        a = softmax(Tensor(x[perm])).data
        b = softmax(Tensor(x)).data[perm]
        np.testing.assert_allclose(a, b, atol=1e-14)

    def test_log_softmax_agrees_with_log_of_softmax(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(3, 6))
        a = log_softmax(Tensor(x), axis=-1).data
        b = np.log(softmax(Tensor(x), axis=-1).data)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_logaddexp_matches_numpy(self):
        rng = np.random.default_rng(11)
        x, y = rng.normal(size=5), rng.normal(size=5)
        out = logaddexp(Tensor(x), Tensor(y)).data
        np.testing.assert_allclose(out, np.logaddexp(x, y), atol=1e-12)

    def test_logaddexp_with_sentinel_stays_finite(self):
        """-1e30 stands in for log(0); adding it must not produce NaN."""
        x = Tensor(np.array([0.5, -1e30]))
        y = Tensor(np.array([-1e30, -1e30]))
        out = logaddexp(x, y).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out[0], 0.5, atol=1e-12)

    def test_logsumexp_extreme(self):
        out = logsumexp(Tensor([1000.0, 1000.0])).item()
        np.testing.assert_allclose(out, 1000.0 + np.log(2.0), atol=1e-9)

    def test_sigmoid_extremes(self):
        y = sigmoid(Tensor([-500.0, 0.0, 500.0])).data
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y, [0.0, 0.5, 1.0], atol=1e-12)

    def test_matmul_against_loops(self):
        """Triple-loop oracle for the 2-D product."""
        rng = np.random.default_rng(12)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 5))
        want = np.zeros((3, 5))
        for i in range(3):
            for j in range(5):
                for k in range(4):
                    want[i, j] += a[i, k] * b[k, j]
        got = matmul(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(got, want, atol=1e-12)


class TestErrors:
    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))

    def test_matmul_rejects_1d(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))

    def test_log_domain(self):
        with pytest.raises(DomainError):
            log(Tensor([1.0, 0.0]))
        with pytest.raises(DomainError):
            log(Tensor([-0.5]))

    def test_backward_requires_scalar(self):
        with GradTape():
            x = Tensor(np.ones(3), requires_grad=True)
            y = mul(x, x)
            with pytest.raises(ShapeError):
                backward(y)

    def test_tape_reuse_rejected(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with GradTape():
            loss = tsum(mul(x, x))
            backward(loss)
            with pytest.raises(RuntimeError):
                backward(loss)

    def test_backward_without_tape_rejected(self):
        x = Tensor(np.ones(2), requires_grad=True)
        loss = tsum(x)  # no tape active: nothing recorded
        with pytest.raises(ValueError):
            backward(loss)


class TestBackwardStructure:
    def test_fanout_accumulates(self):
        """y = x + x must give dy/dx = 2, not 1."""
        x = Tensor(np.array([3.0]), requires_grad=True)
        with GradTape():
            y = tsum(add(x, x))
            backward(y)
        np.testing.assert_allclose(x.grad, [2.0])

    def test_diamond_fanout(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        with GradTape():
            a = mul(x, x)
            b = add(x, x)
            loss = tsum(add(a, b))
            backward(loss)
        # d/dx (x^2 + 2x) = 2x + 2 = 6
        np.testing.assert_allclose(x.grad, [6.0])

    def test_untracked_inputs_get_no_grad(self):
        x = Tensor(np.ones(3), requires_grad=True)
        c = Tensor(np.ones(3))
        with GradTape():
            loss = tsum(mul(x, c))
            backward(loss)
        assert x.grad is not None
        assert c.grad is None

    def test_grad_not_mutated_in_place(self):
        """Accumulation must build new arrays; an aliased gradient handed to
        a downstream consumer must keep its value."""
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with GradTape():
            loss = tsum(x)
            backward(loss)
        first = x.grad
        snapshot = first.copy()
        with GradTape():
            loss2 = tsum(add(x, x))
            backward(loss2)
        np.testing.assert_array_equal(first, snapshot)

    def test_gather_duplicate_indices_accumulate(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        with GradTape():
            y = gather(x, [0, 0, 2])
            backward(tsum(y))
        np.testing.assert_allclose(x.grad, [2.0, 0.0, 1.0])

    def test_determinism_bit_identical(self):
        """Two identical forward+backward passes agree to the bit."""
        rng = np.random.default_rng(13)
        xs = rng.normal(size=(4, 5))
        ws = rng.normal(size=(5, 3))

        def run():
            x = Tensor(xs.copy(), requires_grad=True)
            w = Tensor(ws.copy(), requires_grad=True)
            with GradTape():
                h = tanh(matmul(x, w))
                p = softmax(h, axis=-1)
                loss = neg(mean(log(p)))
                backward(loss)
            return loss.data.copy(), x.grad.copy(), w.grad.copy()

        l1, gx1, gw1 = run()
        l2, gx2, gw2 = run()
        assert np.array_equal(l1, l2)
        assert np.array_equal(gx1, gx2)
        assert np.array_equal(gw1, gw2)


def _random_graph_cases():
    """Scalar-valued graphs used in the finite-difference sweep, with the
    shapes their inputs take."""

    def g_affine_tanh(x, w, b):
        return tsum(tanh(add(matmul(x, w), b)))

    def g_softmax_nll(x, w, b):
        p = log_softmax(add(matmul(x, w), b), axis=-1)
        return neg(mean(p))

    def g_mixed(x, w, b):
        h = sigmoid(matmul(x, w))
        q = div(h, add(tsum(h, axis=-1, keepdims=True), 1.0))
        return tsum(mul(q, q)) + mean(exp(neg(b)))

    def g_slices(x, w, b):
        h = matmul(x, w)
        a = narrow(h, 1, 0, 2)
        bpart = narrow(h, 1, 1, 2)
        joined = concat([a, bpart], axis=1)
        return logsumexp(add(joined, mean(b)))

    def g_logspace(x, w, b):
        h = matmul(x, w)
        r0, r1 = row(h, 0), row(h, 1)
        m = logaddexp(r0, r1, add(r1, 0.25))
        return tsum(mul(m, sigmoid(narrow(add(b, 0.0), 0, 0, m.shape[0]))))

    return [g_affine_tanh, g_softmax_nll, g_mixed, g_slices, g_logspace]


class TestFiniteDifferences:
    def test_random_graph_sweep(self):
        """100 random instances across five graph families, rel err < 1e-4."""
        rng = np.random.default_rng(20260819)
        graphs = _random_graph_cases()
        for trial in range(100):
            g = graphs[trial % len(graphs)]
            xs = rng.normal(size=(3, 4)) * 0.7
            ws = rng.normal(size=(4, 3)) * 0.7
            bs = rng.normal(size=(3,)) * 0.7

            x = Tensor(xs.copy(), requires_grad=True)
            w = Tensor(ws.copy(), requires_grad=True)
            b = Tensor(bs.copy(), requires_grad=True)
            with GradTape():
                loss = g(x, w, b)
                backward(loss)

            for t, arr in ((x, xs), (w, ws), (b, bs)):
                def f(v, _t=t, _g=g, _x=x, _w=w, _b=b):
                    vals = {id(_x): _x.data, id(_w): _w.data, id(_b): _b.data}
                    vals[id(_t)] = v
                    fx = Tensor(vals[id(_x)])
                    fw = Tensor(vals[id(_w)])
                    fb = Tensor(vals[id(_b)])
                    return _g(fx, fw, fb).item()

                num = numeric_grad(f, arr.copy())
                assert t.grad is not None
                err = rel_err(t.grad, num)
                assert err < 1e-4, f"trial {trial} {g.__name__}: rel err {err}"

    def test_gather_narrow_reshape_grads(self):
        rng = np.random.default_rng(21)
        xs = rng.normal(size=12)

        def build(x):
            v = gather(x, [0, 3, 3, 7, 11])
            m = reshape(v, (1, 5))
            return tsum(tanh(narrow(m, 1, 1, 3)))

        x = Tensor(xs.copy(), requires_grad=True)
        with GradTape():
            backward(build(x))
        num = numeric_grad(lambda v: build(Tensor(v)).item(), xs.copy())
        assert rel_err(x.grad, num) < 1e-4

    def test_add_n_and_transpose_grads(self):
        rng = np.random.default_rng(22)
        xs = rng.normal(size=(3, 4))

        def build(x):
            t = transpose(x)
            return tsum(mul(add_n([t, t, t]), t))

        x = Tensor(xs.copy(), requires_grad=True)
        with GradTape():
            backward(build(x))
        num = numeric_grad(lambda v: build(Tensor(v)).item(), xs.copy())
        assert rel_err(x.grad, num) < 1e-4

    def test_broadcast_bias_grads(self):
        """(B, K) + (K,) bias: gradient must reduce over the batch axis."""
        rng = np.random.default_rng(23)
        xs = rng.normal(size=(5, 3))
        bs = rng.normal(size=(3,))
        b = Tensor(bs.copy(), requires_grad=True)
        with GradTape():
            loss = tsum(tanh(add(Tensor(xs), b)))
            backward(loss)
        num = numeric_grad(lambda v: float(np.sum(np.tanh(xs + v))), bs.copy())
        assert b.grad.shape == (3,)
        assert rel_err(b.grad, num) < 1e-4

    def test_sub_div_neg_grads(self):
        rng = np.random.default_rng(24)
        xs = rng.normal(size=6)
        ys = rng.uniform(0.5, 2.0, size=6)

        def build(x, y):
            return tsum(div(sub(x, mul(y, 0.5)), y)) + tsum(neg(mul(x, y)))

        x = Tensor(xs.copy(), requires_grad=True)
        y = Tensor(ys.copy(), requires_grad=True)
        with GradTape():
            backward(build(x, y))
        numx = numeric_grad(lambda v: build(Tensor(v), Tensor(ys)).item(), xs.copy())
        numy = numeric_grad(lambda v: build(Tensor(xs), Tensor(v)).item(), ys.copy())
        assert rel_err(x.grad, numx) < 1e-4
        assert rel_err(y.grad, numy) < 1e-4


class TestLstm:
    def _scalar_loop_cell(self, x, h, c, p: LstmParams):
        """Per-element reimplementation of the cell used as an oracle."""
        H = p.hidden
        pre = p.wx.data @ x + p.wh.data @ h + p.b.data
        out_h = np.zeros(H)
        out_c = np.zeros(H)
        for j in range(H):
            i_g = 1.0 / (1.0 + np.exp(-pre[j]))
            f_g = 1.0 / (1.0 + np.exp(-pre[H + j]))
            o_g = 1.0 / (1.0 + np.exp(-pre[2 * H + j]))
            cand = np.tanh(pre[3 * H + j])
            out_c[j] = f_g * c[j] + i_g * cand
            out_h[j] = o_g * np.tanh(out_c[j])
        return out_h, out_c

    def test_cell_matches_scalar_loop(self):
        rng = np.random.default_rng(30)
        for _ in range(10):
            d, H = 5, 4
            p = init_lstm(rng, d, H)
            x = rng.normal(size=d)
            h = rng.normal(size=H)
            c = rng.normal(size=H)
            hy, cy = lstm_cell(Tensor(x), Tensor(h), Tensor(c), p)
            oh, oc = self._scalar_loop_cell(x, h, c, p)
            np.testing.assert_allclose(hy.data, oh, atol=1e-12)
            np.testing.assert_allclose(cy.data, oc, atol=1e-12)

    def test_batched_matches_loop_over_rows(self):
        rng = np.random.default_rng(31)
        d, H, B = 4, 3, 5
        p = init_lstm(rng, d, H)
        xb = rng.normal(size=(B, d))
        hb = rng.normal(size=(B, H))
        cb = rng.normal(size=(B, H))
        hy, cy = lstm_cell(Tensor(xb), Tensor(hb), Tensor(cb), p)
        for i in range(B):
            oh, oc = self._scalar_loop_cell(xb[i], hb[i], cb[i], p)
            np.testing.assert_allclose(hy.data[i], oh, atol=1e-12)
            np.testing.assert_allclose(cy.data[i], oc, atol=1e-12)

    def test_forget_bias_saturation(self):
        """With forget-gate bias +50 the cell state carries through; with
        -50 it is wiped. Probes the (i, f, o, cand) gate layout."""
        rng = np.random.default_rng(32)
        d, H = 3, 2
        p = init_lstm(rng, d, H)
        p.wx.data[:] = 0.0
        p.wh.data[:] = 0.0
        p.b.data[:] = 0.0
        c0 = np.array([1.5, -2.0])

        p.b.data[H:2 * H] = 50.0  # forget gate open
        _, c_keep = lstm_cell(Tensor(np.zeros(d)), Tensor(np.zeros(H)), Tensor(c0), p)
        np.testing.assert_allclose(c_keep.data, c0, atol=1e-9)

        p.b.data[H:2 * H] = -50.0  # forget gate shut
        _, c_drop = lstm_cell(Tensor(np.zeros(d)), Tensor(np.zeros(H)), Tensor(c0), p)
        np.testing.assert_allclose(c_drop.data, 0.0, atol=1e-9)

    def test_cell_gradients(self):
        rng = np.random.default_rng(33)
        d, H = 3, 3
        p = init_lstm(rng, d, H)
        xs = rng.normal(size=d)

        def loss_with(wx_arr):
            p2 = LstmParams(Tensor(wx_arr), Tensor(p.wh.data), Tensor(p.b.data))
            h, c = lstm_cell(Tensor(xs), Tensor(np.zeros(H)), Tensor(np.zeros(H)), p2)
            return tsum(add(mul(h, h), c))

        with GradTape():
            h, c = lstm_cell(Tensor(xs), Tensor(np.zeros(H)), Tensor(np.zeros(H)), p)
            backward(tsum(add(mul(h, h), c)))
        num = numeric_grad(lambda v: loss_with(v).item(), p.wx.data.copy())
        assert rel_err(p.wx.grad, num) < 1e-4


class TestParamUtilities:
    def test_uniform_init_bounds_and_seed(self):
        rng = np.random.default_rng(42)
        t = uniform_init(rng, (200, 50), fan_in=50)
        bound = 1.0 / np.sqrt(50)
        assert np.all(t.data <= bound) and np.all(t.data >= -bound)
        assert t.requires_grad
        rng2 = np.random.default_rng(42)
        t2 = uniform_init(rng2, (200, 50), fan_in=50)
        assert np.array_equal(t.data, t2.data)

    def test_clip_global_norm(self):
        a = Tensor(np.zeros(3), requires_grad=True)
        b = Tensor(np.zeros(2), requires_grad=True)
        a.grad = np.array([3.0, 0.0, 0.0])
        b.grad = np.array([0.0, 4.0])
        pre = clip_global_norm([a, b], 5.0)
        np.testing.assert_allclose(pre, 5.0)
        np.testing.assert_allclose(a.grad, [3.0, 0.0, 0.0])  # at the limit: untouched

        a.grad = np.array([30.0, 0.0, 0.0])
        b.grad = np.array([0.0, 40.0])
        pre = clip_global_norm([a, b], 5.0)
        np.testing.assert_allclose(pre, 50.0)
        np.testing.assert_allclose(np.sqrt(np.sum(a.grad ** 2) + np.sum(b.grad ** 2)), 5.0)

    def test_tanh_backward_is_injectable(self):
        """The tanh rule routes through a module-level hook so a corrupted
        rule can be injected; used by the gradient-check negative control."""
        orig = T._tanh_backward
        try:
            T._tanh_backward = lambda y, g: g * 0.0
            x = Tensor(np.array([0.3]), requires_grad=True)
            with GradTape():
                backward(tsum(tanh(x)))
            np.testing.assert_allclose(x.grad, [0.0])
        finally:
            T._tanh_backward = orig
        x = Tensor(np.array([0.3]), requires_grad=True)
        with GradTape():
            backward(tsum(tanh(x)))
        assert x.grad[0] > 0.8
