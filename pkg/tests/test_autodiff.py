import numpy as np
import pytest

import stt.autodiff as ad
from stt.autodiff import Parameter, Tensor
from stt.nn import SGD, BatchNorm2d, Conv2dTemporal


class TestMatmul:
    def test_identity(self):
        v = Tensor(np.arange(3, dtype=np.float64).reshape(3, 1))
        out = ad.matmul(Tensor(np.eye(3)), v)
        assert np.array_equal(out.data, v.data)

    def test_hand_computed(self):
        a = Tensor(np.array([[1.0, 2, 3], [4, 5, 6]]))
        b = Tensor(np.arange(12, dtype=np.float64).reshape(3, 4))
        out = ad.matmul(a, b)
        assert out.shape == (2, 4)
        assert np.array_equal(out.data, a.data @ b.data)

    def test_matches_triple_loop_oracle(self, rng):
        a = rng.normal(size=(4, 5)).astype(np.float32)
        b = rng.normal(size=(5, 6)).astype(np.float32)
        expected = np.zeros((4, 6))
        for i in range(4):
            for j in range(6):
                for k in range(5):
                    expected[i, j] += float(a[i, k]) * float(b[k, j])
        out = ad.matmul(Tensor(a), Tensor(b))
        assert np.abs(out.data - expected).max() < 1e-5

    def test_shape_mismatch_message(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))

    def test_gradients(self, rng):
        a = Parameter(rng.normal(size=(2, 3)))
        b = Parameter(rng.normal(size=(3, 4)))
        ad.tsum(ad.matmul(a, b)).backward()
        assert np.allclose(a.grad, np.ones((2, 4)) @ b.data.T)
        assert np.allclose(b.grad, a.data.T @ np.ones((2, 4)))


class TestSoftmax:
    def test_symmetry(self):
        out = ad.softmax(Tensor(np.zeros(2)), axis=0)
        assert np.allclose(out.data, [0.5, 0.5])

    def test_overflow_stability(self):
        out = ad.softmax(Tensor(np.array([1000.0, 0.0])), axis=0)
        assert np.allclose(out.data, [1.0, 0.0])
        assert np.isfinite(out.data).all()

    def test_matches_double_precision_reference(self, rng):
        x = rng.normal(size=(7,)) * 5
        out = ad.softmax(Tensor(x.astype(np.float32)), axis=0)
        ref = np.exp(x) / np.exp(x).sum()
        assert np.abs(out.data - ref).max() < 1e-6

    def test_rows_sum_to_one(self, rng):
        x = rng.normal(size=(4, 9)) * 50
        out = ad.softmax(Tensor(x), axis=-1)
        assert np.abs(out.data.sum(axis=-1) - 1).max() < 1e-6

    def test_nan_propagates(self):
        out = ad.softmax(Tensor(np.array([np.nan, 0.0])), axis=0)
        assert np.isnan(out.data).any()


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = Tensor(np.zeros((4, 10)))
        loss = ad.cross_entropy(logits, np.array([0, 3, 5, 9]))
        assert abs(loss.item() - np.log(10)) < 1e-6

    def test_confident_correct_is_near_zero(self):
        logits = np.zeros((1, 5), dtype=np.float64)
        logits[0, 2] = 1e4
        assert ad.cross_entropy(Tensor(logits), np.array([2])).item() < 1e-8

    def test_matches_reference(self, rng):
        logits = rng.normal(size=(6, 8)).astype(np.float32)
        labels = rng.integers(0, 8, 6)
        loss = ad.cross_entropy(Tensor(logits), labels)
        z = logits.astype(np.float64)
        ref = np.mean([-z[i, labels[i]] + np.log(np.exp(z[i]).sum()) for i in range(6)])
        assert abs(loss.item() - ref) < 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="label out of range"):
            ad.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


class TestLayers:
    def test_relu(self):
        out = ad.relu(Tensor(np.array([-1.0, 0.0, 2.0])))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_batchnorm_constant_channel_gives_zeros(self):
        bn = BatchNorm2d(3)
        x = Tensor(np.full((2, 3, 4, 5), 7.0, dtype=np.float32))
        out = bn(x, train=True)
        assert np.abs(out.data).max() < 1e-3    # 7/sqrt(eps)*0 plus eps guard

    def test_batchnorm_normalizes_in_train_mode(self, rng):
        bn = BatchNorm2d(2)
        x = Tensor(rng.normal(3.0, 2.0, size=(4, 2, 8, 5)).astype(np.float32))
        out = bn(x, train=True)
        assert np.abs(out.data.mean(axis=(0, 2, 3))).max() < 1e-5
        assert np.abs(out.data.std(axis=(0, 2, 3)) - 1).max() < 1e-3

    def test_batchnorm_eval_uses_running_stats(self, rng):
        bn = BatchNorm2d(2)
        x = Tensor(rng.normal(size=(4, 2, 8, 5)).astype(np.float32))
        for _ in range(200):
            bn(x, train=True)
        out_eval = bn(x, train=False)
        out_train = bn(x, train=True)
        assert np.abs(out_eval.data - out_train.data).max() < 0.05

    def test_conv_same_length_and_sliding_window_oracle(self, rng):
        conv = Conv2dTemporal(2, 3, 9, 1, rng)
        x = rng.normal(size=(1, 2, 64, 4)).astype(np.float32)
        out = conv(Tensor(x))
        assert out.shape == (1, 3, 64, 4)
        xp = np.pad(x, ((0, 0), (0, 0), (4, 4), (0, 0)))
        w, b = conv.weight.data, conv.bias.data
        for co in range(3):
            for t in range(64):
                for v in range(4):
                    acc = b[co]
                    for ci in range(2):
                        for k in range(9):
                            acc += w[co, ci, k, 0] * xp[0, ci, t + k, v]
                    assert abs(out.data[0, co, t, v] - acc) < 1e-5

    def test_conv_stride_two_halves_time(self, rng):
        conv = Conv2dTemporal(2, 2, 9, 2, rng)
        out = conv(Tensor(rng.normal(size=(1, 2, 64, 4)).astype(np.float32)))
        assert out.shape == (1, 2, 32, 4)


class TestBackwardAndSGD:
    def test_linear_map_gradient(self, rng):
        w = Parameter(rng.normal(size=(3, 4)))
        x = Tensor(rng.normal(size=(5, 3)), requires_grad=False)
        ad.tsum(ad.matmul(x, w)).backward()
        assert np.allclose(w.grad, x.data.T @ np.ones((5, 4)))

    def test_backward_on_non_scalar_raises(self, rng):
        w = Parameter(rng.normal(size=(2, 2)))
        with pytest.raises(ValueError, match="scalar"):
            ad.matmul(w, w).backward()

    def test_double_backward_doubles_gradients(self, rng):
        w = Parameter(rng.normal(size=(3, 3)))
        x = Tensor(rng.normal(size=(3, 3)), requires_grad=False)
        loss = ad.tsum(ad.mul(ad.matmul(x, w), ad.matmul(x, w)))
        loss.backward()
        once = w.grad.copy()
        loss.backward()
        assert np.array_equal(w.grad, 2 * once)

    def test_frozen_parameter_gets_grad_but_no_update(self, rng):
        w = Parameter(rng.normal(size=(2, 2)), frozen=True)
        before = w.data.copy()
        opt = SGD([w], lr=0.5)
        ad.tsum(ad.mul(w, w)).backward()
        assert w.grad is not None
        opt.step()
        assert np.array_equal(w.data, before)

    def test_sgd_zero_lr_is_identity(self, rng):
        w = Parameter(rng.normal(size=(4,)))
        before = w.data.copy()
        opt = SGD([w], lr=0.0)
        ad.tsum(ad.mul(w, w)).backward()
        opt.step()
        assert np.array_equal(w.data, before)

    def test_sgd_momentum_accumulates(self):
        w = Parameter(np.array([0.0]))
        opt = SGD([w], lr=1.0, momentum=0.5)
        for expected in (-1.0, -2.5):    # v: 1, 1.5
            w.grad = np.array([1.0])
            opt.step()
            assert np.allclose(w.data, [expected])
