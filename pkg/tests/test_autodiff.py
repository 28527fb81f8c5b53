import numpy as np
import pytest
import torch

from ssct.autodiff import AdamState, adam_step, backward, conv2d, leaky_relu
from ssct.fbp import filter_sinogram

from oracles import adam_scalar, conv2d_loop, fd_gradient, rel_err


class TestConv2d:
    def test_identity_kernel(self):
        x = torch.arange(9, dtype=torch.float32).reshape(1, 1, 3, 3)
        out = conv2d(x, torch.ones(1, 1, 1, 1), torch.zeros(1))
        assert torch.equal(out, x)

    def test_all_ones_kernel_on_2x2(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        k = np.ones((1, 1, 3, 3))
        expected = conv2d_loop(x, k, np.zeros(1))
        np.testing.assert_array_equal(expected[0, 0], [[10.0, 10.0], [10.0, 10.0]])
        out = conv2d(torch.tensor(x, dtype=torch.float32), torch.ones(1, 1, 3, 3), torch.zeros(1))
        np.testing.assert_allclose(out.numpy(), expected, rtol=1e-6)

    def test_zero_input_gives_bias(self):
        k = torch.randn(3, 2, 3, 3)
        b = torch.tensor([0.5, -1.0, 2.0])
        out = conv2d(torch.zeros(2, 2, 5, 5), k, b)
        for o in range(3):
            assert torch.all(out[:, o] == b[o])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 6, 5))
        k = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = conv2d(*(torch.tensor(a, dtype=torch.float32) for a in (x, k, b)))
        np.testing.assert_allclose(out.numpy(), conv2d_loop(x, k, b), rtol=1e-4, atol=1e-5)

    @pytest.mark.parametrize(
        "xs, ks",
        [((1, 2, 4, 4), (1, 3, 3, 3)), ((1, 1, 4, 4), (1, 1, 2, 2)), ((1, 4, 4), (1, 1, 3, 3))],
    )
    def test_shape_errors(self, xs, ks):
        with pytest.raises(ValueError):
            conv2d(torch.zeros(xs), torch.zeros(ks), None)

    def test_linearity(self):
        g = torch.Generator().manual_seed(0)
        x, y = torch.randn(2, 1, 2, 8, 8, generator=g)
        k = torch.randn(3, 2, 3, 3, generator=g)
        lhs = conv2d(2.0 * x - 0.5 * y, k)
        rhs = 2.0 * conv2d(x, k) - 0.5 * conv2d(y, k)
        assert rel_err(lhs, rhs) <= 1e-5


class TestLeakyRelu:
    def test_values(self):
        out = leaky_relu(torch.tensor([1.0, -1.0]), 0.1)
        np.testing.assert_allclose(out.numpy(), [1.0, -0.1], rtol=1e-7)

    def test_positive_identity(self):
        x = torch.rand(10) + 0.1
        assert torch.equal(leaky_relu(x, 0.2), x)

    def test_gradient(self):
        x = torch.tensor([-2.0, 0.0, 3.0], requires_grad=True)
        backward(leaky_relu(x, 0.1).sum())
        np.testing.assert_allclose(x.grad.numpy(), [0.1, 1.0, 1.0], rtol=1e-7)

    def test_bad_slope(self):
        with pytest.raises(ValueError):
            leaky_relu(torch.zeros(2), 1.5)


class TestBackward:
    def test_sum(self):
        x = torch.randn(3, 4, requires_grad=True)
        backward(x.sum())
        assert torch.equal(x.grad, torch.ones(3, 4))

    def test_square(self):
        x = torch.tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward((x * x).sum())
        np.testing.assert_array_equal(x.grad.numpy(), [2.0, 4.0, 6.0])

    def test_non_scalar_rejected(self):
        x = torch.randn(3, requires_grad=True)
        with pytest.raises(ValueError):
            backward(x * 2)

    def test_reused_leaf_accumulates(self):
        x = torch.tensor([1.5], requires_grad=True)
        backward(x * x + 3 * x)
        assert x.grad.item() == pytest.approx(6.0)

    def test_composite_matches_finite_differences(self):
        g = torch.Generator().manual_seed(1)
        x = torch.randn(1, 1, 4, 4, generator=g)
        k1 = torch.randn(2, 1, 3, 3, generator=g)
        k2 = torch.randn(1, 2, 3, 3, generator=g)
        phi = torch.rand(9, generator=g)  # 8 bins -> P=16
        weights = torch.randn(4, 8, generator=g)

        def f(xx, kk1, pp):
            h = leaky_relu(conv2d(xx, kk1), 0.1)
            h = conv2d(h, k2)[0, 0]
            sino = torch.cat([h, h.flip(-1)], dim=-1)  # 4 x 8 "sinogram"
            return (filter_sinogram(sino, pp) * weights).sum()

        leaves = [t.clone().requires_grad_(True) for t in (x, k1, phi)]
        backward(f(*leaves))
        for pos, leaf in enumerate(leaves):
            def fn(v, pos=pos):
                args = [t.detach() for t in leaves]
                args[pos] = v
                return f(*args)

            n = leaf.numel()
            idx = range(min(n, 64))
            fd = fd_gradient(fn, leaf, idx)
            ad = leaf.grad.view(-1)[: len(fd)].numpy()
            assert rel_err(ad, fd) <= 1e-3

    def test_deterministic(self):
        def run():
            g = torch.Generator().manual_seed(7)
            x = torch.randn(1, 1, 8, 8, generator=g)
            k = torch.randn(4, 1, 3, 3, generator=g, requires_grad=True)
            out = leaky_relu(conv2d(x, k), 0.1).pow(2).sum()
            backward(out)
            return out.detach(), k.grad

        (a, ga), (b, gb) = run(), run()
        assert torch.equal(a, b) and torch.equal(ga, gb)


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        p = torch.tensor([1.0, -2.0, 0.5])
        g = torch.tensor([3.0, -0.2, 1e-3])
        adam_step([p], [g], AdamState(), lr=0.01)
        np.testing.assert_allclose(p.numpy(), [0.99, -1.99, 0.49], rtol=0, atol=1e-5)

    def test_zero_gradient_keeps_params(self):
        p = torch.tensor([1.0, -2.0])
        state = AdamState()
        for _ in range(5):
            adam_step([p], [torch.zeros(2)], state, lr=0.1)
        assert torch.equal(p, torch.tensor([1.0, -2.0]))

    def test_two_steps_match_scalar_oracle(self):
        expected = adam_scalar(1.0, lambda w: 2 * w, steps=2, lr=0.1)
        w = torch.tensor([1.0])
        state = AdamState()
        for _ in range(2):
            adam_step([w], [2 * w.clone()], state, lr=0.1)
        assert w.item() == pytest.approx(expected, abs=1e-6)

    def test_rejects_nonpositive_lr(self):
        with pytest.raises(ValueError):
            adam_step([torch.zeros(1)], [torch.zeros(1)], AdamState(), lr=0.0)
