import math

import numpy as np
import pytest
import torch

from ssct.metrics import psnr, ssim, ssim_map
from ssct.phantoms import gen_phantom
from ssct.tomo import circle_mask

from oracles import psnr_two_pass, ssim_loop


def random_pairs(n, size=32, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        x = rng.random((size, size))
        y = np.clip(x + rng.normal(0, rng.uniform(0.01, 0.3), x.shape), 0, 1)
        yield x, y


class TestPsnr:
    def test_identical_is_inf(self):
        x = np.random.default_rng(0).random((32, 32))
        assert psnr(x, x) == math.inf

    def test_analytic(self):
        x = np.zeros((32, 32))
        assert abs(psnr(x, x + 0.1) - 20.0) <= 1e-6

    def test_outside_circle_ignored(self):
        x = np.zeros((32, 32))
        y = np.where(circle_mask(32), 0.1, 5.0)
        assert abs(psnr(x, y) - 20.0) <= 1e-6

    def test_oracle_pairs(self):
        for x, y in random_pairs(50):
            assert abs(psnr(x, y) - psnr_two_pass(x, y)) <= 1e-6

    def test_peak(self):
        x = np.zeros((32, 32))
        assert abs(psnr(x, x + 0.1, peak=2.0) - (20.0 + 20 * math.log10(2))) <= 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((32, 32)), np.zeros((33, 33)))

    def test_accepts_tensors(self):
        x = torch.rand(32, 32)
        assert psnr(x, x * 0.5) == pytest.approx(psnr(x.numpy(), x.numpy() * 0.5))


class TestSsim:
    def test_identity_exact(self):
        for x, _ in random_pairs(5):
            assert ssim(x, x) == 1.0
        p = gen_phantom(0, 64)
        assert ssim(p, p) == 1.0

    def test_constant_closed_form(self):
        c1 = 0.01**2
        expected = c1 / (1.0 + c1)  # mu_x = 0, mu_y = 1, both variances zero
        got = ssim(np.zeros((32, 32)), np.ones((32, 32)))
        assert got == pytest.approx(expected, rel=1e-9)

    def test_loop_oracle(self):
        circle = circle_mask(32)
        for x, y in random_pairs(50, seed=1):
            assert abs(ssim(x, y) - ssim_loop(x, y, circle)) <= 1e-6

    def test_skimage_reference(self):
        structural_similarity = pytest.importorskip("skimage.metrics").structural_similarity
        circle = circle_mask(48)
        for x, y in random_pairs(10, size=48, seed=2):
            _, full = structural_similarity(
                x, y, data_range=1.0, gaussian_weights=True, sigma=1.5,
                use_sample_covariance=False, full=True,
            )
            assert abs(ssim(x, y) - full[circle].mean()) <= 1e-6

    def test_noise_lowers(self):
        p = gen_phantom(3, 64).numpy()
        noisy = p + np.random.default_rng(0).normal(0, 0.1, p.shape)
        assert ssim(p, noisy) < 1.0

    def test_range(self):
        for x, y in random_pairs(10, seed=3):
            assert -1.0 <= ssim(x, y) <= 1.0
            m = ssim_map(x, y)
            assert np.all(np.abs(m) <= 1.0 + 1e-12)

    def test_small_image_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((15, 15)), np.zeros((15, 15)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((32, 32)), np.zeros((32, 31)))
