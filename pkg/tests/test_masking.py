import numpy as np
import pytest
import torch

from ssct.masking import MaskPartition, generate_mask, masked_mse, perturb
from ssct.phantoms import noisy_sinogram
from ssct.tomo import Geometry

G = Geometry(64, 32, 128)


class TestGenerateMask:
    def test_exact_count(self):
        m = generate_mask(G, 4, 0, seed=3)
        assert m.size == 32 * 32

    def test_phases_partition(self):
        masks = [generate_mask(G, 4, p, seed=3).members for p in range(4)]
        total = np.sum(masks, axis=0)
        assert np.all(total == 1)
        assert total.size == 4096

    @pytest.mark.parametrize("stride", [2, 3, 5, 7])
    def test_fraction(self, stride):
        g = Geometry(64, 16, 93)
        for phase in range(stride):
            frac = generate_mask(g, stride, phase, seed=1).size / (16 * 93)
            assert abs(frac - 1 / stride) <= 0.02

    def test_deterministic(self):
        assert generate_mask(G, 4, 1, 9) == generate_mask(G, 4, 1, 9)
        assert np.array_equal(generate_mask(G, 4, 1, 9).members, generate_mask(G, 4, 1, 9).members)

    def test_offsets_vary_across_views(self):
        assert len(set(generate_mask(G, 4, 0, 0).offsets)) > 1

    @pytest.mark.parametrize("stride, phase", [(1, 0), (65, 0), (4, 4), (4, -1)])
    def test_invalid(self, stride, phase):
        with pytest.raises(ValueError):
            generate_mask(G, stride, phase, 0)


class TestPerturb:
    def test_empty_mask_identity(self):
        empty = MaskPartition(32, 128, 4, 4, 0, (0,) * 32)  # phase == stride selects nothing
        assert empty.size == 0
        y = torch.randn(32, 128)
        assert torch.equal(perturb(y, empty), y)

    def test_neighbour_average(self):
        m = MaskPartition(1, 5, 5, 2, 0, (0,))
        out = perturb(torch.tensor([[1.0, 2.0, 3.0, 4.0, 5.0]]), m)
        assert out.tolist() == [[1.0, 2.0, 3.0, 4.0, 5.0]]
        assert out[0, 2] == 3.0
        y = torch.tensor([[1.0, 2.0, 10.0, 4.0, 5.0]])
        assert perturb(y, m)[0, 2] == 3.0

    def test_edges_are_one_sided(self):
        y = torch.tensor([[7.0, 2.0, 3.0, 4.0, 9.0]])
        assert perturb(y, MaskPartition(1, 5, 5, 0, 0, (0,)))[0, 0] == 2.0
        assert perturb(y, MaskPartition(1, 5, 5, 4, 0, (0,)))[0, 4] == 4.0

    def test_unchanged_outside_j(self):
        m = generate_mask(G, 4, 2, 5)
        y = torch.randn(32, 128)
        out = perturb(y, m)
        outside = ~m.tensor()
        assert torch.equal(out[outside], y[outside])

    def test_j_invariance_bitwise(self):
        m = generate_mask(G, 4, 1, 8)
        y = torch.randn(32, 128)
        z = y.clone()
        z[m.tensor()] = torch.randn(int(m.size)) * 100
        assert torch.equal(perturb(y, m), perturb(z, m))


class TestMaskedMse:
    def test_zero(self):
        m = generate_mask(G, 4, 0, 0)
        y = torch.randn(32, 128)
        assert masked_mse(y, y, m).item() == 0.0

    def test_constant_offset(self):
        m = generate_mask(G, 4, 0, 0)
        y = torch.randn(32, 128)
        assert masked_mse(y + 1.0, y, m).item() == pytest.approx(1.0, rel=1e-6)

    def test_restriction_oracle(self):
        m = generate_mask(G, 4, 3, 11)
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((2, 32, 128))
        members = m.members
        acc, count = 0.0, 0
        for v in range(32):
            for k in range(128):
                if members[v, k]:
                    acc += (a[v, k] - b[v, k]) ** 2
                    count += 1
        got = masked_mse(torch.tensor(a, dtype=torch.float32), torch.tensor(b, dtype=torch.float32), m).item()
        assert got == pytest.approx(acc / count, rel=1e-5)

    def test_empty_rejected(self):
        empty = MaskPartition(32, 128, 4, 4, 0, (0,) * 32)
        with pytest.raises(ValueError):
            masked_mse(torch.zeros(32, 128), torch.zeros(32, 128), empty)

    def test_gradient_zero_outside_j(self):
        m = generate_mask(G, 4, 0, 2)
        pred = torch.randn(32, 128, requires_grad=True)
        masked_mse(pred, torch.randn(32, 128), m).backward()
        assert torch.all(pred.grad[~m.tensor()] == 0)
        assert torch.all(pred.grad[m.tensor()] != 0)

    def test_batch_mean(self):
        m = generate_mask(G, 4, 0, 2)
        p, t = torch.randn(2, 3, 32, 128)
        batch = masked_mse(p, t, m)
        single = torch.stack([masked_mse(p[i], t[i], m) for i in range(3)]).mean()
        assert batch.item() == pytest.approx(single.item(), rel=1e-6)


def test_identity_escape():
    """Predicting J from the perturbed input by identity loses to a fitted detector smoother."""
    half = 5

    def design(y, m):
        y_jc = perturb(y, m).numpy()
        idx = np.argwhere(m.members)
        cols = []
        for d in range(-half, half + 1):
            k = np.clip(idx[:, 1] + d, 0, y_jc.shape[1] - 1)
            cols.append(y_jc[idx[:, 0], k])
        return np.stack(cols, axis=1), y.numpy()[m.members]

    fit_x, fit_y, test = [], [], []
    for i, seed in enumerate(range(500, 520)):
        _, sino = noisy_sinogram(seed, 64, 32, 0.02)
        m = generate_mask(sino.geometry, 4, i % 4, seed)
        x, t = design(sino.data, m)
        if i < 10:
            fit_x.append(x)
            fit_y.append(t)
        else:
            test.append((x, t))
    w, *_ = np.linalg.lstsq(np.concatenate(fit_x), np.concatenate(fit_y), rcond=None)
    identity = np.mean([np.mean((x[:, half] - t) ** 2) for x, t in test])
    smoother = np.mean([np.mean((x @ w - t) ** 2) for x, t in test])
    assert identity > smoother
