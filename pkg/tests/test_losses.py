"""Loss-term values against hand arithmetic and direct-summation oracles."""

import csv
import math

import numpy as np
import pytest
import torch

from poresr.losses import (
    GramMatrix,
    LossWeights,
    adversarial_losses,
    append_loss_records,
    batch_gram,
    gram_matrix,
    mse_loss,
    perceptual_loss,
    pore_loss,
    ridge_loss,
    total_generator_loss,
    write_loss_log,
)
from poresr.networks import PerceptualExtractor, PerceptualExtractorSpec


def small_extractor():
    return PerceptualExtractor(
        PerceptualExtractorSpec(stage_widths=((4, 4), (8, 8)), default_layer="relu2_2")
    )


def dyadic(shape, seed):
    """Values on the 2^-8 lattice; float64 sums of their products are exact
    regardless of summation order."""
    rng = np.random.default_rng(seed)
    return torch.tensor(rng.integers(0, 256, size=shape) / 256.0, dtype=torch.float64)


# ---------------------------------------------------------------------------
# mse


def test_mse_identical_zero():
    x = torch.rand(2, 1, 16, 16)
    assert float(mse_loss(x, x)) == 0.0


def test_mse_uniform_offset():
    x = torch.full((1, 1, 8, 8), 0.4)
    assert float(mse_loss(x + 0.1, x)) == pytest.approx(0.01)


def test_mse_single_pixel():
    a = torch.zeros(1, 1, 80, 60)
    b = torch.zeros(1, 1, 80, 60)
    b[0, 0, 10, 20] = 1.0
    assert float(mse_loss(a, b)) == pytest.approx(1.0 / 4800.0)


def test_mse_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        mse_loss(torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 9))


# ---------------------------------------------------------------------------
# adversarial


def test_adversarial_perfect_discriminator():
    eps = 1e-7
    g, d = adversarial_losses(torch.tensor([1.0 - eps]), torch.tensor([eps]))
    assert float(d) == pytest.approx(0.0, abs=1e-5)


def test_adversarial_half_values():
    g, d = adversarial_losses(torch.tensor([0.5], dtype=torch.float64),
                              torch.tensor([0.5], dtype=torch.float64))
    assert float(g) == pytest.approx(math.log(2.0), rel=1e-12)
    assert float(d) == 2.0 * math.log(2.0)


def test_adversarial_saturating_switch():
    fake = torch.tensor([0.5], dtype=torch.float64)
    real = torch.tensor([0.5], dtype=torch.float64)
    g_sat, _ = adversarial_losses(real, fake, saturating=True)
    assert float(g_sat) == pytest.approx(-math.log(2.0), rel=1e-12)


def test_adversarial_clamps_extremes():
    g, d = adversarial_losses(torch.tensor([0.0, 1.0]), torch.tensor([0.0, 1.0]))
    assert math.isfinite(float(g)) and math.isfinite(float(d))


# ---------------------------------------------------------------------------
# perceptual


def test_perceptual_identical_zero():
    ex = small_extractor()
    x = torch.rand(2, 1, 8, 8)
    assert float(perceptual_loss(x, x, ex)) == 0.0


def test_perceptual_matches_bruteforce():
    ex = small_extractor().double()
    torch.manual_seed(61)
    a = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    b = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    got = float(perceptual_loss(a, b, ex, "relu1_2"))
    fa = ex(a, "relu1_2").detach().numpy()
    fb = ex(b, "relu1_2").detach().numpy()
    total, count = 0.0, 0
    for n in range(fa.shape[0]):
        for c in range(fa.shape[1]):
            for i in range(fa.shape[2]):
                for j in range(fa.shape[3]):
                    total += (fa[n, c, i, j] - fb[n, c, i, j]) ** 2
                    count += 1
    assert got == pytest.approx(total / count, rel=1e-10)


def test_perceptual_unknown_layer():
    with pytest.raises(ValueError):
        perceptual_loss(torch.rand(1, 1, 8, 8), torch.rand(1, 1, 8, 8),
                        small_extractor(), "relu7_1")


# ---------------------------------------------------------------------------
# gram


def test_gram_zero_features():
    g = gram_matrix(torch.zeros(3, 4, 4))
    assert torch.equal(g.values, torch.zeros(3, 3))


def test_gram_hand_case():
    f = torch.stack([torch.ones(2, 2), torch.zeros(2, 2)])
    g = gram_matrix(f).values
    assert g.tolist() == [[0.5, 0.0], [0.0, 0.0]]


def test_gram_exactly_symmetric_and_psd():
    torch.manual_seed(62)
    f = torch.randn(6, 5, 7)
    g = gram_matrix(f).values
    assert torch.equal(g, g.T)
    eigs = torch.linalg.eigvalsh(g.double())
    assert float(eigs.min()) >= -1e-8


def test_gram_spatial_permutation_exact():
    f = dyadic((4, 8, 8), seed=63)
    rng = np.random.default_rng(64)
    perm = rng.permutation(64)
    f_perm = f.reshape(4, -1)[:, perm].reshape(4, 8, 8)
    assert torch.equal(gram_matrix(f).values, gram_matrix(f_perm).values)


def test_gram_matrix_validates():
    with pytest.raises(ValueError):
        gram_matrix(torch.zeros(3, 4))
    with pytest.raises(ValueError):
        GramMatrix(torch.tensor([[0.0, 1.0], [2.0, 0.0]]))


# ---------------------------------------------------------------------------
# ridge


def test_ridge_identical_zero():
    ex = small_extractor()
    x = torch.rand(2, 1, 8, 8)
    assert float(ridge_loss(x, x, ex)) == 0.0


def test_ridge_matches_bruteforce_double_loop():
    ex = small_extractor().double()
    torch.manual_seed(65)
    a = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    b = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    layer = "relu1_1"
    got = float(ridge_loss(a, b, ex, [layer]))

    fa = ex(a, layer).detach().numpy()
    fb = ex(b, layer).detach().numpy()

    def avg_gram(f):
        n, c = f.shape[0], f.shape[1]
        per_img = f.reshape(n, c, -1)
        g = np.zeros((c, c))
        for k in range(n):
            for ci in range(c):
                for cj in range(c):
                    g[ci, cj] += per_img[k, ci] @ per_img[k, cj]
        return g / (n * per_img.shape[2] * c)

    ga, gb = avg_gram(fa), avg_gram(fb)
    want = ((ga - gb) ** 2).sum()
    assert got == pytest.approx(want, rel=1e-9)


def test_ridge_invariant_to_shared_spatial_permutation():
    # Permuting spatial positions of a feature map leaves its Gram matrix,
    # and hence the Frobenius distance, unchanged.
    fa = dyadic((2, 3, 4, 4), seed=66)
    fb = dyadic((2, 3, 4, 4), seed=67)
    rng = np.random.default_rng(68)
    perm = rng.permutation(16)
    fa_p = fa.reshape(2, 3, -1)[:, :, perm].reshape(2, 3, 4, 4)
    d1 = torch.sum((batch_gram(fa) - batch_gram(fb)) ** 2)
    d2 = torch.sum((batch_gram(fa_p) - batch_gram(fb)) ** 2)
    assert torch.equal(d1, d2)


# ---------------------------------------------------------------------------
# pore


def test_pore_identical_zero():
    x = torch.rand(2, 1, 16, 16)
    assert float(pore_loss(x, x)) == 0.0


def test_pore_uniform_offset():
    x = torch.full((1, 1, 8, 8), 0.3)
    assert float(pore_loss(x + 0.1, x)) == pytest.approx(0.1)


def test_pore_single_pixel():
    a = torch.zeros(1, 1, 80, 60)
    b = torch.zeros(1, 1, 80, 60)
    b[0, 0, 5, 5] = 0.5
    assert float(pore_loss(a, b)) == pytest.approx(0.5 / 4800.0)


# ---------------------------------------------------------------------------
# total


def test_total_zero_parts():
    zero = torch.tensor(0.0)
    total = total_generator_loss(zero, zero, zero, zero, zero)
    assert float(total) == 0.0


def test_total_unit_parts_default_weights():
    one = torch.tensor(1.0)
    total = total_generator_loss(one, one, one, one, one)
    assert float(total) == pytest.approx(3e-3 + 2e-2)


def test_total_linear_in_each_weight():
    one = torch.tensor(1.0)
    zero = torch.tensor(0.0)
    base = total_generator_loss(zero, zero, zero, zero, one,
                                LossWeights(pore=1e-2))
    doubled = total_generator_loss(zero, zero, zero, zero, one,
                                   LossWeights(pore=2e-2))
    assert float(doubled) == pytest.approx(2 * float(base))


def test_total_rejects_nonfinite():
    one = torch.tensor(1.0)
    with pytest.raises(ValueError):
        total_generator_loss(torch.tensor(float("nan")), one, one, one, one)


def test_weights_validate():
    with pytest.raises(ValueError):
        LossWeights(ridge=-0.1)
    w = LossWeights()
    assert (w.mse, w.adversarial, w.perceptual) == (1e-3, 1e-3, 1e-3)
    assert (w.ridge, w.pore) == (1e-2, 1e-2)


# ---------------------------------------------------------------------------
# gradient correctness


def test_mse_gradients():
    a = torch.rand(1, 1, 6, 6, dtype=torch.float64, requires_grad=True)
    b = torch.rand(1, 1, 6, 6, dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda x: mse_loss(x, b), (a,),
                                    eps=1e-4, atol=1e-5, rtol=1e-3)


def test_adversarial_gradients():
    real = 0.2 + 0.6 * torch.rand(4, dtype=torch.float64)
    fake = (0.2 + 0.6 * torch.rand(4, dtype=torch.float64)).requires_grad_(True)
    assert torch.autograd.gradcheck(
        lambda f: adversarial_losses(real, f)[0], (fake,),
        eps=1e-4, atol=1e-5, rtol=1e-3)
    assert torch.autograd.gradcheck(
        lambda f: adversarial_losses(real, f)[1], (fake,),
        eps=1e-4, atol=1e-5, rtol=1e-3)


def test_perceptual_and_ridge_gradients():
    ex = small_extractor().double()
    torch.manual_seed(69)
    a = torch.rand(1, 1, 8, 8, dtype=torch.float64, requires_grad=True)
    b = torch.rand(1, 1, 8, 8, dtype=torch.float64)
    assert torch.autograd.gradcheck(
        lambda x: perceptual_loss(x, b, ex, "relu1_1"), (a,),
        eps=1e-4, atol=1e-4, rtol=1e-3)
    assert torch.autograd.gradcheck(
        lambda x: ridge_loss(x, b, ex, ["relu1_1"]), (a,),
        eps=1e-4, atol=1e-4, rtol=1e-3)


def test_pore_loss_gradients():
    # L1 is kinked at equality, so keep the operands well separated.
    a = (0.6 + 0.3 * torch.rand(1, 1, 6, 6, dtype=torch.float64)).requires_grad_(True)
    b = 0.1 * torch.rand(1, 1, 6, 6, dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda x: pore_loss(x, b), (a,),
                                    eps=1e-4, atol=1e-5, rtol=1e-3)


def test_gram_gradients():
    f = torch.rand(3, 4, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda x: gram_matrix(x).values.sum(), (f,),
                                    eps=1e-4, atol=1e-5, rtol=1e-3)


# ---------------------------------------------------------------------------
# logging


def test_loss_log_roundtrip(tmp_path):
    records = []
    append_loss_records(records, 0, {"mse": 0.5, "pore": 0.25})
    append_loss_records(records, 1, {"mse": 0.4})
    p = tmp_path / "losses.csv"
    write_loss_log(records, p)
    with p.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert rows[0] == {"step": "0", "loss": "mse", "value": "0.5"}
    assert rows[2]["step"] == "1"
