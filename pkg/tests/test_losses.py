import numpy as np
import pytest

from maemgan import autodiff as ad
from maemgan.autodiff import Tensor
from maemgan.data import Augmentation
from maemgan.losses import (LossWeights, discriminator_objective,
                            generator_objective, l_disomap, l_dlle, l_ent, l_maf, l_wgan)
from maemgan.models import build_discriminator, embed
from maemgan.replay_buffer import BufferEmpty, ReplayBuffer
from tests.test_models import linear_disc


def test_l_wgan_examples():
    assert l_wgan(Tensor([1.0]), Tensor([1.0])).item() == 0.0
    assert l_wgan(Tensor([2.0, 4.0]), Tensor([1.0, 1.0])).item() == -2.0
    assert l_wgan(Tensor([0.0]), Tensor([5.0])).item() == 5.0
    with pytest.raises(ValueError, match="empty"):
        l_wgan(Tensor(np.zeros(0)), Tensor([1.0]))


def test_l_maf_examples():
    assert l_maf(Tensor([[2.0, 4.0]]), Tensor([[0.0, 0.0]])).item() == -3.0
    e = Tensor(np.random.default_rng(0).normal(size=(5, 3)))
    assert l_maf(e, e).item() == 0.0
    with pytest.raises(ValueError, match="width"):
        l_maf(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_l_maf_m1_is_l_wgan_bitwise():
    rng = np.random.default_rng(1)
    for _ in range(50):
        r, f = rng.normal(size=(7, 1)), rng.normal(size=(7, 1))
        a = l_maf(Tensor(r), Tensor(f)).value
        b = l_wgan(Tensor(r[:, 0]), Tensor(f[:, 0])).value
        assert a.tobytes() == b.tobytes()


def test_l_maf_antisymmetric():
    rng = np.random.default_rng(2)
    r, f = Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=(6, 4)))
    assert l_maf(r, f).item() == -l_maf(f, r).item()


def test_l_ent_examples():
    buf = ReplayBuffer(4, 2)
    v = np.array([0.3, -0.7])
    buf.push(v)
    assert l_ent(Tensor(v), buf, 0.0).item() == pytest.approx(1.0, abs=1e-15)

    buf = ReplayBuffer(4, 2)
    buf.extend([[1.0, 0.0], [0.0, 1.0]])
    assert l_ent(Tensor([1.0, 0.0]), buf, 0.1).item() == pytest.approx(1.1, abs=1e-15)

    buf = ReplayBuffer(4, 2)
    buf.push([0.0, 1.0])
    assert l_ent(Tensor([1.0, 0.0]), buf, 0.0).item() == 0.0

    with pytest.raises(BufferEmpty):
        l_ent(Tensor([1.0, 0.0]), ReplayBuffer(3, 2), 0.1)


def test_l_ent_scale_properties():
    rng = np.random.default_rng(3)
    buf = ReplayBuffer(30, 5)
    stored = rng.normal(size=(30, 5))
    buf.extend(stored)
    v0 = rng.normal(size=5)
    base = l_ent(Tensor(v0), buf, 0.0).item()
    scaled = ReplayBuffer(30, 5)
    scaled.extend(stored * rng.uniform(0.1, 10.0, size=(30, 1)))
    assert l_ent(Tensor(v0), scaled, 0.0).item() == pytest.approx(base, abs=1e-12)
    lam = 0.3
    with_norm = l_ent(Tensor(2.5 * v0), buf, lam).item()
    assert with_norm == pytest.approx(base + lam * 2.5 * np.linalg.norm(v0), abs=1e-12)


def test_l_ent_batch_is_mean_of_rows():
    rng = np.random.default_rng(4)
    buf = ReplayBuffer(20, 3)
    buf.extend(rng.normal(size=(20, 3)))
    v = rng.normal(size=(6, 3))
    rows = [l_ent(Tensor(r), buf, 0.2).item() for r in v]
    assert l_ent(Tensor(v), buf, 0.2).item() == pytest.approx(np.mean(rows), abs=1e-14)


def test_l_ent_gradient_reaches_only_query():
    rng = np.random.default_rng(5)
    buf = ReplayBuffer(10, 3)
    buf.extend(rng.normal(size=(10, 3)))
    before = buf.entries
    v = rng.normal(size=(4, 3))
    r = ad.check_gradients(lambda t: l_ent(t, buf, 0.1), v)
    assert r.max_rel_error <= 1e-4
    np.testing.assert_array_equal(buf.entries, before)


def test_l_dlle_examples():
    disc = build_discriminator(2, 3, hidden=(5,), rng=0)
    x = Tensor(np.random.default_rng(0).normal(size=(4, 2)))
    assert l_dlle(disc, x, lambda t: t).item() == 0.0

    zero = build_discriminator(2, 3, hidden=(5,), rng=0)
    for p in zero.parameters:
        p.value[...] = 0.0
    aug = Augmentation("compose", noise_sigma=0.3, max_angle=1.0)
    assert l_dlle(zero, x, aug, np.random.default_rng(1)).item() == 0.0

    ident = linear_disc(np.eye(2))
    got = l_dlle(ident, Tensor([[1.0, 0.0]]), lambda t: Tensor(t.value + [0.3, 0.4])).item()
    assert got == pytest.approx(0.5, abs=1e-15)


def test_l_disomap_examples():
    disc = build_discriminator(2, 4, hidden=(6,), rng=3)
    rng = np.random.default_rng(2)
    xi, xj = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    assert l_disomap(disc, xi, xj, np.ones(5)).item() == pytest.approx(0.0, abs=1e-15)
    assert l_disomap(disc, xi, xi, rng.uniform(size=5)).item() == pytest.approx(0.0, abs=1e-15)
    lin = linear_disc(rng.normal(size=(2, 4)), rng.normal(size=4))
    assert abs(l_disomap(lin, xi, xj, rng.uniform(size=5)).item()) <= 1e-10


def test_l_disomap_positive_for_nonlinear_disc():
    disc = build_discriminator(2, 4, hidden=(16,), rng=3, hidden_activation="tanh")
    rng = np.random.default_rng(0)
    xi, xj = 3 * rng.normal(size=(20, 2)), 3 * rng.normal(size=(20, 2))
    assert l_disomap(disc, xi, xj, rng.uniform(size=20)).item() > 1e-6


def test_l_disomap_alignment_checks():
    disc = build_discriminator(2, 4, hidden=(6,), rng=3)
    with pytest.raises(ValueError, match="aligned"):
        l_disomap(disc, np.ones((3, 2)), np.ones((4, 2)), np.ones(3))
    with pytest.raises(ValueError, match="alpha"):
        l_disomap(disc, np.ones((3, 2)), np.ones((3, 2)), np.ones(2))


def test_weights_must_be_nonnegative():
    with pytest.raises(ValueError, match="w_ent"):
        LossWeights(w_ent=-1.0)



def test_discriminator_objective_masking():
    disc = build_discriminator(2, 3, hidden=(8,), rng=1)
    rng = np.random.default_rng(0)
    xr, xf = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    only_maf = LossWeights(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    loss, parts = discriminator_objective(disc, xr, xf, only_maf, rng=rng)
    expected = l_maf(embed(disc, Tensor(xr)), embed(disc, Tensor(xf))).item()
    assert loss.item() == expected
    assert set(parts) == {"maf", "d_total"}
    same, _ = discriminator_objective(disc, xr, xr, only_maf, rng=rng)
    assert same.item() == 0.0


def test_discriminator_objective_sums_components():
    disc = build_discriminator(2, 3, hidden=(8,), rng=1)
    w = LossWeights(1.0, 0.5, 2.0, 3.0, 10.0, 0.1)
    rng = np.random.default_rng(0)
    loss, parts = discriminator_objective(disc, rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), w,
                                          rng=np.random.default_rng(9))
    total = parts["maf"] + 10.0 * parts["gp"] + 2.0 * parts["lle"] + 3.0 * parts["isomap"]
    assert loss.item() == pytest.approx(total, rel=1e-12)


def test_generator_objective_without_entropy_is_negative_realness():
    disc = build_discriminator(2, 3, hidden=(8,), rng=1)
    x = Tensor(np.random.default_rng(0).normal(size=(6, 2)))
    w = LossWeights(w_ent=0.0)
    buf = ReplayBuffer(16, 3)
    buf.extend(np.ones((16, 3)))
    loss, parts, _ = generator_objective(disc, x, w, buf)
    assert "ent" not in parts
    assert loss.item() == pytest.approx(-embed(disc, x).value.mean(), rel=1e-12)


def test_generator_objective_skips_entropy_on_empty_buffer():
    disc = build_discriminator(2, 3, hidden=(8,), rng=1)
    x = Tensor(np.random.default_rng(0).normal(size=(6, 2)))
    loss, parts, _ = generator_objective(disc, x, LossWeights(), ReplayBuffer(16, 3))
    assert "ent" not in parts
    assert loss.item() == parts["g_adv"]


def test_generator_objective_self_seeded_buffer_bounded():
    disc = build_discriminator(2, 3, hidden=(8,), rng=1)
    x = Tensor(np.random.default_rng(0).normal(size=(6, 2)))
    buf = ReplayBuffer(16, 3)
    buf.extend(embed(disc, x).value)
    w = LossWeights(w_maf=0.0, w_ent=1.0, lambda_norm=0.0)
    loss, parts, _ = generator_objective(disc, x, w, buf)
    assert loss.item() == pytest.approx(1.0, abs=1e-12)
    assert loss.item() <= 1.0 + 1e-12



def test_default_objectives_golden_scalars():
    # recorded from the first verified run
    disc = build_discriminator(2, 8, rng=21)
    rng = np.random.default_rng(22)
    xr, xf = rng.normal(size=(64, 2)), rng.normal(size=(64, 2))
    loss, _ = discriminator_objective(disc, xr, xf, LossWeights(), rng=np.random.default_rng(23))
    assert loss.item() == pytest.approx(9.63204995391521, rel=1e-10)
    buf = ReplayBuffer(1024, 8)
    buf.extend(rng.normal(size=(100, 8)))
    g, _, _ = generator_objective(disc, Tensor(xf), LossWeights(), buf, buffer_min_entries=64)
    assert g.item() == pytest.approx(0.37754639660861933, rel=1e-10)
