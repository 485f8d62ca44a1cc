import copy
import json

import numpy as np
import pytest

from maemgan.config import parse_config
from maemgan.trainer import Trainer, TrainingDiverged, run

SMALL = {"seed": 7, "batch_size": 16,
         "model": {"z_dim": 4, "m": 3, "gen_hidden": [16], "disc_hidden": [16]}}
ALL_OFF = {"enable_gp": False, "enable_dlle": False, "enable_disomap": False, "enable_rbmaem": False}


def small(**over):
    d = copy.deepcopy(SMALL)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(d.get(k), dict):
            d[k].update(v)
        else:
            d[k] = v
    return parse_config(d)


def test_zero_weights_leave_parameters_unchanged():
    cfg = small(weights={"w_maf": 0, "w_ent": 0, "w_lle": 0, "w_isomap": 0, "w_gp": 0, "lambda_norm": 0})
    t = Trainer(cfg)
    g0, d0 = t.gen.flat_values(), t.disc.flat_values()
    t.train_step()
    t.train_step()
    assert t.gen.flat_values().tobytes() == g0.tobytes()
    assert t.disc.flat_values().tobytes() == d0.tobytes()


def test_one_step_golden_checksums():
    # recorded from the first verified run
    t = Trainer(small())
    t.train_discriminator_step()
    assert t.disc.checksum() == pytest.approx(4.175651557037429, abs=1e-9)
    t.train_generator_step()
    assert t.gen.checksum() == pytest.approx(0.08267281284339012, abs=1e-9)


def test_penalty_only_step_on_linear_disc_follows_analytic_gradient():
    cfg = small(model={"disc_hidden": []}, switches={**ALL_OFF, "enable_gp": True},
                weights={"w_maf": 0, "w_gp": 1.0})
    t = Trainer(cfg)
    w = t.disc.parameters[0].value.copy()
    b = t.disc.parameters[1].value.copy()
    a = w.mean(axis=1)
    # penalty (||a|| - 1)^2 with a the input gradient of mean realness
    grad = np.tile((2 * (np.linalg.norm(a) - 1) * a / np.linalg.norm(a) / w.shape[1])[:, None], (1, w.shape[1]))
    t.train_discriminator_step()
    step = t.disc.parameters[0].value - w
    # the first Adam update is lr * g / (|g| + eps)
    np.testing.assert_allclose(step, -1e-4 * grad / (np.abs(grad) + 1e-8), rtol=1e-9, atol=1e-18)
    np.testing.assert_array_equal(t.disc.parameters[1].value, b)


def test_freeze_discipline():
    t = Trainer(small())
    for _ in range(3):
        g = t.gen.flat_values()
        t.train_discriminator_step()
        assert t.gen.flat_values().tobytes() == g.tobytes()
        d = t.disc.flat_values()
        t.train_generator_step()
        assert t.disc.flat_values().tobytes() == d.tobytes()
        assert all(p.requires_grad for p in t.disc.parameters)


def test_entropy_term_waits_for_warm_up():
    t = Trainer(small(buffer={"capacity": 40}))
    parts = t.train_generator_step()
    assert "ent" not in parts and len(t.buffer) == 16
    assert "ent" in t.train_generator_step()

    t = Trainer(small(buffer={"capacity": 40}, batch_size=16))
    t.buffer.extend(np.ones((15, 3)))
    assert "ent" not in t.train_generator_step()


def test_buffer_never_exceeds_capacity():
    t = Trainer(small(buffer={"capacity": 24, "source": "both"}))
    for _ in range(6):
        t.train_step()
        assert len(t.buffer) <= 24
    assert len(t.buffer) == 24


def test_push_on_discriminator_steps():
    t = Trainer(small(buffer={"capacity": 1000, "push_on": "discriminator"}, n_critic=2))
    t.train_step()
    assert len(t.buffer) == 32


def test_no_rbmaem_never_fills_buffer():
    t = Trainer(small(switches={"enable_rbmaem": False}))
    t.train_step()
    assert len(t.buffer) == 0


def test_zero_steps_run(tmp_path):
    out = run(small(total_steps=0), tmp_path / "r")
    assert (out / "metrics.jsonl").read_text() == ""
    assert (out / "checkpoint.bin").exists()
    assert len((out / "samples_final.csv").read_text().splitlines()) == 10_000


def test_run_is_deterministic(tmp_path):
    cfg = small(total_steps=4, eval_every=2, metrics={"eval_samples": 500})
    a = run(cfg, tmp_path / "a")
    b = run(cfg, tmp_path / "b")
    la, lb = (a / "metrics.jsonl").read_bytes(), (b / "metrics.jsonl").read_bytes()
    assert la == lb
    rows = [json.loads(l) for l in la.decode().splitlines()]
    assert [r["step"] for r in rows] == [2, 4]
    assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()
    assert (a / "config.snapshot").read_text().startswith("augmentation:")


def test_default_config_losses_finite_on_both_datasets():
    for kind in ("ring", "grid"):
        t = Trainer(small(dataset={"kind": kind}, buffer={"capacity": 64}))
        for _ in range(10):
            parts = t.train_step()
            assert all(np.isfinite(v) for v in parts.values())


def test_nan_aborts_with_dump(tmp_path):
    cfg = small(total_steps=5, eval_every=1, metrics={"eval_samples": 100})
    t = Trainer(cfg)
    t.train_step()
    t.disc.parameters[0].value[0, 0] = np.nan
    with pytest.raises(TrainingDiverged) as exc:
        t.train_step()
    assert exc.value.step == 1
    assert len(exc.value.dump()["last_losses"]) == 1


def test_run_keeps_partial_log_on_divergence(tmp_path, monkeypatch):
    cfg = small(total_steps=5, eval_every=1, metrics={"eval_samples": 100})
    real_step = Trainer.train_step

    def flaky(self):
        if self.step == 3:
            raise TrainingDiverged(self.step, "injected", list(self.history))
        return real_step(self)

    monkeypatch.setattr(Trainer, "train_step", flaky)
    with pytest.raises(TrainingDiverged):
        run(cfg, tmp_path / "r")
    assert len((tmp_path / "r" / "metrics.jsonl").read_text().splitlines()) == 3
    dump = json.loads((tmp_path / "r" / "abort.json").read_text())
    assert dump["step"] == 3 and len(dump["last_losses"]) == 3


def test_custom_sampler_requires_dim():
    with pytest.raises(ValueError, match="data_dim"):
        Trainer(small(), real_sampler=lambda n, rng: np.zeros((n, 2)))


# -- independent scalar WGAN-GP reference -----------------------------------------------


def reference_wgan_gp_step(trainer: Trainer, real: np.ndarray):
    """Replay one critic step of a scalar-output WGAN-GP in torch float64.

    Reuses the trainer's initial weights and replays its RNG draws
    (latent batch, then interpolation weights) from a copy of its stream.
    """
    torch = pytest.importorskip("torch")
    cfg = trainer.config
    rng = copy.deepcopy(trainer.rng)
    z = rng.standard_normal((real.shape[0], cfg.model.z_dim))
    u = rng.uniform(0.0, 1.0, size=(real.shape[0], 1))
    t = lambda a: torch.tensor(a, dtype=torch.float64)  # noqa: E731

    def mlp(params, x, act=torch.relu):
        for i in range(0, len(params), 2):
            x = x @ params[i] + params[i + 1]
            if i + 2 < len(params):
                x = act(x)
        return x

    gen = [t(p.value) for p in trainer.gen.parameters]
    disc = [t(p.value).requires_grad_(True) for p in trainer.disc.parameters]
    fake = mlp(gen, t(z))
    xr = t(real)
    x_hat = (t(u) * xr + (1 - t(u)) * fake).requires_grad_(True)
    (g,) = torch.autograd.grad(mlp(disc, x_hat).sum(), x_hat, create_graph=True)
    gp = ((g.norm(dim=1) - cfg.gp_center) ** 2).mean()
    loss = mlp(disc, fake).mean() - mlp(disc, xr).mean() + cfg.weights.w_gp * gp
    oc = cfg.optimizer
    opt = torch.optim.Adam(disc, lr=oc.lr, betas=(oc.beta1, oc.beta2), eps=oc.eps)
    opt.zero_grad()
    loss.backward()
    opt.step()
    return [p.detach().numpy() for p in disc], float(loss.detach())


def reduction_config(seed=3):
    return small(seed=seed, model={"m": 1}, switches=ALL_OFF | {"enable_gp": True})


def test_m1_step_matches_scalar_wgan_gp_reference():
    t = Trainer(reduction_config())
    real = np.random.default_rng(11).normal(size=(16, 2))
    ref_params, ref_loss = reference_wgan_gp_step(t, real)
    parts = t.train_discriminator_step(real_batch=real)
    assert parts["d_total"] == pytest.approx(ref_loss, rel=1e-12)
    for mine, ref in zip(t.disc.parameters, ref_params):
        np.testing.assert_allclose(mine.value, ref, rtol=1e-10, atol=1e-15)
