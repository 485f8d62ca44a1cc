"""Alternating critic/generator optimisation with replay-buffer entropy,
periodic evaluation and the on-disk run directory."""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig, canonical_text
from .data import GaussianMixtureSpec, sample_latent, sample_real
from .losses import discriminator_objective, generator_objective
from .metrics import (MetricsRecord, RandomFeatureMap, high_quality_ratio, i_variance,
                      knn_entropy, mode_coverage)
from .models import Discriminator, Generator, MlpSpec, save_checkpoint
from .optim import Adam
from .replay_buffer import ReplayBuffer

logger = logging.getLogger(__name__)

RealSampler = Callable[[int, np.random.Generator], np.ndarray]


class TrainingDiverged(RuntimeError):
    """A loss or parameter became non-finite; carries the recent loss history."""

    def __init__(self, step: int, reason: str, history: list[dict]):
        self.step = step
        self.reason = reason
        self.history = history
        super().__init__(f"training diverged at step {step}: {reason}")

    def dump(self) -> dict:
        return {"step": self.step, "reason": self.reason, "last_losses": self.history}


class Trainer:
    """Owns both networks, their optimizers, the replay buffer and the RNG streams.

    By default real batches come from the configured Gaussian mixture;
    ``real_sampler`` substitutes any ``(n, rng) -> (n, d)`` array source.
    """

    def __init__(self, config: TrainConfig, real_sampler: RealSampler | None = None,
                 data_dim: int | None = None, target: GaussianMixtureSpec | None = None):
        self.config = config
        if real_sampler is None:
            self.target = config.dataset.build() if target is None else target
            target_spec = self.target
            self.real_sampler = lambda n, rng: sample_real(target_spec, n, rng).value
            data_dim = self.target.dim
        else:
            if data_dim is None:
                raise ValueError("data_dim is required with a custom real_sampler")
            self.target = target
            self.real_sampler = real_sampler
        self.data_dim = data_dim
        mc = config.model
        init_g, init_d, train = np.random.SeedSequence(config.seed).spawn(3)
        self.gen = Generator.initialize(
            MlpSpec((mc.z_dim, *mc.gen_hidden, data_dim), mc.hidden_activation, "linear"),
            np.random.default_rng(init_g))
        self.disc = Discriminator.initialize(
            MlpSpec((data_dim, *mc.disc_hidden, mc.m), mc.hidden_activation, "linear"),
            np.random.default_rng(init_d))
        oc = config.optimizer
        self.opt_g = Adam(self.gen.parameters, oc.lr, oc.beta1, oc.beta2, oc.eps)
        self.opt_d = Adam(self.disc.parameters, oc.lr, oc.beta1, oc.beta2, oc.eps)
        self.buffer = ReplayBuffer(config.buffer.capacity, mc.m)
        self.rng = np.random.default_rng(train)
        self.step = 0
        self.history: deque[dict] = deque(maxlen=10)
        self._last_real: np.ndarray | None = None
        self._feature_map = (RandomFeatureMap(data_dim, seed=config.seed)
                             if config.metrics.feature_map == "random" else None)

    # -- one update per network -------------------------------------------------------

    def _guard(self, parts: dict, net) -> None:
        bad = [k for k, v in parts.items() if not math.isfinite(v)]
        if bad:
            raise TrainingDiverged(self.step, f"non-finite loss components {bad}", list(self.history))
        if not all(np.isfinite(p.value).all() for p in net.parameters):
            raise TrainingDiverged(self.step, "non-finite parameters", list(self.history))

    def _push(self, codes: np.ndarray | None) -> None:
        src = self.config.buffer.source
        if src in ("generated", "both") and codes is not None:
            self.buffer.extend(codes)
        if src in ("real", "both") and self._last_real is not None:
            with ad.no_grad():
                self.buffer.extend(self.disc.forward(Tensor(self._last_real)).value)
        assert len(self.buffer) <= self.buffer.capacity

    def sample_fake(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        z = sample_latent(n, self.config.model.z_dim, self.rng if rng is None else rng)
        with ad.no_grad():
            return self.gen.forward(z).value

    def train_discriminator_step(self, real_batch: np.ndarray | None = None) -> dict:
        """One critic update; the generator only supplies detached samples."""
        cfg = self.config
        n = cfg.batch_size
        real = self.real_sampler(n, self.rng) if real_batch is None else np.asarray(real_batch, dtype=np.float64)
        self._last_real = real
        fake = self.sample_fake(real.shape[0])
        self.opt_d.zero_grad()
        try:
            loss, parts = discriminator_objective(
                self.disc, Tensor(real), Tensor(fake), cfg.weights, cfg.switches,
                cfg.augmentation, self.rng, cfg.gp_center, self.buffer, cfg.buffer_min_entries)
            ad.backward(loss)
        except ad.NonFiniteError as exc:
            raise TrainingDiverged(self.step, str(exc), list(self.history)) from None
        self.opt_d.step()
        self._guard(parts, self.disc)
        if cfg.buffer.push_on == "discriminator" and cfg.switches.enable_rbmaem:
            with ad.no_grad():
                self._push(self.disc.forward(Tensor(fake)).value)
        return parts

    def train_generator_step(self) -> dict:
        """One generator update through the frozen critic, then push the batch codes."""
        cfg = self.config
        z = sample_latent(cfg.batch_size, cfg.model.z_dim, self.rng)
        self.opt_g.zero_grad()
        self.disc.set_trainable(False)
        try:
            fake = self.gen.forward(z)
            loss, parts, codes = generator_objective(
                self.disc, fake, cfg.weights, self.buffer, cfg.switches, cfg.augmentation,
                self.rng, cfg.buffer_min_entries)
            ad.backward(loss)
        except ad.NonFiniteError as exc:
            raise TrainingDiverged(self.step, str(exc), list(self.history)) from None
        finally:
            self.disc.set_trainable(True)
        self.opt_g.step()
        self._guard(parts, self.gen)
        if cfg.buffer.push_on == "generator" and cfg.switches.enable_rbmaem:
            self._push(codes.value)
        return parts

    def train_step(self) -> dict:
        """n_critic critic updates followed by one generator update."""
        parts: dict = {}
        for _ in range(self.config.n_critic):
            parts.update(self.train_discriminator_step())
        parts.update(self.train_generator_step())
        self.step += 1
        self.history.append(parts)
        return parts

    # -- evaluation ----------------------------------------------------------------------

    def evaluate(self, losses: dict | None = None) -> tuple[MetricsRecord, np.ndarray]:
        """Metrics on a fresh generated sample; uses its own RNG stream."""
        mc = self.config.metrics
        rng = np.random.default_rng([self.config.seed, self.step, 0xE7A1])
        samples = self.sample_fake(mc.eval_samples, rng)
        with ad.no_grad():
            codes = self.disc.forward(Tensor(samples)).value
        if self.target is not None:
            cov = mode_coverage(samples, self.target, mc.radius_mult, mc.min_count)
            hq = high_quality_ratio(samples, self.target, mc.radius_mult)
        else:
            cov, hq = 0, 0.0
        record = MetricsRecord(
            step=self.step,
            mode_coverage=cov,
            high_quality_ratio=hq,
            i_variance=i_variance(samples, self._feature_map, mc.i_variance_squared_inside),
            embedding_entropy_nats=_quiet_entropy(codes),
            losses=dict(losses or {}),
            sample_entropy_nats=_quiet_entropy(samples),
        )
        return record, samples


def _quiet_entropy(x: np.ndarray) -> float:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return knn_entropy(x)


def _write_samples(path: Path, samples: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in samples:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def run(config: TrainConfig, out_dir, progress: bool = False) -> Path:
    """Train per ``config`` and populate ``out_dir``; returns the directory.

    Files: ``config.snapshot``, ``metrics.jsonl`` (one record per evaluation),
    ``checkpoint.bin`` and ``samples_final.csv``.  On divergence the partial
    log is kept, ``abort.json`` holds the last losses, and ``TrainingDiverged``
    propagates.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.snapshot").write_text(canonical_text(config))
    trainer = Trainer(config)
    metrics_path = out / "metrics.jsonl"
    samples = None
    with open(metrics_path, "w") as log:
        try:
            for _ in range(config.total_steps):
                parts = trainer.train_step()
                if trainer.step % config.eval_every == 0 or trainer.step == config.total_steps:
                    record, samples = trainer.evaluate(parts)
                    log.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
                    log.flush()
                    if progress:
                        logger.info("step %d coverage %d hq %.3f ivar %.4f", record.step,
                                    record.mode_coverage, record.high_quality_ratio, record.i_variance)
        except TrainingDiverged as exc:
            (out / "abort.json").write_text(json.dumps(exc.dump(), sort_keys=True, indent=1))
            save_checkpoint(out / "checkpoint.bin", trainer.gen, trainer.disc)
            raise
    if samples is None:
        samples = trainer.sample_fake(config.metrics.eval_samples,
                                      np.random.default_rng([config.seed, 0, 0xE7A1]))
    _write_samples(out / "samples_final.csv", samples)
    save_checkpoint(out / "checkpoint.bin", trainer.gen, trainer.disc)
    return out
