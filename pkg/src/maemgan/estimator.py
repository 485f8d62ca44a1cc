"""scikit-learn style wrapper: fit a manifold-entropy GAN to a sample matrix."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad
from .autodiff import Tensor
from .config import BufferConfig, ModelConfig, OptimizerConfig, TrainConfig
from .data import Augmentation, sample_latent
from .losses import LossWeights, ObjectiveSwitches
from .models import realness
from .trainer import Trainer


class MaEMGAN(TransformerMixin, BaseEstimator):
    """Generative model of the rows of ``X`` with a vector-output discriminator.

    ``fit`` trains the generator and discriminator on minibatches resampled
    from ``X``; ``transform`` maps samples to their m-dimensional embedding
    codes, ``score_samples`` gives each sample's realness, and ``sample``
    draws new points from the generator.

    Parameters mirror the training configuration; ``augmentation`` is one of
    ``compose`` (rotation then Gaussian noise, 2-D data only),
    ``gaussian_noise``, ``rotation`` or ``adversarial``.
    """

    def __init__(self, n_steps=2000, batch_size=64, n_critic=5, z_dim=8, m=8,
                 hidden=(128, 128), w_maf=1.0, w_ent=0.5, w_lle=1.0, w_isomap=1.0,
                 w_gp=10.0, lambda_norm=0.1, gp_center=1.0, buffer_capacity=1024,
                 buffer_source="generated", enable_gp=True, enable_dlle=True,
                 enable_disomap=True, enable_rbmaem=True, augmentation="compose",
                 noise_sigma=0.05, max_angle=np.pi / 6, learning_rate=1e-4,
                 beta1=0.5, beta2=0.9, random_state=None):
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.n_critic = n_critic
        self.z_dim = z_dim
        self.m = m
        self.hidden = hidden
        self.w_maf = w_maf
        self.w_ent = w_ent
        self.w_lle = w_lle
        self.w_isomap = w_isomap
        self.w_gp = w_gp
        self.lambda_norm = lambda_norm
        self.gp_center = gp_center
        self.buffer_capacity = buffer_capacity
        self.buffer_source = buffer_source
        self.enable_gp = enable_gp
        self.enable_dlle = enable_dlle
        self.enable_disomap = enable_disomap
        self.enable_rbmaem = enable_rbmaem
        self.augmentation = augmentation
        self.noise_sigma = noise_sigma
        self.max_angle = max_angle
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.random_state = random_state

    def _config(self, seed: int) -> TrainConfig:
        hidden = tuple(self.hidden)
        return TrainConfig(
            seed=seed,
            model=ModelConfig(z_dim=self.z_dim, m=self.m, gen_hidden=hidden, disc_hidden=hidden),
            weights=LossWeights(self.w_maf, self.w_ent, self.w_lle, self.w_isomap, self.w_gp,
                                self.lambda_norm),
            switches=ObjectiveSwitches(self.enable_gp, self.enable_dlle, self.enable_disomap,
                                       self.enable_rbmaem),
            augmentation=Augmentation(self.augmentation, self.noise_sigma, self.max_angle),
            buffer=BufferConfig(capacity=self.buffer_capacity, source=self.buffer_source),
            optimizer=OptimizerConfig(self.learning_rate, self.beta1, self.beta2),
            gp_center=self.gp_center,
            n_critic=self.n_critic,
            batch_size=self.batch_size,
            total_steps=self.n_steps,
        )

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        if self.augmentation in ("compose", "rotation") and self.enable_dlle and X.shape[1] != 2:
            raise ValueError(f"augmentation={self.augmentation!r} rotates 2-D samples; "
                             f"X has {X.shape[1]} features (use 'gaussian_noise')")
        seed = int(check_random_state(self.random_state).randint(np.iinfo(np.int32).max))
        try:
            config = self._config(seed)
        except ValueError as exc:
            raise ValueError(f"invalid parameters: {exc}") from None
        data = X

        def sampler(n, rng):
            return data[rng.integers(0, len(data), size=n)]

        trainer = Trainer(config, real_sampler=sampler, data_dim=X.shape[1])
        self.loss_history_ = [trainer.train_step() for _ in range(self.n_steps)]
        self.generator_ = trainer.gen
        self.discriminator_ = trainer.disc
        self.buffer_ = trainer.buffer
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Embedding codes of shape (n_samples, m)."""
        check_is_fitted(self, "discriminator_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        with ad.no_grad():
            return self.discriminator_.forward(Tensor(X)).value.copy()

    def score_samples(self, X):
        """Realness of each row (mean of its embedding code)."""
        return realness(Tensor(self.transform(X))).value.copy()

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "generator_")
        rng = np.random.default_rng(check_random_state(random_state).randint(np.iinfo(np.int32).max))
        z = sample_latent(n_samples, self.z_dim, rng)
        with ad.no_grad():
            return self.generator_.forward(z).value.copy()
