"""Synthetic Gaussian-mixture targets, latent noise and neighbour transforms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .models import input_gradient_of_realness


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Isotropic Gaussian mixture with a shared standard deviation."""

    means: np.ndarray
    sigma: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        if means.shape[0] < 1 or means.shape[1] < 1:
            raise ValueError("mixture needs at least one component")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        k = means.shape[0]
        weights = (np.full(k, 1.0 / k) if self.weights is None
                   else np.asarray(self.weights, dtype=np.float64))
        if weights.shape != (k,) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector with one entry per component")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def make_ring(k: int, radius: float, sigma: float) -> GaussianMixtureSpec:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    theta = 2 * np.pi * np.arange(k) / k
    means = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    # snap the cos/sin rounding residue at multiples of pi/2
    means[np.abs(means) < 1e-12 * radius] = 0.0
    return GaussianMixtureSpec(means, sigma)


def make_grid(rows: int, cols: int, spacing: float, sigma: float) -> GaussianMixtureSpec:
    if rows < 1 or cols < 1:
        raise ValueError(f"rows and cols must be >= 1, got {rows}x{cols}")
    xs = (np.arange(cols) - (cols - 1) / 2) * spacing
    ys = (np.arange(rows) - (rows - 1) / 2) * spacing
    gx, gy = np.meshgrid(xs, ys)
    return GaussianMixtureSpec(np.stack([gx.ravel(), gy.ravel()], axis=1), sigma)


def sample_components(spec: GaussianMixtureSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(spec.n_components, size=n, p=spec.weights)


def sample_real(spec: GaussianMixtureSpec, n: int, rng: np.random.Generator) -> Tensor:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    comp = sample_components(spec, n, rng)
    noise = rng.standard_normal((n, spec.dim))
    return Tensor(spec.means[comp] + spec.sigma * noise)


def sample_latent(n: int, z_dim: int, rng: np.random.Generator) -> Tensor:
    if n < 1 or z_dim < 1:
        raise ValueError(f"n and z_dim must be >= 1, got n={n}, z_dim={z_dim}")
    return Tensor(rng.standard_normal((n, z_dim)))


AUGMENTATION_KINDS = ("gaussian_noise", "rotation", "compose", "adversarial")


@dataclass(frozen=True)
class Augmentation:
    """Neighbour transform applied to samples before re-embedding them.

    ``compose`` rotates then adds noise.  ``adversarial`` steps each sample by
    ``adv_epsilon`` against the sign of the discriminator's realness gradient.
    """

    kind: str = "compose"
    noise_sigma: float = 0.05
    max_angle: float = np.pi / 6
    adv_epsilon: float = 0.05

    def __post_init__(self):
        if self.kind not in AUGMENTATION_KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}; expected one of {AUGMENTATION_KINDS}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0 <= self.max_angle <= np.pi:
            raise ValueError(f"max_angle must lie in [0, pi], got {self.max_angle}")
        if self.adv_epsilon < 0:
            raise ValueError(f"adv_epsilon must be >= 0, got {self.adv_epsilon}")


def rotate(x: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate each 2-D row of ``x`` about the origin by its own angle."""
    c, s = np.cos(angles), np.sin(angles)
    return np.stack([c * x[:, 0] - s * x[:, 1], s * x[:, 0] + c * x[:, 1]], axis=1)


def augment(x, aug: Augmentation, rng: np.random.Generator, disc=None) -> Tensor:
    """Apply ``aug`` to the rows of ``x``; the result carries no gradient history."""
    xv = np.array(x.value if isinstance(x, Tensor) else x, dtype=np.float64)
    n, d = xv.shape
    if aug.kind == "adversarial":
        if disc is None:
            raise ValueError("adversarial augmentation needs the discriminator")
        with no_grad():
            g = input_gradient_of_realness(disc, Tensor(xv)).value
        return Tensor(xv - aug.adv_epsilon * np.sign(g))
    if aug.kind in ("rotation", "compose"):
        if d != 2:
            raise ValueError(f"rotation augmentation needs 2-D samples, got d={d}")
        if aug.max_angle > 0:
            xv = rotate(xv, rng.uniform(-aug.max_angle, aug.max_angle, size=n))
    if aug.kind in ("gaussian_noise", "compose") and aug.noise_sigma > 0:
        xv = xv + aug.noise_sigma * rng.standard_normal((n, d))
    return Tensor(xv)
