"""Mode-collapse and diversity measurements on synthetic data.

Everything here is a pure function of sample arrays, so metrics can be
computed on parameter snapshots without touching training state.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gammaln, logsumexp

from .data import GaussianMixtureSpec

EULER_GAMMA = 0.5772156649015329
DUPLICATE_JITTER = 1e-9


@dataclass
class MetricsRecord:
    step: int
    mode_coverage: int
    high_quality_ratio: float
    i_variance: float
    embedding_entropy_nats: float
    losses: dict[str, float] = field(default_factory=dict)
    sample_entropy_nats: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _points(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _nearest_mean(x: np.ndarray, spec: GaussianMixtureSpec) -> tuple[np.ndarray, np.ndarray]:
    d2 = ((x[:, None, :] - spec.means[None, :, :]) ** 2).sum(axis=-1)
    idx = np.argmin(d2, axis=1)
    return idx, np.sqrt(d2[np.arange(len(x)), idx])


def mode_coverage(samples, spec: GaussianMixtureSpec, radius_mult: float = 3.0, min_count: int = 20) -> int:
    """Number of components that own at least ``min_count`` nearby samples.

    Each sample is assigned to its nearest mean and only counts if it lies
    within ``radius_mult * sigma`` of it.
    """
    x = _points(samples)
    if len(x) < 1:
        raise ValueError("mode_coverage needs at least one sample")
    idx, dist = _nearest_mean(x, spec)
    close = dist <= radius_mult * spec.sigma
    counts = np.bincount(idx[close], minlength=spec.n_components)
    return int(np.sum(counts >= min_count))


def high_quality_ratio(samples, spec: GaussianMixtureSpec, radius_mult: float = 3.0) -> float:
    """Fraction of samples within ``radius_mult * sigma`` of some mean."""
    x = _points(samples)
    _, dist = _nearest_mean(x, spec)
    return float(np.mean(dist <= radius_mult * spec.sigma))


def i_variance(samples, feature_map=None, squared_inside: bool = False) -> float:
    """sqrt of the mean distance of features from their centroid.

    With ``squared_inside`` the distances are squared first, which gives the
    conventional root-mean-square spread instead.
    """
    x = _points(samples)
    if len(x) < 2:
        raise ValueError("i_variance needs at least two samples")
    feats = _points(feature_map(x)) if feature_map is not None else x
    dev = np.linalg.norm(feats - feats.mean(axis=0), axis=1)
    return float(np.sqrt(np.mean(dev ** 2 if squared_inside else dev)))


class RandomFeatureMap:
    """Frozen randomly initialised tanh network used as a nonlinear feature space."""

    def __init__(self, in_dim: int, out_dim: int = 16, hidden: int = 64, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.w1 = rng.normal(0.0, 1.0 / math.sqrt(in_dim), size=(in_dim, hidden))
        self.w2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(hidden, out_dim))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(np.tanh(x @ self.w1) @ self.w2)


def log_unit_ball_volume(d: int) -> float:
    return 0.5 * d * math.log(math.pi) - float(gammaln(0.5 * d + 1))


def knn_entropy(samples, jitter_seed: int = 0) -> float:
    """Kozachenko-Leonenko first-nearest-neighbour differential entropy, in nats.

    Exactly duplicated points would give zero distances; they trigger a
    warning and a 1e-9 jitter of all points before estimating.
    """
    x = _points(samples)
    n, d = x.shape
    if n < 10:
        raise ValueError(f"knn_entropy needs at least 10 samples, got {n}")
    tree = cKDTree(x)
    rho = tree.query(x, k=2)[0][:, 1]
    if np.any(rho <= 0):
        warnings.warn(f"knn_entropy: {int(np.sum(rho <= 0))} duplicate points; applying "
                      f"{DUPLICATE_JITTER:g} jitter", RuntimeWarning, stacklevel=2)
        x = x + DUPLICATE_JITTER * np.random.default_rng(jitter_seed).standard_normal(x.shape)
        rho = cKDTree(x).query(x, k=2)[0][:, 1]
    return float(d * np.mean(np.log(rho)) + log_unit_ball_volume(d) + EULER_GAMMA + math.log(n - 1))


# -- WGAN / EBM bound diagnostic ------------------------------------------------------


def ebm_objective_proxy(score_fn, real_samples, lo, hi, n_per_axis: int = 200,
                        other_samples=None) -> float:
    """-E_real[f] + log Z, with log Z from a log-sum-exp over a uniform 2-D grid.

    ``score_fn`` maps an (n, 2) array to n realness values.  A warning is
    issued when the real (or ``other_samples``) points leave the grid box.
    """
    real = _points(real_samples)
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (real.shape[1],))
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (real.shape[1],))
    for pts in (real, None if other_samples is None else _points(other_samples)):
        if pts is not None and (np.any(pts < lo) or np.any(pts > hi)):
            warnings.warn("ebm_objective_proxy: grid does not cover the sample support",
                          RuntimeWarning, stacklevel=2)
    axes = [np.linspace(a, b, n_per_axis) for a, b in zip(lo, hi)]
    mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    cell = float(np.prod([(b - a) / (n_per_axis - 1) for a, b in zip(lo, hi)]))
    log_z = float(logsumexp(np.asarray(score_fn(mesh), dtype=np.float64))) + math.log(cell)
    return float(-np.mean(score_fn(real)) + log_z)


def wgan_ebm_bound_check(l_wgan_value: float, entropy_estimate: float, l_ebm_proxy: float,
                         tolerance: float = 0.0) -> bool:
    """True when the EBM objective upper-bounds WGAN loss plus generated entropy."""
    return bool(l_ebm_proxy >= l_wgan_value + entropy_estimate - tolerance)
