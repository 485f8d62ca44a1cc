"""Training objectives: realness WGAN loss, replay-buffer entropy surrogate,
the two manifold regularizers, and their composition per network update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Augmentation, augment
from .models import Discriminator, embed, gradient_penalty, realness
from .replay_buffer import BufferEmpty, ReplayBuffer


@dataclass(frozen=True)
class LossWeights:
    w_maf: float = 1.0
    w_ent: float = 0.5
    w_lle: float = 1.0
    w_isomap: float = 1.0
    w_gp: float = 10.0
    lambda_norm: float = 0.1

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value >= 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {value}")


def _nonempty(t: Tensor, what: str) -> Tensor:
    t = t if isinstance(t, Tensor) else Tensor(t)
    if t.size == 0:
        raise ValueError(f"{what}: empty batch")
    return t


def l_wgan(real_scores, fake_scores) -> Tensor:
    """mean(fake) - mean(real); the critic minimizes it."""
    real_scores = _nonempty(real_scores, "l_wgan")
    fake_scores = _nonempty(fake_scores, "l_wgan")
    return ad.sub(ad.mean(fake_scores), ad.mean(real_scores))


def l_maf(real_emb, fake_emb) -> Tensor:
    """l_wgan on realness scores, i.e. embedding codes averaged over their m dimensions."""
    real_emb = _nonempty(real_emb, "l_maf")
    fake_emb = _nonempty(fake_emb, "l_maf")
    if real_emb.ndim != 2 or fake_emb.ndim != 2 or real_emb.shape[1] != fake_emb.shape[1]:
        raise ValueError(f"l_maf: width mismatch between {real_emb.shape} and {fake_emb.shape}")
    return l_wgan(realness(real_emb), realness(fake_emb))


def l_ent(v0, buf: ReplayBuffer, lambda_norm: float) -> Tensor:
    """cos(V0, V*) + lambda * ||V0||, V* the stored code nearest to V0 by cosine.

    ``v0`` may be one code or a batch of codes (rows); a batch returns the
    mean of the per-row values.  Gradients reach ``v0`` only.  Raises
    ``BufferEmpty`` when there is nothing to compare against.
    """
    v0 = v0 if isinstance(v0, Tensor) else Tensor(v0)
    if len(buf) == 0:
        raise BufferEmpty("buffer empty")
    if v0.ndim == 1:
        best, _ = buf.nearest_by_cosine(v0.value)
        return ad.add(ad.cosine_similarity(v0, Tensor(best)), ad.scalar_mul(ad.l2_norm(v0), lambda_norm))
    best, _ = buf.nearest_codes(v0.value)
    per_row = ad.add(ad.cosine_similarity(v0, Tensor(best), axis=1),
                     ad.scalar_mul(ad.l2_norm(v0, axis=1), lambda_norm))
    return ad.mean(per_row)


def l_dlle(disc: Discriminator, x, transform, rng: np.random.Generator | None = None,
           codes: Tensor | None = None) -> Tensor:
    """Mean distance between the codes of each sample and of its transformed neighbour.

    ``transform`` is an ``Augmentation`` or any callable mapping a batch to a
    batch.  ``codes`` may pass in already-computed embeddings of ``x``.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if isinstance(transform, Augmentation):
        neighbours = augment(x, transform, rng, disc=disc)
    else:
        neighbours = transform(x)
        neighbours = neighbours if isinstance(neighbours, Tensor) else Tensor(neighbours)
    if neighbours.shape != x.shape:
        raise ValueError(f"l_dlle: transform changed shape {x.shape} -> {neighbours.shape}")
    codes = embed(disc, x) if codes is None else codes
    return ad.mean(ad.l2_norm(ad.sub(embed(disc, neighbours), codes), axis=1))


def _mix(alpha_col: np.ndarray, a, b):
    if isinstance(a, Tensor) and a.requires_grad or isinstance(b, Tensor) and b.requires_grad:
        return ad.add(ad.mul(a, Tensor(alpha_col)), ad.mul(b, Tensor(1.0 - alpha_col)))
    av = a.value if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    bv = b.value if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
    return Tensor(alpha_col * av + (1.0 - alpha_col) * bv)


def l_disomap(disc: Discriminator, x_i, x_j, alpha, codes_i: Tensor | None = None,
              codes_j: Tensor | None = None) -> Tensor:
    """Mean of 1 - cos(D(a*x_i + (1-a)*x_j), a*D(x_i) + (1-a)*D(x_j)) over aligned pairs."""
    x_i = x_i if isinstance(x_i, Tensor) else Tensor(x_i)
    x_j = x_j if isinstance(x_j, Tensor) else Tensor(x_j)
    if x_i.shape != x_j.shape:
        raise ValueError(f"l_disomap: batches {x_i.shape} and {x_j.shape} are not aligned")
    alpha_col = np.asarray(alpha, dtype=np.float64).reshape(-1, 1)
    if alpha_col.shape[0] != x_i.shape[0]:
        raise ValueError(f"l_disomap: need one alpha per pair, got {alpha_col.shape[0]} for {x_i.shape[0]}")
    codes_i = embed(disc, x_i) if codes_i is None else codes_i
    codes_j = embed(disc, x_j) if codes_j is None else codes_j
    of_mix = embed(disc, _mix(alpha_col, x_i, x_j))
    mix_of = ad.add(ad.mul(codes_i, Tensor(alpha_col)), ad.mul(codes_j, Tensor(1.0 - alpha_col)))
    return ad.mean(ad.sub(1.0, ad.cosine_similarity(of_mix, mix_of, axis=1)))


@dataclass(frozen=True)
class ObjectiveSwitches:
    enable_gp: bool = True
    enable_dlle: bool = True
    enable_disomap: bool = True
    enable_rbmaem: bool = True
    ent_in_discriminator: bool = False
    manifold_reg_into_generator: bool = False


def manifold_terms(disc: Discriminator, x: Tensor, codes: Tensor, weights: LossWeights,
                   switches: ObjectiveSwitches, aug: Augmentation, rng: np.random.Generator,
                   parts: dict, prefix: str = "") -> list[Tensor]:
    """Weighted DLLE and DIsoMap terms over the batch ``x`` (with its ``codes``)."""
    terms = []
    if switches.enable_dlle and weights.w_lle > 0:
        lle = l_dlle(disc, x, aug, rng, codes=codes)
        parts[prefix + "lle"] = lle.item()
        terms.append(ad.scalar_mul(lle, weights.w_lle))
    if switches.enable_disomap and weights.w_isomap > 0:
        n = x.shape[0]
        perm = rng.permutation(n)
        alpha = rng.uniform(0.0, 1.0, size=n)
        x_j = Tensor(x.value[perm]) if not x.requires_grad else _take(x, perm)
        iso = l_disomap(disc, x, x_j, alpha, codes_i=codes, codes_j=_take(codes, perm))
        parts[prefix + "isomap"] = iso.item()
        terms.append(ad.scalar_mul(iso, weights.w_isomap))
    return terms


def _take(t: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather as a product with a permutation matrix (keeps the tape simple)."""
    if not t.requires_grad:
        return Tensor(t.value[idx])
    p = np.zeros((len(idx), t.shape[0]))
    p[np.arange(len(idx)), idx] = 1.0
    return ad.matmul(Tensor(p), t)


def _entropy_term(codes: Tensor, buf: ReplayBuffer | None, weights: LossWeights,
                  min_entries: int, parts: dict) -> Tensor | None:
    if buf is None or len(buf) == 0 or len(buf) < min_entries or weights.w_ent == 0:
        return None
    ent = l_ent(codes, buf, weights.lambda_norm)
    parts["ent"] = ent.item()
    return ad.scalar_mul(ent, weights.w_ent)


def discriminator_objective(disc: Discriminator, x_real, x_fake, weights: LossWeights,
                            switches: ObjectiveSwitches = ObjectiveSwitches(),
                            aug: Augmentation = Augmentation(), rng: np.random.Generator | None = None,
                            gp_center: float = 1.0, buf: ReplayBuffer | None = None,
                            buffer_min_entries: int = 1) -> tuple[Tensor, dict]:
    """Loss minimized over discriminator parameters, plus named component values.

    w_maf*l_maf + w_gp*penalty + w_lle*DLLE + w_isomap*DIsoMap, the manifold
    terms evaluated on the real and generated batches together.
    """
    rng = np.random.default_rng() if rng is None else rng
    x_real = x_real if isinstance(x_real, Tensor) else Tensor(x_real)
    x_fake = x_fake if isinstance(x_fake, Tensor) else Tensor(x_fake)
    real_codes = embed(disc, x_real)
    fake_codes = embed(disc, x_fake)
    parts: dict[str, float] = {}
    maf = l_maf(real_codes, fake_codes)
    parts["maf"] = maf.item()
    terms = [ad.scalar_mul(maf, weights.w_maf)]
    if switches.enable_gp and weights.w_gp > 0:
        gp = gradient_penalty(disc, x_real, x_fake, gp_center, rng=rng)
        parts["gp"] = gp.item()
        terms.append(ad.scalar_mul(gp, weights.w_gp))
    if (switches.enable_dlle and weights.w_lle > 0) or (switches.enable_disomap and weights.w_isomap > 0):
        both = Tensor(np.concatenate([x_real.value, x_fake.value]))
        codes = ad.concat([real_codes, fake_codes], axis=0)
        terms += manifold_terms(disc, both, codes, weights, switches, aug, rng, parts)
    if switches.enable_rbmaem and switches.ent_in_discriminator:
        ent = _entropy_term(fake_codes, buf, weights, buffer_min_entries, parts)
        if ent is not None:
            terms.append(ent)
    loss = terms[0]
    for t in terms[1:]:
        loss = ad.add(loss, t)
    parts["d_total"] = loss.item()
    return loss, parts


def generator_objective(disc: Discriminator, x_fake: Tensor, weights: LossWeights,
                        buf: ReplayBuffer | None = None,
                        switches: ObjectiveSwitches = ObjectiveSwitches(),
                        aug: Augmentation = Augmentation(), rng: np.random.Generator | None = None,
                        buffer_min_entries: int = 1) -> tuple[Tensor, dict, Tensor]:
    """Loss minimized over generator parameters, component values, and the batch codes.

    -w_maf * mean realness(fake) + w_ent * mean l_ent; the entropy term is
    skipped while the buffer holds fewer than ``buffer_min_entries`` codes.
    """
    rng = np.random.default_rng() if rng is None else rng
    codes = embed(disc, x_fake)
    parts: dict[str, float] = {}
    adv = ad.scalar_mul(ad.mean(realness(codes)), -1.0)
    parts["g_adv"] = adv.item()
    loss = ad.scalar_mul(adv, weights.w_maf)
    if switches.enable_rbmaem:
        ent = _entropy_term(codes, buf, weights, buffer_min_entries, parts)
        if ent is not None:
            loss = ad.add(loss, ent)
    if switches.manifold_reg_into_generator:
        for t in manifold_terms(disc, x_fake, codes, weights, switches, aug, rng, parts, prefix="g_"):
            loss = ad.add(loss, t)
    parts["g_total"] = loss.item()
    return loss, parts, codes
