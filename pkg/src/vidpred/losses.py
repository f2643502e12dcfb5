"""Training objectives: L1 reconstruction, KL to the prior, the two
manifold-guided adversarial objectives, and their weighted combination."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch

from .adversary import discriminate, manifold_map
from .errors import FrozenEncoderError, ShapeMismatchError
from .latent import kl_to_prior

SCORE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    l1: float = 0.25
    kl: float = 0.2
    mggan1: float = 0.3
    mggan2: float = 0.3

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v < 0 or not math.isfinite(v):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")

    def as_tuple(self):
        return (self.l1, self.kl, self.mggan1, self.mggan2)


@dataclass
class LossBreakdown:
    l1: torch.Tensor | float
    kl: torch.Tensor | float
    mggan1: torch.Tensor | float
    mggan2: torch.Tensor | float
    combined: torch.Tensor | float
    weights: LossWeights

    FIELDS = ("l1", "kl", "mggan1", "mggan2", "combined")

    def scalars(self):
        return {k: float(getattr(self, k)) for k in self.FIELDS}


def l1_loss(pred, target, reduction="mean"):
    """Absolute error between predicted and true frames.

    ``reduction='mean'`` averages over every element and timestep;
    ``'sum'`` sums over time and pixels and averages over the batch
    (``[B, T, ...]`` inputs).
    """
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    diff = (pred - target).abs()
    if reduction == "mean":
        return diff.mean()
    if reduction == "sum":
        return diff.sum() / (pred.shape[0] if pred.dim() == 5 else 1)
    raise ValueError(f"unknown reduction {reduction!r}")


def kl_loss(posteriors):
    """Mean over timesteps (and batch) of the per-step KL to N(0, I)."""
    if len(posteriors) == 0:
        raise ValueError("kl_loss needs at least one posterior")
    return torch.stack([kl_to_prior(g).mean() for g in posteriors]).mean()


def _clamp(s):
    return s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)


def mggan_objective(real_d, real_m, fake_d, fake_m):
    """Discriminator-side value, to be maximized:
    ``log D(x) + log Dm(E(x)) + log(1 - D(G)) + log(1 - Dm(E(G)))``,
    batch-averaged."""
    return (torch.log(_clamp(real_d)) + torch.log(_clamp(real_m))
            + torch.log(1 - _clamp(fake_d)) + torch.log(1 - _clamp(fake_m))).mean()


def generator_objective(fake_d, fake_m):
    """Non-saturating generator loss ``-log D(G) - log Dm(E(G))``, batch-averaged."""
    return (-torch.log(_clamp(fake_d)) - torch.log(_clamp(fake_m))).mean()


def mggan_loss(d, d_m, enc, real, fake):
    """Both sides of one manifold-guided adversarial game.

    ``real`` and ``fake`` are clips ``[B, T, C, H, W]``. Returns
    ``(d_objective, g_objective)``.
    """
    if not enc.frozen:
        raise FrozenEncoderError("mggan_loss requires the frozen manifold encoder")
    if real.shape != fake.shape:
        raise ShapeMismatchError(f"real {tuple(real.shape)} vs fake {tuple(fake.shape)}")
    real_d = discriminate(d, real)
    real_m = discriminate(d_m, manifold_map(enc, real))
    fake_d = discriminate(d, fake)
    fake_m = discriminate(d_m, manifold_map(enc, fake))
    return mggan_objective(real_d, real_m, fake_d, fake_m), generator_objective(fake_d, fake_m)


def combined_loss(l1, kl, mggan1, mggan2, weights: LossWeights | None = None) -> LossBreakdown:
    w = weights or LossWeights()
    total = w.l1 * l1 + w.kl * kl + w.mggan1 * mggan1 + w.mggan2 * mggan2
    return LossBreakdown(l1, kl, mggan1, mggan2, total, w)
