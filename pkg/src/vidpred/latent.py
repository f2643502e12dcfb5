"""Variational latent pathway: a posterior encoder over adjacent frame pairs,
the fixed standard-normal prior, reparameterized sampling and the closed-form
KL divergence to the prior."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeMismatchError

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass
class GaussianParams:
    mean: torch.Tensor    # [B, d_z]
    logvar: torch.Tensor  # [B, d_z], clamped to [LOGVAR_MIN, LOGVAR_MAX]

    @classmethod
    def standard(cls, batch, d_z, dtype=torch.float32):
        z = torch.zeros(batch, d_z, dtype=dtype)
        return cls(z, z.clone())


class PosteriorEncoder(nn.Module):
    """Maps a channel-stacked frame pair ``(x_{t-1}, x_t)`` to the Gaussian
    posterior over the latent used when predicting ``x_t``."""

    def __init__(self, channels=1, d_z=8, width=16):
        super().__init__()
        self.d_z = d_z
        self.channels = channels
        self.conv1 = nn.Conv2d(2 * channels, width, 4, stride=2, padding=1)
        self.conv2 = nn.Conv2d(width, 2 * width, 4, stride=2, padding=1)
        self.head = nn.Linear(2 * width, 2 * d_z)

    def forward(self, frame_a, frame_b):
        if frame_a.shape != frame_b.shape:
            raise ShapeMismatchError(
                f"frame pair shapes differ: {tuple(frame_a.shape)} vs {tuple(frame_b.shape)}")
        if frame_a.shape[1] != self.channels:
            raise ShapeMismatchError(f"expected {self.channels} channels, got {frame_a.shape[1]}")
        h = F.leaky_relu(self.conv1(torch.cat([frame_a, frame_b], dim=1)), 0.2)
        h = F.leaky_relu(self.conv2(h), 0.2)
        mean, logvar = self.head(h.mean(dim=(2, 3))).chunk(2, dim=1)
        return GaussianParams(mean, logvar.clamp(LOGVAR_MIN, LOGVAR_MAX))


def encode_pair(encoder: PosteriorEncoder, frame_a, frame_b) -> GaussianParams:
    return encoder(frame_a, frame_b)


def sample(g: GaussianParams, noise):
    """Reparameterized draw ``mean + exp(logvar / 2) * noise``."""
    return g.mean + torch.exp(0.5 * g.logvar) * noise


def kl_to_prior(g: GaussianParams):
    """KL(N(mean, exp(logvar)) || N(0, I)), summed over latent dims -> ``[B]``."""
    return 0.5 * (g.mean ** 2 + torch.exp(g.logvar) - 1.0 - g.logvar).sum(dim=-1)
