"""Multi-scale recurrent frame generator.

Each scale owns a recurrent cell. At every timestep the coarsest scale paints
a low-resolution frame and each finer scale adds a learned residual on top of
the bilinearly upsampled coarser prediction. The full-resolution output is
fed back (downsampled per scale) as the next input.

Tensors are ``[B, T, C, H, W]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import VideoSequence
from .e3d import ConvLSTMCell, E3DCell
from .errors import ConfigurationError, ShapeMismatchError
from .latent import PosteriorEncoder, sample


@dataclass
class GeneratorConfig:
    height: int = 64
    width: int = 64
    channels: int = 1
    n_scales: int = 3
    base_channels: int = 16
    context_len: int = 10
    horizon: int = 10
    d_z: int = 8
    capacity: int = 5
    window: int = 2
    cell: str = "e3d"          # or "convlstm" for the ablation baseline
    combine: str = "residual"  # or "linear": learned blend of both terms

    def __post_init__(self):
        if self.n_scales < 1:
            raise ConfigurationError("n_scales must be >= 1", "n_scales")
        f = 2 ** (self.n_scales - 1)
        if self.height % f or self.width % f:
            raise ConfigurationError(
                f"height/width must be divisible by {f} for {self.n_scales} scales", "n_scales")
        for name in ("base_channels", "context_len", "d_z", "capacity", "window", "channels"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1", name)
        if self.horizon < 0:
            raise ConfigurationError("horizon must be >= 0", "horizon")
        if self.cell not in ("e3d", "convlstm"):
            raise ConfigurationError(f"unknown cell {self.cell!r}", "cell")
        if self.combine not in ("residual", "linear"):
            raise ConfigurationError(f"unknown combine mode {self.combine!r}", "combine")

    def to_dict(self):
        return asdict(self)


def upsample2x(x):
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


def clamp_pixels(x):
    """Clamp to [0, 1] in the forward pass; pass the gradient straight through.

    A hard clamp has zero gradient outside the range, so a pixel whose raw
    value drifts below 0 can never be pulled back up by the loss. On sparse
    sprite data that freezes the model on an all-black prediction.
    """
    return x.detach().clamp(0.0, 1.0) + (x - x.detach())


def combine_scales(coarse, residual, final=True, coarse_weight=None, residual_weight=None):
    """``upsample(coarse) + residual``; clamped to [0, 1] only when ``final``.

    Optional scalar weights give the linear-blend variant.
    """
    if coarse.shape[:-2] != residual.shape[:-2] or \
            (coarse.shape[-2] * 2, coarse.shape[-1] * 2) != tuple(residual.shape[-2:]):
        raise ShapeMismatchError(
            f"coarse {tuple(coarse.shape)} is not half the resolution of {tuple(residual.shape)}")
    up = upsample2x(coarse)
    if coarse_weight is not None:
        up = coarse_weight * up
    if residual_weight is not None:
        residual = residual_weight * residual
    out = up + residual
    return clamp_pixels(out) if final else out


class ScaleNet(nn.Module):
    def __init__(self, cfg: GeneratorConfig, coarsest: bool):
        super().__init__()
        c, k = cfg.channels, cfg.base_channels
        in_ch = c + cfg.d_z + (0 if coarsest else c)
        if cfg.cell == "e3d":
            self.cell = E3DCell(in_ch, k, cfg.capacity, cfg.window)
        else:
            self.cell = ConvLSTMCell(in_ch, k)
        self.head = nn.Conv2d(k, c, 3, padding=1)
        self.coarsest = coarsest
        if cfg.combine == "linear" and not coarsest:
            self.blend = nn.Parameter(torch.ones(2))
        else:
            self.blend = None


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.scales = nn.ModuleList(ScaleNet(cfg, s == 0) for s in range(cfg.n_scales))

    def scale_sizes(self):
        s = self.cfg.n_scales
        return [(self.cfg.height >> (s - 1 - i), self.cfg.width >> (s - 1 - i)) for i in range(s)]

    def init_states(self, batch, dtype):
        return [net.cell.init_state(batch, h, w, dtype=dtype)
                for net, (h, w) in zip(self.scales, self.scale_sizes())]

    def step(self, frame, z, states, scale_outputs=None):
        """One timestep across all scales. Returns ``(frame', states')``.

        Per-scale predictions are appended to ``scale_outputs`` when given.
        """
        b = frame.shape[0]
        n = self.cfg.n_scales
        pred = None
        new_states = []
        for s, (net, st) in enumerate(zip(self.scales, states)):
            f = 2 ** (n - 1 - s)
            x = F.avg_pool2d(frame, f) if f > 1 else frame
            zmap = z.view(b, -1, 1, 1).expand(-1, -1, x.shape[2], x.shape[3])
            parts = [x, zmap] if pred is None else [x, zmap, upsample2x(pred)]
            h, st = net.cell(torch.cat(parts, dim=1), st)
            new_states.append(st)
            out = net.head(h)
            if net.coarsest:
                pred = torch.sigmoid(out)
            else:
                cw, rw = (net.blend[0], net.blend[1]) if net.blend is not None else (None, None)
                pred = combine_scales(pred, out, final=(s == n - 1),
                                      coarse_weight=cw, residual_weight=rw)
            if scale_outputs is not None:
                scale_outputs.append(pred)
        return clamp_pixels(pred), new_states

    def rollout(self, context, latents, return_scales=False):
        """Warm up on ``context [B, n, C, H, W]`` then emit one frame per latent.

        ``latents`` is ``[B, m, d_z]``; output is ``[B, m, C, H, W]``. With
        ``return_scales`` the per-scale predictions (coarsest first) are
        returned as well.
        """
        cfg = self.cfg
        if context.dim() != 5 or tuple(context.shape[2:]) != (cfg.channels, cfg.height, cfg.width):
            raise ShapeMismatchError(
                f"context must be [B, n, {cfg.channels}, {cfg.height}, {cfg.width}], "
                f"got {tuple(context.shape)}")
        if latents.dim() != 3 or latents.shape[0] != context.shape[0] or latents.shape[2] != cfg.d_z:
            raise ShapeMismatchError(
                f"latents must be [B, m, {cfg.d_z}], got {tuple(latents.shape)}")
        b = context.shape[0]
        if latents.shape[1] == 0:
            empty = context.new_zeros(b, 0, *context.shape[2:])
            return (empty, []) if return_scales else empty
        return self.decode(context[:, -1], self.warmup(context), latents, return_scales)

    def warmup(self, context):
        """Run the first ``n - 1`` context frames through the cells with a zero
        latent; the last context frame seeds :meth:`decode`."""
        b, n = context.shape[:2]
        states = self.init_states(b, context.dtype)
        zero = context.new_zeros(b, self.cfg.d_z)
        for t in range(n - 1):
            _, states = self.step(context[:, t], zero, states)
        return states

    def decode(self, last_frame, states, latents, return_scales=False):
        """Autoregressive emission from warmed-up ``states``; each step consumes
        the previous output frame."""
        prev = last_frame
        outs, per_scale = [], []
        for k in range(latents.shape[1]):
            scales = [] if return_scales else None
            prev, states = self.step(prev, latents[:, k], states, scales)
            outs.append(prev)
            per_scale.append(scales)
        out = torch.stack(outs, dim=1)
        if return_scales:
            return out, [torch.stack([s[i] for s in per_scale], dim=1)
                         for i in range(self.cfg.n_scales)]
        return out


def posterior_latents(encoder: PosteriorEncoder, context, target):
    """Posterior params for each target step; step ``k`` encodes the pair
    ``(x_{t-1}, x_t)`` with ``x_t = target[:, k]``."""
    prev = torch.cat([context[:, -1:], target[:, :-1]], dim=1)
    return [encoder(prev[:, k], target[:, k]) for k in range(target.shape[1])]


def predict(generator: Generator, context, mode="prior", seed=0, target=None, encoder=None,
            horizon=None, rng=None, return_posteriors=False):
    """Sample a future for ``context``.

    ``mode='prior'`` draws latents from N(0, I); ``mode='posterior'`` encodes
    the ground-truth ``target`` (training only). Randomness comes from ``rng``
    (a ``torch.Generator``) when given, else from a generator seeded by ``seed``.
    """
    if rng is None:
        rng = torch.Generator().manual_seed(int(seed))
    b = context.shape[0]
    d_z = generator.cfg.d_z
    if mode == "posterior":
        if target is None or encoder is None:
            raise ValueError("posterior mode needs the ground-truth target and the posterior encoder")
        m = target.shape[1]
        noise = torch.randn(b, m, d_z, generator=rng, dtype=context.dtype)
        posts = posterior_latents(encoder, context, target)
        latents = torch.stack([sample(p, noise[:, k]) for k, p in enumerate(posts)], dim=1) \
            if m else context.new_zeros(b, 0, d_z)
    elif mode == "prior":
        m = generator.cfg.horizon if horizon is None else horizon
        latents = torch.randn(b, m, d_z, generator=rng, dtype=context.dtype)
        posts = None
    else:
        raise ValueError(f"unknown mode {mode!r}")
    pred = generator.rollout(context, latents)
    return (pred, posts) if return_posteriors else pred


# --------------------------------------------------------------------------
# numpy <-> torch

def to_tensor(frames, dtype=torch.float32):
    """``[T, H, W, C]`` or ``[B, T, H, W, C]`` array (or VideoSequence) to
    ``[B, T, C, H, W]`` tensor."""
    if isinstance(frames, VideoSequence):
        frames = frames.frames
    arr = np.asarray(frames)
    if arr.ndim == 4:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 1, 4, 2, 3))).to(dtype)


def to_numpy(x):
    """``[B, T, C, H, W]`` tensor to ``[B, T, H, W, C]`` float32 array."""
    return x.detach().cpu().numpy().transpose(0, 1, 3, 4, 2).astype(np.float32)


def predict_sequence(generator, context: VideoSequence, seed=0, horizon=None):
    with torch.no_grad():
        dtype = next(generator.parameters()).dtype
        pred = predict(generator, to_tensor(context, dtype), "prior", seed, horizon=horizon)
    return VideoSequence(to_numpy(pred)[0], f"{context.id}:pred") if pred.shape[1] else None
