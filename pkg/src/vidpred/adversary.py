"""Sequence discriminators and the manifold guidance network.

The guidance network is the encoder half of an autoencoder pre-trained on
real frames by MSE reconstruction and then frozen. Two extra discriminators
score sequences of its features, so the generator gets feedback about every
mode the autoencoder learned to reconstruct.
"""

from __future__ import annotations

import hashlib
import logging

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import FrozenEncoderError

logger = logging.getLogger(__name__)


class FrameEncoder(nn.Module):
    def __init__(self, channels, height, width, manifold_dim=32, width_mult=16):
        super().__init__()
        w = width_mult
        self.conv1 = nn.Conv2d(channels, w, 4, stride=2, padding=1)
        self.conv2 = nn.Conv2d(w, 2 * w, 4, stride=2, padding=1)
        self.fc = nn.Linear(2 * w * (height // 4) * (width // 4), manifold_dim)

    def forward(self, x):
        h = F.leaky_relu(self.conv1(x), 0.2)
        h = F.leaky_relu(self.conv2(h), 0.2)
        return self.fc(h.flatten(1))


class FrameDecoder(nn.Module):
    def __init__(self, channels, height, width, manifold_dim=32, width_mult=16):
        super().__init__()
        w = width_mult
        self.shape = (2 * w, height // 4, width // 4)
        self.fc = nn.Linear(manifold_dim, 2 * w * (height // 4) * (width // 4))
        self.deconv1 = nn.ConvTranspose2d(2 * w, w, 4, stride=2, padding=1)
        self.deconv2 = nn.ConvTranspose2d(w, channels, 4, stride=2, padding=1)

    def forward(self, f):
        h = F.leaky_relu(self.fc(f), 0.2).view(-1, *self.shape)
        h = F.leaky_relu(self.deconv1(h), 0.2)
        return torch.sigmoid(self.deconv2(h))


def module_digest(module: nn.Module) -> str:
    """SHA-256 over every parameter and buffer, in state-dict order."""
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


class ManifoldEncoder:
    """Per-frame feature map with a one-way freeze.

    Once frozen, parameters have ``requires_grad=False``, any request for
    trainable parameters or a state load raises :class:`FrozenEncoderError`,
    and :meth:`verify` checks the content digest against the freeze-time one.
    """

    def __init__(self, net: FrameEncoder, meta=None):
        self.net = net
        self.meta = dict(meta or {})
        self.frozen = False
        self.frozen_digest = None

    def freeze(self):
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.net.eval()
        self.frozen = True
        self.frozen_digest = self.digest()
        return self

    def digest(self):
        return module_digest(self.net)

    def verify(self):
        if self.frozen and self.digest() != self.frozen_digest:
            raise FrozenEncoderError("frozen manifold encoder parameters were modified")
        return True

    def trainable_parameters(self):
        if self.frozen:
            raise FrozenEncoderError("manifold encoder is frozen; it cannot be optimized")
        return list(self.net.parameters())

    def load_state_dict(self, state):
        if self.frozen:
            raise FrozenEncoderError("cannot load new parameters into a frozen encoder")
        self.net.load_state_dict(state)

    @property
    def dim(self):
        return self.net.fc.out_features

    def to(self, dtype):
        self.net.to(dtype)
        if self.frozen:
            self.frozen_digest = self.digest()
        return self

    def __call__(self, frames):
        return self.net(frames)


def manifold_map(enc: ManifoldEncoder, seq):
    """Encode each frame of ``seq [B, T, C, H, W]`` -> features ``[B, T, F]``."""
    if not enc.frozen:
        raise FrozenEncoderError("manifold encoder must be pre-trained and frozen before use")
    b, t = seq.shape[:2]
    return enc(seq.reshape(b * t, *seq.shape[2:])).view(b, t, -1)


def pretrain_autoencoder(frames, steps=2000, manifold_dim=32, lr=1e-3, batch_size=32,
                         seed=0, held_out=0.1, dtype=torch.float32):
    """Train a frame autoencoder by MSE reconstruction and freeze its encoder.

    ``frames`` is ``[N, C, H, W]`` (tensor or array). Returns
    ``(encoder, decoder, report)`` where ``report`` holds the held-out
    reconstruction error before and after training.
    """
    x = torch.as_tensor(np.asarray(frames), dtype=dtype)
    if x.dim() != 4 or x.shape[0] < 1:
        raise ValueError("pretraining needs at least one [C, H, W] frame")
    n, c, h, w = x.shape
    g = torch.Generator().manual_seed(seed)
    perm = torch.randperm(n, generator=g)
    n_val = int(round(n * held_out)) if n > 1 else 0
    n_val = min(max(n_val, 1 if n > 1 else 0), n - 1)
    val, train = x[perm[:n_val]], x[perm[n_val:]]
    if n_val == 0:
        val = train

    torch.manual_seed(seed)
    enc = FrameEncoder(c, h, w, manifold_dim).to(dtype)
    dec = FrameDecoder(c, h, w, manifold_dim).to(dtype)
    opt = torch.optim.Adam(list(enc.parameters()) + list(dec.parameters()), lr=lr)

    def val_error():
        with torch.no_grad():
            return float(F.mse_loss(dec(enc(val)), val))

    init_err = val_error()
    for step in range(steps):
        idx = torch.randint(0, train.shape[0], (min(batch_size, train.shape[0]),), generator=g)
        batch = train[idx]
        loss = F.mse_loss(dec(enc(batch)), batch)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if (step + 1) % 500 == 0:
            logger.info("autoencoder step %d loss %.5f", step + 1, float(loss))
    final_err = val_error()
    report = {"steps": steps, "init_error": init_err, "final_error": final_err,
              "held_out": int(n_val)}
    meta = {"channels": c, "height": h, "width": w, "manifold_dim": manifold_dim}
    return ManifoldEncoder(enc, meta).freeze(), dec, report


# --------------------------------------------------------------------------
# discriminator heads

class SequenceDiscriminator(nn.Module):
    """Spatiotemporal (3D-conv) realness score for a clip ``[B, T, C, H, W]``."""

    def __init__(self, channels=1, width=16):
        super().__init__()
        self.conv1 = nn.Conv3d(channels, width, (3, 4, 4), stride=(1, 2, 2), padding=1)
        self.conv2 = nn.Conv3d(width, 2 * width, (3, 4, 4), stride=(1, 2, 2), padding=1)
        self.fc = nn.Linear(2 * width, 1)

    def logits(self, seq):
        h = seq.permute(0, 2, 1, 3, 4)
        h = F.leaky_relu(self.conv1(h), 0.2)
        h = F.leaky_relu(self.conv2(h), 0.2)
        return self.fc(h.mean(dim=(2, 3, 4))).squeeze(1)

    def forward(self, seq):
        return torch.sigmoid(self.logits(seq))


class ManifoldDiscriminator(nn.Module):
    """Temporal-conv realness score for a feature sequence ``[B, T, F]``."""

    def __init__(self, feature_dim=32, width=32):
        super().__init__()
        self.conv1 = nn.Conv1d(feature_dim, width, 3, padding=1)
        self.conv2 = nn.Conv1d(width, width, 3, padding=1)
        self.fc = nn.Linear(width, 1)

    def logits(self, feats):
        h = feats.transpose(1, 2)
        h = F.leaky_relu(self.conv1(h), 0.2)
        h = F.leaky_relu(self.conv2(h), 0.2)
        return self.fc(h.mean(dim=2)).squeeze(1)

    def forward(self, feats):
        return torch.sigmoid(self.logits(feats))


def discriminate(head: nn.Module, x):
    """Realness score in (0, 1), one per sequence in the batch."""
    if x.shape[1] < 1:
        raise ValueError("discriminator input needs at least one timestep")
    return head(x)


class Adversary(nn.Module):
    """The four heads: ``d`` and ``d_vae`` on pixels, ``dm1`` and ``dm2`` on
    manifold features. ``share_dvae_weights`` aliases ``d_vae`` to ``d``."""

    def __init__(self, channels=1, manifold_dim=32, width=16, share_dvae_weights=False):
        super().__init__()
        self.d = SequenceDiscriminator(channels, width)
        self.d_vae = self.d if share_dvae_weights else SequenceDiscriminator(channels, width)
        self.dm1 = ManifoldDiscriminator(manifold_dim, 2 * width)
        self.dm2 = ManifoldDiscriminator(manifold_dim, 2 * width)
        self.share_dvae_weights = share_dvae_weights

    def heads(self):
        names = ["d", "dm1", "dm2"] if self.share_dvae_weights else ["d", "d_vae", "dm1", "dm2"]
        return {n: getattr(self, n) for n in names}
