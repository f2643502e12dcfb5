import numpy as np
import pytest
import torch

from fdcheck import relative_error
from vidpred.adversary import (Adversary, FrameEncoder, ManifoldDiscriminator, ManifoldEncoder,
                               SequenceDiscriminator, discriminate, manifold_map, module_digest,
                               pretrain_autoencoder)
from vidpred.data import MovingSpriteSpec, generate_dataset
from vidpred.errors import FrozenEncoderError


def sprite_frames(count=8, size=16):
    spec = MovingSpriteSpec(canvas=(size, size), n_sprites=1, speed=2.0, glyph_size=8, seed=3)
    seqs = generate_dataset(spec, count, 6)
    return np.concatenate([s.frames for s in seqs]).transpose(0, 3, 1, 2)


# -- frozen manifold encoder -----------------------------------------------------------

def test_frozen_digest_survives_training_of_everything_else():
    torch.manual_seed(0)
    enc = ManifoldEncoder(FrameEncoder(1, 16, 16, 6)).freeze()
    before = enc.digest()
    adv = Adversary(1, 6, width=4)
    opt = torch.optim.Adam(adv.parameters(), lr=1e-2)
    x = torch.rand(2, 4, 1, 16, 16, requires_grad=True)
    for _ in range(5):
        score = discriminate(adv.dm1, manifold_map(enc, x)).sum() + adv.d(x).sum()
        opt.zero_grad()
        score.backward()
        opt.step()
    assert x.grad is not None
    assert all(p.grad is None for p in enc.net.parameters())
    assert enc.digest() == before
    assert enc.verify()


def test_frozen_encoder_refuses_updates():
    enc = ManifoldEncoder(FrameEncoder(1, 16, 16, 6)).freeze()
    with pytest.raises(FrozenEncoderError):
        enc.trainable_parameters()
    with pytest.raises(FrozenEncoderError):
        enc.load_state_dict(FrameEncoder(1, 16, 16, 6).state_dict())
    with torch.no_grad():
        enc.net.fc.bias.add_(1.0)
    with pytest.raises(FrozenEncoderError):
        enc.verify()


def test_unfrozen_encoder_rejected():
    enc = ManifoldEncoder(FrameEncoder(1, 16, 16, 6))
    assert len(enc.trainable_parameters()) > 0
    with pytest.raises(FrozenEncoderError):
        manifold_map(enc, torch.rand(1, 2, 1, 16, 16))


def test_pretrain_reduces_error_and_freezes():
    frames = sprite_frames()
    enc, dec, report = pretrain_autoencoder(frames, steps=150, manifold_dim=8, batch_size=16)
    assert enc.frozen and enc.dim == 8
    assert report["final_error"] <= report["init_error"]
    assert report["held_out"] > 0
    feats = manifold_map(enc, torch.as_tensor(frames[:6]).view(2, 3, 1, 16, 16))
    assert feats.shape == (2, 3, 8)


def test_pretrain_is_seeded():
    frames = sprite_frames(count=2)
    a = pretrain_autoencoder(frames, steps=5, manifold_dim=4, seed=1)[0]
    b = pretrain_autoencoder(frames, steps=5, manifold_dim=4, seed=1)[0]
    assert a.digest() == b.digest()


# -- discriminator heads ----------------------------------------------------------------

def test_scores_in_open_unit_interval():
    torch.manual_seed(1)
    d = SequenceDiscriminator(1, 4)
    dm = ManifoldDiscriminator(6, 8)
    g = torch.Generator().manual_seed(2)
    with torch.no_grad():
        clips = torch.rand(10_000, 3, 1, 8, 8, generator=g) * 4 - 2
        s = discriminate(d, clips)
        feats = torch.randn(10_000, 4, 6, generator=g) * 3
        sm = discriminate(dm, feats)
    for v in (s, sm):
        assert v.shape == (10_000,)
        assert (v > 0).all() and (v < 1).all()


def test_zero_head_scores_half():
    d = SequenceDiscriminator(1, 4)
    dm = ManifoldDiscriminator(6, 8)
    for m in (d, dm):
        for p in m.parameters():
            torch.nn.init.zeros_(p)
    assert torch.all(d(torch.rand(3, 4, 1, 8, 8)) == 0.5)
    assert torch.all(dm(torch.randn(3, 4, 6)) == 0.5)


def test_discriminate_needs_time():
    with pytest.raises(ValueError):
        discriminate(SequenceDiscriminator(1, 4), torch.rand(2, 0, 1, 8, 8))


def test_four_independent_heads():
    torch.manual_seed(3)
    adv = Adversary(1, 6, width=4)
    heads = adv.heads()
    assert set(heads) == {"d", "d_vae", "dm1", "dm2"}
    ids = {id(p) for h in heads.values() for p in h.parameters()}
    assert len(ids) == sum(len(list(h.parameters())) for h in heads.values())
    before = {n: module_digest(h) for n, h in heads.items()}
    opt = torch.optim.SGD(adv.d.parameters(), lr=0.1)
    adv.d(torch.rand(2, 3, 1, 8, 8)).sum().backward()
    opt.step()
    after = {n: module_digest(h) for n, h in heads.items()}
    assert after["d"] != before["d"]
    for n in ("d_vae", "dm1", "dm2"):
        assert after[n] == before[n]


def test_shared_dvae_variant():
    adv = Adversary(1, 6, width=4, share_dvae_weights=True)
    assert adv.d_vae is adv.d
    assert set(adv.heads()) == {"d", "dm1", "dm2"}


def test_discriminator_gradients(float64):
    torch.manual_seed(4)
    d = SequenceDiscriminator(1, 2)
    dm = ManifoldDiscriminator(3, 4)
    clip, feats = torch.rand(2, 3, 1, 8, 8), torch.randn(2, 4, 3)
    for head, x in ((d, clip), (dm, feats)):
        f = lambda: torch.log(head(x)).sum()
        for name, p in head.named_parameters():
            err, _, _ = relative_error(f, p, k=8)
            assert err < 1e-3, name
