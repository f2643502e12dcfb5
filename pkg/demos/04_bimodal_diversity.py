"""Does the model keep both futures of an ambiguous context?

Every clip in the bimodal set has the same still context; afterwards the
sprite moves left or right with equal odds. A model that has collapsed onto
one mode predicts a single direction for every latent draw. This trains a
full model and an ablation without the adversarial terms and counts the
predicted directions over 50 prior samples.

    python3 demos/04_bimodal_diversity.py [steps]
"""
import sys

import numpy as np
import torch

from vidpred.config import ModelConfig
from vidpred.data import bimodal_sprite_sequences, render_digit
from vidpred.generator import to_tensor
from vidpred.train import fit

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600
base = {
    "generator": {"height": 32, "width": 32, "n_scales": 2, "base_channels": 16,
                  "context_len": 5, "horizon": 5},
    "dataset": {"kind": "bimodal", "glyph_size": 14, "speed": 2.0, "train_count": 256,
                "val_count": 32},
    "steps": steps, "val_every": 100, "autoencoder_steps": 300,
    "l1_reduction": "sum", "lr_generator": 1e-3,
}


def com_x(frame):
    img = frame[..., 0]
    return (img.sum(0) * np.arange(img.shape[1])).sum() / max(img.sum(), 1e-8)


def directions(gen, ctx_frames, n=50):
    ctx = to_tensor(ctx_frames)
    x0 = com_x(ctx_frames[-1])
    rng = torch.Generator().manual_seed(0)
    out = {"left": 0, "right": 0, "undecided": 0}
    with torch.no_grad():
        for _ in range(n):
            z = torch.randn(1, 5, gen.cfg.d_z, generator=rng)
            dx = com_x(gen.rollout(ctx, z)[0, -1].permute(1, 2, 0).numpy()) - x0
            out["undecided" if abs(dx) < 1 else ("right" if dx > 0 else "left")] += 1
    return out


seqs, _ = bimodal_sprite_sequences(1, glyph=render_digit(0, 14), seed=5)
context = seqs[0].frames[:5]
full = fit(ModelConfig.from_dict(base), "demo_out/bimodal_full")
print("full model:", directions(full.trainer.generator.eval(), context))
base["weights"] = {"l1": 0.25, "kl": 0.2, "mggan1": 0.0, "mggan2": 0.0}
vae = fit(ModelConfig.from_dict(base), "demo_out/bimodal_vae", autoencoder=full.autoencoder)
print("no adversarial terms:", directions(vae.trainer.generator.eval(), context))
