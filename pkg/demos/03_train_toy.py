"""Train a small model on 1-sprite 32x32 clips and score it.

A few hundred steps take a few minutes on one CPU core. The run directory gets
the checkpoint, the loss logs and the evaluation table and plots.

    python3 demos/03_train_toy.py [steps] [out_dir]
"""
import sys
from pathlib import Path

from vidpred.config import ModelConfig
from vidpred.train import build_windows, evaluate_run, fit

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out/toy")

cfg = ModelConfig.from_dict({
    "generator": {"height": 32, "width": 32, "n_scales": 2, "base_channels": 16,
                  "context_len": 5, "horizon": 5},
    "dataset": {"n_sprites": 1, "glyph_size": 14, "speed": 1.0, "train_count": 512,
                "val_count": 32},
    "steps": steps, "val_every": 25, "autoencoder_steps": 300,
    "l1_reduction": "sum", "lr_generator": 1e-3, "val_mode": "posterior",
})

def progress(trainer, losses):
    if trainer.step % 50 == 0:
        s = losses.scalars()
        print(f"step {trainer.step:5d}  l1 {s['l1']:.4f}  kl {s['kl']:.4f}  "
              f"adv {s['mggan1']:.3f}/{s['mggan2']:.3f}")

res = fit(cfg, out, callback=progress)
print("autoencoder held-out MSE:", res.autoencoder_report)
print("validation L1:", [(s, round(v, 4)) for s, v in res.val_history])

test = build_windows(cfg, "val")
report = evaluate_run(res.trainer, test, samples_per_input=5, seed=1)
print(report.format_table())
report.to_csv(out / "metrics.csv")
report.save_plots(out)
