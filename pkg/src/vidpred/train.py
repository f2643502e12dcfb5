"""Three-phase pipeline: autoencoder pretraining, alternating adversarial /
variational training, and best-of-k evaluation. Also checkpointing with full
RNG and optimizer state so a resumed run continues bit-exactly."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ck
from .adversary import (Adversary, FrameDecoder, FrameEncoder, ManifoldEncoder, manifold_map,
                        module_digest, pretrain_autoencoder)
from .config import ModelConfig
from .data import (MovingSpriteSpec, WindowSpec, bimodal_sprite_sequences, generate_dataset,
                   load_dataset, render_digit, window_all)
from .errors import ConfigurationError
from .generator import Generator, posterior_latents, to_numpy, to_tensor
from .latent import PosteriorEncoder, sample
from .losses import (LossBreakdown, combined_loss, generator_objective, kl_loss, l1_loss,
                     mggan_loss)
from .metrics import MetricsReport, frame_metrics, psnr_from_mse

logger = logging.getLogger(__name__)

LOG_FIELDS = ("step",) + LossBreakdown.FIELDS
_DTYPES = {"float32": torch.float32, "float64": torch.float64}


# --------------------------------------------------------------------------
# data

def build_sequences(cfg: ModelConfig, split="train"):
    ds, g = cfg.dataset, cfg.generator
    length = ds.seq_len or g.context_len + g.horizon
    count = ds.train_count if split == "train" else ds.val_count
    if ds.kind == "moving_sprites":
        spec = MovingSpriteSpec((g.height, g.width), ds.n_sprites, ds.speed, None, ds.seed,
                                ds.glyph_size)
        first = 0 if split == "train" else ds.train_count
        return generate_dataset(spec, count, length, first_index=first)
    if ds.kind == "bimodal":
        seed = ds.seed if split == "train" else ds.seed + 1
        seqs, _ = bimodal_sprite_sequences(count, (g.height, g.width), g.context_len, g.horizon,
                                           ds.speed, render_digit(0, ds.glyph_size), seed)
        return seqs
    path = ds.path if split == "train" else (ds.val_path or ds.path)
    return load_dataset(path)


def build_windows(cfg: ModelConfig, split="train"):
    g = cfg.generator
    stride = cfg.dataset.stride or g.context_len + g.horizon
    windows, stats = window_all(build_sequences(cfg, split),
                                WindowSpec(g.context_len, g.horizon, stride))
    if stats.short_sequences:
        logger.warning("%d %s sequences too short for %s", stats.short_sequences, split, cfg.task)
    return windows


def windows_to_tensors(windows, dtype=torch.float32):
    ctx = torch.cat([to_tensor(c.frames, dtype) for c, _ in windows])
    tgt = torch.cat([to_tensor(t.frames, dtype) for _, t in windows])
    return ctx, tgt


# --------------------------------------------------------------------------
# autoencoder checkpoints

def save_autoencoder(path, enc: ManifoldEncoder, dec, report=None):
    header = {"kind": "autoencoder", "meta": enc.meta, "report": report or {},
              "digest": enc.digest(), "frozen": enc.frozen}
    blocks = {**ck.module_blocks("encoder", enc.net), **ck.module_blocks("decoder", dec)}
    return ck.write_container(path, header, blocks)


def load_autoencoder(path, dtype=torch.float32):
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"autoencoder checkpoint {path} not found", "autoencoder_path")
    header, blocks = ck.read_container(path)
    if header.get("kind") != "autoencoder":
        raise ConfigurationError(f"{path} is not an autoencoder checkpoint", "autoencoder_path")
    m = header["meta"]
    net = FrameEncoder(m["channels"], m["height"], m["width"], m["manifold_dim"])
    dec = FrameDecoder(m["channels"], m["height"], m["width"], m["manifold_dim"])
    ck.load_module_blocks("encoder", net, blocks)
    ck.load_module_blocks("decoder", dec, blocks)
    enc = ManifoldEncoder(net, m)
    if enc.digest() != header["digest"]:
        raise ck.CheckpointFormatError(f"{path}: encoder digest mismatch")
    enc.freeze()
    return enc.to(dtype), dec.to(dtype), header


def pretrain_from_config(cfg: ModelConfig, windows=None):
    windows = build_windows(cfg, "train") if windows is None else windows
    frames = np.concatenate([np.concatenate([c.frames, t.frames]) for c, t in windows])
    frames = frames.transpose(0, 3, 1, 2)
    return pretrain_autoencoder(frames, cfg.autoencoder_steps, cfg.manifold_dim,
                                seed=cfg.seed, dtype=_DTYPES[cfg.dtype])


# --------------------------------------------------------------------------
# trainer

class Trainer:
    """Owns every trainable module, the optimizers and the RNG streams."""

    def __init__(self, cfg: ModelConfig, manifold_encoder: ManifoldEncoder):
        if manifold_encoder is None or not manifold_encoder.frozen:
            raise ConfigurationError("training needs a frozen, pre-trained manifold encoder",
                                     "autoencoder_path")
        self.cfg = cfg
        self.dtype = _DTYPES[cfg.dtype]
        g = cfg.generator
        torch.manual_seed(cfg.seed)
        self.generator = Generator(g).to(self.dtype)
        self.posterior = PosteriorEncoder(g.channels, g.d_z, cfg.encoder_width).to(self.dtype)
        self.adversary = Adversary(g.channels, manifold_encoder.dim, cfg.disc_width,
                                   cfg.share_dvae_weights).to(self.dtype)
        self.encoder = manifold_encoder
        self.opt_g = torch.optim.Adam(
            list(self.generator.parameters()) + list(self.posterior.parameters()),
            lr=cfg.lr_generator, betas=tuple(cfg.betas))
        self.opt_d = {name: torch.optim.Adam(head.parameters(), lr=cfg.lr_discriminator,
                                             betas=tuple(cfg.betas))
                      for name, head in self.adversary.heads().items()}
        self.torch_rng = torch.Generator().manual_seed(cfg.seed + 1)
        self.np_rng = np.random.default_rng(cfg.seed + 2)
        self.step = 0
        self.last_d_objectives = (float("nan"), float("nan"))

    # -- pieces of one update

    def rollouts(self, ctx, tgt):
        """Posterior (reconstruction) and prior (free-running) predictions that
        share one context warm-up."""
        b, m = tgt.shape[:2]
        d_z = self.cfg.generator.d_z
        noise_post = torch.randn(b, m, d_z, generator=self.torch_rng, dtype=self.dtype)
        noise_prior = torch.randn(b, m, d_z, generator=self.torch_rng, dtype=self.dtype)
        states = self.generator.warmup(ctx)
        posts = posterior_latents(self.posterior, ctx, tgt)
        z_post = torch.stack([sample(p, noise_post[:, k]) for k, p in enumerate(posts)], dim=1)
        pred_post = self.generator.decode(ctx[:, -1], states, z_post)
        pred_prior = self.generator.decode(ctx[:, -1], states, noise_prior)
        return pred_post, pred_prior, posts

    def _fakes(self, ctx, pred_post, pred_prior):
        fake1 = torch.cat([ctx, pred_prior], dim=1)
        fake2 = torch.cat([ctx, pred_post if self.cfg.vae_path_uses_posterior else pred_prior], 1)
        return fake1, fake2

    def update_discriminators(self, real, fake1, fake2):
        adv = self.adversary
        d1, _ = mggan_loss(adv.d, adv.dm1, self.encoder, real, fake1.detach())
        d2, _ = mggan_loss(adv.d_vae, adv.dm2, self.encoder, real, fake2.detach())
        for opt in self.opt_d.values():
            opt.zero_grad(set_to_none=True)
        (-(d1 + d2)).backward()
        for opt in self.opt_d.values():
            opt.step()
        self.last_d_objectives = (float(d1.detach()), float(d2.detach()))
        return d1, d2

    def generator_losses(self, tgt, pred_post, posts, fake1, fake2):
        adv = self.adversary
        g1 = generator_objective(adv.d(fake1), adv.dm1(manifold_map(self.encoder, fake1)))
        g2 = generator_objective(adv.d_vae(fake2), adv.dm2(manifold_map(self.encoder, fake2)))
        l1 = l1_loss(pred_post, tgt, self.cfg.l1_reduction)
        return combined_loss(l1, kl_loss(posts), g1, g2, self.cfg.weights)

    def train_step(self, ctx, tgt) -> LossBreakdown:
        """One alternating update: discriminators first, then generator and
        posterior encoder on the weighted objective."""
        self.generator.train()
        pred_post, pred_prior, posts = self.rollouts(ctx, tgt)
        real = torch.cat([ctx, tgt], dim=1)
        fake1, fake2 = self._fakes(ctx, pred_post, pred_prior)
        self.update_discriminators(real, fake1, fake2)

        self.adversary.requires_grad_(False)
        try:
            bd = self.generator_losses(tgt, pred_post, posts, fake1, fake2)
            self.opt_g.zero_grad(set_to_none=True)
            bd.combined.backward()
            self.opt_g.step()
        finally:
            self.adversary.requires_grad_(True)
        self.step += 1
        return LossBreakdown(*(float(getattr(bd, k).detach()) for k in LossBreakdown.FIELDS), bd.weights)

    def discriminator_step(self, ctx, tgt):
        """Discriminator-only update (generator untouched)."""
        with torch.no_grad():
            pred_post, pred_prior, _ = self.rollouts(ctx, tgt)
        real = torch.cat([ctx, tgt], dim=1)
        return self.update_discriminators(real, *self._fakes(ctx, pred_post, pred_prior))

    def sample_batch(self, ctx_all, tgt_all):
        idx = self.np_rng.integers(0, ctx_all.shape[0], size=min(self.cfg.batch_size,
                                                                  ctx_all.shape[0]))
        idx = torch.from_numpy(idx)
        return ctx_all[idx], tgt_all[idx]

    @torch.no_grad()
    def validation_l1(self, ctx, tgt, seed=0):
        """L1 of predictions on held-out windows with a fixed noise seed."""
        self.generator.eval()
        rng = torch.Generator().manual_seed(seed)
        noise = torch.randn(tgt.shape[0], tgt.shape[1], self.cfg.generator.d_z,
                            generator=rng, dtype=self.dtype)
        if self.cfg.val_mode == "posterior":
            posts = posterior_latents(self.posterior, ctx, tgt)
            noise = torch.stack([sample(p, noise[:, k]) for k, p in enumerate(posts)], dim=1)
        pred = self.generator.rollout(ctx, noise)
        self.generator.train()
        return float(l1_loss(pred, tgt))

    # -- state

    def digests(self):
        d = {"generator": module_digest(self.generator), "posterior": module_digest(self.posterior),
             "manifold_encoder": self.encoder.digest()}
        for name, head in self.adversary.heads().items():
            d[f"adversary.{name}"] = module_digest(head)
        return d

    def save(self, path, autoencoder_path=None):
        blocks = {**ck.module_blocks("generator", self.generator),
                  **ck.module_blocks("posterior", self.posterior),
                  **ck.module_blocks("adversary", self.adversary)}
        opt_meta = {}
        for name, opt in [("g", self.opt_g)] + [(f"d.{k}", o) for k, o in self.opt_d.items()]:
            b, meta = ck.optimizer_blocks(f"opt/{name}", opt)
            blocks.update(b)
            opt_meta[name] = meta
        blocks["rng/torch"] = self.torch_rng.get_state()
        header = {
            "kind": "model",
            "config": self.cfg.to_dict(),
            "step": self.step,
            "digests": self.digests(),
            "optimizers": opt_meta,
            "numpy_rng": self.np_rng.bit_generator.state,
            "autoencoder": {"path": str(autoencoder_path or self.cfg.autoencoder_path or ""),
                            "digest": self.encoder.digest()},
        }
        return ck.write_container(path, header, blocks)

    def load_state(self, header, blocks):
        ck.load_module_blocks("generator", self.generator, blocks)
        ck.load_module_blocks("posterior", self.posterior, blocks)
        ck.load_module_blocks("adversary", self.adversary, blocks)
        ck.load_optimizer_blocks("opt/g", self.opt_g, blocks, header["optimizers"]["g"])
        for k, o in self.opt_d.items():
            ck.load_optimizer_blocks(f"opt/d.{k}", o, blocks, header["optimizers"][f"d.{k}"])
        self.torch_rng.set_state(torch.from_numpy(blocks["rng/torch"].copy()))
        self.np_rng.bit_generator.state = header["numpy_rng"]
        self.step = int(header["step"])

    @classmethod
    def from_checkpoint(cls, path, manifold_encoder=None):
        header, blocks = ck.read_container(path)
        if header.get("kind") != "model":
            raise ConfigurationError(f"{path} is not a model checkpoint", "checkpoint")
        cfg = ModelConfig.from_dict(header["config"], validate=False)
        if manifold_encoder is None:
            manifold_encoder = load_autoencoder(
                resolve_autoencoder_path(path, header), _DTYPES[cfg.dtype])[0]
        if manifold_encoder.digest() != header["autoencoder"]["digest"]:
            raise ConfigurationError("manifold encoder does not match the checkpoint",
                                     "autoencoder_path")
        trainer = cls(cfg, manifold_encoder)
        trainer.load_state(header, blocks)
        return trainer


def resolve_autoencoder_path(ckpt_path, header):
    p = Path(header["autoencoder"]["path"])
    if p.is_file():
        return p
    local = Path(ckpt_path).parent / p.name
    if p.name and local.is_file():
        return local
    raise ConfigurationError(f"autoencoder checkpoint {p} not found", "autoencoder_path")


def load_generator(path):
    """Generator and config from a model checkpoint (no autoencoder needed)."""
    header, blocks = ck.read_container(path)
    if header.get("kind") != "model":
        raise ConfigurationError(f"{path} is not a model checkpoint", "checkpoint")
    cfg = ModelConfig.from_dict(header["config"], validate=False)
    gen = Generator(cfg.generator).to(_DTYPES[cfg.dtype])
    ck.load_module_blocks("generator", gen, blocks)
    gen.eval()
    return gen, cfg, header


# --------------------------------------------------------------------------
# fit

@dataclass
class FitResult:
    checkpoint: Path
    log: Path
    trainer: Trainer
    val_history: list = field(default_factory=list)
    autoencoder: Path | None = None
    autoencoder_report: dict | None = None


def _read_log(path, upto):
    with open(path, newline="") as fh:
        return [r for r in csv.DictReader(fh) if int(r["step"]) <= upto]


def fit(cfg: ModelConfig, out_dir, autoencoder=None, resume=None, val_windows=None,
        train_windows=None, callback=None):
    """Run the full training pipeline into ``out_dir``.

    ``autoencoder`` may be a frozen :class:`ManifoldEncoder`, a path, or None
    (pretrain one on the training frames). ``resume`` is a checkpoint path.
    Writes ``checkpoint.ckpt``, periodic ``checkpoint_<step>.ckpt``,
    ``train_log.csv`` and ``val_log.csv``.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = _DTYPES[cfg.dtype]
    train_windows = build_windows(cfg, "train") if train_windows is None else train_windows
    if not train_windows:
        raise ConfigurationError("dataset yields no training windows", "dataset")
    val_windows = build_windows(cfg, "val") if val_windows is None else val_windows

    ae_report = None
    ae_path = None
    if isinstance(autoencoder, ManifoldEncoder):
        enc = autoencoder
        ae_path = cfg.autoencoder_path
    else:
        ae_path = autoencoder or cfg.autoencoder_path
        if resume is not None and ae_path is None:
            header, _ = ck.read_container(resume)
            ae_path = resolve_autoencoder_path(resume, header)
        if ae_path is not None:
            enc = load_autoencoder(ae_path, dtype)[0]
        else:
            enc, dec, ae_report = pretrain_from_config(cfg, train_windows)
            ae_path = out_dir / "autoencoder.ckpt"
            save_autoencoder(ae_path, enc, dec, ae_report)
    cfg.autoencoder_path = str(ae_path) if ae_path else None

    if resume is not None:
        trainer = Trainer.from_checkpoint(resume, enc)
        trainer.cfg.steps = cfg.steps
    else:
        trainer = Trainer(cfg, enc)
    cfg = trainer.cfg
    cfg.autoencoder_path = str(ae_path) if ae_path else None

    ctx_all, tgt_all = windows_to_tensors(train_windows, dtype)
    val = windows_to_tensors(val_windows, dtype) if val_windows else None

    log_path = out_dir / "train_log.csv"
    val_path = out_dir / "val_log.csv"
    if resume is not None and log_path.exists():
        rows = _read_log(log_path, trainer.step)
        vrows = _read_log(val_path, trainer.step) if val_path.exists() else []
    else:
        rows, vrows = [], []
    log_fh = open(log_path, "w", newline="")
    val_fh = open(val_path, "w", newline="")
    try:
        log = csv.DictWriter(log_fh, fieldnames=LOG_FIELDS)
        log.writeheader()
        log.writerows(rows)
        vlog = csv.DictWriter(val_fh, fieldnames=("step", "val_l1"))
        vlog.writeheader()
        vlog.writerows(vrows)
        history = [(int(r["step"]), float(r["val_l1"])) for r in vrows]

        def validate():
            if val is not None:
                v = trainer.validation_l1(*val, seed=cfg.seed)
                history.append((trainer.step, v))
                vlog.writerow({"step": trainer.step, "val_l1": f"{v:.8g}"})
                val_fh.flush()

        if trainer.step == 0 and not vrows:
            validate()
        while trainer.step < cfg.steps:
            bd = trainer.train_step(*trainer.sample_batch(ctx_all, tgt_all))
            row = {"step": trainer.step, **{k: f"{v:.8g}" for k, v in bd.scalars().items()}}
            log.writerow(row)
            if trainer.step % cfg.val_every == 0 or trainer.step == cfg.steps:
                validate()
                log_fh.flush()
            if trainer.step % cfg.checkpoint_every == 0:
                trainer.save(out_dir / f"checkpoint_{trainer.step:06d}.ckpt", ae_path)
            if callback is not None:
                callback(trainer, bd)
        enc.verify()
    finally:
        log_fh.close()
        val_fh.close()
    ckpt = trainer.save(out_dir / "checkpoint.ckpt", ae_path)
    (out_dir / "config.json").write_text(cfg.to_json())
    return FitResult(ckpt, log_path, trainer, history,
                     Path(ae_path) if ae_path else None, ae_report)


# --------------------------------------------------------------------------
# evaluation

@torch.no_grad()
def sample_predictions(generator, ctx, horizon, samples, seed=0, batch_size=32):
    """``samples`` prior-sampled futures per context -> ``[k, N, m, C, H, W]``.

    Sample ``j`` uses the ``j``-th noise draw of one seeded stream, so the
    first ``k`` samples are identical for any larger ``k``. The draw is shared
    by every context, which makes scores independent of test-set order and
    repeated windows score identically.
    """
    rng = torch.Generator().manual_seed(int(seed))
    d_z = generator.cfg.d_z
    out = []
    for _ in range(samples):
        noise = torch.randn(1, horizon, d_z, generator=rng, dtype=ctx.dtype)
        noise = noise.expand(ctx.shape[0], -1, -1)
        preds = [generator.rollout(ctx[i:i + batch_size], noise[i:i + batch_size])
                 for i in range(0, ctx.shape[0], batch_size)]
        out.append(torch.cat(preds))
    return torch.stack(out)


def evaluate_run(checkpoint, windows, samples_per_input=5, seed=0, model_name="Ours",
                 per_frame=True):
    """Best-of-k and mean metrics over ``samples_per_input`` prior samples."""
    if samples_per_input < 1:
        raise ValueError("samples_per_input must be >= 1")
    if not windows:
        raise ValueError("empty test set")
    if isinstance(checkpoint, Trainer):
        gen, cfg = checkpoint.generator, checkpoint.cfg
    elif isinstance(checkpoint, Generator):
        gen, cfg = checkpoint, None
    else:
        gen, cfg, _ = load_generator(checkpoint)
    dtype = next(gen.parameters()).dtype
    was_training = gen.training
    gen.eval()
    ctx, tgt = windows_to_tensors(windows, dtype)
    preds = sample_predictions(gen, ctx, tgt.shape[1], samples_per_input, seed)
    gen.train(was_training)
    tgt_np = to_numpy(tgt)
    rows, per_step = [], {"mse": [], "psnr": [], "ssim": []}
    for i, (c, t) in enumerate(windows):
        per_sample = [frame_metrics(to_numpy(preds[j, i:i + 1])[0], tgt_np[i])
                      for j in range(samples_per_input)]
        mses = np.array([np.mean(s[0]) for s in per_sample])
        if per_frame:
            psnrs = np.array([np.mean(s[1]) for s in per_sample])
        else:
            psnrs = np.array([psnr_from_mse(e) for e in mses])
        ssims = np.array([np.mean(s[2]) for s in per_sample])
        rows.append({"id": t.id, "mse": float(mses.mean()), "mse_x1e3": float(mses.mean() * 1e3),
                     "psnr": float(psnrs.mean()), "ssim": float(ssims.mean()),
                     "best_mse": float(mses.min()), "best_psnr": float(psnrs.max()),
                     "best_ssim": float(ssims.max())})
        for j, name in enumerate(("mse", "psnr", "ssim")):
            per_step[name].append(np.mean([s[j] for s in per_sample], axis=0))
    per_step = {k: np.mean(v, axis=0) for k, v in per_step.items()}
    task = cfg.task if cfg is not None else f"{ctx.shape[1]}->{tgt.shape[1]}"
    return MetricsReport(task, model_name, rows, per_step, samples_per_input)
