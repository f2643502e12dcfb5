"""MSE / PSNR / SSIM and the per-run metrics report.

Images are float arrays in [0, 1]. Accepted layouts: ``[H, W]``,
``[H, W, C]`` and ``[T, H, W, C]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import VideoSequence
from .errors import ShapeMismatchError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _arr(x):
    if isinstance(x, VideoSequence):
        x = x.frames
    return np.asarray(x, dtype=np.float64)


def _pair(pred, target):
    p, t = _arr(pred), _arr(target)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"pred {p.shape} vs target {t.shape}")
    return p, t


def mse(pred, target):
    p, t = _pair(pred, target)
    return float(np.mean((p - t) ** 2))


def psnr_from_mse(err, peak=1.0):
    if err < 1e-10:
        return PSNR_CAP
    return float(10.0 * math.log10(peak ** 2 / err))


def psnr(pred, target, peak=1.0):
    """``10 log10(peak^2 / mse)`` in dB, capped at 100 dB for near-zero error."""
    return psnr_from_mse(mse(pred, target), peak)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _as_frames(x):
    """Reshape to ``[N, H, W]`` planes (frames x channels)."""
    if x.ndim == 2:
        return x[None]
    if x.ndim == 3:
        return np.moveaxis(x, -1, 0)
    if x.ndim == 4:
        return np.moveaxis(x, -1, 1).reshape(-1, x.shape[1], x.shape[2])
    raise ShapeMismatchError(f"unsupported image shape {x.shape}")


def _filter_valid(x, g):
    # separable 'valid' correlation over the last two axes
    x = sliding_window_view(x, g.size, axis=-2) @ g
    return sliding_window_view(x, g.size, axis=-1) @ g


def ssim_map(pred, target, data_range=1.0):
    p, t = _pair(pred, target)
    p, t = _as_frames(p), _as_frames(t)
    if p.shape[-1] < SSIM_WINDOW or p.shape[-2] < SSIM_WINDOW:
        raise ShapeMismatchError(f"SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_p, mu_t = _filter_valid(p, g), _filter_valid(t, g)
    var_p = _filter_valid(p * p, g) - mu_p ** 2
    var_t = _filter_valid(t * t, g) - mu_t ** 2
    cov = _filter_valid(p * t, g) - mu_p * mu_t
    num = (2 * mu_p * mu_t + c1) * (2 * cov + c2)
    den = (mu_p ** 2 + mu_t ** 2 + c1) * (var_p + var_t + c2)
    return num / den


def ssim(pred, target, data_range=1.0):
    """Mean single-scale SSIM (11x11 Gaussian window, sigma 1.5) over windows,
    channels and time."""
    return float(np.mean(ssim_map(pred, target, data_range)))


def frame_metrics(pred, target):
    """Per-frame ``(mse, psnr, ssim)`` arrays for ``[T, H, W, C]`` clips."""
    p, t = _pair(pred, target)
    if p.ndim != 4:
        raise ShapeMismatchError("frame_metrics expects [T, H, W, C] clips")
    mses = np.mean((p - t) ** 2, axis=(1, 2, 3))
    psnrs = np.array([psnr_from_mse(e) for e in mses])
    ssims = ssim_map(p, t).reshape(p.shape[0], -1).mean(axis=1)
    return mses, psnrs, ssims


def sequence_metrics(pred, target, per_frame=True):
    """``(mse, psnr, ssim)`` for one clip; PSNR is per-frame-then-averaged unless
    ``per_frame=False`` (whole-clip MSE)."""
    mses, psnrs, ssims = frame_metrics(pred, target)
    m = float(np.mean(mses))
    p = float(np.mean(psnrs)) if per_frame else psnr_from_mse(m)
    return m, p, float(np.mean(ssims))


# --------------------------------------------------------------------------
# report

@dataclass
class MetricsReport:
    task: str
    model: str = "Ours"
    per_sequence: list = field(default_factory=list)
    per_step: dict = field(default_factory=dict)
    samples_per_input: int = 1

    @property
    def columns(self):
        return list(self.per_sequence[0].keys()) if self.per_sequence else []

    @property
    def aggregate(self):
        return {c: float(np.mean([r[c] for r in self.per_sequence]))
                for c in self.columns if c != "id"}

    def table_rows(self):
        agg = self.aggregate
        rows = [(self.model, agg["mse"] * 1e3, agg["psnr"], agg["ssim"])]
        if "best_psnr" in agg:
            rows[0] = (f"{self.model} (mean)",) + rows[0][1:]
            rows.append((f"{self.model} (best of {self.samples_per_input})",
                         agg["best_mse"] * 1e3, agg["best_psnr"], agg["best_ssim"]))
        return rows

    def format_table(self):
        """Plain-text table with columns Model, MSE, PSNR, SSIM (MSE in 1e-3 units)."""
        rows = self.table_rows()
        names = ["Model"] + [r[0] for r in rows]
        w = max(len(n) for n in names) + 2
        lines = [f"Task {self.task}  (MSE x 1e-3 on [0,1] pixels, PSNR dB)",
                 f"{'Model':<{w}}{'MSE':>10}{'PSNR':>10}{'SSIM':>10}"]
        lines.append("-" * len(lines[1]))
        for name, m, p, s in rows:
            lines.append(f"{name:<{w}}{m:>10.2f}{p:>10.2f}{s:>10.4f}")
        return "\n".join(lines)

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.columns)
            w.writeheader()
            for row in self.per_sequence:
                w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
        return path

    def save_plots(self, out_dir):
        """One PNG per metric, mean value against prediction timestep."""
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        out_dir = Path(out_dir)
        paths = []
        for name, values in self.per_step.items():
            fig, ax = plt.subplots(figsize=(4, 3))
            ax.plot(np.arange(1, len(values) + 1), values, marker="o")
            ax.set_xlabel("prediction step")
            ax.set_ylabel(name.upper())
            ax.set_title(f"{self.model} {self.task}")
            fig.tight_layout()
            p = out_dir / f"{name}_per_step.png"
            fig.savefig(p, dpi=100)
            plt.close(fig)
            paths.append(p)
        return paths


def evaluate(preds, targets, task_label, ids=None, model_name="Ours", per_frame=True):
    """Score aligned lists of predicted and true clips."""
    if len(preds) == 0 or len(preds) != len(targets):
        raise ShapeMismatchError(
            f"need aligned, nonempty prediction/target lists ({len(preds)} vs {len(targets)})")
    rows, steps = [], []
    for i, (p, t) in enumerate(zip(preds, targets)):
        sid = ids[i] if ids is not None else getattr(t, "id", None) or f"seq{i}"
        mses, psnrs, ssims = frame_metrics(p, t)
        m = float(np.mean(mses))
        rows.append({"id": sid, "mse": m, "mse_x1e3": m * 1e3,
                     "psnr": float(np.mean(psnrs)) if per_frame else psnr_from_mse(m),
                     "ssim": float(np.mean(ssims))})
        steps.append((mses, psnrs, ssims))
    per_step = {}
    if len({len(s[0]) for s in steps}) == 1:
        for j, name in enumerate(("mse", "psnr", "ssim")):
            per_step[name] = np.mean([s[j] for s in steps], axis=0)
    return MetricsReport(task_label, model_name, rows, per_step)
