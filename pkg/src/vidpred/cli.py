"""Command-line entry point: ``vidpred <command> [flags]``.

Exit codes: 0 on success, 1 for runtime failures (bad data, missing files,
task mismatch), 2 for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, VidPredError

logger = logging.getLogger("vidpred")


class UsageError(Exception):
    pass


def _load_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read {what} {path}: {e}", what) from e


def _load_config(args):
    from .config import ModelConfig

    d = _load_json(args.config, "config")
    if not isinstance(d, dict):
        raise ConfigurationError("config must be a JSON object", "config")
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        d["steps"] = args.steps
    return ModelConfig.from_dict(d)


def _parse_task(text):
    try:
        n, m = (int(v) for v in text.split("->"))
    except ValueError:
        raise UsageError(f"task must look like '10->10', got {text!r}") from None
    if n < 1 or m < 1:
        raise UsageError(f"task lengths must be positive, got {text!r}")
    return n, m


# --------------------------------------------------------------------------
# commands

def cmd_gen_data(args):
    from .data import MovingSpriteSpec, export_dataset, generate_dataset

    d = _load_json(args.spec, "spec") if args.spec else {}
    if args.seed is not None:
        d["seed"] = args.seed
    try:
        spec = MovingSpriteSpec.from_dict(d)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"bad sprite spec: {e}", "spec") from e
    if args.count < 0 or args.length < 1:
        raise UsageError("--count must be >= 0 and --length >= 1")
    seqs = generate_dataset(spec, args.count, args.length, first_index=args.first_index)
    manifest = export_dataset(seqs, args.out, spec)
    print(f"wrote {len(seqs)} sequences to {args.out} ({manifest.name})")


def cmd_pretrain_ae(args):
    from .train import pretrain_from_config, save_autoencoder

    cfg = _load_config(args)
    enc, dec, report = pretrain_from_config(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_autoencoder(out, enc, dec, report)
    print(f"autoencoder: held-out MSE {report['init_error']:.5f} -> {report['final_error']:.5f}")
    print(f"digest {enc.digest()}  saved to {out}")


def cmd_train(args):
    from .train import fit

    cfg = _load_config(args)
    res = fit(cfg, args.out, autoencoder=args.autoencoder, resume=args.resume)
    last = res.val_history[-1][1] if res.val_history else float("nan")
    print(f"step {res.trainer.step}  val_l1 {last:.5f}  checkpoint {res.checkpoint}")


def cmd_predict(args):
    from PIL import Image

    from .data import VideoSequence, export_dataset, load_dataset
    from .generator import to_numpy, to_tensor
    from .train import load_generator, sample_predictions

    gen, cfg, _ = load_generator(args.checkpoint)
    n = cfg.generator.context_len
    horizon = args.horizon or cfg.generator.horizon
    seqs = load_dataset(args.data)
    if not seqs:
        raise VidPredError(f"no sequences found in {args.data}")
    out = Path(args.out)
    written = 0
    for seq in seqs:
        if len(seq) < n:
            logger.warning("skipping %s: %d frames < context %d", seq.id, len(seq), n)
            continue
        ctx = to_tensor(seq.frames[:n])
        preds = sample_predictions(gen, ctx, horizon, args.samples, args.seed or 0)
        outs = [VideoSequence(to_numpy(preds[j])[0], f"sample_{j:02d}")
                for j in range(args.samples)]
        export_dataset(outs, out / seq.id)
        if args.gif:
            clip = np.concatenate([seq.frames[:n], outs[0].frames])
            imgs = [Image.fromarray(np.round(f[..., 0] * 255).astype(np.uint8)
                                    if f.shape[-1] == 1 else np.round(f * 255).astype(np.uint8))
                    for f in clip]
            imgs[0].save(out / f"{seq.id}.gif", save_all=True, append_images=imgs[1:],
                         duration=120, loop=0)
        written += 1
    if written == 0:
        raise VidPredError("every sequence was shorter than the context length")
    print(f"wrote {args.samples} prediction(s) for {written} sequence(s) to {out}")


def cmd_evaluate(args):
    from .data import WindowSpec, load_dataset, window_all
    from .train import evaluate_run, load_generator

    n, m = _parse_task(args.task)
    gen, cfg, header = load_generator(args.checkpoint)
    if (n, m) != (cfg.generator.context_len, cfg.generator.horizon):
        raise VidPredError(f"checkpoint was trained for {cfg.task}, not {n}->{m}")
    data = Path(args.data)
    if not data.is_dir():
        raise VidPredError(f"data directory {data} not found")
    seqs = load_dataset(data)
    windows, stats = window_all(seqs, WindowSpec(n, m, n + m))
    if not windows:
        raise VidPredError(f"no {n}->{m} windows in {data} "
                           f"({len(seqs)} sequences, {stats.short_sequences} too short)")
    report = evaluate_run(gen, windows, args.samples, args.seed or 0, args.model_name,
                          per_frame=not args.clip_metrics)
    report.task = args.task
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "metrics.csv")
    table = report.format_table()
    (out / "table.txt").write_text(table + "\n")
    report.save_plots(out)
    summary = {"task": report.task, "model": report.model, "samples": args.samples,
               "checkpoint_step": header["step"], "aggregate": report.aggregate,
               "sequences": len(report.per_sequence)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(table)


def cmd_report(args):
    """Merge evaluation summaries into one table per task; plot training logs."""
    from .metrics import MetricsReport

    tables, plotted = {}, []
    for p in map(Path, args.runs):
        if (p / "summary.json").is_file():
            s = json.loads((p / "summary.json").read_text())
            with open(p / "metrics.csv", newline="") as fh:
                rows = [{k: (v if k == "id" else float(v)) for k, v in r.items()}
                        for r in csv.DictReader(fh)]
            rep = MetricsReport(s["task"], s["model"], rows, {}, s["samples"])
            tables.setdefault(s["task"], []).append(rep)
        elif (p / "train_log.csv").is_file():
            plotted.append(_plot_log(p))
        else:
            raise VidPredError(f"{p} holds neither an evaluation nor a training run")
    lines = []
    for task, reps in tables.items():
        head = reps[0].format_table().splitlines()
        lines += head[:3]
        for r in reps:
            lines += r.format_table().splitlines()[3:]
        lines.append("")
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    for p in plotted:
        print(f"loss curves: {p}")


def _plot_log(run_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(run_dir / "train_log.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = [int(r["step"]) for r in rows]
    for key in ("l1", "kl", "mggan1", "mggan2", "combined"):
        ax.plot(steps, [float(r[key]) for r in rows], label=key)
    val = run_dir / "val_log.csv"
    if val.is_file():
        with open(val, newline="") as fh:
            v = list(csv.DictReader(fh))
        ax.plot([int(r["step"]) for r in v], [float(r["val_l1"]) for r in v], "k--",
                label="val l1")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.legend()
    fig.tight_layout()
    out = run_dir / "losses.png"
    fig.savefig(out, dpi=100)
    plt.close(fig)
    return out


# --------------------------------------------------------------------------
# parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="overrides the seed in the spec or config")

    p = argparse.ArgumentParser(prog="vidpred", description="Stochastic video prediction toolkit.")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="render a moving-sprite dataset")
    s.add_argument("--spec", help="JSON sprite spec (canvas, n_sprites, speed, glyph_size, seed)")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--length", type=int, default=20)
    s.add_argument("--first-index", type=int, default=0)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("pretrain-ae", parents=[common], help="pretrain and freeze the autoencoder")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="autoencoder checkpoint file")
    s.set_defaults(func=cmd_pretrain_ae)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--autoencoder", help="pretrained autoencoder checkpoint")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--steps", type=int, help="overrides steps in the config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="sample futures for each sequence")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--samples", type=int, default=1)
    s.add_argument("--horizon", type=int)
    s.add_argument("--gif", action="store_true", help="also write context+prediction GIFs")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", parents=[common], help="best-of-k metrics on a dataset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--task", required=True, help='e.g. "10->10"')
    s.add_argument("--samples", type=int, default=5)
    s.add_argument("--out", required=True)
    s.add_argument("--model-name", default="Ours")
    s.add_argument("--clip-metrics", action="store_true",
                   help="PSNR from whole-clip MSE instead of the per-frame mean")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", parents=[common], help="combine evaluation tables, plot logs")
    s.add_argument("runs", nargs="+", help="evaluate output dirs or training run dirs")
    s.add_argument("--out", help="write the combined table here")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "samples", 1) < 1:
        print("vidpred: error: --samples must be >= 1", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except UsageError as e:
        print(f"vidpred: error: {e}", file=sys.stderr)
        return 2
    except ConfigurationError as e:
        field = f" [{e.field}]" if e.field else ""
        print(f"vidpred: configuration error{field}: {e}", file=sys.stderr)
        return 2
    except (VidPredError, OSError, ValueError, RuntimeError) as e:
        print(f"vidpred: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
