import json

import pytest

from vidpred.cli import main


def tiny_config(tmp_path, **over):
    d = {"generator": {"height": 16, "width": 16, "n_scales": 2, "base_channels": 4,
                       "context_len": 3, "horizon": 3, "d_z": 2, "capacity": 3},
         "dataset": {"n_sprites": 1, "glyph_size": 8, "speed": 2.0, "train_count": 6,
                     "val_count": 2},
         "batch_size": 4, "steps": 2, "val_every": 1, "manifold_dim": 4, "disc_width": 4,
         "encoder_width": 4, "autoencoder_steps": 3}
    for k, v in over.items():
        if isinstance(v, dict):
            d.setdefault(k, {}).update(v)
        else:
            d[k] = v
    p = tmp_path / "config.json"
    p.write_text(json.dumps(d))
    return str(p)


def spec_file(tmp_path):
    p = tmp_path / "spec.json"
    p.write_text(json.dumps({"canvas": [16, 16], "n_sprites": 1, "glyph_size": 8, "speed": 2.0}))
    return str(p)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """gen-data + train once; reused by the predict/evaluate/report cases."""
    tmp = tmp_path_factory.mktemp("cli")
    data = tmp / "data"
    assert main(["gen-data", "--spec", spec_file(tmp), "--out", str(data), "--count", "3",
                 "--length", "6"]) == 0
    assert main(["train", "--config", tiny_config(tmp), "--out", str(tmp / "run")]) == 0
    return tmp, data, tmp / "run" / "checkpoint.ckpt"


# -- exit code matrix -----------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    [],
    ["fly"],
    ["gen-data", "--out", "x"],
    ["gen-data", "--out", "x", "--count", "1", "--bogus"],
    ["evaluate", "--checkpoint", "c"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "gen-data" in capsys.readouterr().out


def test_bad_config_names_field(tmp_path, capsys):
    cfg = tiny_config(tmp_path, generator={"bogus_knob": 3})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "r")]) == 2
    assert "generator.bogus_knob" in capsys.readouterr().err


def test_missing_dataset_path_exit_2(tmp_path, capsys):
    cfg = tiny_config(tmp_path, dataset={"kind": "frame_dir", "path": str(tmp_path / "none")})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "r")]) == 2
    assert "dataset.path" in capsys.readouterr().err


def test_missing_config_file_exit_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "no.json"), "--out", str(tmp_path)]) == 2


def test_bad_spec_exit_2(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"speed": -1}))
    assert main(["gen-data", "--spec", str(p), "--out", str(tmp_path / "d"), "--count", "1"]) == 2


def test_unwritable_output_exit_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["gen-data", "--out", str(blocker / "sub"), "--count", "1"]) == 1


# -- gen-data -------------------------------------------------------------------------

def test_gen_data_count_zero(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path), "--count", "0"]) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["sequences"] == []


def test_gen_data_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--spec", spec_file(tmp_path), "--out", str(tmp_path / name),
                     "--count", "3", "--length", "4", "--seed", "7"]) == 0
    a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.png"))
    b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*.png"))
    assert a == b and len(a) == 12
    assert len([p for p in (tmp_path / "a").iterdir() if p.is_dir()]) == 3
    for rel in a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_global_seed_position(tmp_path):
    assert main(["--seed", "3", "gen-data", "--out", str(tmp_path / "g"), "--count", "1",
                 "--length", "2"]) == 0
    assert json.loads((tmp_path / "g" / "manifest.json").read_text())["spec"]["seed"] == 3


# -- train / evaluate / predict / report ------------------------------------------------

def test_train_steps_zero(tmp_path):
    assert main(["train", "--config", tiny_config(tmp_path, steps=0),
                 "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "checkpoint.ckpt").is_file()


def test_train_resume_continues(run, tmp_path, capsys):
    tmp, _, ckpt = run
    cfg = tiny_config(tmp_path, steps=3)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "r"), "--resume", str(ckpt)]) == 0
    assert "step 3 " in capsys.readouterr().out


def test_pretrain_ae_then_train(tmp_path):
    cfg = tiny_config(tmp_path)
    ae = tmp_path / "ae.ckpt"
    assert main(["pretrain-ae", "--config", cfg, "--out", str(ae)]) == 0
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "r"), "--autoencoder", str(ae),
                 "--steps", "1"]) == 0
    assert not (tmp_path / "r" / "autoencoder.ckpt").exists()


def test_evaluate_outputs(run, tmp_path, capsys):
    _, data, ckpt = run
    out = tmp_path / "eval"
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(data), "--task", "3->3",
                 "--samples", "1", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert printed.splitlines()[1].split() == ["Model", "MSE", "PSNR", "SSIM"]
    assert (out / "table.txt").read_text().strip() == printed.strip()
    assert {"metrics.csv", "mse_per_step.png", "psnr_per_step.png", "ssim_per_step.png",
            "summary.json"} <= {p.name for p in out.iterdir()}
    agg = json.loads((out / "summary.json").read_text())["aggregate"]
    for k in ("mse", "psnr", "ssim"):
        assert agg[f"best_{k}"] == agg[k]


def test_evaluate_task_mismatch_exit_1(run, tmp_path):
    _, data, ckpt = run
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(data), "--task", "3->4",
                 "--out", str(tmp_path)]) == 1


def test_evaluate_empty_data_exit_1(run, tmp_path):
    _, _, ckpt = run
    (tmp_path / "empty").mkdir()
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(tmp_path / "empty"),
                 "--task", "3->3", "--out", str(tmp_path / "o")]) == 1


def test_evaluate_missing_checkpoint_exit_1(run, tmp_path):
    _, data, _ = run
    assert main(["evaluate", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(data),
                 "--task", "3->3", "--out", str(tmp_path / "o")]) == 1


def test_evaluate_bad_task_syntax_exit_2(run, tmp_path):
    _, data, ckpt = run
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(data), "--task", "ten",
                 "--out", str(tmp_path)]) == 2


def test_evaluate_reproducible(run, tmp_path):
    _, data, ckpt = run
    for name in ("a", "b"):
        assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(data), "--task", "3->3",
                     "--samples", "3", "--seed", "5", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_predict_writes_samples(run, tmp_path):
    _, data, ckpt = run
    out = tmp_path / "pred"
    assert main(["predict", "--checkpoint", str(ckpt), "--data", str(data), "--out", str(out),
                 "--samples", "2", "--gif"]) == 0
    seq_dirs = sorted(p for p in out.iterdir() if p.is_dir())
    assert len(seq_dirs) == 3
    assert len(list((seq_dirs[0] / "sample_01").glob("frame_*.png"))) == 3
    assert len(list(out.glob("*.gif"))) == 3


def test_report_combines(run, tmp_path, capsys):
    tmp, data, ckpt = run
    out = tmp_path / "eval"
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(data), "--task", "3->3",
                 "--samples", "2", "--out", str(out), "--model-name", "Tiny"]) == 0
    capsys.readouterr()
    assert main(["report", str(out), str(tmp / "run"), "--out", str(tmp_path / "t.txt")]) == 0
    text = capsys.readouterr().out
    assert "Tiny (best of 2)" in text
    assert (tmp / "run" / "losses.png").is_file()
    assert main(["report", str(tmp_path / "nothing")]) == 1
