import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from vidpred.data import (MovingSpriteSpec, Sprite, VideoSequence, WindowSpec, bimodal_sprite_sequences,
                          builtin_glyphs, export_dataset, generate_dataset, generate_moving_sprites,
                          init_sprites, load_dataset, load_frame_dir, make_windows, reflect_step,
                          render_sprites, save_frame_dir, window_all)
from vidpred.errors import InvalidSpecError, MissingFrameError, ShapeMismatchError


def test_reflection_arithmetic():
    # max offset 64 - 28 = 36; 35 + 3 = 38 reflects to 2*36 - 38
    x, vx = reflect_step(35.0, 3.0, 64 - 28)
    assert x == 34.0
    assert vx == -3.0


def test_reflection_at_zero():
    x, vx = reflect_step(1.0, -3.0, 36)
    assert (x, vx) == (2.0, 3.0)


def test_zero_velocity_is_fixed_point():
    glyph = builtin_glyphs(12)[3]
    seq = render_sprites([Sprite(glyph, 5.0, 9.0, 0.0, 0.0)], (32, 32), 6)
    for t in range(1, 6):
        np.testing.assert_array_equal(seq.frames[t], seq.frames[0])


def test_generation_is_deterministic():
    spec = MovingSpriteSpec(seed=7)
    a = generate_moving_sprites(spec, 20)
    b = generate_moving_sprites(MovingSpriteSpec(seed=7), 20)
    np.testing.assert_array_equal(a.frames, b.frames)
    c = generate_moving_sprites(MovingSpriteSpec(seed=8), 20)
    assert not np.array_equal(a.frames, c.frames)


def test_generated_sequence_invariants():
    seq = generate_moving_sprites(MovingSpriteSpec(seed=1), 30)
    assert seq.shape == (30, 64, 64, 1)
    assert seq.frames.min() >= 0.0 and seq.frames.max() <= 1.0
    assert seq.frames.max() > 0.5


def test_glyph_larger_than_canvas():
    with pytest.raises(InvalidSpecError):
        MovingSpriteSpec(canvas=(16, 16), glyph_size=28)
    with pytest.raises(InvalidSpecError):
        MovingSpriteSpec(speed=0)


def test_overlap_composited_by_max():
    g = np.full((4, 4), 0.3, dtype=np.float32)
    h = np.full((4, 4), 0.8, dtype=np.float32)
    seq = render_sprites([Sprite(g, 2, 2, 0, 0), Sprite(h, 4, 4, 0, 0)], (16, 16), 1)
    f = seq.frames[0, :, :, 0]
    assert f[3, 3] == pytest.approx(0.3)
    assert f[4, 4] == pytest.approx(0.8)
    assert f[5, 5] == pytest.approx(0.8)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), speed=st.floats(0.5, 9.0))
def test_speed_conserved_and_in_bounds(seed, speed):
    spec = MovingSpriteSpec(canvas=(32, 40), n_sprites=2, speed=speed, seed=seed, glyph_size=10)
    sprites = init_sprites(spec)
    for _ in range(60):
        for s in sprites:
            assert math.hypot(s.vx, s.vy) == pytest.approx(speed, abs=1e-9)
            assert 0 <= s.y <= 32 - 10 and 0 <= s.x <= 40 - 10
            oy, ox = math.floor(s.y + 0.5), math.floor(s.x + 0.5)
            assert 0 <= oy <= 22 and 0 <= ox <= 30
            s.y, s.vy = reflect_step(s.y, s.vy, 32 - 10)
            s.x, s.vx = reflect_step(s.x, s.vx, 40 - 10)


def test_dataset_seed_ranges_disjoint():
    spec = MovingSpriteSpec(canvas=(32, 32), glyph_size=10, seed=3)
    train = generate_dataset(spec, 3, 5)
    test = generate_dataset(spec, 2, 5, first_index=3)
    again = generate_dataset(spec, 5, 5)
    np.testing.assert_array_equal(again[3].frames, test[0].frames)
    assert [s.id for s in train] == ["seq00000", "seq00001", "seq00002"]


def test_bimodal_set_shares_context():
    seqs, dirs = bimodal_sprite_sequences(40, context_len=5, horizon=5, seed=0)
    assert set(dirs) == {-1, 1}
    ctx = np.stack([s.frames[:5] for s in seqs])
    np.testing.assert_array_equal(ctx, np.broadcast_to(ctx[0], ctx.shape))
    cols = np.arange(32)
    for s, d in zip(seqs, dirs):
        com0 = (s.frames[4, :, :, 0].sum(0) * cols).sum() / s.frames[4].sum()
        com1 = (s.frames[-1, :, :, 0].sum(0) * cols).sum() / s.frames[-1].sum()
        assert np.sign(com1 - com0) == d


# --------------------------------------------------------------------------
# frame directories

def _write_frames(path, n, size=(64, 64), skip=()):
    path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    img = (rng.random(size) * 255).astype(np.uint8)
    for i in range(1, n + 1):
        if i not in skip:
            Image.fromarray(img).save(path / f"frame_{i:05d}.png")


def test_load_identical_frames(tmp_path):
    _write_frames(tmp_path / "clip", 30)
    seq = load_frame_dir(tmp_path / "clip")
    assert seq.shape == (30, 64, 64, 1)
    for t in range(30):
        np.testing.assert_array_equal(seq.frames[t], seq.frames[0])


def test_load_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(MissingFrameError):
        load_frame_dir(tmp_path / "empty")


def test_load_gap(tmp_path):
    _write_frames(tmp_path / "gap", 5, skip={3})
    with pytest.raises(MissingFrameError, match=r"\[3\]"):
        load_frame_dir(tmp_path / "gap")


def test_load_mixed_dimensions(tmp_path):
    _write_frames(tmp_path / "mix", 2)
    Image.fromarray(np.zeros((32, 32), np.uint8)).save(tmp_path / "mix" / "frame_00003.png")
    with pytest.raises(ShapeMismatchError):
        load_frame_dir(tmp_path / "mix")


def test_rgb_frames_keep_three_channels(tmp_path):
    d = tmp_path / "rgb"
    d.mkdir()
    Image.fromarray(np.full((16, 16, 3), 255, np.uint8)).save(d / "frame_00001.png")
    seq = load_frame_dir(d)
    assert seq.shape == (1, 16, 16, 3)
    assert seq.frames.max() == 1.0


def test_frame_dir_roundtrip_and_manifest(tmp_path):
    spec = MovingSpriteSpec(canvas=(32, 32), glyph_size=10, seed=2)
    seqs = generate_dataset(spec, 3, 6)
    export_dataset(seqs, tmp_path / "ds", spec)
    manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
    assert [e["id"] for e in manifest["sequences"]] == [s.id for s in seqs]
    assert manifest["spec"]["seed"] == 2
    back = load_dataset(tmp_path / "ds")
    for a, b in zip(seqs, back):
        assert np.max(np.abs(a.frames - b.frames)) <= 0.5 / 255 + 1e-7


def test_save_frame_dir_names(tmp_path):
    seq = VideoSequence(np.zeros((3, 8, 8, 1)), "z")
    save_frame_dir(seq, tmp_path / "z")
    assert sorted(p.name for p in (tmp_path / "z").iterdir()) == [
        "frame_00001.png", "frame_00002.png", "frame_00003.png"]


def test_video_sequence_validation():
    with pytest.raises(ValueError):
        VideoSequence(np.full((2, 8, 8, 1), 1.5))
    with pytest.raises(ShapeMismatchError):
        VideoSequence(np.zeros((2, 4, 8, 1)))
    with pytest.raises(ShapeMismatchError):
        VideoSequence(np.zeros((2, 8, 8, 2)))


# --------------------------------------------------------------------------
# windows

def _counting_sequence(t):
    frames = np.zeros((t, 8, 8, 1), np.float32)
    frames[:, 0, 0, 0] = np.arange(t) / 100.0
    return VideoSequence(frames, "count")


@pytest.mark.parametrize("t, stride, expected", [(30, 10, 2), (30, 1, 11), (19, 1, 0), (20, 5, 1)])
def test_window_counts(t, stride, expected):
    assert len(make_windows(_counting_sequence(t), WindowSpec(10, 10, stride))) == expected


def test_window_offsets_and_contiguity():
    seq = _counting_sequence(30)
    wins = make_windows(seq, WindowSpec(10, 10, 10))
    starts = [round(c.frames[0, 0, 0, 0] * 100) for c, _ in wins]
    assert starts == [0, 10]
    for c, t in wins:
        idx = np.round(np.concatenate([c.frames, t.frames])[:, 0, 0, 0] * 100)
        np.testing.assert_array_equal(idx, np.arange(idx[0], idx[0] + 20))


@settings(max_examples=30, deadline=None)
@given(t=st.integers(1, 60), n=st.integers(1, 8), m=st.integers(1, 8))
def test_window_partition_reproduces_prefix(t, n, m):
    seq = _counting_sequence(t)
    wins = make_windows(seq, WindowSpec(n, m, n + m))
    if not wins:
        assert t < n + m
        return
    joined = np.concatenate([np.concatenate([c.frames, g.frames]) for c, g in wins])
    np.testing.assert_array_equal(joined, seq.frames[:len(joined)])
    assert len(joined) == (t // (n + m)) * (n + m)


def test_short_sequence_counted():
    wins, stats = window_all([_counting_sequence(19), _counting_sequence(25)], WindowSpec(10, 10, 1))
    assert len(wins) == 6
    assert stats.short_sequences == 1
