"""Video sequences, procedural bouncing-sprite generation, frame-directory
I/O and (context, target) windowing.

Frames are stored as float32 arrays of shape ``[T, H, W, C]`` with values in
``[0, 1]``.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from .errors import InvalidSpecError, MissingFrameError, ShapeMismatchError

logger = logging.getLogger(__name__)

FRAME_PATTERN = "frame_{:05d}.png"
_FRAME_RE = re.compile(r"^frame_(\d{5})\.png$")


@dataclass
class VideoSequence:
    frames: np.ndarray
    id: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 4:
            raise ShapeMismatchError(f"expected [T, H, W, C] frames, got shape {frames.shape}")
        t, h, w, c = frames.shape
        if t < 1 or h < 8 or w < 8 or c not in (1, 3):
            raise ShapeMismatchError(f"invalid video shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain non-finite values")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise ValueError("frame values must lie in [0, 1]")
        self.frames = frames

    def __len__(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape

    def segment(self, start, stop, suffix=None):
        sid = self.id if suffix is None else f"{self.id}{suffix}"
        return VideoSequence(self.frames[start:stop], sid)


# --------------------------------------------------------------------------
# glyphs

# Digit strokes as polylines on a unit box (x right, y down).
_DIGIT_STROKES = {
    0: [[(0.5, 0.08), (0.78, 0.2), (0.85, 0.5), (0.78, 0.8), (0.5, 0.92),
         (0.22, 0.8), (0.15, 0.5), (0.22, 0.2), (0.5, 0.08)]],
    1: [[(0.35, 0.25), (0.55, 0.08), (0.55, 0.92)], [(0.35, 0.92), (0.75, 0.92)]],
    2: [[(0.2, 0.25), (0.4, 0.08), (0.7, 0.1), (0.8, 0.3), (0.7, 0.5),
         (0.2, 0.92), (0.85, 0.92)]],
    3: [[(0.2, 0.12), (0.75, 0.12), (0.45, 0.45), (0.75, 0.6), (0.75, 0.82),
         (0.5, 0.92), (0.2, 0.85)]],
    4: [[(0.65, 0.92), (0.65, 0.08), (0.15, 0.65), (0.85, 0.65)]],
    5: [[(0.8, 0.1), (0.25, 0.1), (0.22, 0.45), (0.6, 0.42), (0.8, 0.62),
         (0.7, 0.88), (0.45, 0.93), (0.2, 0.85)]],
    6: [[(0.7, 0.1), (0.35, 0.3), (0.2, 0.65), (0.35, 0.9), (0.65, 0.9),
         (0.8, 0.7), (0.6, 0.5), (0.3, 0.55), (0.2, 0.65)]],
    7: [[(0.15, 0.1), (0.85, 0.1), (0.4, 0.92)], [(0.35, 0.5), (0.7, 0.5)]],
    8: [[(0.5, 0.48), (0.25, 0.3), (0.5, 0.08), (0.75, 0.3), (0.5, 0.48),
         (0.2, 0.7), (0.5, 0.92), (0.8, 0.7), (0.5, 0.48)]],
    9: [[(0.78, 0.45), (0.5, 0.52), (0.22, 0.35), (0.4, 0.1), (0.7, 0.12),
         (0.8, 0.35), (0.7, 0.7), (0.35, 0.92)]],
}


def render_digit(digit, size=28, supersample=4):
    """Render one anti-aliased digit glyph as a ``[size, size]`` float array."""
    big = size * supersample
    img = Image.new("L", (big, big), 0)
    draw = ImageDraw.Draw(img)
    width = max(1, round(0.12 * big))
    for stroke in _DIGIT_STROKES[digit]:
        pts = [(x * (big - 1), y * (big - 1)) for x, y in stroke]
        draw.line(pts, fill=255, width=width, joint="curve")
        r = width / 2
        for x, y in (pts[0], pts[-1]):
            draw.ellipse([x - r, y - r, x + r, y + r], fill=255)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr.reshape(size, supersample, size, supersample).mean(axis=(1, 3))


def builtin_glyphs(size=28):
    """The default glyph set: procedurally drawn digits 0-9."""
    return [render_digit(d, size) for d in range(10)]


def load_glyph_dir(path):
    """Load every PNG in ``path`` (sorted by name) as a grayscale stamp."""
    files = sorted(Path(path).glob("*.png"))
    if not files:
        raise MissingFrameError(f"no glyph images in {path}")
    return [np.asarray(Image.open(f).convert("L"), dtype=np.float32) / 255.0 for f in files]


# --------------------------------------------------------------------------
# bouncing sprites

@dataclass
class MovingSpriteSpec:
    canvas: tuple = (64, 64)
    n_sprites: int = 2
    speed: float = 3.0
    glyphs: list | None = None
    seed: int = 0
    glyph_size: int = 28

    def __post_init__(self):
        self.canvas = tuple(int(v) for v in self.canvas)
        if self.speed <= 0:
            raise InvalidSpecError(f"speed must be positive, got {self.speed}")
        if self.n_sprites < 1:
            raise InvalidSpecError("n_sprites must be >= 1")
        h, w = self.canvas
        for g in self.resolved_glyphs():
            if g.shape[0] > h or g.shape[1] > w:
                raise InvalidSpecError(f"glyph {g.shape} larger than canvas {self.canvas}")

    def resolved_glyphs(self):
        if self.glyphs is None:
            self.glyphs = builtin_glyphs(self.glyph_size)
        return self.glyphs

    def to_dict(self):
        """JSON-safe description; custom glyphs are summarized, not embedded."""
        return {
            "canvas": list(self.canvas),
            "n_sprites": self.n_sprites,
            "speed": self.speed,
            "seed": self.seed,
            "glyph_size": self.glyph_size,
            "glyphs": "builtin" if self.glyphs is None else f"custom[{len(self.glyphs)}]",
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        glyphs = d.pop("glyphs", None)
        if isinstance(glyphs, str) and glyphs not in ("builtin",) and not glyphs.startswith("custom"):
            d["glyphs"] = load_glyph_dir(glyphs)
        return cls(**d)


def reflect_step(pos, vel, upper):
    """Advance one coordinate by ``vel`` with specular reflection in
    ``[0, upper]``. Returns ``(pos', vel')``."""
    if upper <= 0:
        return 0.0, vel
    pos = pos + vel
    while pos < 0 or pos > upper:
        if pos > upper:
            pos = 2 * upper - pos
        else:
            pos = -pos
        vel = -vel
    return pos, vel


@dataclass
class Sprite:
    glyph: np.ndarray
    y: float
    x: float
    vy: float
    vx: float


def render_sprites(sprites: Sequence[Sprite], canvas, length, seq_id=""):
    """Roll the sprites forward ``length`` frames and composite them by
    per-pixel maximum. Sprites are advanced in place."""
    if length < 1:
        raise InvalidSpecError("length must be >= 1")
    h, w = canvas
    frames = np.zeros((length, h, w, 1), dtype=np.float32)
    for t in range(length):
        for s in sprites:
            gh, gw = s.glyph.shape
            oy = min(max(int(math.floor(s.y + 0.5)), 0), h - gh)
            ox = min(max(int(math.floor(s.x + 0.5)), 0), w - gw)
            patch = frames[t, oy:oy + gh, ox:ox + gw, 0]
            np.maximum(patch, s.glyph, out=patch)
            s.y, s.vy = reflect_step(s.y, s.vy, h - gh)
            s.x, s.vx = reflect_step(s.x, s.vx, w - gw)
    return VideoSequence(np.clip(frames, 0.0, 1.0), seq_id)


def init_sprites(spec: MovingSpriteSpec, rng=None):
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    glyphs = spec.resolved_glyphs()
    h, w = spec.canvas
    sprites = []
    for _ in range(spec.n_sprites):
        g = glyphs[int(rng.integers(len(glyphs)))]
        angle = rng.uniform(0.0, 2 * math.pi)
        sprites.append(Sprite(
            glyph=g,
            y=float(rng.uniform(0, h - g.shape[0])),
            x=float(rng.uniform(0, w - g.shape[1])),
            vy=spec.speed * math.sin(angle),
            vx=spec.speed * math.cos(angle),
        ))
    return sprites


def generate_moving_sprites(spec: MovingSpriteSpec, length: int, seq_id=None) -> VideoSequence:
    """Generate one bouncing-sprite sequence; a pure function of ``(spec, length)``."""
    sprites = init_sprites(spec)
    return render_sprites(sprites, spec.canvas, length, seq_id or f"sprites-{spec.seed}")


def generate_dataset(spec: MovingSpriteSpec, count, length, first_index=0):
    """Sequence ``i`` is generated with seed ``spec.seed + first_index + i``, so
    disjoint index ranges give disjoint train/test splits."""
    out = []
    for i in range(first_index, first_index + count):
        sub = MovingSpriteSpec(spec.canvas, spec.n_sprites, spec.speed,
                               spec.resolved_glyphs(), spec.seed + i, spec.glyph_size)
        out.append(generate_moving_sprites(sub, length, f"seq{i:05d}"))
    return out


def bimodal_sprite_sequences(count, canvas=(32, 32), context_len=5, horizon=5,
                             speed=2.0, glyph=None, seed=0):
    """Toy set with two equally likely futures for one shared context.

    The sprite rests at the canvas centre for ``context_len`` frames, then
    moves left or right at ``speed`` px/step. Returns ``(sequences, directions)``
    with direction +1 for rightward and -1 for leftward motion.
    """
    glyph = render_digit(0, 10) if glyph is None else glyph
    gh, gw = glyph.shape
    h, w = canvas
    rng = np.random.default_rng(seed)
    seqs, dirs = [], []
    for i in range(count):
        d = 1 if rng.random() < 0.5 else -1
        s = Sprite(glyph, (h - gh) / 2, (w - gw) / 2, 0.0, 0.0)
        still = render_sprites([s], canvas, context_len).frames
        s.vx = d * speed
        s.x, s.vx = reflect_step(s.x, s.vx, w - gw)
        moving = render_sprites([s], canvas, horizon).frames
        seqs.append(VideoSequence(np.concatenate([still, moving]), f"bimodal{i:05d}"))
        dirs.append(d)
    return seqs, np.array(dirs)


# --------------------------------------------------------------------------
# frame directories

def _to_uint8(frame):
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_frame_dir(seq: VideoSequence, path):
    """Write ``frame_00001.png`` ... as 8-bit PNGs."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(seq.frames, start=1):
        img = _to_uint8(frame)
        img = img[..., 0] if img.shape[-1] == 1 else img
        Image.fromarray(img).save(path / FRAME_PATTERN.format(t))
    return path


def load_frame_dir(path, seq_id=None) -> VideoSequence:
    path = Path(path)
    indexed = {}
    for f in path.iterdir() if path.is_dir() else []:
        m = _FRAME_RE.match(f.name)
        if m:
            indexed[int(m.group(1))] = f
    if not indexed:
        raise MissingFrameError(f"no frame_%05d.png files in {path}")
    idx = sorted(indexed)
    expected = list(range(1, len(idx) + 1))
    if idx != expected:
        missing = sorted(set(range(1, idx[-1] + 1)) - set(idx))
        raise MissingFrameError(f"{path}: missing frame indices {missing[:10]}")
    frames = []
    for i in idx:
        img = Image.open(indexed[i])
        if img.mode not in ("L", "RGB"):
            img = img.convert("L" if img.mode in ("I", "I;16", "1", "LA") else "RGB")
        arr = np.asarray(img, dtype=np.float32) / 255.0
        if arr.ndim == 2:
            arr = arr[..., None]
        if frames and arr.shape != frames[0].shape:
            raise ShapeMismatchError(
                f"{indexed[i].name} has shape {arr.shape}, expected {frames[0].shape}")
        frames.append(arr)
    return VideoSequence(np.stack(frames), seq_id or path.name)


def export_dataset(seqs, out_dir, spec=None):
    """Write each sequence to ``out_dir/<id>/`` plus a ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for seq in seqs:
        save_frame_dir(seq, out_dir / seq.id)
        entries.append({"id": seq.id, "length": len(seq)})
    manifest = {"sequences": entries, "spec": spec.to_dict() if spec is not None else None}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out_dir / "manifest.json"


def load_dataset(path):
    """Load every sequence listed in ``manifest.json``; without a manifest,
    every subdirectory holding frames is loaded in name order."""
    path = Path(path)
    manifest = path / "manifest.json"
    if manifest.exists():
        ids = [e["id"] for e in json.loads(manifest.read_text())["sequences"]]
    else:
        ids = sorted(p.name for p in path.iterdir() if p.is_dir()) if path.is_dir() else []
    return [load_frame_dir(path / i, i) for i in ids]


# --------------------------------------------------------------------------
# windowing

@dataclass(frozen=True)
class WindowSpec:
    context_len: int = 10
    horizon: int = 10
    stride: int = 1

    def __post_init__(self):
        if self.context_len < 1 or self.horizon < 1 or self.stride < 1:
            raise InvalidSpecError(f"window lengths and stride must be >= 1: {self}")


@dataclass
class WindowStats:
    short_sequences: int = 0
    skipped_ids: list = field(default_factory=list)


def make_windows(seq: VideoSequence, spec: WindowSpec, stats: WindowStats | None = None):
    """Cut ``(context, target)`` pairs at offsets ``0, stride, 2*stride, ...``.

    A sequence shorter than ``n + m`` yields no windows; it is logged and
    counted in ``stats`` rather than raising.
    """
    n, m = spec.context_len, spec.horizon
    if len(seq) < n + m:
        logger.warning("sequence %r too short for %d->%d windows (T=%d)", seq.id, n, m, len(seq))
        if stats is not None:
            stats.short_sequences += 1
            stats.skipped_ids.append(seq.id)
        return []
    out = []
    for off in range(0, len(seq) - n - m + 1, spec.stride):
        ctx = seq.segment(off, off + n, f"@{off}")
        tgt = seq.segment(off + n, off + n + m, f"@{off}")
        out.append((ctx, tgt))
    return out


def window_all(seqs, spec: WindowSpec):
    stats = WindowStats()
    windows = [w for s in seqs for w in make_windows(s, spec, stats)]
    return windows, stats


def stack_windows(windows):
    """Stack windows into ``(context [B, n, H, W, C], target [B, m, H, W, C])``."""
    ctx = np.stack([c.frames for c, _ in windows])
    tgt = np.stack([t.frames for _, t in windows])
    return ctx, tgt
