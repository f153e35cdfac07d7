"""Synthetic tracking sequences, crop extraction and contrastive batch sampling.

A sequence shows one textured target moving over a smooth static background.
The target's colours and stripe pattern are drawn from ``seq_id`` alone, so
two frames of one sequence share an appearance that differs from every other
sequence. Motion is a bounded random walk; a global illumination multiplier
and the target scale drift slowly.
"""

from __future__ import annotations

import json
import math
import warnings
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence as SequenceT

import numpy as np
from PIL import Image
from scipy import ndimage

from .boxes import BBox
from .model import NetConfig


@dataclass(frozen=True)
class GenConfig:
    frame_size: int = 160
    target_min: float = 16.0
    target_max: float = 48.0
    speed: float = 2.0  # max centre displacement per frame, px
    accel: float = 0.5  # std of per-frame velocity change, px
    illumination_drift: float = 0.01  # std of per-frame log-brightness step
    illumination_range: tuple[float, float] = (0.7, 1.3)
    scale_drift: float = 0.005  # std of per-frame log-scale step
    scale_range: tuple[float, float] = (0.8, 1.25)
    background_levels: tuple[float, float] = (0.25, 0.75)
    noise: float = 0.01

    def __post_init__(self):
        if self.target_min <= 0 or self.target_max < self.target_min:
            raise ValueError("need 0 < target_min <= target_max")
        if self.target_max * self.scale_range[1] >= self.frame_size:
            raise ValueError("largest target does not fit in the frame")


@dataclass
class Sequence:
    seq_id: int
    frames: np.ndarray  # [L, H, W, 3] float32 in [0, 1], multiples of 1/255
    gt_boxes: list[BBox]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


def _appearance(seq_id: int):
    rng = np.random.default_rng([int(seq_id), 0xD1C1])
    colors = rng.uniform(0.0, 1.0, size=(3, 3))
    freqs = rng.uniform(1.0, 4.0, size=2)
    angles = rng.uniform(0.0, np.pi, size=2)
    phases = rng.uniform(0.0, 2 * np.pi, size=2)

    def render(u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Target colour at normalised box coordinates ``u, v`` in [0, 1]."""
        a = 0.5 + 0.5 * np.sin(2 * np.pi * freqs[0] * (u * np.cos(angles[0]) + v * np.sin(angles[0])) + phases[0])
        b = 0.5 + 0.5 * np.sin(2 * np.pi * freqs[1] * (u * np.cos(angles[1]) + v * np.sin(angles[1])) + phases[1])
        out = colors[0] * a[..., None] + colors[1] * (1 - a[..., None])
        return 0.7 * out + 0.3 * colors[2] * b[..., None]

    return render


def _background(rng: np.random.Generator, size: int, levels: tuple[float, float]) -> np.ndarray:
    coarse = rng.uniform(levels[0], levels[1], size=(5, 5, 3))
    zoom = size / 5.0
    return np.clip(ndimage.zoom(coarse, (zoom, zoom, 1), order=1, mode="nearest"), 0.0, 1.0)


def generate_sequence(seed: int, length: int, cfg: GenConfig = GenConfig(), seq_id: int | None = None) -> Sequence:
    """Render a deterministic sequence; ``seq_id`` (default ``seed``) fixes the target's look."""
    if length < 2:
        raise ValueError("sequence length must be at least 2")
    seq_id = seed if seq_id is None else seq_id
    rng = np.random.default_rng([int(seed), 0x5E9])
    size = cfg.frame_size
    render = _appearance(seq_id)
    background = _background(rng, size, cfg.background_levels)

    base_w, base_h = rng.uniform(cfg.target_min, cfg.target_max, size=2)
    log_scale, log_illum = 0.0, 0.0
    cx, cy = rng.uniform(base_w, size - base_w), rng.uniform(base_h, size - base_h)
    vx, vy = 0.0, 0.0
    pix = np.arange(size) + 0.5

    frames = np.empty((length, size, size, 3), dtype=np.float32)
    boxes = []
    for k in range(length):
        if k > 0:
            if cfg.speed > 0:
                vx += rng.normal(0.0, cfg.accel)
                vy += rng.normal(0.0, cfg.accel)
                norm = math.hypot(vx, vy)
                if norm > cfg.speed:
                    vx, vy = vx * cfg.speed / norm, vy * cfg.speed / norm
            log_scale = float(np.clip(log_scale + rng.normal(0.0, cfg.scale_drift), *np.log(cfg.scale_range)))
            log_illum = float(np.clip(log_illum + rng.normal(0.0, cfg.illumination_drift), *np.log(cfg.illumination_range)))
            cx, cy = cx + vx, cy + vy
        w, h = base_w * math.exp(log_scale), base_h * math.exp(log_scale)
        # bounce off the frame edges
        if cx - w / 2 < 0 or cx + w / 2 > size:
            vx = -vx
        if cy - h / 2 < 0 or cy + h / 2 > size:
            vy = -vy
        cx = min(max(cx, w / 2), size - w / 2)
        cy = min(max(cy, h / 2), size - h / 2)
        box = BBox.from_center(cx, cy, w, h)

        img = background.copy()
        xs = (pix >= box.x1) & (pix < box.x2)
        ys = (pix >= box.y1) & (pix < box.y2)
        if xs.any() and ys.any():
            u = (pix[xs] - box.x1) / w
            v = (pix[ys] - box.y1) / h
            uu, vv = np.meshgrid(u, v)
            img[np.ix_(ys, xs)] = render(uu, vv)
        img = img * math.exp(log_illum) + rng.normal(0.0, cfg.noise, size=img.shape)
        frames[k] = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
        boxes.append(box)

    meta = {"seed": int(seed), "seq_id": int(seq_id), **asdict(cfg)}
    return Sequence(int(seq_id), frames, boxes, meta)


def generate_benchmark(n: int, length: int, cfg: GenConfig = GenConfig(), seed: int = 0) -> list[Sequence]:
    return [generate_sequence(seed * 100_003 + k, length, cfg) for k in range(n)]


# cropping ---------------------------------------------------------------------

@dataclass(frozen=True)
class CropWindow:
    """Square frame region of side ``side`` centred at ``(cx, cy)``, resampled to ``out_size``."""

    cx: float
    cy: float
    side: float
    out_size: int

    @property
    def scale(self) -> float:
        return self.out_size / self.side

    def to_crop(self, box) -> BBox:
        x0, y0 = self.cx - self.side / 2, self.cy - self.side / 2
        b = BBox(*box)
        s = self.scale
        return BBox((b.x1 - x0) * s, (b.y1 - y0) * s, (b.x2 - x0) * s, (b.y2 - y0) * s)

    def to_frame(self, box) -> BBox:
        x0, y0 = self.cx - self.side / 2, self.cy - self.side / 2
        b = BBox(*box)
        s = 1.0 / self.scale
        return BBox(b.x1 * s + x0, b.y1 * s + y0, b.x2 * s + x0, b.y2 * s + y0)


def crop_region(frame: np.ndarray, window: CropWindow) -> np.ndarray:
    """Bilinear resample of ``window`` from an ``H x W x 3`` frame.

    Pixels outside the frame take the per-channel frame mean.
    """
    n = window.out_size
    step = window.side / n
    coords = window.cx - window.side / 2 + (np.arange(n) + 0.5) * step - 0.5
    ys = window.cy - window.side / 2 + (np.arange(n) + 0.5) * step - 0.5
    grid_y, grid_x = np.meshgrid(ys, coords, indexing="ij")
    out = np.empty((n, n, frame.shape[2]), dtype=np.float64)
    for c in range(frame.shape[2]):
        channel = frame[..., c].astype(np.float64)
        out[..., c] = ndimage.map_coordinates(
            channel, [grid_y, grid_x], order=1, mode="constant", cval=float(channel.mean())
        )
    return out


def template_window(box, out_size: int, context: float = 1.25) -> CropWindow:
    b = BBox(*box).validate()
    cx, cy = b.center
    return CropWindow(cx, cy, context * math.sqrt(b.width * b.height), out_size)


def search_window(box, out_size: int, context_factor: float = 2.0, shift=(0.0, 0.0), scale: float = 1.0) -> CropWindow:
    """Search region around ``box``; ``shift`` (crop pixels) and ``scale`` jitter the window."""
    b = BBox(*box).validate()
    cx, cy = b.center
    side = context_factor * math.sqrt(b.width * b.height) * scale
    return CropWindow(cx + shift[0] * side / out_size, cy + shift[1] * side / out_size, side, out_size)


def crop_template(frame: np.ndarray, gt_box, out_size: int, context: float = 1.25) -> np.ndarray:
    return crop_region(frame, template_window(gt_box, out_size, context))


def crop_search(frame: np.ndarray, gt_box, out_size: int, context_factor: float = 2.0, shift=(0.0, 0.0), scale: float = 1.0):
    window = search_window(gt_box, out_size, context_factor, shift, scale)
    return crop_region(frame, window), window.to_crop(gt_box)


def to_chw(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(img, dtype=np.float64).transpose(2, 0, 1))


# contrastive sampling ------------------------------------------------------------

@dataclass(frozen=True)
class CropConfig:
    template_context: float = 1.25
    search_context: float = 2.0
    max_shift: float = 24.0  # search-centre jitter, crop pixels
    scale_jitter: float = 0.1  # log-uniform search-scale jitter


@dataclass
class ContrastiveBatch:
    """``2N`` templates (CHW) with sequence ids, plus ``N`` search crops.

    Entries ``2k`` and ``2k + 1`` come from two distinct frames of one
    sequence. Search crop ``k`` is cut from the frame behind template
    ``2k + 1`` and pairs with template ``2k``.
    """

    templates: np.ndarray  # [2N, 3, Tz, Tz]
    seq_ids: list[int]
    frame_indices: list[tuple[int, int]]
    searches: np.ndarray  # [N, 3, Tx, Tx]
    search_boxes: list[BBox]

    @property
    def n_pairs(self) -> int:
        return len(self.search_boxes)

    @property
    def pair_templates(self) -> np.ndarray:
        return self.templates[0::2]


def sample_contrastive_batch(
    pool: SequenceT[Sequence],
    n_pairs: int,
    rng: np.random.Generator,
    net_cfg: NetConfig = NetConfig(),
    crop_cfg: CropConfig = CropConfig(),
) -> ContrastiveBatch:
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    if n_pairs > len(pool):
        raise ValueError(f"cannot draw {n_pairs} distinct sequences from a pool of {len(pool)}")
    if n_pairs == 1:
        warnings.warn("a single pair has no negatives; the contrastive loss is identically 0", stacklevel=2)
    chosen = rng.choice(len(pool), size=n_pairs, replace=False)

    templates, seq_ids, frame_idx, searches, boxes = [], [], [], [], []
    for k in chosen:
        seq = pool[int(k)]
        if len(seq) < 2:
            raise ValueError(f"sequence {seq.seq_id} has fewer than 2 frames")
        a, b = (int(i) for i in rng.choice(len(seq), size=2, replace=False))
        for f in (a, b):
            templates.append(to_chw(crop_template(seq.frames[f], seq.gt_boxes[f], net_cfg.template_size, crop_cfg.template_context)))
            seq_ids.append(seq.seq_id)
        frame_idx.append((a, b))
        shift = rng.uniform(-crop_cfg.max_shift, crop_cfg.max_shift, size=2)
        scale = math.exp(rng.uniform(-crop_cfg.scale_jitter, crop_cfg.scale_jitter))
        crop, box = crop_search(seq.frames[b], seq.gt_boxes[b], net_cfg.search_size, crop_cfg.search_context, shift, scale)
        searches.append(to_chw(crop))
        boxes.append(box)
    return ContrastiveBatch(np.stack(templates), seq_ids, frame_idx, np.stack(searches), boxes)


# on-disk format -----------------------------------------------------------------
#
#   <root>/<seq_name>/frames/000000.ppm ...   binary 8-bit PPM (P6)
#   <root>/<seq_name>/groundtruth.csv         "x1,y1,x2,y2" per frame, no header
#   <root>/<seq_name>/meta.json               generator parameters

def write_sequence(root, name: str, seq: Sequence) -> Path:
    seq_dir = Path(root) / name
    (seq_dir / "frames").mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(seq.frames):
        img = np.round(np.asarray(frame) * 255.0).astype(np.uint8)
        Image.fromarray(img).save(seq_dir / "frames" / f"{k:06d}.ppm", format="PPM")
    with open(seq_dir / "groundtruth.csv", "w") as fh:
        for box in seq.gt_boxes:
            fh.write(",".join(repr(float(v)) for v in box) + "\n")
    meta = {"seq_id": seq.seq_id, **{k: v for k, v in seq.meta.items() if k != "seq_id"}}
    (seq_dir / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return seq_dir


def read_sequence(seq_dir) -> Sequence:
    seq_dir = Path(seq_dir)
    paths = sorted((seq_dir / "frames").glob("*.ppm"))
    if not paths:
        raise FileNotFoundError(f"no frames under {seq_dir / 'frames'}")
    frames = np.stack([np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0 for p in paths])
    boxes = []
    for line in (seq_dir / "groundtruth.csv").read_text().splitlines():
        if line.strip():
            boxes.append(BBox(*(float(v) for v in line.split(","))))
    if len(boxes) != len(frames):
        raise ValueError(f"{seq_dir}: {len(frames)} frames but {len(boxes)} boxes")
    meta_path = seq_dir / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    seq_id = int(meta.get("seq_id", zlib.crc32(seq_dir.name.encode())))
    return Sequence(seq_id, frames, boxes, meta)


def write_benchmark(root, sequences: SequenceT[Sequence]) -> list[Path]:
    return [write_sequence(root, f"seq_{k:04d}", seq) for k, seq in enumerate(sequences)]


def read_benchmark(root) -> list[tuple[str, Sequence]]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if (p / "groundtruth.csv").exists())
    if not dirs:
        raise FileNotFoundError(f"no sequences found under {root}")
    return [(d.name, read_sequence(d)) for d in dirs]
