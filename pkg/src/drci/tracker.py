"""One-pass tracking with a fixed first-frame template.

Each update crops a search region around the previous box, scores every grid
cell by foreground probability times predicted quality, applies a scale/ratio
change penalty and a cosine window, and decodes the winning cell's side
distances into a frame-space box.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import model as M
from .boxes import BBox
from .data import CropWindow, Sequence, crop_region, search_window, template_window, to_chw
from .tensor import Tensor


@dataclass(frozen=True)
class TrackConfig:
    window_weight: float = 0.3
    scale_penalty_k: float = 0.04
    smoothing: float = 0.6
    template_context: float = 1.25
    search_context: float = 2.0
    min_size: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.window_weight <= 1.0:
            raise ValueError("window_weight must lie in [0, 1]")
        if not 0.0 <= self.smoothing <= 1.0:
            raise ValueError("smoothing must lie in [0, 1]")


@dataclass
class TrackState:
    params: M.ModelParams
    template_feat: Tensor
    current_box: BBox
    frame_size: tuple[int, int]  # (height, width)
    cfg: TrackConfig = field(default_factory=TrackConfig)
    last_window: CropWindow | None = None


@dataclass
class TrackResult:
    boxes: list[BBox]
    times_ms: list[float]

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def fps(self) -> float:
        total = sum(self.times_ms) / 1000.0
        return len(self.boxes) / total if total > 0 else float("inf")

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for box, ms in zip(self.boxes, self.times_ms):
                fh.write(",".join(repr(float(v)) for v in (*box, ms)) + "\n")
        return path

    @classmethod
    def read_csv(cls, path) -> "TrackResult":
        boxes, times = [], []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                *coords, ms = (float(v) for v in line.split(","))
                boxes.append(BBox(*coords))
                times.append(ms)
        return cls(boxes, times)


def hanning_window(n: int) -> np.ndarray:
    """Cosine window over an ``n x n`` grid, peak 1 at the centre cell (odd ``n``)."""
    w = np.hanning(n) if n > 1 else np.ones(1)
    return np.outer(w, w)


def decode_boxes(reg: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """``[h, w, 4]`` (l, t, r, b) distances to ``[h, w, 4]`` (x1, y1, x2, y2) crop boxes."""
    xs, ys = np.meshgrid(coords, coords)
    return np.stack([xs - reg[..., 0], ys - reg[..., 1], xs + reg[..., 2], ys + reg[..., 3]], axis=-1)


def score_map(heads: M.HeadOutputs) -> np.ndarray:
    """Foreground probability reweighted by sigmoid quality, ``[h, w]``."""
    cls = heads.cls.data
    return expit(cls[..., 0] - cls[..., 1]) * expit(heads.qs.data[..., 0])


def _change(r: np.ndarray) -> np.ndarray:
    return np.maximum(r, 1.0 / r)


def _padded_size(w, h):
    pad = (w + h) * 0.5
    return np.sqrt((w + pad) * (h + pad))


def init(params: M.ModelParams, frame: np.ndarray, gt_box, cfg: TrackConfig = TrackConfig()) -> TrackState:
    box = BBox(*gt_box).validate()
    size = params.config.template_size
    crop = crop_region(frame, template_window(box, size, cfg.template_context))
    feat = M.embed_template(params, to_chw(crop))
    return TrackState(params, feat, box, (frame.shape[0], frame.shape[1]), cfg)


def update(state: TrackState, frame: np.ndarray) -> BBox:
    cfg = state.cfg
    net = state.params.config
    prev = state.current_box
    window = search_window(prev, net.search_size, cfg.search_context)
    xfeat = M.embed_search(state.params, to_chw(crop_region(frame, window)))
    heads = M.heads_from_features(state.params, state.template_feat, xfeat)

    score = score_map(heads)
    if not np.isfinite(score).all():
        raise FloatingPointError(f"non-finite score map while tracking from box {tuple(prev)}")
    boxes = decode_boxes(heads.reg.data, net.grid_coords())
    # sizes in frame pixels
    w = (boxes[..., 2] - boxes[..., 0]) / window.scale
    h = (boxes[..., 3] - boxes[..., 1]) / window.scale
    size_change = _change(_padded_size(w, h) / _padded_size(prev.width, prev.height))
    ratio_change = _change((prev.width / prev.height) / (w / h))
    penalty = np.exp(-(size_change * ratio_change - 1.0) * cfg.scale_penalty_k)

    pscore = (1.0 - cfg.window_weight) * score * penalty + cfg.window_weight * hanning_window(score.shape[0])
    best = np.unravel_index(int(np.argmax(pscore)), pscore.shape)

    pred = window.to_frame(boxes[best])
    lr = float(penalty[best] * score[best] * cfg.smoothing)
    new_w = prev.width * (1.0 - lr) + pred.width * lr
    new_h = prev.height * (1.0 - lr) + pred.height * lr
    cx, cy = pred.center
    H, W = state.frame_size
    box = BBox.from_center(cx, cy, new_w, new_h).clamp(W, H, cfg.min_size)
    state.current_box = box
    state.last_window = window
    return box


def track_sequence(params: M.ModelParams, seq: Sequence, cfg: TrackConfig = TrackConfig()) -> TrackResult:
    """Initialise on frame 0's ground truth and run through without re-initialising."""
    if len(seq) < 1:
        raise ValueError("empty sequence")
    t0 = time.perf_counter()
    state = init(params, seq.frames[0], seq.gt_boxes[0], cfg)
    times = [(time.perf_counter() - t0) * 1000.0]
    boxes = [state.current_box]
    for frame in seq.frames[1:]:
        t0 = time.perf_counter()
        boxes.append(update(state, frame))
        times.append((time.perf_counter() - t0) * 1000.0)
    return TrackResult(boxes, times)
