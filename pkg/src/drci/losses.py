"""Training objectives: the supervised-contrastive loss over template
embeddings, and the classification / regression / quality losses with their
label assignment."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .boxes import BBox
from .model import HeadOutputs, NetConfig
from .tensor import Tensor


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 1.0
    rho: float = 0.1
    focal_alpha: float | None = 0.25  # None: no class weighting
    focal_gamma: float = 2.0
    center_radius: float = 1.5
    iou_eps: float = 1e-9

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.rho < 0:
            raise ValueError(f"rho must be non-negative, got {self.rho}")
        if self.center_radius <= 0:
            raise ValueError("center_radius must be positive")


@dataclass(frozen=True)
class Grid:
    """Score-grid geometry: cell ``(i, j)`` sits at search-crop pixel
    ``(origin + stride * j, origin + stride * i)``."""

    h: int
    w: int
    stride: float
    origin: float

    @classmethod
    def for_config(cls, cfg: NetConfig) -> "Grid":
        coords = cfg.grid_coords()
        return cls(len(coords), len(coords), float(cfg.total_stride), float(coords[0]))

    def xs(self) -> np.ndarray:
        return self.origin + self.stride * np.arange(self.w)

    def ys(self) -> np.ndarray:
        return self.origin + self.stride * np.arange(self.h)


@dataclass
class LabelTargets:
    p_star: np.ndarray  # [.., h, w] in {0, 1}
    t_star: np.ndarray  # [.., h, w, 4] as (l, t, r, b)
    q_star: np.ndarray  # [.., h, w], centerness at positives, 0 elsewhere

    @property
    def n_pos(self) -> int:
        return int(self.p_star.sum())

    @classmethod
    def stack(cls, items: Sequence["LabelTargets"]) -> "LabelTargets":
        return cls(
            np.stack([t.p_star for t in items]),
            np.stack([t.t_star for t in items]),
            np.stack([t.q_star for t in items]),
        )


# contrastive ---------------------------------------------------------------

def _pair_partner(seq_ids: Sequence[int]) -> np.ndarray:
    counts = Counter(seq_ids)
    bad = {s: c for s, c in counts.items() if c != 2}
    if bad:
        raise ValueError(f"every seq_id must appear exactly twice, got counts {bad}")
    partner = np.empty(len(seq_ids), dtype=np.int64)
    first: dict = {}
    for i, s in enumerate(seq_ids):
        if s in first:
            partner[i], partner[first[s]] = first[s], i
        else:
            first[s] = i
    return partner


def drl_loss(embeddings, seq_ids: Sequence[int], tau: float = 0.5) -> Tensor:
    """Supervised-contrastive loss over ``2N`` unit embeddings.

    Each anchor's positive is the other template from its sequence; the
    denominator runs over every other entry. Summed over anchors, with the
    leading minus so that minimising pulls positives together.
    """
    z = T.as_tensor(embeddings)
    if z.ndim != 2 or z.shape[0] != len(seq_ids):
        raise ValueError(f"embeddings {z.shape} do not match {len(seq_ids)} seq_ids")
    if not tau > 0:
        raise ValueError("tau must be positive")
    norms = np.linalg.norm(z.data, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("embeddings must have unit L2 norm")
    partner = _pair_partner(list(seq_ids))
    n = z.shape[0]

    sim = T.mul(T.matmul(z, T.transpose(z)), 1.0 / tau)
    rows = np.repeat(np.arange(n), n - 1)
    cols = np.array([a for i in range(n) for a in range(n) if a != i], dtype=np.int64)
    others = T.reshape(T.index(sim, (rows, cols)), (n, n - 1))
    positives = T.index(sim, (np.arange(n), partner))
    return T.tsum(T.sub(T.logsumexp(others, axis=1), positives))


# label assignment ------------------------------------------------------------

def assign_labels(gt_box, grid: Grid, cfg: LossConfig = LossConfig()) -> LabelTargets:
    """Inside-box plus center-radius sampling on the score grid.

    A cell is positive when its pixel location is strictly inside ``gt_box``
    and within ``center_radius * stride`` of the box center along both axes.
    """
    box = BBox(*gt_box).validate()
    xs, ys = np.meshgrid(grid.xs(), grid.ys())
    left, top = xs - box.x1, ys - box.y1
    right, bottom = box.x2 - xs, box.y2 - ys
    t_star = np.stack([left, top, right, bottom], axis=-1)

    cx, cy = box.center
    radius = cfg.center_radius * grid.stride
    inside = (left > 0) & (top > 0) & (right > 0) & (bottom > 0)
    central = (np.abs(xs - cx) <= radius) & (np.abs(ys - cy) <= radius)
    p_star = (inside & central).astype(np.float64)

    q_star = np.zeros_like(p_star)
    pos = p_star > 0
    lr = np.minimum(left, right)[pos] / np.maximum(left, right)[pos]
    tb = np.minimum(top, bottom)[pos] / np.maximum(top, bottom)[pos]
    q_star[pos] = np.sqrt(lr * tb)
    return LabelTargets(p_star, t_star, q_star)


# head losses ---------------------------------------------------------------------

def focal_loss(cls_logits, p_star, alpha: float | None = 0.25, gamma: float = 2.0) -> Tensor:
    """Focal loss summed over every grid location.

    Channel 0 of ``cls_logits`` is foreground, channel 1 background.
    ``alpha=None`` gives every location weight 1.
    """
    logits = T.as_tensor(cls_logits)
    p_star = np.asarray(p_star, dtype=np.float64)
    if logits.shape != p_star.shape + (2,):
        raise ValueError(f"cls logits {logits.shape} do not match targets {p_star.shape}")
    fg = T.index(logits, (Ellipsis, 0))
    bg = T.index(logits, (Ellipsis, 1))
    log_p_fg = T.neg(T.softplus(T.sub(bg, fg)))
    log_p_bg = T.neg(T.softplus(T.sub(fg, bg)))
    log_pt = T.add(T.mul(log_p_fg, p_star), T.mul(log_p_bg, 1.0 - p_star))
    per_loc = T.neg(log_pt)
    if gamma != 0:
        per_loc = T.mul(per_loc, T.power(T.sub(1.0, T.exp(log_pt)), gamma))
    if alpha is not None:
        per_loc = T.mul(per_loc, alpha * p_star + (1.0 - alpha) * (1.0 - p_star))
    return T.tsum(per_loc)


def _positives(x: Tensor, p_star: np.ndarray, k: int) -> Tensor:
    flat = np.flatnonzero(p_star.reshape(-1) > 0)
    return T.index(T.reshape(x, (-1, k)), flat)


def iou_loss(reg_pred, t_star, p_star, eps: float = 1e-9) -> Tensor:
    """Sum of ``-ln(IoU + eps)`` over positive cells.

    Predicted and target boxes share the cell as anchor point, so the
    intersection is ``(min(l) + min(r)) * (min(t) + min(b))``.
    """
    p_star = np.asarray(p_star, dtype=np.float64)
    if p_star.sum() == 0:
        return Tensor(0.0)
    pred = _positives(T.as_tensor(reg_pred), p_star, 4)
    tgt = np.asarray(t_star, dtype=np.float64).reshape(-1, 4)[np.flatnonzero(p_star.reshape(-1) > 0)]
    l, t, r, b = (T.index(pred, (slice(None), k)) for k in range(4))
    lt, tt, rt, bt = (tgt[:, k] for k in range(4))
    inter_w = T.add(T.minimum(l, lt), T.minimum(r, rt))
    inter_h = T.add(T.minimum(t, tt), T.minimum(b, bt))
    inter = T.mul(inter_w, inter_h)
    pred_area = T.mul(T.add(l, r), T.add(t, b))
    union = T.sub(T.add(pred_area, (lt + rt) * (tt + bt)), inter)
    ratio = T.div(inter, union)
    return T.tsum(T.neg(T.log(T.add(ratio, eps))))


def quality_loss(qs_logits, q_star, p_star) -> Tensor:
    """Binary cross-entropy of ``sigmoid(qs)`` against ``q_star``, summed over positives."""
    p_star = np.asarray(p_star, dtype=np.float64)
    if p_star.sum() == 0:
        return Tensor(0.0)
    logits = T.reshape(_positives(T.as_tensor(qs_logits), p_star, 1), (-1,))
    q = np.asarray(q_star, dtype=np.float64).reshape(-1)[np.flatnonzero(p_star.reshape(-1) > 0)]
    # -(q log s + (1-q) log(1-s)) == softplus(x) - q x
    return T.tsum(T.sub(T.softplus(logits), T.mul(logits, q)))


def crq_loss(heads: HeadOutputs, targets: LabelTargets, cfg: LossConfig = LossConfig()):
    """Head loss normalised by the positive count (pooled over the batch).

    Returns ``(loss, breakdown)``; the breakdown holds the three unweighted
    normalised terms plus ``n_pos``. With no positives the focal sum is
    divided by 1 and the other two terms are zero.
    """
    p_star = targets.p_star
    n_pos = targets.n_pos
    focal = focal_loss(heads.cls, p_star, cfg.focal_alpha, cfg.focal_gamma)
    if n_pos == 0:
        zero = {"l_focal": focal.item(), "l_iou": 0.0, "l_qs": 0.0, "n_pos": 0}
        return focal, zero
    reg = iou_loss(heads.reg, targets.t_star, p_star, cfg.iou_eps)
    qs = quality_loss(heads.qs, targets.q_star, p_star)
    total = T.add(T.add(focal, T.mul(reg, cfg.lambda1)), T.mul(qs, cfg.lambda2))
    total = T.mul(total, 1.0 / n_pos)
    breakdown = {
        "l_focal": focal.item() / n_pos,
        "l_iou": reg.item() / n_pos,
        "l_qs": qs.item() / n_pos,
        "n_pos": n_pos,
    }
    return total, breakdown


def total_loss(l_crq, l_drl, rho: float) -> Tensor:
    return T.add(l_crq, T.mul(l_drl, rho))

