"""Axis-aligned boxes in pixel coordinates and the two OPE box metrics."""

from __future__ import annotations

import math
from typing import NamedTuple


class BBox(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    @property
    def area(self) -> float:
        return self.width * self.height

    def is_valid(self) -> bool:
        return all(math.isfinite(v) for v in self) and self.x2 > self.x1 and self.y2 > self.y1

    def validate(self) -> "BBox":
        if not self.is_valid():
            raise ValueError(f"degenerate box {tuple(self)}")
        return self

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    def clamp(self, width: float, height: float, min_size: float = 1.0) -> "BBox":
        """Shrink/shift the box so it lies inside a ``width x height`` image."""
        w = min(max(self.width, min_size), width)
        h = min(max(self.height, min_size), height)
        cx, cy = self.center
        cx = min(max(cx, w / 2.0), width - w / 2.0)
        cy = min(max(cy, h / 2.0), height - h / 2.0)
        return BBox.from_center(cx, cy, w, h)


def center_error(pred, gt) -> float:
    (px, py), (gx, gy) = BBox(*pred).center, BBox(*gt).center
    return math.hypot(px - gx, py - gy)


def iou(a, b) -> float:
    a, b = BBox(*a), BBox(*b)
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)
