"""One-pass evaluation: precision and success curves pooled over frames."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence as SequenceT

import numpy as np

from .boxes import center_error, iou

PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)  # px, center error <= t
SUCCESS_THRESHOLDS = np.round(np.arange(21) * 0.05, 2)  # IoU > t


@dataclass
class EvalResult:
    precision_curve: np.ndarray
    success_curve: np.ndarray
    fps: float
    n_frames: int

    @property
    def precision20(self) -> float:
        return float(self.precision_curve[20])

    @property
    def auc(self) -> float:
        return float(np.mean(self.success_curve))


def frame_errors(pred_boxes, gt_boxes) -> tuple[np.ndarray, np.ndarray]:
    errs = np.array([center_error(p, g) for p, g in zip(pred_boxes, gt_boxes)])
    ious = np.array([iou(p, g) for p, g in zip(pred_boxes, gt_boxes)])
    return errs, ious


def curves(errs: np.ndarray, ious: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    precision = (errs[None, :] <= PRECISION_THRESHOLDS[:, None]).mean(axis=1)
    success = (ious[None, :] > SUCCESS_THRESHOLDS[:, None]).mean(axis=1)
    return precision, success


def ope_evaluate(
    results: SequenceT,
    gts: SequenceT,
    names: SequenceT[str] | None = None,
    include_first: bool = True,
) -> EvalResult:
    """Pool every frame of every sequence into one pair of curves.

    ``results`` are TrackResults, ``gts`` Sequences (anything with ``gt_boxes``)
    or plain box lists. Frame 0 is the initialisation box and is exact by
    construction; ``include_first=False`` drops it from the curves (and from
    the frame count, but not from the fps).
    """
    if len(results) != len(gts):
        raise ValueError(f"{len(results)} results for {len(gts)} sequences")
    names = list(names) if names is not None else [f"#{k}" for k in range(len(gts))]
    all_errs, all_ious = [], []
    n_frames, tracked, total_ms = 0, 0, 0.0
    for name, res, gt in zip(names, results, gts):
        gt_boxes = getattr(gt, "gt_boxes", gt)
        pred_boxes = getattr(res, "boxes", res)
        if len(pred_boxes) != len(gt_boxes):
            raise ValueError(f"sequence {name}: {len(pred_boxes)} predictions for {len(gt_boxes)} frames")
        start = 0 if include_first else 1
        errs, ious = frame_errors(pred_boxes[start:], gt_boxes[start:])
        all_errs.append(errs)
        all_ious.append(ious)
        n_frames += len(errs)
        tracked += len(gt_boxes)
        total_ms += sum(getattr(res, "times_ms", []))
    if n_frames == 0:
        raise ValueError("nothing to evaluate")
    precision, success = curves(np.concatenate(all_errs), np.concatenate(all_ious))
    fps = tracked / (total_ms / 1000.0) if total_ms > 0 else 0.0
    return EvalResult(precision, success, fps, n_frames)


def write_metrics(out_dir, result: EvalResult) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics": out_dir / "metrics.txt",
        "precision": out_dir / "precision_curve.csv",
        "success": out_dir / "success_curve.csv",
    }
    paths["metrics"].write_text(
        f"precision20={result.precision20!r}\nauc={result.auc!r}\nfps={result.fps!r}\nframes={result.n_frames}\n"
    )
    with open(paths["precision"], "w") as fh:
        fh.write("threshold_px,fraction\n")
        for t, v in zip(PRECISION_THRESHOLDS, result.precision_curve):
            fh.write(f"{t:g},{float(v)!r}\n")
    with open(paths["success"], "w") as fh:
        fh.write("threshold_iou,fraction\n")
        for t, v in zip(SUCCESS_THRESHOLDS, result.success_curve):
            fh.write(f"{t:.2f},{float(v)!r}\n")
    return paths


def read_metrics(out_dir) -> EvalResult:
    out_dir = Path(out_dir)
    kv = dict(
        line.split("=", 1) for line in (out_dir / "metrics.txt").read_text().splitlines() if "=" in line
    )
    precision = np.loadtxt(out_dir / "precision_curve.csv", delimiter=",", skiprows=1)[:, 1]
    success = np.loadtxt(out_dir / "success_curve.csv", delimiter=",", skiprows=1)[:, 1]
    return EvalResult(precision, success, float(kv["fps"]), int(kv["frames"]))
