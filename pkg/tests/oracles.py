"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the package's numerics: every function is written from
the definition with plain loops so that agreement is meaningful.
"""

import math

import numpy as np

# hand-derived constants, frozen before the implementation was run against them
FOCAL_SINGLE = -0.25 * 0.4**2 * math.log(0.6)  # p_t = 0.6, gamma 2, alpha 0.25
QUALITY_HALF = math.log(2.0)  # q* = 0.8, sigmoid(qs) = 0.5
IOU_NESTED = -math.log(0.25)  # prediction distances half the target's
DRL_IDENTICAL_N2 = 4.0 * math.log(3.0)
AUC_PERFECT = 20.0 / 21.0


def conv2d_ref(x, k, bias=None, stride=1, padding=0):
    c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    xp = np.zeros((c_in, h + 2 * padding, w + 2 * padding))
    xp[:, padding : padding + h, padding : padding + w] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            acc += xp[c, i * stride + u, j * stride + v] * k[o, c, u, v]
                out[o, i, j] = acc + (bias[o] if bias is not None else 0.0)
    return out


def xcorr_ref(search, template):
    c, hs, ws = search.shape
    _, ht, wt = template.shape
    out = np.zeros((c, hs - ht + 1, ws - wt + 1))
    for ch in range(c):
        for i in range(hs - ht + 1):
            for j in range(ws - wt + 1):
                out[ch, i, j] = float(np.sum(search[ch, i : i + ht, j : j + wt] * template[ch]))
    return out


def drl_ref(z, seq_ids, tau):
    """Double loop over anchors and candidates, no max-subtraction."""
    n = len(z)
    total = 0.0
    for i in range(n):
        positives = [p for p in range(n) if p != i and seq_ids[p] == seq_ids[i]]
        denom = sum(math.exp(float(np.dot(z[i], z[a])) / tau) for a in range(n) if a != i)
        inner = 0.0
        for p in positives:
            inner += math.log(math.exp(float(np.dot(z[i], z[p])) / tau) / denom)
        total += inner / len(positives)
    return -total


def labels_ref(box, coords, stride, radius_cells):
    """Per-location positive test, distances and centerness on a square grid."""
    x1, y1, x2, y2 = box
    cx, cy = (x1 + x2) / 2.0, (y1 + y2) / 2.0
    n = len(coords)
    p = np.zeros((n, n))
    t = np.zeros((n, n, 4))
    q = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            x, y = coords[j], coords[i]
            l, tp, r, b = x - x1, y - y1, x2 - x, y2 - y
            t[i, j] = (l, tp, r, b)
            inside = min(l, tp, r, b) > 0
            near = abs(x - cx) <= radius_cells * stride and abs(y - cy) <= radius_cells * stride
            if inside and near:
                p[i, j] = 1.0
                q[i, j] = math.sqrt((min(l, r) / max(l, r)) * (min(tp, b) / max(tp, b)))
    return p, t, q


def box_iou_ref(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def ltrb_iou_ref(pred, target):
    """IoU of two boxes given as distances from a shared anchor point."""
    a = (-pred[0], -pred[1], pred[2], pred[3])
    b = (-target[0], -target[1], target[2], target[3])
    return box_iou_ref(a, b)


def focal_ref(logits, p_star, alpha, gamma):
    total = 0.0
    for idx in np.ndindex(p_star.shape):
        fg, bg = logits[idx]
        p_fg = math.exp(fg) / (math.exp(fg) + math.exp(bg))
        pt = p_fg if p_star[idx] == 1 else 1.0 - p_fg
        a = 1.0 if alpha is None else (alpha if p_star[idx] == 1 else 1.0 - alpha)
        total += -a * (1.0 - pt) ** gamma * math.log(pt)
    return total


def ope_recount(preds, gts):
    """Precision (0..50 px, <=) and success (21 IoU steps, >) by explicit counting."""
    frames = [(p, g) for seq_p, seq_g in zip(preds, gts) for p, g in zip(seq_p, seq_g)]
    n = len(frames)
    precision = []
    for t in range(51):
        hits = 0
        for p, g in frames:
            pcx, pcy = (p[0] + p[2]) / 2, (p[1] + p[3]) / 2
            gcx, gcy = (g[0] + g[2]) / 2, (g[1] + g[3]) / 2
            if math.hypot(pcx - gcx, pcy - gcy) <= t:
                hits += 1
        precision.append(hits / n)
    success = []
    for k in range(21):
        t = round(0.05 * k, 2)
        success.append(sum(1 for p, g in frames if box_iou_ref(p, g) > t) / n)
    return np.array(precision), np.array(success)
