"""Central finite-difference checks for every differentiable op and for the
full training objective on a tiny network."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from . import model as M
from . import tensor as T
from .boxes import BBox

OP_TOL = 1e-6
COMPOSITE_TOL = 1e-4
STEP = 1e-5
# |a - n| / max(|a|, |n|, floor), floor >= ABS_FLOOR: keeps gradients that are
# zero up to rounding from turning noise into huge relative error
ABS_FLOOR = 1e-8
# the composite chains ~20 ops, so central differences carry ~1e-11 absolute
# rounding noise; gradients below this floor are compared absolutely
COMPOSITE_FLOOR = 1e-6


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr``, perturbed in place."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = f()
        flat[k] = orig - h
        down = f()
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ABS_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def noise_floor(magnitude: float, h: float, tol: float) -> float:
    """Smallest gradient entry whose central difference is accurate to ``tol``.

    Rounding in ``f(x + h) - f(x - h)`` is about ``eps * magnitude``, so the
    quotient carries ``eps * magnitude / h`` of absolute noise; entries much
    smaller than ``noise / tol`` cannot be checked to relative ``tol``.
    """
    return max(ABS_FLOOR, np.finfo(np.float64).eps * magnitude / (h * tol))


def check(
    fn: Callable[..., T.Tensor], inputs: list[np.ndarray], seed: int = 0, h: float = STEP, tol: float = OP_TOL
) -> float:
    """Max relative error between tape and finite-difference gradients of
    ``sum(fn(*inputs) * R)`` for a fixed random ``R``."""
    leaves = [T.Tensor(x, requires_grad=True) for x in inputs]
    weights = None

    def scalar(*args):
        nonlocal weights
        out = fn(*args)
        if weights is None:
            weights = np.random.default_rng(seed + 7919).normal(size=out.shape)
        return T.tsum(T.mul(out, weights))

    with T.Tape() as tape:
        grads = tape.backward(scalar(*leaves), leaves)
    # magnitude of the terms summed into the scalar, not the (cancelling) sum
    magnitude = float(np.abs(fn(*leaves).data * weights).sum())
    floor = noise_floor(magnitude, h, tol)
    worst = 0.0
    for leaf in leaves:
        num = numerical_gradient(lambda: scalar(*leaves).item(), leaf.data, h)
        worst = max(worst, relative_error(grads[leaf], num, floor))
    return worst


# per-op configurations ---------------------------------------------------------

def _op_cases(rng: np.random.Generator) -> list[tuple[str, Callable, list[np.ndarray]]]:
    """One randomly-shaped case per op; inputs keep clear of kinks and domain edges."""

    def away_from_zero(shape):
        x = rng.uniform(0.1, 1.0, size=shape)
        return x * rng.choice([-1.0, 1.0], size=shape)

    def positive(shape):
        return rng.uniform(0.5, 2.0, size=shape)

    n, m, k = (int(v) for v in rng.integers(2, 6, size=3))
    c = int(rng.integers(1, 4))
    hh, ww = (int(v) for v in rng.integers(5, 9, size=2))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    ht, wt = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    b = int(rng.integers(1, 3))
    a, bb = rng.normal(size=(n, m)), rng.normal(size=(n, m))
    # minimum needs a clear winner at every element
    gap = away_from_zero((n, m))
    return [
        ("add", T.add, [a, rng.normal(size=(1, m))]),
        ("sub", T.sub, [a, bb]),
        ("mul", T.mul, [a, rng.normal(size=(n, 1))]),
        ("div", T.div, [a, positive((n, m))]),
        ("neg", T.neg, [a]),
        ("power", lambda x: T.power(x, 2.5), [positive((n, m))]),
        ("exp", T.exp, [a]),
        ("log", T.log, [positive((n, m))]),
        ("relu", T.relu, [away_from_zero((n, m))]),
        ("sigmoid", T.sigmoid, [a * 3]),
        ("softplus", T.softplus, [a * 3]),
        ("minimum", T.minimum, [bb + gap, bb]),
        ("sum", lambda x: T.tsum(x, axis=1), [rng.normal(size=(n, m, k))]),
        ("mean", lambda x: T.mean(x, axis=(0, 2), keepdims=True), [rng.normal(size=(n, m, k))]),
        ("matmul", T.matmul, [a, rng.normal(size=(m, k))]),
        ("reshape", lambda x: T.reshape(x, (m, n)), [a]),
        ("transpose", lambda x: T.transpose(x, (2, 0, 1)), [rng.normal(size=(n, m, k))]),
        ("index", lambda x: T.index(x, (np.array([0, n - 1, 0]), slice(1, None))), [a]),
        ("stack", lambda x, y: T.stack([x, y], axis=1), [a, bb]),
        ("concat", lambda x, y: T.concat([x, y], axis=0), [a, rng.normal(size=(k, m))]),
        ("logsumexp", lambda x: T.logsumexp(x, axis=1), [a * 2]),
        (
            "conv2d",
            lambda x, w, bias: T.conv2d(x, w, bias, stride=stride, padding=pad),
            [rng.normal(size=(b, c, hh, ww)), rng.normal(size=(k, c, 3, 3)), rng.normal(size=(k,))],
        ),
        (
            "xcorr_depthwise",
            T.xcorr_depthwise,
            [rng.normal(size=(b, c, hh, ww)), rng.normal(size=(b, c, ht, wt))],
        ),
        ("global_avg_pool", T.global_avg_pool, [rng.normal(size=(b, c, hh, ww))]),
        ("l2_normalize", lambda x: T.l2_normalize(x, axis=-1), [rng.normal(size=(n, m))]),
        ("sigmoid_matmul_mean", lambda w, x: T.mean(T.sigmoid(T.matmul(w, x))), [rng.normal(size=(4, 4)), rng.normal(size=(4,))]),
    ]


# composite objective -----------------------------------------------------------------

TINY_NET = M.NetConfig(template_size=16, search_size=32, total_stride=4, channels=(3, 4), embed_dim=5)


@dataclass
class CompositeCase:
    params: M.ModelParams
    templates: np.ndarray
    searches: np.ndarray
    seq_ids: list[int]
    targets: L.LabelTargets
    loss_cfg: L.LossConfig


def make_composite_case(seed: int, n_pairs: int = 2, rho: float = 0.5) -> CompositeCase:
    cfg = TINY_NET
    rng = np.random.default_rng(seed)
    params = M.init_params(cfg, seed)
    for name, t in params.tensors.items():
        if name.endswith(".bias"):
            t.data[:] = rng.uniform(0.05, 0.2, size=t.shape) * rng.choice([-1.0, 1.0], size=t.shape)
    params["proj.bias"].data[:] = rng.uniform(0.2, 0.5, size=cfg.embed_dim)
    templates = rng.uniform(0, 1, size=(2 * n_pairs, 3, cfg.template_size, cfg.template_size))
    searches = rng.uniform(0, 1, size=(n_pairs, 3, cfg.search_size, cfg.search_size))
    grid = L.Grid.for_config(cfg)
    boxes = []
    for _ in range(n_pairs):
        cx, cy = rng.uniform(12, 20, size=2)
        w, h = rng.uniform(8, 14, size=2)
        boxes.append(BBox.from_center(cx, cy, w, h))
    loss_cfg = L.LossConfig(rho=rho, center_radius=1.5)
    targets = L.LabelTargets.stack([L.assign_labels(b, grid, loss_cfg) for b in boxes])
    seq_ids = [k // 2 for k in range(2 * n_pairs)]
    return CompositeCase(params, templates, searches, seq_ids, targets, loss_cfg)


def composite_loss(case: CompositeCase) -> T.Tensor:
    params, cfg = case.params, case.loss_cfg
    zfeat = M.embed_template(params, case.templates)
    xfeat = M.embed_search(params, case.searches)
    heads = M.heads_from_features(params, T.index(zfeat, slice(0, None, 2)), xfeat)
    l_crq, _ = L.crq_loss(heads, case.targets, cfg)
    l_drl = L.drl_loss(M.project(params, zfeat), case.seq_ids, cfg.tau)
    return L.total_loss(l_crq, l_drl, cfg.rho)


def check_composite(seed: int) -> tuple[float, int]:
    """Max relative error over every parameter of the tiny network, and the parameter count."""
    case = make_composite_case(seed)
    leaves = case.params.leaves()
    with T.Tape() as tape:
        grads = tape.backward(composite_loss(case), leaves)
    worst = 0.0
    for leaf in leaves:
        num = numerical_gradient(lambda: composite_loss(case).item(), leaf.data)
        worst = max(worst, relative_error(grads[leaf], num, COMPOSITE_FLOOR))
    return worst, case.params.num_parameters()


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error <= self.tol


def run_suite(seed: int = 0, op_rounds: int = 2, composite_seeds: int = 2, log: Callable[[str], None] | None = None):
    """Run ``op_rounds`` random configurations of every op plus the composite check.

    Returns ``(results, seconds)``.
    """
    t0 = time.perf_counter()
    results = []
    for r in range(op_rounds):
        rng = np.random.default_rng([seed, r])
        for name, fn, inputs in _op_cases(rng):
            res = CheckResult(f"{name}[{r}]", check(fn, inputs, seed + r), OP_TOL)
            results.append(res)
            if log:
                log(f"{'ok  ' if res.ok else 'FAIL'} {res.name:28s} rel.err {res.error:.2e}")
    for s in range(composite_seeds):
        err, count = check_composite(seed + s)
        res = CheckResult(f"composite[{s}] ({count} params)", err, COMPOSITE_TOL)
        results.append(res)
        if log:
            log(f"{'ok  ' if res.ok else 'FAIL'} {res.name:28s} rel.err {res.error:.2e}")
    return results, time.perf_counter() - t0
