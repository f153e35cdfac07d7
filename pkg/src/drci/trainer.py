"""Training loop, per-step logging, checkpointing and the rho sweep."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model as M
from . import tensor as T
from .data import (
    ContrastiveBatch,
    CropConfig,
    GenConfig,
    crop_template,
    generate_benchmark,
    sample_contrastive_batch,
    to_chw,
)
from .evaluation import EvalResult, ope_evaluate
from .losses import Grid, LabelTargets, LossConfig, assign_labels, crq_loss, drl_loss, total_loss
from .tracker import TrackConfig, track_sequence

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "l_total", "l_crq", "l_drl", "l_focal", "l_iou", "l_qs", "grad_norm", "ms")
SWEEP_FIELDS = ("rho", "precision20", "auc", "final_l_drl", "final_l_crq")
DEFAULT_RHO_GRID = tuple(round(0.1 * k, 1) for k in range(10))


@dataclass(frozen=True)
class TrainConfig:
    rho: float = 0.1
    steps: int = 300
    batch_pairs: int = 8
    learning_rate: float = 0.01
    momentum: float = 0.9
    grad_clip: float = 10.0
    # step-size multiplier for the projection head; see README
    proj_lr_scale: float = 0.1
    seed: int = 0
    n_sequences: int = 8
    seq_length: int = 40
    checkpoint_every: int = 0
    out_dir: str | None = None
    # zero the ms column so that logs are byte-reproducible
    log_timing: bool = True
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    net_cfg: M.NetConfig = field(default_factory=M.NetConfig)
    gen_cfg: GenConfig = field(default_factory=GenConfig)
    crop_cfg: CropConfig = field(default_factory=CropConfig)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.batch_pairs < 1 or self.n_sequences < self.batch_pairs:
            raise ValueError("need 1 <= batch_pairs <= n_sequences")

    @property
    def effective_loss_cfg(self) -> LossConfig:
        return replace(self.loss_cfg, rho=self.rho)


class TrainingDiverged(RuntimeError):
    def __init__(self, record: dict):
        super().__init__(f"training diverged at step {record.get('step')}: {record}")
        self.record = record


class MomentumSGD:
    def __init__(self, params: M.ModelParams, momentum: float = 0.9, lr_scale: dict[str, float] | None = None):
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v.data) for k, v in params.tensors.items()}
        # name prefix -> multiplier
        self.lr_scale = dict(lr_scale or {})

    def _scale(self, name: str) -> float:
        for prefix, s in self.lr_scale.items():
            if name.startswith(prefix):
                return s
        return 1.0

    def step(self, params: M.ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, t in params.tensors.items():
            v = self.velocity[name]
            v *= self.momentum
            v += grads[name]
            t.data -= lr * self._scale(name) * v


def make_optimizer(params: M.ModelParams, cfg: "TrainConfig") -> MomentumSGD:
    return MomentumSGD(params, cfg.momentum, {"proj.": cfg.proj_lr_scale})


def cosine_lr(base: float, step: int, total: int) -> float:
    return 0.5 * base * (1.0 + math.cos(math.pi * step / total))


def batch_targets(batch: ContrastiveBatch, net_cfg: M.NetConfig, loss_cfg: LossConfig) -> LabelTargets:
    grid = Grid.for_config(net_cfg)
    return LabelTargets.stack([assign_labels(b, grid, loss_cfg) for b in batch.search_boxes])


def compute_losses(params: M.ModelParams, batch: ContrastiveBatch, loss_cfg: LossConfig):
    """Forward pass of the full objective; must run inside a Tape to get gradients.

    Returns ``(l_total, l_crq, l_drl, breakdown)``.
    """
    zfeat = M.embed_template(params, batch.templates)
    xfeat = M.embed_search(params, batch.searches)
    heads = M.heads_from_features(params, T.index(zfeat, slice(0, None, 2)), xfeat)
    l_crq, breakdown = crq_loss(heads, batch_targets(batch, params.config, loss_cfg), loss_cfg)
    embeddings = M.project(params, zfeat)
    l_drl = drl_loss(embeddings, batch.seq_ids, loss_cfg.tau)
    return total_loss(l_crq, l_drl, loss_cfg.rho), l_crq, l_drl, breakdown


def train_step(
    params: M.ModelParams,
    batch: ContrastiveBatch,
    cfg: TrainConfig,
    optimizer: MomentumSGD | None = None,
    lr: float | None = None,
    step: int = 1,
):
    """One optimisation step on ``L = L_CRQ + rho * L_DRL``; updates ``params`` in place."""
    optimizer = optimizer or make_optimizer(params, cfg)
    lr = cfg.learning_rate if lr is None else lr
    t0 = time.perf_counter()
    params.zero_grad()
    record: dict = {"step": step}
    try:
        with T.Tape() as tape:
            l_total, l_crq, l_drl, breakdown = compute_losses(params, batch, cfg.effective_loss_cfg)
            grads = tape.backward(l_total, params.leaves())
    except (FloatingPointError, ValueError) as exc:
        # ValueError here is a domain error, e.g. an all-zero projection
        record["error"] = str(exc)
        raise TrainingDiverged(record) from exc
    grads = {name: grads[t] for name, t in params.tensors.items()}
    grad_norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    record.update(
        l_total=l_total.item(),
        l_crq=l_crq.item(),
        l_drl=l_drl.item(),
        l_focal=breakdown["l_focal"],
        l_iou=breakdown["l_iou"],
        l_qs=breakdown["l_qs"],
        grad_norm=grad_norm,
    )
    if not all(math.isfinite(v) for v in record.values()):
        raise TrainingDiverged(record)
    if cfg.grad_clip and grad_norm > cfg.grad_clip:
        scale = cfg.grad_clip / grad_norm
        grads = {k: g * scale for k, g in grads.items()}
    optimizer.step(params, grads, lr)
    record["ms"] = (time.perf_counter() - t0) * 1000.0 if cfg.log_timing else 0.0
    return params, record


def training_pool(cfg: TrainConfig):
    return generate_benchmark(cfg.n_sequences, cfg.seq_length, cfg.gen_cfg, seed=cfg.seed)


def write_log(path, records: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for rec in records:
            writer.writerow([rec["step"], *(repr(float(rec[k])) for k in LOG_FIELDS[1:])])
    return path


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def fit(cfg: TrainConfig, pool=None, params: M.ModelParams | None = None):
    """Train from scratch (or from ``params``) for ``cfg.steps`` steps.

    Deterministic in ``cfg.seed``: it fixes the synthetic pool, the
    initialisation and the batch sampler. Returns ``(params, records)``.
    """
    pool = training_pool(cfg) if pool is None else pool
    params = M.init_params(cfg.net_cfg, cfg.seed) if params is None else params
    optimizer = make_optimizer(params, cfg)
    rng = np.random.default_rng([cfg.seed, 0xBA7C])
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None

    records = []
    for step in range(1, cfg.steps + 1):
        batch = sample_contrastive_batch(pool, cfg.batch_pairs, rng, cfg.net_cfg, cfg.crop_cfg)
        lr = cosine_lr(cfg.learning_rate, step - 1, cfg.steps)
        _, record = train_step(params, batch, cfg, optimizer, lr, step)
        records.append(record)
        if step == 1 or step % 50 == 0 or step == cfg.steps:
            log.info(
                "step %d  total %.4f  crq %.4f  drl %.4f  |g| %.3f",
                step, record["l_total"], record["l_crq"], record["l_drl"], record["grad_norm"],
            )
        if out_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step != cfg.steps:
            M.save_checkpoint(out_dir / f"model_step{step:06d}.ckpt", params)
    if out_dir:
        M.save_checkpoint(out_dir / "model.ckpt", params)
        write_log(out_dir / "train_log.csv", records)
    return params, records


def embedding_similarity(
    params: M.ModelParams,
    sequences,
    frames_per_seq: int = 4,
    seed: int = 5,
    context: float = 1.25,
) -> tuple[float, float]:
    """Mean cosine similarity of projected template embeddings within and across sequences.

    Draws ``frames_per_seq`` distinct frames from each sequence. Returns
    ``(intra, inter)``; self-pairs are excluded from ``intra``.
    """
    rng = np.random.default_rng(seed)
    crops, ids = [], []
    for seq in sequences:
        for f in rng.choice(len(seq), size=min(frames_per_seq, len(seq)), replace=False):
            crops.append(to_chw(crop_template(seq.frames[f], seq.gt_boxes[f], params.config.template_size, context)))
            ids.append(seq.seq_id)
    emb = M.project(params, M.embed_template(params, np.stack(crops))).data
    sims = emb @ emb.T
    ids = np.asarray(ids)
    same = ids[:, None] == ids[None, :]
    intra = sims[same & ~np.eye(len(ids), dtype=bool)]
    inter = sims[~same]
    if intra.size == 0 or inter.size == 0:
        raise ValueError("need at least two sequences with two frames each")
    return float(intra.mean()), float(inter.mean())


def evaluate_params(params: M.ModelParams, sequences, track_cfg: TrackConfig = TrackConfig()) -> EvalResult:
    results = [track_sequence(params, seq, track_cfg) for seq in sequences]
    return ope_evaluate(results, sequences)


@dataclass(frozen=True)
class EvalBenchConfig:
    n_sequences: int = 20
    length: int = 40
    seed: int = 1000
    gen_cfg: GenConfig = field(default_factory=GenConfig)


def _sweep_row(cfg: TrainConfig, pool, sequences, track_cfg: TrackConfig) -> dict:
    params, records = fit(cfg, pool=pool)
    ev = evaluate_params(params, sequences, track_cfg)
    log.info("rho %.1f  precision20 %.3f  auc %.3f", cfg.rho, ev.precision20, ev.auc)
    return {
        "rho": cfg.rho,
        "precision20": ev.precision20,
        "auc": ev.auc,
        "final_l_drl": records[-1]["l_drl"],
        "final_l_crq": records[-1]["l_crq"],
    }


def sweep_rho(
    base_cfg: TrainConfig,
    rho_values=DEFAULT_RHO_GRID,
    bench: EvalBenchConfig = EvalBenchConfig(),
    track_cfg: TrackConfig = TrackConfig(),
    sequences=None,
    workers: int = 1,
) -> list[dict]:
    """Train one model per rho (same seed, same data) and evaluate each on a held-out benchmark.

    The grid must contain 0.0, the baseline without the contrastive term.
    Runs are independent, so ``workers > 1`` fans them out to processes;
    rows come back in grid order either way.
    """
    rho_values = [float(r) for r in rho_values]
    if 0.0 not in rho_values:
        raise ValueError("rho grid must include 0.0 (the baseline)")
    pool = training_pool(base_cfg)
    if sequences is None:
        sequences = generate_benchmark(bench.n_sequences, bench.length, bench.gen_cfg, seed=bench.seed)
    cfgs = [replace(base_cfg, rho=rho, out_dir=None) for rho in rho_values]
    if workers <= 1:
        return [_sweep_row(cfg, pool, sequences, track_cfg) for cfg in cfgs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futures = [ex.submit(_sweep_row, cfg, pool, sequences, track_cfg) for cfg in cfgs]
        return [f.result() for f in futures]


def write_sweep(path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_FIELDS)
        for row in rows:
            writer.writerow([repr(float(row['rho'])), *(repr(float(row[k])) for k in SWEEP_FIELDS[1:])])
    return path
