"""Command-line entry point.

Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import config as C
from . import gradcheck
from . import model as M
from . import trainer as TR
from .data import generate_benchmark, read_benchmark, write_benchmark
from .evaluation import ope_evaluate, write_metrics
from .tracker import TrackResult, track_sequence

log = logging.getLogger("drci")

_GLOBAL_HELP = {
    "seed": "random seed; overrides the config's seed (train, sweep-rho) or bench.seed (gen-data)",
    "config": "flat key = value run file; keys and defaults are listed below",
    "out": "output directory",
}


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _add_globals(p: argparse.ArgumentParser) -> None:
    # SUPPRESS lets the flags go before or after the subcommand
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=_GLOBAL_HELP["seed"])
    p.add_argument("--config", type=Path, default=argparse.SUPPRESS, help=_GLOBAL_HELP["config"])
    p.add_argument("--out", type=Path, default=argparse.SUPPRESS, help=_GLOBAL_HELP["out"])


def _epilog() -> str:
    lines = "".join(f"  {line}\n" for line in C.dumps().splitlines())
    return f"config keys (defaults):\n{lines}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drci",
        description="Train, run and evaluate the contrastive Siamese tracker on synthetic video.",
        formatter_class=_Formatter,
        epilog=_epilog(),
    )
    _add_globals(parser)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=_Formatter, epilog=_epilog())
        _add_globals(p)
        return p

    add("gen-data", "write a synthetic benchmark (bench.* keys) to --out")

    add("train", "fit a model from the config; writes model.ckpt, train_log.csv and config.txt to --out")

    p = add("track", "run the tracker over a benchmark; writes one <sequence>.csv per sequence to --out")
    p.add_argument("--checkpoint", type=Path, required=True, help="model.ckpt from train")
    p.add_argument("--data", type=Path, required=True, help="benchmark directory from gen-data")
    p.add_argument("--workers", type=int, default=1, help="processes, one sequence each")

    p = add("eval", "score tracker output against ground truth; prints metrics, writes curves to --out")
    p.add_argument("--data", type=Path, required=True, help="benchmark directory from gen-data")
    p.add_argument("--results", type=Path, required=True, help="directory of <sequence>.csv files from track")
    p.add_argument("--skip-first", action="store_true", help="leave the initialisation frame out of the curves")

    p = add("sweep-rho", "train one model per rho and evaluate each; writes sweep.csv to --out")
    p.add_argument(
        "--rho",
        type=_float_list,
        default=",".join(str(r) for r in TR.DEFAULT_RHO_GRID),
        help="comma-separated grid, must include 0.0",
    )
    p.add_argument("--data", type=Path, default=None, help="held-out benchmark directory (default: generate from bench.*)")
    p.add_argument("--workers", type=int, default=1, help="processes, one rho each")

    p = add("gradcheck", "finite-difference check of every op and the full objective; exit 1 on any failure")
    p.add_argument("--rounds", type=int, default=2, help="random configurations per op")
    p.add_argument("--composite", type=int, default=2, help="seeds for the full-objective check")
    return parser


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _run_config(args) -> C.RunConfig:
    return C.load(args.config) if getattr(args, "config", None) else C.RunConfig()


def _need_out(args) -> Path:
    out = getattr(args, "out", None)
    if out is None:
        raise C.ConfigError(f"{args.command} needs --out")
    return out


def _cmd_gen_data(args, run: C.RunConfig) -> int:
    out = _need_out(args)
    bench = run.bench
    seed = getattr(args, "seed", bench.seed)
    seqs = generate_benchmark(bench.n_sequences, bench.length, bench.gen_cfg, seed=seed)
    paths = write_benchmark(out, seqs)
    print(f"wrote {len(paths)} sequences to {out}")
    return 0


def _train_cfg(args, run: C.RunConfig, out: Path | None) -> TR.TrainConfig:
    cfg = run.train
    if hasattr(args, "seed"):
        cfg = replace(cfg, seed=args.seed)
    return replace(cfg, out_dir=str(out) if out else None)


def _cmd_train(args, run: C.RunConfig) -> int:
    out = _need_out(args)
    cfg = _train_cfg(args, run, out)
    C.save(out / "config.txt", replace(run, train=cfg))
    _, records = TR.fit(cfg)
    last = records[-1]
    print(f"steps={len(records)} l_total={last['l_total']!r} l_crq={last['l_crq']!r} l_drl={last['l_drl']!r}")
    print(f"checkpoint={out / 'model.ckpt'}")
    return 0


def _track_one(params, seq, track_cfg):
    return track_sequence(params, seq, track_cfg)


def _cmd_track(args, run: C.RunConfig) -> int:
    out = _need_out(args)
    params = M.load_checkpoint(args.checkpoint)
    named = read_benchmark(args.data)
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as ex:
            futures = [ex.submit(_track_one, params, seq, run.track) for _, seq in named]
            results = [f.result() for f in futures]
    else:
        results = [_track_one(params, seq, run.track) for _, seq in named]
    frames = 0
    for (name, _), res in zip(named, results):
        res.write_csv(out / f"{name}.csv")
        frames += len(res)
    total_s = sum(sum(r.times_ms) for r in results) / 1000.0
    print(f"tracked {len(results)} sequences, {frames} frames, fps={frames / total_s if total_s > 0 else 0.0!r}")
    return 0


def _cmd_eval(args, run: C.RunConfig) -> int:
    named = read_benchmark(args.data)
    results = []
    for name, _ in named:
        path = args.results / f"{name}.csv"
        if not path.exists():
            raise FileNotFoundError(f"no tracker output for sequence {name}: {path}")
        results.append(TrackResult.read_csv(path))
    ev = ope_evaluate(results, [seq for _, seq in named], [name for name, _ in named], not args.skip_first)
    print(f"precision20={ev.precision20!r}")
    print(f"auc={ev.auc!r}")
    print(f"fps={ev.fps!r}")
    out = getattr(args, "out", None)
    if out is not None:
        write_metrics(out, ev)
    return 0


def _cmd_sweep(args, run: C.RunConfig) -> int:
    out = _need_out(args)
    cfg = _train_cfg(args, run, None)
    sequences = [seq for _, seq in read_benchmark(args.data)] if args.data else None
    rows = TR.sweep_rho(cfg, args.rho, run.bench, run.track, sequences=sequences, workers=args.workers)
    path = TR.write_sweep(out / "sweep.csv", rows)
    print(path.read_text(), end="")
    return 0


def _cmd_gradcheck(args, run: C.RunConfig) -> int:
    seed = getattr(args, "seed", 0)
    results, seconds = gradcheck.run_suite(seed, args.rounds, args.composite, log=print)
    failed = [r for r in results if not r.ok]
    summary = f"{len(results) - len(failed)}/{len(results)} checks passed in {seconds:.1f} s"
    print(summary)
    out = getattr(args, "out", None)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        lines = [f"{r.name},{r.error!r},{r.tol!r},{'ok' if r.ok else 'FAIL'}" for r in results]
        (out / "gradcheck.csv").write_text("check,rel_error,tolerance,status\n" + "\n".join(lines) + "\n")
    return 1 if failed else 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "track": _cmd_track,
    "eval": _cmd_eval,
    "sweep-rho": _cmd_sweep,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help exits 0, usage errors exit 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        run = _run_config(args)
        return _COMMANDS[args.command](args, run)
    except (ValueError, OSError, FloatingPointError, TR.TrainingDiverged) as exc:
        print(f"drci {args.command}: error: {exc}", file=sys.stderr)
        return 1


cli = main

if __name__ == "__main__":
    sys.exit(main())
