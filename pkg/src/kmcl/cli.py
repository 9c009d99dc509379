"""Command-line entry point: ``kmcl <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 validation error, 2 verification failure, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .data import DataFormatError, Dataset, concat, generate, load_table, write_table
from .grad import init_params
from .metrics import PredictionSet, evaluate
from .trainer import CURVE_COLUMNS, TrainingAborted, default_model, train
from .verify import GRAD_TOLERANCE, SIM_TOLERANCE, grad_problem, oracle_suite, run_grad_check

log = logging.getLogger("kmcl")

EXIT_OK, EXIT_INVALID, EXIT_VERIFY, EXIT_ABORT = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_manifest(out: Path, command: str, cfg: RunConfig, extra: dict[str, str]) -> None:
    """``key = value`` text: the full config (re-parseable) followed by run facts as comments."""
    lines = [f"# command = {command}"] + [f"# {k} = {v}" for k, v in extra.items()]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n" + cfg.to_text())


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be >= 0, got {args.seed}")
        cfg = cfg.with_seed(args.seed)
    return cfg


def _split_paths(directory: Path, split: str) -> tuple[Path, Path]:
    return directory / f"{split}_features.csv", directory / f"{split}_labels.csv"


def _load_dataset(cfg: RunConfig, data_dir: str | None, generate_if_missing: bool) -> Dataset:
    """From ``--data DIR`` (synth-gen layout), ``[paths]`` tables, or freshly generated."""
    if data_dir:
        d = Path(data_dir)
        if not d.is_dir():
            raise CliError(f"--data {d}: no such directory")
        parts = []
        for split in ("train", "test"):
            fp, lp = _split_paths(d, split)
            if fp.exists() or lp.exists():
                parts.append(load_table(fp, lp, split))
        if not parts:
            raise CliError(f"--data {d}: no train_/test_ feature and label tables found")
        return concat(*parts)
    p = cfg.paths
    if p.features or p.labels:
        parts = [load_table(p.features, p.labels, "train")]
        if p.test_features or p.test_labels:
            parts.append(load_table(p.test_features, p.test_labels, "test"))
        return concat(*parts)
    if generate_if_missing:
        return generate(cfg.data)
    raise CliError("no dataset: pass --data DIR or set [paths] features/labels")


def cmd_synth_gen(cfg: RunConfig, out: Path, args) -> int:
    ds = generate(cfg.data)
    written = []
    for split in ("train", "test"):
        part = ds.subset(split)
        if len(part):
            fp, lp = _split_paths(out, split)
            write_table(part, fp, lp)
            written += [fp.name, lp.name]
    _write_manifest(out, "synth-gen", cfg, {"files": " ".join(written), "rows": str(len(ds))})
    print(f"wrote {', '.join(written)} to {out}")
    return EXIT_OK


def _curve_rows(curves):
    return [[_fmt(row[c]) if c != "epoch" else str(int(row[c])) for c in CURVE_COLUMNS] for row in curves]


def _metric_rows(params, model, ds: Dataset):
    from .grad import predict

    scores = predict(params, model, ds.inputs)
    return [(m, c, _fmt(v)) for m, c, v in evaluate(PredictionSet(scores, ds.labels))]


def cmd_train(cfg: RunConfig, out: Path, args) -> int:
    ds = _load_dataset(cfg, args.data, generate_if_missing=True)
    if len(ds.train()) < cfg.train.batch_size:
        raise CliError(f"train.batch_size {cfg.train.batch_size} exceeds {len(ds.train())} training rows")
    encoder = cfg.encoder.build(ds.input_dim)
    model = default_model(ds, cfg.train, encoder)
    try:
        result = train(ds, cfg.train, model)
    except TrainingAborted as exc:
        raise CliError(f"training aborted: {exc}", EXIT_ABORT) from None
    save_checkpoint(out / "checkpoint.txt", result.eval_params, model, cfg.loss.similarity)
    _write_csv(out / "curves.csv", CURVE_COLUMNS, _curve_rows(result.curves))
    eval_ds = ds.test() if len(ds.test()) else ds.train()
    _write_csv(out / "metrics.csv", ("metric", "class", "value"), _metric_rows(result.eval_params, model, eval_ds))
    final = result.curves[-1]["test_mAP"] if result.curves else float("nan")
    _write_manifest(out, "train", cfg, {
        "files": "checkpoint.txt curves.csv metrics.csv",
        "train_rows": str(len(ds.train())),
        "test_rows": str(len(ds.test())),
        "final_test_mAP": _fmt(final),
    })
    print(f"trained {len(result.curves)} epochs; final test mAP {final:.4f}; outputs in {out}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, out: Path, args) -> int:
    ckpt = args.checkpoint or cfg.paths.checkpoint
    if not ckpt:
        raise CliError("eval needs --checkpoint PATH or [paths] checkpoint")
    ds = _load_dataset(cfg, args.data, generate_if_missing=True)
    params, model, similarity = load_checkpoint(ckpt, expect_classes=ds.n_classes, expect_input_dim=ds.input_dim)
    eval_ds = ds.subset(args.split) if args.split != "all" else ds
    if len(eval_ds) == 0:
        raise CliError(f"dataset has no rows in split {args.split!r}")
    rows = _metric_rows(params, model, eval_ds)
    _write_csv(out / "metrics.csv", ("metric", "class", "value"), rows)
    _write_manifest(out, "eval", cfg, {"checkpoint": str(ckpt), "split": args.split, "rows": str(len(eval_ds))})
    print(f"mAP {float(rows[0][2]):.4f} on {len(eval_ds)} {args.split} rows")
    return EXIT_OK


def cmd_init_checkpoint(cfg: RunConfig, out: Path, args) -> int:
    ds = _load_dataset(cfg, args.data, generate_if_missing=True)
    model = default_model(ds, cfg.train, cfg.encoder.build(ds.input_dim))
    params = init_params(model, np.random.default_rng(cfg.seed))
    save_checkpoint(out / "checkpoint.txt", params, model, cfg.loss.similarity)
    print(f"wrote untrained checkpoint to {out / 'checkpoint.txt'}")
    return EXIT_OK


def cmd_sim_verify(cfg: RunConfig, out: Path, args) -> int:
    v = cfg.verify
    d1 = v.draws_1d if args.draws_1d is None else args.draws_1d
    d2 = v.draws_2d if args.draws_2d is None else args.draws_2d
    if d1 < 0 or d2 < 0:
        raise CliError("draw counts must be >= 0")
    points = v.quadrature_points or None
    rows = oracle_suite(d1, d2, cfg.seed, points, inject_wrong_exponent=args.inject_wrong_exponent)
    _write_csv(out / "sim_verify.csv", ("kind", "dim", "params", "closed_form", "oracle", "rel_err"),
               [(r.kind, r.dim, r.params, _fmt(r.closed_form), _fmt(r.oracle), _fmt(r.rel_err)) for r in rows])
    failed = [r for r in rows if not r.rel_err <= SIM_TOLERANCE]
    worst = max((r.rel_err for r in rows), default=0.0)
    _write_manifest(out, "sim-verify", cfg, {"rows": str(len(rows)), "failed": str(len(failed)),
                                            "max_rel_err": _fmt(worst)})
    print(f"{len(rows)} comparisons, {len(failed)} above {SIM_TOLERANCE:g}, max rel err {worst:.3e}")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_grad_check(cfg: RunConfig, out: Path, args) -> int:
    v = cfg.verify
    steps = args.h or [v.grad_h]
    for h in steps:
        if not 1e-7 <= h <= 1e-3:
            raise CliError(f"--h {h}: step must be in [1e-7, 1e-3]")
    problem = grad_problem(cfg.seed, v.grad_classes, v.grad_batch, v.grad_hidden, cfg.loss)
    rows, per_h = [], {}
    for h in steps:
        res = run_grad_check(problem, cfg.seed, h, corrupt=args.corrupt_gradient)
        per_h[h] = res.max_rel_err
        rows += [(_fmt(h), name, _fmt(a), _fmt(n), _fmt(e))
                 for name, a, n, e in zip(res.names, res.analytic, res.numeric, res.rel_err)]
        print(f"h={h:g}: max rel err {res.max_rel_err:.3e} at {res.worst_name}")
    _write_csv(out / "grad_check.csv", ("h", "coordinate", "analytic", "numeric", "rel_err"), rows)
    best = min(per_h.values())
    _write_manifest(out, "grad-check", cfg, {f"max_rel_err_h{h:g}": _fmt(e) for h, e in per_h.items()})
    # one step size in the sweep must resolve the gradient; others may be truncation- or roundoff-limited
    return EXIT_OK if best <= GRAD_TOLERANCE else EXIT_VERIFY


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "init-checkpoint": cmd_init_checkpoint,
    "sim-verify": cmd_sim_verify,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kmcl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file (see kmcl.config)")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        return p

    common(sub.add_parser("synth-gen", help="write a synthetic dataset as CSV tables"))
    p = common(sub.add_parser("train", help="train and write checkpoint, curves and metrics"))
    p.add_argument("--data", help="directory from synth-gen (default: [paths] or generate)")
    p = common(sub.add_parser("eval", help="evaluate a checkpoint on a dataset"))
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("train", "test", "all"))
    p = common(sub.add_parser("init-checkpoint", help="write an untrained checkpoint (chance baseline)"))
    p.add_argument("--data")
    p = common(sub.add_parser("sim-verify", help="closed-form similarities vs quadrature"))
    p.add_argument("--draws-1d", type=int)
    p.add_argument("--draws-2d", type=int)
    p.add_argument("--inject-wrong-exponent", action="store_true", help=argparse.SUPPRESS)
    p = common(sub.add_parser("grad-check", help="analytic gradient vs central differences"))
    p.add_argument("--h", type=float, action="append", help="finite-difference step; repeat to sweep")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, DataFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
