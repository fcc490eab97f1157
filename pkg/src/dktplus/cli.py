"""Command-line entry point: simulate, train, eval, gridsearch, heatmap, matrix.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .data import SimConfig, TripletParseError, generate_simulated, read_triplet_file, split_train_test, write_triplet_file
from .metrics import UndefinedAUCError, correctness_matrix
from .model import CELL_KINDS, CheckpointError, ModelConfig, init_params, load_checkpoint, predict, save_checkpoint
from .objective import LossConfig
from .trainer import (OPTIMIZERS, GridSpec, TrainConfig, TrainingDiverged, baseline_report, evaluate,
                      grid_search, select_best, train)
from .viz import HeatmapExport, heatmap_svg, lineplot_svg

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("dktplus")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build(factory, **kwargs):
    # config invariants are usage errors
    try:
        return factory(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# flag groups

def _add_data(p, required=True):
    p.add_argument("--data", required=required, help="triplet-format interaction log")
    p.add_argument("--num-skills", type=int, default=None,
                   help="number of skills M (default: 1 + largest id in the file)")


def _add_split(p):
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=0)


def _add_model(p):
    g = p.add_argument_group("model")
    g.add_argument("--hidden-size", type=int, default=200)
    g.add_argument("--cell-kind", choices=CELL_KINDS, default="lstm")
    g.add_argument("--encoding", choices=("compressed", "concat"), default="compressed")
    g.add_argument("--dropout-rate", type=float, default=0.5)
    g.add_argument("--init-stddev", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0, help="seeds initialization, shuffling and dropout")


def _add_train(p):
    g = p.add_argument_group("training")
    g.add_argument("--learning-rate", type=float, default=0.01)
    g.add_argument("--clip-threshold", type=float, default=3.0)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--max-epochs", type=int, default=100)
    g.add_argument("--patience", type=int, default=5)
    g.add_argument("--optimizer", choices=OPTIMIZERS, default="sgd")
    g.add_argument("--val-fraction", type=float, default=0.2,
                   help="share of the training split held out for early stopping")
    g.add_argument("--paper-faithful", action="store_true",
                   help="early-stop on the test split instead of a validation split")


def _add_loss(p):
    g = p.add_argument_group("regularization")
    g.add_argument("--lambda-r", type=float, default=0.0)
    g.add_argument("--lambda-w1", type=float, default=0.0)
    g.add_argument("--lambda-w2", type=float, default=0.0)


def _model_cfg(args) -> ModelConfig:
    return _build(ModelConfig, hidden_size=args.hidden_size, cell_kind=args.cell_kind,
                  encoding=args.encoding, dropout_rate=args.dropout_rate,
                  init_stddev=args.init_stddev, seed=args.seed)


def _train_cfg(args) -> TrainConfig:
    if not 0 < args.val_fraction < 1:
        raise UsageError("--val-fraction must lie in (0, 1)")
    return _build(TrainConfig, learning_rate=args.learning_rate, clip_threshold=args.clip_threshold,
                  batch_size=args.batch_size, max_epochs=args.max_epochs, patience=args.patience,
                  optimizer=args.optimizer, early_stop_on="test" if args.paper_faithful else "validation",
                  seed=args.seed)


def _load_data(args):
    path = Path(args.data)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    ds = read_triplet_file(path, args.num_skills)
    return ds, hashlib.sha256(path.read_bytes()).hexdigest()


def _split(ds, test_fraction, seed):
    try:
        return split_train_test(ds, test_fraction, seed)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _train_and_test(ds, args, model_cfg, loss_cfg, train_cfg):
    train_set, test_set = _split(ds, args.test_fraction, args.split_seed)
    if train_cfg.early_stop_on == "test":
        fit_set, monitor = train_set, test_set
    else:
        fit_set, monitor = _split(train_set, args.val_fraction, args.split_seed + 1)
    params, history = train(fit_set, monitor, model_cfg, loss_cfg, train_cfg)
    return params, history, evaluate(params, test_set, model_cfg)


# commands

def cmd_simulate(args) -> int:
    cfg = _build(SimConfig, n_students=args.students, n_exercises=args.exercises,
                 n_concepts=args.concepts, guess_c=args.guess, seed=args.seed)
    ds = generate_simulated(cfg)
    write_triplet_file(args.out, ds)
    print(f"students={len(ds)} M={ds.num_skills} mean_correctness={ds.mean_correctness():.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    model_cfg, train_cfg = _model_cfg(args), _train_cfg(args)
    loss_cfg = _build(LossConfig, lambda_r=args.lambda_r, lambda_w1=args.lambda_w1, lambda_w2=args.lambda_w2)
    if not 0 < args.test_fraction < 1:
        raise UsageError("--test-fraction must lie in (0, 1)")
    ds, digest = _load_data(args)
    params, history, report = _train_and_test(ds, args, model_cfg, loss_cfg, train_cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "data_sha256": digest,
        "split_seed": args.split_seed,
        "test_fraction": args.test_fraction,
        "val_fraction": args.val_fraction,
        "loss": asdict(loss_cfg),
        "train": asdict(train_cfg),
        "best_epoch": history.best_epoch,
    }
    save_checkpoint(out / "model.ckpt", params, model_cfg, meta)
    (out / "history.txt").write_text(history.to_text())
    (out / "report.txt").write_text(report.to_text())
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_eval(args) -> int:
    ds, _ = _load_data(args)
    ckpt = load_checkpoint(args.checkpoint, num_skills=ds.num_skills)
    if args.split == "test":
        meta = ckpt.meta
        if "split_seed" not in meta:
            raise DataError("checkpoint does not record its split; use --split all")
        ds = _split(ds, meta["test_fraction"], meta["split_seed"])[1]
    text = evaluate(ckpt.params, ds, ckpt.config).to_text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _format_row(cfg: LossConfig, rep) -> str:
    cells = [f"{v:g}" for v in cfg.as_tuple()] + [f"{getattr(rep, k):.6f}" for k in ("auc_n", "auc_c", "w1", "w2", "m1", "m2")]
    return "\t".join(cells)


def cmd_gridsearch(args) -> int:
    model_cfg, train_cfg = _model_cfg(args), _train_cfg(args)
    grid = _build(GridSpec, lambda_r=tuple(args.grid_r), lambda_w1=tuple(args.grid_w1),
                  lambda_w2=tuple(args.grid_w2))
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    ds, _ = _load_data(args)
    train_set, _ = _split(ds, args.test_fraction, args.split_seed)
    results = grid_search(train_set, grid, args.folds, model_cfg, train_cfg,
                          seed=args.split_seed, workers=args.workers)
    if not any(cfg.is_plain for cfg, _ in results):
        # the selection rule compares against plain DKT, so evaluate it too
        base = GridSpec((0.0,), (0.0,), (0.0,))
        results += grid_search(train_set, base, args.folds, model_cfg, train_cfg,
                               seed=args.split_seed, workers=args.workers)
    choice = select_best(results, baseline_report(results))

    header = "lambda_r\tlambda_w1\tlambda_w2\tauc_n\tauc_c\tw1\tw2\tm1\tm2"
    table = "\n".join([header, *(_format_row(cfg, rep) for cfg, rep in results)]) + "\n"
    lr, lw1, lw2 = choice.loss_config.as_tuple()
    selected = (f"lambda_r={lr!r}\nlambda_w1={lw1!r}\nlambda_w2={lw2!r}\nfallback={int(choice.fallback)}\n"
                + choice.report.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "grid.tsv").write_text(table)
        (out / "selected.txt").write_text(selected)
    sys.stdout.write(table + "\nselected:\n" + selected)
    return EXIT_OK


def cmd_heatmap(args) -> int:
    ds, _ = _load_data(args)
    ckpt = load_checkpoint(args.checkpoint, num_skills=ds.num_skills)
    if not 0 <= args.student < len(ds):
        raise UsageError(f"--student must lie in [0, {len(ds)})")
    seq = ds.sequences[args.student]
    hm = HeatmapExport.from_outputs(predict(ckpt.params, ckpt.config, [seq])[0], seq)
    prefix = args.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.csv").write_text(hm.to_csv())
    Path(f"{prefix}_heatmap.svg").write_text(heatmap_svg(hm))
    Path(f"{prefix}_lines.svg").write_text(lineplot_svg(hm))
    print(f"skills={len(hm.skills)} steps={len(hm.labels)} mean_adjacent_change={hm.mean_adjacent_change():.6f}")
    return EXIT_OK


def cmd_matrix(args) -> int:
    ds, _ = _load_data(args)
    try:
        cm = correctness_matrix(ds, args.skill_a, args.skill_b)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    sys.stdout.write(cm.format_table())
    return EXIT_OK


def cmd_init(args) -> int:
    """Write an untrained checkpoint (used for degenerate-model checks)."""
    cfg = _model_cfg(args)
    if args.num_skills is None or args.num_skills < 2:
        raise UsageError("--num-skills must be at least 2")
    params = init_params(cfg, args.num_skills)
    if args.zero:
        for arr in params.arrays():
            arr[...] = 0.0
    save_checkpoint(args.out, params, cfg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dktplus", description="Deep knowledge tracing with prediction-consistency regularizers.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic IRT data set")
    p.add_argument("--out", required=True)
    p.add_argument("--students", type=int, default=2000)
    p.add_argument("--exercises", type=int, default=50)
    p.add_argument("--concepts", type=int, default=5)
    p.add_argument("--guess", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train and report on the test split")
    _add_data(p)
    p.add_argument("--out", required=True, help="output directory")
    _add_split(p)
    _add_model(p)
    _add_train(p)
    _add_loss(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_data(p)
    p.add_argument("--split", choices=("all", "test"), default="test")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gridsearch", help="cross-validated grid over the three weights")
    _add_data(p)
    p.add_argument("--out", default=None, help="output directory")
    _add_split(p)
    _add_model(p)
    _add_train(p)
    defaults = GridSpec()
    p.add_argument("--grid-r", type=float, nargs="+", default=list(defaults.lambda_r))
    p.add_argument("--grid-w1", type=float, nargs="+", default=list(defaults.lambda_w1))
    p.add_argument("--grid-w2", type=float, nargs="+", default=list(defaults.lambda_w2))
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("heatmap", help="export one student's predictions as CSV and SVG")
    p.add_argument("--checkpoint", required=True)
    _add_data(p)
    p.add_argument("--student", type=int, required=True)
    p.add_argument("--out-prefix", default="heatmap")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("matrix", help="correctness matrix for adjacent skill pairs")
    _add_data(p)
    p.add_argument("--skill-a", type=int, required=True)
    p.add_argument("--skill-b", type=int, required=True)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("init", help="write an untrained checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--num-skills", type=int, required=True)
    p.add_argument("--zero", action="store_true", help="zero every parameter")
    _add_model(p)
    p.set_defaults(func=cmd_init)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dktplus: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, TripletParseError, CheckpointError, UndefinedAUCError, OSError, ValueError) as exc:
        print(f"dktplus: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"dktplus: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
