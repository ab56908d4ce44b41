"""``stitchnet`` command line: one subcommand per pipeline phase.

Workdir layout (all paths relative to ``[paths] workdir`` or ``$STITCHNET_WORKDIR``)::

    data/{train,val}_{x,y}.npy   gen-data
    anchors.snnt                 pretrain
    space.snnt                   build-space
    trained.snnt, loss_log.tsv   train
    eval.csv                     eval
    curve.csv, pareto.csv        export-curve

Exit codes: 0 success, 2 validation/contract error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from ..anchors.data import LabeledData, generate_dataset
from ..anchors.pretrain import evaluate, pretrain_anchor
from ..errors import NumericalError, StitchNetError
from ..numerics import Rng
from ..stitching.space import build_space, initialize_layers, stitch_forward
from ..training import EvalTable, evaluate_all, loss_log_lines, pareto_front, select, train
from .checkpoint import load_anchors, load_space, save_anchors, save_space, stored_parameter_count
from .config import RunConfig, load_config

log = logging.getLogger("stitchnet")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


class CliError(StitchNetError):
    pass


def _guard(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise CliError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _data_paths(workdir: Path) -> dict[str, Path]:
    d = workdir / "data"
    return {k: d / f"{k}.npy" for k in ("train_x", "train_y", "val_x", "val_y")}


def _load_data(workdir: Path) -> tuple[LabeledData, LabeledData]:
    paths = _data_paths(workdir)
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise CliError(f"dataset not found ({missing[0]}); run gen-data first")
    arr = {k: np.load(p) for k, p in paths.items()}
    return LabeledData(arr["train_x"], arr["train_y"]), LabeledData(arr["val_x"], arr["val_y"])


def _resolve(cfg: RunConfig, given, default: str) -> Path:
    return Path(given) if given else cfg.workdir / default


# -- subcommands -------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig, args) -> None:
    task = replace(cfg.task, seed=args.seed) if args.seed is not None else cfg.task
    paths = _data_paths(cfg.workdir)
    for p in paths.values():
        _guard(p, args.force)
    train_set, val_set = generate_dataset(task)
    np.save(paths["train_x"], train_set.x)
    np.save(paths["train_y"], train_set.y)
    np.save(paths["val_x"], val_set.x)
    np.save(paths["val_y"], val_set.y)
    counts = np.bincount(train_set.y, minlength=task.classes).tolist()
    print(f"train={len(train_set)} val={len(val_set)} class_counts={counts}")


def cmd_pretrain(cfg: RunConfig, args) -> None:
    hp = replace(cfg.pretrain, seed=args.seed) if args.seed is not None else cfg.pretrain
    out = _guard(_resolve(cfg, args.out, "anchors.snnt"), args.force)
    data = _load_data(cfg.workdir)
    models = []
    for spec in cfg.anchors:
        model = pretrain_anchor(spec, cfg.task, hp, data=data)
        print(f"{spec.name}: val_acc={model.provenance['val_accuracy']!r}")
        models.append(model)
    save_anchors(out, models, {"task": _task_dict(cfg)}, force=True)


def _task_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg.task)
    d.pop("teacher")
    return d


def cmd_build_space(cfg: RunConfig, args) -> None:
    sc = cfg.stitching
    seed = args.seed if args.seed is not None else sc.seed
    out = _guard(_resolve(cfg, args.out, "space.snnt"), args.force)
    anchors, _ = load_anchors(_resolve(cfg, args.anchors, "anchors.snnt"))
    space = build_space(anchors, sc.window, direction=sc.direction, seed=seed)
    samples = None
    if sc.init_method == "least_squares":
        train_set, _ = _load_data(cfg.workdir)
        samples = train_set.subset(sc.n_init, Rng(seed).child("ls-samples")).x
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        residuals = initialize_layers(space, sc.init_method, samples, sc.rcond, seed)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"configs: {len(space.configs)} (anchors {len(space.anchor_configs)}, stitches {len(space.stitches)})")
    print(f"stitching layers: {len(space.layers)} init={sc.init_method}")
    for layer, res in zip(space.layers, residuals):
        shown = "n/a" if res is None else f"{res:.6g}"
        print(f"  layer {layer.layer_id} pair={layer.pair} stage={layer.stage} window={layer.window_id} "
              f"{layer.d_in}->{layer.d_out} residual={shown}")
    save_space(out, space, {"stitching": asdict(sc), "seed": seed}, force=True)


def cmd_train(cfg: RunConfig, args) -> None:
    tc = replace(cfg.training, seed=args.seed) if args.seed is not None else cfg.training
    out = _guard(_resolve(cfg, args.out, "trained.snnt"), args.force)
    log_path = _guard(_resolve(cfg, args.loss_log, "loss_log.tsv"), args.force)
    space, extra = load_space(_resolve(cfg, args.space, "space.snnt"))
    train_set, _ = _load_data(cfg.workdir)
    space, records = train(space, train_set, tc)
    log_path.write_text(loss_log_lines(records))
    save_space(out, space, {**extra, "training": asdict(tc)}, force=True)
    if records:
        tail = records[-min(len(records), 50):]
        print(f"iterations={len(records)} mean_loss_last_{len(tail)}={np.mean([r.loss for r in tail]):.4f}")


def cmd_eval(cfg: RunConfig, args) -> None:
    out = _guard(_resolve(cfg, args.out, "eval.csv"), args.force)
    space, _ = load_space(_resolve(cfg, args.checkpoint, "trained.snnt"))
    _, val_set = _load_data(cfg.workdir)
    table = evaluate_all(space, val_set)
    out.write_text(table.to_csv())
    best = max(table.rows, key=lambda r: (r.val_acc, -r.flops))
    print(f"evaluated {len(table)} configs; best config_id={best.config_id} val_acc={best.val_acc!r}")


def _read_table(path: Path) -> EvalTable:
    if not path.exists():
        raise CliError(f"eval table {path} not found; run eval first")
    return EvalTable.from_csv(path.read_text())


def cmd_select(cfg: RunConfig, args) -> None:
    table = _read_table(_resolve(cfg, args.table, "eval.csv"))
    result = select(table, args.flops_budget)
    line = result.to_line()
    if args.checkpoint:
        # serve the chosen config straight from the single checkpoint file
        space, _ = load_space(args.checkpoint)
        _, val_set = _load_data(cfg.workdir)
        acc, _ = evaluate(lambda x: stitch_forward(space, result.config_id, x), val_set)
        line += f" served_val_acc={acc!r}"
    print(line)


def cmd_export_curve(cfg: RunConfig, args) -> None:
    table = _read_table(_resolve(cfg, args.table, "eval.csv"))
    curve_path = _guard(_resolve(cfg, args.out, "curve.csv"), args.force)
    pareto_path = _guard(_resolve(cfg, args.pareto_out, "pareto.csv"), args.force)
    header = ["flops", "val_acc", "config_id", "pair", "l", "m", "params"]

    def render(rows) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r.flops, repr(float(r.val_acc)), r.config_id, r.pair, r.l, r.m, r.params])
        return buf.getvalue()

    front = pareto_front(table)
    curve_path.write_text(render(table.rows))
    pareto_path.write_text(render(front))
    print(f"curve rows={len(table)} pareto rows={len(front)}")


def cmd_info(cfg: RunConfig, args) -> None:
    """Print a checkpoint's manifest summary and stored parameter count."""
    path = Path(args.checkpoint)
    space, _ = load_space(path)
    anchors = sum(a.num_params() for a in space.anchors)
    layers = sum(l.num_params() for l in space.layers)
    print(json.dumps({
        "configs": len(space.configs),
        "anchors": [a.spec.name for a in space.anchors],
        "anchor_params": anchors,
        "stitch_layer_params": layers,
        "stored_params": stored_parameter_count(path),
    }, sort_keys=True))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "build-space": cmd_build_space,
    "train": cmd_train,
    "eval": cmd_eval,
    "select": cmd_select,
    "export-curve": cmd_export_curve,
    "info": cmd_info,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stitchnet", description="Stitch pretrained anchors into one elastic network.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="TOML run configuration (defaults apply when omitted)")
        sp.add_argument("--workdir", help="override [paths] workdir and $STITCHNET_WORKDIR")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        return sp

    sp = add("gen-data", "generate the synthetic train/val split")
    sp.add_argument("--seed", type=int)
    sp = add("pretrain", "pretrain every anchor")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp = add("build-space", "enumerate stitches and initialize stitching layers")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--anchors")
    sp.add_argument("--out")
    sp = add("train", "jointly train the stitch space")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--space")
    sp.add_argument("--out")
    sp.add_argument("--loss-log")
    sp = add("eval", "evaluate every config on the validation split")
    sp.add_argument("--checkpoint")
    sp.add_argument("--out")
    sp = add("select", "pick the best config under a FLOPs budget")
    sp.add_argument("--table")
    sp.add_argument("--flops-budget", type=float, required=True)
    sp.add_argument("--checkpoint", help="also run the chosen config from this checkpoint")
    sp = add("export-curve", "write the accuracy/FLOPs curve and its Pareto front")
    sp.add_argument("--table")
    sp.add_argument("--out")
    sp.add_argument("--pareto-out")
    sp = add("info", "summarize a space checkpoint")
    sp.add_argument("checkpoint")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.workdir:
            cfg = cfg.with_workdir(args.workdir)
        COMMANDS[args.command](cfg, args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (StitchNetError, ValueError, OSError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
