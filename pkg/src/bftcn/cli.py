"""``bftcn`` command line: window, train, eval, predict, stream, grid, report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import data_io
from .experiments import ExperimentGrid, build_report, load_results, report_csv, run_grid
from .metrics import evaluate, summarize
from .model import build_model, predict
from .streaming import open_stream
from .training import train
from .window import (NetworkConfig, bucket_delay, enumerate_configs, future_window,
                     future_window_seconds, DEFAULT_GRIDS)


def _default_seed() -> int:
    return int(os.environ.get("BFTCN_SEED", "0"))


def _dump(obj) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")


def _add_arch_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_argument_group("architecture")
    g.add_argument("--variant", type=str.upper, choices=["RR", "BF"], required=required)
    g.add_argument("--l", type=int, help="layers per stage (sets both --lpg and --lr)")
    g.add_argument("--lpg", type=int, help="DDRLs in the prediction generator")
    g.add_argument("--lr", type=int, help="DRLs per refinement stage (not a learning rate)")
    g.add_argument("--nr", type=int, default=None, help="number of refinement stages")
    g.add_argument("--wmax", type=int, default=0, help="future bound per layer (BF only)")
    g.add_argument("--feature-maps", type=int, default=128)
    g.add_argument("--classes", type=int, default=6)
    g.add_argument("--fps", type=float, default=30.0)


def _config_from(args, n_classes: int | None = None, fps: float | None = None) -> NetworkConfig:
    lpg = args.lpg if args.lpg is not None else args.l
    lr = args.lr if args.lr is not None else args.l
    if lpg is None or lr is None:
        raise ValueError("give --l, or both --lpg and --lr")
    if args.nr is None:
        raise ValueError("--nr is required")
    if args.variant == "RR" and args.wmax:
        raise ValueError("--wmax only applies to --variant bf")
    return NetworkConfig(args.variant, lpg, lr, args.nr, args.wmax, args.feature_maps,
                         n_classes or args.classes, fps or args.fps)


def _window_record(cfg: NetworkConfig) -> dict:
    fw = future_window(cfg)
    return {**cfg.to_dict(), "fw_frames": fw, "fw_seconds": future_window_seconds(cfg),
            "bucket": bucket_delay(future_window_seconds(cfg)).label, "causal": fw == 0}


def cmd_window(args) -> int:
    if args.enumerate:
        grids = DEFAULT_GRIDS
        if args.variant:
            grids = [g for g in grids if g["variant"] == args.variant]
        configs = enumerate_configs(grids, args.budget, n_feature_maps=args.feature_maps,
                                    n_classes=args.classes, frame_rate_hz=args.fps)
        _dump([_window_record(c) for c in configs])
        return 0
    if args.budget is not None:
        raise ValueError("--budget only applies with --enumerate")
    if not args.variant:
        raise ValueError("--variant is required unless --enumerate is given")
    _dump(_window_record(_config_from(args)))
    return 0


def cmd_train(args) -> int:
    manifest = data_io.read_manifest(args.manifest)
    train_set = manifest.load()
    if not train_set:
        raise ValueError(f"{args.manifest}: manifest lists no videos")
    val_set = data_io.read_manifest(args.val_manifest).load() if args.val_manifest else train_set
    cfg = _config_from(args, len(manifest.classes), manifest.videos[0].fps)
    model = build_model(cfg, args.seed, n_input=train_set[0][0].shape[1],
                        dropout_p=args.dropout, classes=manifest.classes)
    best, history = train(model, train_set, val_set, args.epochs, args.batch_size, args.seed,
                          args.learning_rate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_io.save_checkpoint(out / "model.bftc", best)
    (out / "history.json").write_text(json.dumps(history, indent=2) + "\n")
    _dump({"checkpoint": str(out / "model.bftc"), "history": str(out / "history.json"),
           "epochs": len(history)})
    return 0


def _check_classes(model, manifest, where) -> None:
    if model.classes is not None and list(model.classes) != list(manifest.classes):
        raise ValueError(f"{where}: class list {manifest.classes} does not match "
                         f"checkpoint classes {model.classes}")


def cmd_eval(args) -> int:
    model = data_io.load_checkpoint(args.model)
    manifest = data_io.read_manifest(args.manifest)
    if not manifest.videos:
        raise ValueError(f"{args.manifest}: manifest lists no videos")
    _check_classes(model, manifest, args.manifest)
    fw, fws = future_window(model.config), future_window_seconds(model.config)
    reports = []
    lines = []
    for video, (x, y) in zip(manifest.videos, manifest.load()):
        r = evaluate(predict(model, x), y, model.config.n_classes, fw, fws)
        reports.append(r)
        lines.append({"video": str(video.features), **r.to_dict()})
    lines.append({"summary": True, **summarize(reports)})
    text = "".join(json.dumps(rec) + "\n" for rec in lines)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def _class_names(model) -> list[str]:
    return list(model.classes) if model.classes else [f"G{i}" for i in range(model.config.n_classes)]


def cmd_predict(args) -> int:
    model = data_io.load_checkpoint(args.model)
    x = data_io.read_features(args.features)
    data_io.write_labels(args.out, predict(model, x), _class_names(model), args.format)
    return 0


def cmd_stream(args) -> int:
    model = data_io.load_checkpoint(args.model)
    x = data_io.read_features(args.features)
    names = _class_names(model)
    state = open_stream(model)
    out = open(args.out, "w") if args.out else sys.stdout

    def emit(results):
        for r in results:
            rec = r.to_dict()
            rec["class"] = names[r.label]
            out.write(json.dumps(rec) + "\n")

    try:
        for row in x:
            emit(state.push(row))
        emit(state.close())
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_grid(args) -> int:
    grid = ExperimentGrid.from_json(args.grid)
    results = run_grid(grid, args.train, args.val, args.test, args.out, args.workers)
    _dump({"runs": len(results), "out": str(args.out)})
    return 0


def cmd_report(args) -> int:
    report = build_report(load_results(args.results), args.metric)
    out = Path(args.out) if args.out else Path(args.results)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    (out / "report.csv").write_text(report_csv(report))
    _dump(report)
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bftcn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    w = sub.add_parser("window", help="future window of a configuration")
    _add_arch_flags(w, required=False)
    w.add_argument("--enumerate", action="store_true",
                   help="list grid configurations instead of a single one")
    w.add_argument("--budget", type=float, help="max future window in seconds (with --enumerate)")
    w.set_defaults(func=cmd_window)

    t = sub.add_parser("train", help="train on a dataset manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--val-manifest", help="validation manifest (default: the training set)")
    _add_arch_flags(t)
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--batch-size", type=int, default=2)
    t.add_argument("--learning-rate", type=float, default=1e-3)
    t.add_argument("--dropout", type=float, default=0.5)
    t.add_argument("--seed", type=int, default=_default_seed())
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-video metrics and a mean/std summary")
    e.add_argument("--model", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", help="also write the JSON lines here")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="offline label file for one feature file")
    pr.add_argument("--model", required=True)
    pr.add_argument("--features", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--format", choices=["frames", "segments"], default="segments")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("stream", help="bounded-delay online inference")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--emit", choices=["jsonl"], default="jsonl")
    s.add_argument("--out", help="write JSON lines here instead of stdout")
    s.set_defaults(func=cmd_stream)

    g = sub.add_parser("grid", help="train and evaluate every config of a grid")
    g.add_argument("--grid", required=True, help="grid JSON (variant, L, n_r, w_max, ...)")
    g.add_argument("--train", required=True)
    g.add_argument("--val", required=True)
    g.add_argument("--test", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_grid)

    r = sub.add_parser("report", help="interval table and competitive ratios")
    r.add_argument("results", help="directory containing */result.json")
    r.add_argument("--metric", default="f1@50")
    r.add_argument("--out", help="directory for report.json / report.csv (default: results dir)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError) as e:
        print(f"bftcn {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
