"""Grid runs over (variant, L, N_R, w_max) and the delay-interval report.

Each run writes ``<out>/<name>/result.json``::

    {"name": ..., "config": {...NetworkConfig...}, "fw_frames": int,
     "fw_seconds": float, "metrics": {"accuracy": ..., "f1@50": ..., ...}}

The report buckets runs by future window, picks the best run per variant and
interval by F1@50, and computes competitive ratios against the best acausal
(RR) run.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .data_io import read_manifest, save_checkpoint
from .model import build_model
from .training import evaluate_model, train
from .window import (NetworkConfig, Variant, all_buckets, bucket_delay, future_window,
                     future_window_seconds)

log = logging.getLogger(__name__)

SELECTION_METRIC = "f1@50"


class ReportError(RuntimeError):
    pass


@dataclass
class ExperimentGrid:
    variant: str
    L: list[int]
    n_r: list[int]
    w_max: list[int] = field(default_factory=lambda: [0])
    n_feature_maps: int = 128
    epochs: int = 40
    batch_size: int = 2
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        self.variant = Variant.parse(self.variant).value
        for name in ("L", "n_r", "w_max"):
            if not getattr(self, name):
                raise ValueError(f"grid list {name!r} is empty")

    @classmethod
    def from_json(cls, path) -> "ExperimentGrid":
        return cls(**json.loads(Path(path).read_text()))

    def configs(self, n_classes: int, fps: float = 30.0) -> list[NetworkConfig]:
        w_values = self.w_max if self.variant == "BF" else [0]
        return [NetworkConfig(self.variant, L, L, n_r, w, self.n_feature_maps, n_classes, fps)
                for L in self.L for n_r in self.n_r for w in w_values]


def run_name(cfg: NetworkConfig) -> str:
    name = f"{cfg.variant.value}_L{cfg.l_pg}_NR{cfg.n_r}"
    return name + (f"_W{cfg.w_max}" if cfg.variant is Variant.BF else "")


def run_one(cfg: NetworkConfig, train_set, val_set, test_set, out_dir, epochs: int,
            batch_size: int = 2, lr: float = 1e-3, seed: int = 0, classes=None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg, seed, n_input=train_set[0][0].shape[1], classes=classes)
    best, history = train(model, train_set, val_set, epochs, batch_size, seed, lr)
    save_checkpoint(out_dir / "model.bftc", best)
    (out_dir / "history.json").write_text(json.dumps(history, indent=2) + "\n")
    result = {"name": out_dir.name, "config": cfg.to_dict(),
              "fw_frames": future_window(cfg), "fw_seconds": future_window_seconds(cfg),
              "metrics": evaluate_model(best, test_set)["mean"]}
    (out_dir / "result.json").write_text(json.dumps(result, indent=2) + "\n")
    return result


def _grid_job(args):
    cfg, manifests, out_dir, grid = args
    sets = [read_manifest(m).load() for m in manifests]
    classes = read_manifest(manifests[0]).classes
    return run_one(cfg, *sets, out_dir, grid.epochs, grid.batch_size, grid.lr, grid.seed, classes)


def run_grid(grid: ExperimentGrid, train_manifest, val_manifest, test_manifest, out_dir,
             workers: int = 1) -> list[dict]:
    """Train and evaluate every config in ``grid``; one directory per run."""
    manifest = read_manifest(train_manifest)
    fps = manifest.videos[0].fps if manifest.videos else 30.0
    configs = grid.configs(len(manifest.classes), fps)
    jobs = [(cfg, (train_manifest, val_manifest, test_manifest), Path(out_dir) / run_name(cfg), grid)
            for cfg in configs]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_grid_job, jobs))
    return [_grid_job(j) for j in jobs]


def load_results(results_dir) -> list[dict]:
    paths = sorted(Path(results_dir).rglob("result.json"))
    results = []
    for p in paths:
        r = json.loads(p.read_text())
        r.setdefault("name", p.parent.name)
        results.append(r)
    return results


def _fw_seconds(result: dict) -> float:
    if "config" in result:
        return future_window_seconds(NetworkConfig.from_dict(result["config"]))
    return float(result["fw_seconds"])


def _variant(result: dict) -> str:
    if "config" in result:
        return Variant.parse(result["config"]["variant"]).value
    return Variant.parse(result["variant"]).value


def build_report(results: list[dict], metric: str = SELECTION_METRIC) -> dict:
    """Interval table with global and local competitive ratios.

    The acausal baseline is the best RR run overall. Intervals without any
    run are kept with null entries so the table always has 12 rows.
    """
    if not results:
        raise ReportError("no result files found")
    rr = [r for r in results if _variant(r) == "RR"]
    if not rr:
        raise ReportError("no acausal (RR) baseline run among the results")
    baseline = max(rr, key=lambda r: r["metrics"][metric])
    best_offline = baseline["metrics"][metric]

    table = {b.index: {"interval": b.label, "low": b.low, "high": b.high, "BF": None, "RR": None}
             for b in all_buckets()}
    for r in results:
        b = bucket_delay(_fw_seconds(r))
        row = table[b.index]
        v = _variant(r)
        if row[v] is None or r["metrics"][metric] > row[v]["score"]:
            row[v] = {"run": r["name"], "score": r["metrics"][metric], "fw_seconds": _fw_seconds(r)}

    rows = []
    for idx in sorted(table):
        row = table[idx]
        for v in ("BF", "RR"):
            entry = row[v]
            row[f"global_ratio_{v}"] = None if entry is None else entry["score"] / best_offline
        if row["BF"] is not None and row["RR"] is not None and row["RR"]["score"] > 0:
            row["local_ratio"] = row["BF"]["score"] / row["RR"]["score"]
        else:
            row["local_ratio"] = None
        rows.append(row)
    return {"metric": metric, "baseline": {"run": baseline["name"], "score": best_offline},
            "intervals": rows}


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["interval", "bf_run", "bf_score", "rr_run", "rr_score",
                "global_ratio_bf", "global_ratio_rr", "local_ratio"])

    def cell(x):
        return "" if x is None else x

    for row in report["intervals"]:
        bf, rr = row["BF"] or {}, row["RR"] or {}
        w.writerow([row["interval"], cell(bf.get("run")), cell(bf.get("score")),
                    cell(rr.get("run")), cell(rr.get("score")),
                    cell(row["global_ratio_BF"]), cell(row["global_ratio_RR"]),
                    cell(row["local_ratio"])])
    return buf.getvalue()
