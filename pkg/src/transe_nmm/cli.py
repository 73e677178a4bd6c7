"""Command-line entry point: ``transe-nmm <command> [options]``.

Settings resolve as built-in defaults, then a YAML ``--config`` file, then
flags. Every command writes a resolved ``config.yaml`` that reproduces the run.
"""

from __future__ import annotations

import argparse
import copy
import csv
import difflib
import io
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint, vocab_hash
from .data import DatasetFormatError, load_dataset
from .evaluation import EvalReport, FilterSet, evaluate
from .graph import build_neighbor_index, relation_name
from .kernels import Scorer
from .model import Hyperparams, ModelParams, mixture_weights
from .trainer import SELECTION_METRICS, TrainingError, train

log = logging.getLogger("transe_nmm")

TASKS = ("classification", "entity-prediction", "relation-prediction")

DEFAULTS = {
    "data": {"train": None, "valid": None, "test": None, "format": "tsv-labeled"},
    "task": "classification",
    "hyperparams": Hyperparams().to_dict(),
    "training": {"eval_every": 1, "val_max_triples": None, "workers": 1, "backend": "auto"},
    "grid": {"delta": [0, 1, 5, 10], "lam": [0.005, 0.01, 0.05]},
    "tau_sweep": [10, 100, 500],
    "jobs": 1,
    "out": "runs/latest",
}

# flag dest -> (config section, key)
FLAG_KEYS = {
    "train": ("data", "train"), "valid": ("data", "valid"), "test": ("data", "test"),
    "format": ("data", "format"), "task": (None, "task"),
    "tau": ("hyperparams", "tau"), "delta": ("hyperparams", "delta"),
    "lam": ("hyperparams", "lam"), "gamma": ("hyperparams", "gamma"),
    "dim": ("hyperparams", "k"), "lr": ("hyperparams", "eta"), "norm": ("hyperparams", "norm"),
    "batch": ("hyperparams", "batch_size"), "epochs_per_stage": ("hyperparams", "epochs_per_stage"),
    "seed": ("hyperparams", "seed"),
    "eval_every": ("training", "eval_every"), "val_max_triples": ("training", "val_max_triples"),
    "workers": ("training", "workers"), "backend": ("training", "backend"),
    "jobs": (None, "jobs"), "out": (None, "out"),
}
GRID_FLAGS = {"grid_delta": "delta", "grid_lambda": "lam", "grid_tau": "tau", "grid_gamma": "gamma",
              "grid_dim": "k", "grid_lr": "eta", "grid_norm": "norm"}


class CliError(Exception):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise CliError(f"{path}: config must be a mapping")
        cfg = _merge(cfg, loaded)
    for dest, (section, key) in FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val is not None:
            (cfg[section] if section else cfg)[key] = val
    grid_flags = {key: getattr(args, dest) for dest, key in GRID_FLAGS.items()
                  if getattr(args, dest, None) is not None}
    if grid_flags:
        cfg["grid"] = grid_flags
    if getattr(args, "tau_sweep", None) is not None:
        cfg["tau_sweep"] = args.tau_sweep
    if cfg["task"] not in TASKS:
        raise CliError(f"unknown task {cfg['task']!r}; choose from {', '.join(TASKS)}")
    return cfg


def _hp(cfg: dict) -> Hyperparams:
    try:
        return Hyperparams.from_dict(cfg["hyperparams"])
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid hyperparameters: {exc}") from exc


def _dataset(cfg: dict):
    d = cfg["data"]
    for split in ("train", "valid", "test"):
        if not d.get(split):
            raise CliError(f"missing --{split} path")
        if not Path(d[split]).is_file():
            raise CliError(f"{split} file not found: {d[split]}")
    return load_dataset(d["train"], d["valid"], d["test"], d.get("format", "tsv-labeled"))


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_csv(path: Path, rows: list[dict], fieldnames=None) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames or list(rows[0]))
    w.writeheader()
    w.writerows(rows)
    _write_text(path, buf.getvalue())


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta(cfg: dict, dataset, hp: Hyperparams, report=None) -> dict:
    meta = {"hyperparams": hp.to_dict(), "task": cfg["task"],
            "vocab_hash": vocab_hash(dataset.graph),
            "relations": dataset.graph.relations.names}
    if report is not None:
        meta.update(best_epoch=report.best_epoch, best_metric=report.best_metric,
                    selection_metric=report.selection_metric)
    return meta


def _train_one(cfg: dict, dataset=None):
    dataset = dataset if dataset is not None else _dataset(cfg)
    hp = _hp(cfg)
    tr = cfg["training"]
    params, report = train(dataset, hp, cfg["task"], eval_every=tr["eval_every"],
                           val_max_triples=tr["val_max_triples"], backend=tr["backend"],
                           workers=tr["workers"])
    return dataset, hp, params, report


def _evaluate(cfg, dataset, hp, params, split="test") -> EvalReport:
    index = build_neighbor_index(dataset.graph, hp.tau)
    scorer = Scorer(params, index, hp.delta, hp.norm, cfg["training"]["backend"])
    report = evaluate(scorer, dataset, cfg["task"], split, workers=cfg["training"]["workers"])
    report.meta.update(tau=hp.tau, delta=hp.delta, lam=hp.lam)
    return report


def cmd_train(cfg: dict) -> int:
    out = _outdir(cfg)
    dataset, hp, params, report = _train_one(cfg)
    save_checkpoint(params, _meta(cfg, dataset, hp, report), out / "model.ckpt")
    buf = out / "train_log.csv"
    report.write_csv(buf.with_name(buf.name + ".partial"))
    os.replace(buf.with_name(buf.name + ".partial"), buf)
    _write_text(out / "config.yaml", yaml.safe_dump(cfg, sort_keys=True))
    print(f"trained {len(report.epochs)} epochs; best {report.selection_metric}="
          f"{report.best_metric} at epoch {report.best_epoch}; checkpoint {out / 'model.ckpt'}")
    return 0


def _write_report(out: Path, report: EvalReport) -> None:
    _write_text(out / "report.json", report.to_text() + "\n")
    _write_csv(out / "report.csv", report.csv_rows())


def cmd_eval(cfg: dict, checkpoint: str) -> int:
    if not checkpoint:
        raise CliError("--checkpoint is required")
    dataset = _dataset(cfg)
    params, meta = load_checkpoint(checkpoint, expected_vocab_hash=vocab_hash(dataset.graph))
    hp = Hyperparams.from_dict(meta["hyperparams"])
    report = _evaluate(cfg, dataset, hp, params)
    out = _outdir(cfg)
    _write_report(out, report)
    print(report.to_text())
    return 0


def _grid_points(grid: dict) -> list[dict]:
    for key, values in grid.items():
        if not isinstance(values, list) or not values:
            raise CliError(f"grid list for {key!r} must be non-empty")
    keys = sorted(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _grid_worker(job):
    cfg, point = job
    _, hp, params, report = _train_one(cfg)
    return point, hp, params, report


def cmd_grid(cfg: dict) -> int:
    out = _outdir(cfg)
    points = _grid_points(cfg["grid"])
    jobs = []
    for point in points:
        sub = copy.deepcopy(cfg)
        sub["hyperparams"].update(point)
        _hp(sub)
        jobs.append((sub, point))
    if cfg.get("jobs", 1) > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            results = list(pool.map(_grid_worker, jobs))
    else:
        results = [_grid_worker(j) for j in jobs]
    best_i = max(range(len(results)), key=lambda i: (results[i][3].best_metric
                                                     if results[i][3].best_metric is not None
                                                     else -np.inf, -i))
    metric = SELECTION_METRICS[cfg["task"]]
    rows = []
    for i, (point, hp, _, rep) in enumerate(results):
        rows.append({**{k: point[k] for k in sorted(point)}, metric: rep.best_metric,
                     "best_epoch": rep.best_epoch, "winner": int(i == best_i)})
    _write_csv(out / "leaderboard.csv", rows)
    point, hp, params, rep = results[best_i]
    dataset = _dataset(cfg)
    winner_cfg = copy.deepcopy(cfg)
    winner_cfg["hyperparams"] = hp.to_dict()
    save_checkpoint(params, _meta(winner_cfg, dataset, hp, rep), out / "model.ckpt")
    report = _evaluate(winner_cfg, dataset, hp, params)
    report.meta.update(winner=point)
    _write_report(out, report)
    _write_text(out / "config.yaml", yaml.safe_dump(cfg, sort_keys=True))
    print(f"{len(rows)} grid points; winner {point} with {metric}={rep.best_metric}")
    print(report.to_text())
    return 0


def relative_improvements(base: EvalReport, nmm: EvalReport) -> list[dict]:
    """Per-metric improvement of ``nmm`` over ``base``; positive means ``nmm`` is better."""
    rows = []
    if base.classification is not None:
        for name in ("micro", "macro"):
            b, m = getattr(base.classification, name), getattr(nmm.classification, name)
            rows.append({"setting": "R", "metric": name, "baseline": b, "value": m,
                         "relative_improvement": (m - b) / b})
    for section in ("entity", "relation"):
        bsec, msec = getattr(base, section), getattr(nmm, section)
        if bsec is None:
            continue
        for setting, tag in (("raw", "R"), ("filtered", "F")):
            b, m = bsec[setting], msec[setting]
            for name, bv, mv, lower_better in (("MR", b.mr, m.mr, True), ("MRR", b.mrr, m.mrr, False),
                                               ("H@10", b.hits10, m.hits10, False)):
                rel = (bv - mv) / bv if lower_better else ((mv - bv) / bv if bv else 0.0)
                rows.append({"setting": tag, "metric": f"{section}-{name}", "baseline": bv,
                             "value": mv, "relative_improvement": rel})
    return rows


def cmd_tau_sweep(cfg: dict) -> int:
    out = _outdir(cfg)
    taus = [int(t) for t in cfg["tau_sweep"]]
    if not taus:
        raise CliError("--tau-sweep list must be non-empty")
    dataset = _dataset(cfg)

    def run(tau):
        sub = copy.deepcopy(cfg)
        sub["hyperparams"]["tau"] = tau
        _, hp, params, _ = _train_one(sub, dataset)
        return _evaluate(sub, dataset, hp, params)

    base = run(0)
    rows = []
    for tau in taus:
        rep = base if tau == 0 else run(tau)
        for row in relative_improvements(base, rep):
            rows.append({"tau": tau, **row})
    _write_csv(out / "tau_sweep.csv", rows)
    _write_text(out / "config.yaml", yaml.safe_dump(cfg, sort_keys=True))
    for row in rows:
        print(f"tau={row['tau']:<5} {row['setting']}-{row['metric']:<14} {row['relative_improvement']:+.4f}")
    return 0


def top_neighbor_relations(weights_row: np.ndarray, n: int = 3) -> list[int]:
    """Indices of the ``n`` largest entries, ties broken by the smaller index."""
    order = sorted(range(len(weights_row)), key=lambda j: (-weights_row[j], j))
    return order[:min(n, len(weights_row))]


def normalized_relation_weights(params: ModelParams, hp: Hyperparams, index) -> np.ndarray:
    """Mean normalized mixture weight per (query, neighbor relation) over entities."""
    n2 = 2 * params.n_relations
    total = np.zeros((n2, n2))
    count = np.zeros((n2, n2))
    for e in range(params.n_entities):
        nbrs = index.effective_neighborhood(e)
        if not nbrs:
            continue
        rels = np.array([r for _, r in nbrs])
        present = np.unique(rels)
        for q in range(n2):
            w = mixture_weights(params, hp, e, q, nbrs).b
            total[q] += np.bincount(rels, weights=w, minlength=n2)
            count[q, present] += 1
    return np.divide(total, count, out=np.zeros_like(total), where=count > 0)


def cmd_inspect(cfg: dict, checkpoint: str, relations: list[str] | None, weights: str) -> int:
    if not checkpoint:
        raise CliError("--checkpoint is required")
    params, meta = load_checkpoint(checkpoint)
    names = meta.get("relations") or [f"r{i}" for i in range(params.n_relations)]
    all_names = names + [n + "⁻¹" for n in names]
    wanted = relations or names
    ids = []
    for name in wanted:
        if name not in all_names:
            near = difflib.get_close_matches(name, all_names, n=3)
            hint = f"; did you mean: {', '.join(near)}" if near else ""
            raise CliError(f"unknown relation {name!r}{hint}")
        ids.append(all_names.index(name))
    if weights == "normalized":
        dataset = _dataset(cfg)
        if vocab_hash(dataset.graph) != meta.get("vocab_hash"):
            raise CliError("vocabulary hash mismatch between checkpoint and dataset")
        hp = Hyperparams.from_dict(meta["hyperparams"])
        table = normalized_relation_weights(params, hp, build_neighbor_index(dataset.graph, hp.tau))
    else:
        table = params.beta
    for r in ids:
        row = table[r]
        top = top_neighbor_relations(row)
        cells = ", ".join(f"{relation_name(j, names)} ({row[j]:.4f})" for j in top)
        note = "  [degenerate: all weights equal, ordered by relation id]" if np.all(row == row[0]) else ""
        print(f"{relation_name(r, names)}: {cells}{note}")
    return 0


def cmd_stats(cfg: dict) -> int:
    ds = _dataset(cfg)
    g = ds.graph
    print(json.dumps({"entities": g.n_entities, "relations": g.n_relations, "train": len(g.train),
                      "valid": len(ds.valid), "valid_correct": int(ds.valid.labels.sum()),
                      "test": len(ds.test), "test_correct": int(ds.test.labels.sum())}, indent=2))
    return 0


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (flags override it)")
    common.add_argument("--train")
    common.add_argument("--valid")
    common.add_argument("--test")
    common.add_argument("--format", choices=["tsv-labeled", "tsv-unlabeled"])
    common.add_argument("--task", choices=TASKS)
    common.add_argument("--tau", type=int)
    common.add_argument("--delta", type=float)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--dim", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--norm", choices=["l1", "l2"])
    common.add_argument("--batch", type=int)
    common.add_argument("--epochs-per-stage", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--eval-every", type=int)
    common.add_argument("--val-max-triples", type=int,
                        help="subsample validation positives for per-epoch ranking selection")
    common.add_argument("--workers", type=int, help="threads for ranking evaluation")
    common.add_argument("--backend", choices=["auto", "compiled", "python"])
    common.add_argument("--out")
    common.add_argument("--checkpoint")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="transe-nmm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    g = sub.add_parser("grid", parents=[common], help="grid search, select on validation")
    g.add_argument("--grid-delta", type=_floats)
    g.add_argument("--grid-lambda", type=_floats)
    g.add_argument("--grid-tau", type=_ints)
    g.add_argument("--grid-gamma", type=_floats)
    g.add_argument("--grid-dim", type=_ints)
    g.add_argument("--grid-lr", type=_floats)
    g.add_argument("--grid-norm", type=lambda s: [x for x in s.split(",") if x])
    g.add_argument("--jobs", type=int, help="parallel training processes")
    ins = sub.add_parser("inspect", parents=[common], help="top neighbor relations per relation")
    ins.add_argument("--relation", action="append", help="relation name (repeatable)")
    ins.add_argument("--weights", choices=["beta", "normalized"], default="beta")
    sw = sub.add_parser("tau-sweep", parents=[common], help="relative improvement vs tau=0")
    sw.add_argument("--tau-sweep", type=_ints, help="comma-separated tau values")
    sub.add_parser("stats", parents=[common], help="dataset statistics")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "grid":
            return cmd_grid(cfg)
        if args.command == "inspect":
            return cmd_inspect(cfg, args.checkpoint, args.relation, args.weights)
        if args.command == "tau-sweep":
            return cmd_tau_sweep(cfg)
        return cmd_stats(cfg)
    except (CliError, CheckpointError, DatasetFormatError, TrainingError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
