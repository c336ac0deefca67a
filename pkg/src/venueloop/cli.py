"""Command-line entry point: ``venueloop {simulate,sweep,eval,metrics,subsample,jumps,synth}``.

Settings come from an optional flat ``key = value`` config file and are
overridden by flags. Defaults follow the reference experimental setup.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import metrics as M
from .engine import (
    CellResult,
    SimulatedVisit,
    SimulationConfig,
    World,
    aggregate,
    sweep,
    write_run_metadata,
    write_simulated_visits,
)
from .geo import build_jump_distribution
from .ingest import (
    DEFAULT_EXCLUDED_CATEGORIES,
    Dataset,
    SplitSpec,
    attach_hierarchy,
    load_category_hierarchy,
    load_checkins,
    parse_timestamp,
    preprocess,
    split,
    write_events,
)
from .mobility import ExplorationPolicy
from .recsys import TrainingHyper, build_interactions, evaluate, train, write_evaluation

logger = logging.getLogger("venueloop")

DEFAULT_ETAS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass
class ExperimentSpec:
    data: str | None = None
    hierarchy: str | None = None
    exclude: tuple[str, ...] = tuple(sorted(DEFAULT_EXCLUDED_CATEGORIES))
    t_train: float = 210.0
    t_max: float = 304.0
    eta: tuple[float, ...] = DEFAULT_ETAS
    algo: tuple[str, ...] = ("UserKNN",)
    delta_days: float = 7.0
    explore_mode: str = "fixed"
    topk: int = 20
    anchor: str = "trace"
    seed: int = 0
    runs: int = 1
    subsample: int | None = None
    prune_catalog: bool = False
    jump_source: str = "full"
    workers: int = 1
    max_epochs: int = 500
    out: str = "results"

    def validate(self):
        if any(not 0.0 <= e <= 1.0 for e in self.eta):
            raise ValueError("eta values must lie in [0, 1]")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.explore_mode not in ("fixed", "peruser"):
            raise ValueError("explore_mode must be 'fixed' or 'peruser'")
        SplitSpec(self.t_train, self.t_max)
        return self

    def simulation_config(self) -> SimulationConfig:
        mode = "fixed_global" if self.explore_mode == "fixed" else "per_user"
        return SimulationConfig(
            delta_days=self.delta_days, top_k=self.topk, exploration=ExplorationPolicy(mode),
            anchor_mode=self.anchor, seed=self.seed, runs=self.runs, workers=self.workers,
            jump_source=self.jump_source, hyper=TrainingHyper(max_epochs=self.max_epochs),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("out")
        d.pop("workers")  # results do not depend on the worker count
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


_LIST_FLOAT = {"eta"}
_LIST_STR = {"algo", "exclude"}


def _coerce(name: str, value: str):
    kinds = {f.name: f.type for f in fields(ExperimentSpec)}
    if name not in kinds:
        raise ValueError(f"unknown setting {name!r}")
    value = value.strip()
    if name in _LIST_FLOAT:
        return tuple(float(x) for x in value.split(",") if x.strip())
    if name in _LIST_STR:
        return tuple(x.strip() for x in value.split(",") if x.strip())
    if name == "prune_catalog":
        return value.lower() in ("1", "true", "yes")
    if name == "subsample":
        return None if value.lower() in ("", "none") else int(value)
    if name in ("seed", "runs", "topk", "workers", "max_epochs"):
        return int(value)
    if name in ("t_train", "t_max", "delta_days"):
        return float(value)
    return value or None


def read_config(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        out[key] = _coerce(key, value)
    return out


def subsample_users(dataset: Dataset, n: int, rng: np.random.Generator, prune_catalog: bool = False) -> Dataset:
    """Keep the events of ``n`` uniformly drawn users."""
    users = sorted(dataset.users)
    if n > len(users):
        raise ValueError(f"cannot draw {n} users from a population of {len(users)}")
    keep = set(np.array(users, dtype=object)[rng.choice(len(users), size=n, replace=False)])
    events = tuple(e for e in dataset.events if e.user_id in keep)
    catalog = dataset.catalog
    if prune_catalog:
        used = {e.venue_id for e in events}
        catalog = {v: c for v, c in catalog.items() if v in used}
    return Dataset(events, catalog, frozenset(keep), dataset.skipped_rows)


def prepare(spec: ExperimentSpec) -> tuple[Dataset, Dataset, Dataset, dict]:
    if spec.data is None:
        raise ValueError("no check-in data given (--data or 'data =' in the config)")
    data = preprocess(load_checkins(spec.data), spec.exclude)
    hierarchy = load_category_hierarchy(spec.hierarchy)
    if hierarchy:
        data = attach_hierarchy(data, hierarchy)
    if spec.subsample is not None:
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5AB5]))
        data = subsample_users(data, spec.subsample, rng, spec.prune_catalog)
    train_set, post_set = split(data, SplitSpec(spec.t_train, spec.t_max))
    return data, train_set, post_set, hierarchy


def cell_name(cell: CellResult) -> str:
    return f"{cell.algorithm}_eta{cell.eta:.1f}_run{cell.replicate}"


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6f}"
    return x


def write_plot_data(out: Path, name: str, visits, windows, train_events) -> None:
    counts = M.venue_counts(visits)
    _write_rows(out / f"{name}_lorenz.csv", ["venue_share", "visit_share"],
                [(f"{a:.6f}", f"{b:.6f}") for a, b in M.lorenz(list(counts.values()))])
    _write_rows(out / f"{name}_rank_size.csv", ["rank", "visits"], M.rank_size(counts))
    net = M.colocation(visits, windows)
    _write_rows(out / f"{name}_degree_hist.csv", ["degree", "probability"],
                [(k, f"{p:.6f}") for k, p in M.degree_distribution(net).items()])
    try:
        rep = M.decile_report(train_events, visits)
    except ValueError as exc:
        logger.info("no decile report for %s: %s", name, exc)
        return
    _write_rows(out / f"{name}_deciles.csv", ["decile", "venues", "train_share", "exploration_share", "delta"],
                [(g + 1, len(rep.deciles[g]), f"{rep.train_share[g]:.6f}", f"{rep.exploration_share[g]:.6f}",
                  f"{rep.delta[g]:.6f}") for g in range(len(rep.deciles))])


def run_experiment(spec: ExperimentSpec) -> int:
    """Full pipeline: ingest, split, sweep, metrics, artifacts. Returns an exit status."""
    spec.validate()
    out = Path(spec.out)
    for sub in ("metrics", "visits", "plotdata"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    data, train_set, post_set, hierarchy = prepare(spec)
    logger.info("train %d events, post %d events, %d users", len(train_set), len(post_set), len(data.users))
    world = World.build(train_set, post_set, hierarchy, spec.jump_source)
    timing = {}

    def on_cell(cell: CellResult):
        name = cell_name(cell)
        if cell.error is not None:
            return
        res = cell.result
        timing[name] = res.metadata.pop("wall_time_s")
        write_simulated_visits(res.visits, world.catalog, out / "visits" / f"{name}.csv")
        write_run_metadata(res.metadata, out / "visits" / f"{name}.meta.json")
        record = {"eta": cell.eta, "algorithm": cell.algorithm, "seed": cell.seed, **cell.metrics}
        with open(out / "metrics" / f"{name}.json", "w") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
        if res.visits:
            write_plot_data(out / "plotdata", name, res.visits, M.epoch_windows(res.visits), train_set.events)

    cells = sweep(train_set, post_set, spec.eta, spec.algo, spec.simulation_config(), world, on_cell=on_cell)
    rows = aggregate(cells)
    header = list(rows[0]) if rows else ["algorithm", "eta"]
    _write_rows(out / "aggregate.csv", header, [[_fmt(r[k]) for k in header] for r in rows])
    failed = [{"cell": cell_name(c), "error": c.error} for c in cells if c.error]
    manifest = {
        "spec": spec.to_dict(),
        "config_hash": spec.digest(),
        "cells": [{"cell": cell_name(c), "seed": c.seed} for c in cells],
        "failed": failed,
        "dataset": {"events": len(data), "users": len(data.users), "venues": len(data.catalog),
                    "train_events": len(train_set), "post_events": len(post_set)},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    with open(out / "timing.json", "w") as fh:
        json.dump(timing, fh, indent=2, sort_keys=True)
    return 1 if failed else 0


def evaluate_recommenders(spec: ExperimentSpec):
    spec.validate()
    data, train_set, post_set, _ = prepare(spec)
    m = build_interactions(train_set.events, sorted(data.catalog))
    results = []
    for i, algo in enumerate(spec.algo):
        model = train(algo, m, TrainingHyper(max_epochs=spec.max_epochs),
                      np.random.default_rng(np.random.SeedSequence([spec.seed, i])), data.catalog)
        results.append(evaluate(model, post_set.events, data.catalog, k=20))
    return results


def read_simulated_visits(path) -> list[SimulatedVisit]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [SimulatedVisit(r["user_id"], r["venue_id"], parse_timestamp(r["timestamp_iso8601"]), r["mode"],
                               int(r["epoch_index"])) for r in csv.DictReader(fh)]


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value settings file")
    common.add_argument("--data", help="check-in file (TSV/CSV)")
    common.add_argument("--hierarchy", help="second-level,first-level category CSV")
    common.add_argument("--eta", help="comma-separated adoption rates")
    common.add_argument("--algo", help="comma-separated recommender kinds")
    common.add_argument("--seed", type=int)
    common.add_argument("--runs", type=int)
    common.add_argument("--subsample", type=int)
    common.add_argument("--delta-days", type=float)
    common.add_argument("--topk", type=int)
    common.add_argument("--anchor", choices=["trace", "simulated"])
    common.add_argument("--explore-mode", choices=["fixed", "peruser"])
    common.add_argument("--workers", type=int)
    common.add_argument("--max-epochs", type=int)
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="venueloop", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run one (eta, algorithm) setting")
    sub.add_parser("sweep", parents=[common], help="run the eta x algorithm x replicate grid")
    sub.add_parser("eval", parents=[common], help="HitRate@20 / mRR@20 of each recommender")
    m = sub.add_parser("metrics", parents=[common], help="metrics of a simulated-visit CSV")
    m.add_argument("visits", help="simulated-visit CSV written by simulate/sweep")
    s = sub.add_parser("subsample", parents=[common], help="write a user subsample as canonical CSV")
    s.add_argument("output")
    j = sub.add_parser("jumps", parents=[common], help="dump the jump-length distribution as CSV")
    j.add_argument("output")
    y = sub.add_parser("synth", help="write a synthetic check-in file")
    y.add_argument("output")
    y.add_argument("--hierarchy-out")
    y.add_argument("--users", type=int, default=200)
    y.add_argument("--venues", type=int, default=3000)
    y.add_argument("--seed", type=int, default=0)
    return p


def spec_from_args(args) -> ExperimentSpec:
    settings = read_config(args.config) if getattr(args, "config", None) else {}
    for f in fields(ExperimentSpec):
        val = getattr(args, f.name, None)
        if val is None:
            continue
        settings[f.name] = _coerce(f.name, val) if isinstance(val, str) and f.name in _LIST_FLOAT | _LIST_STR else val
    if getattr(args, "explore_mode", None):
        settings["explore_mode"] = args.explore_mode
    return ExperimentSpec(**settings)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "synth":
            from .synthetic import CityParams, write_city

            write_city(CityParams(n_users=args.users, n_venues=args.venues), args.output, args.hierarchy_out, args.seed)
            return 0
        spec = spec_from_args(args)
        if args.command == "simulate":
            if len(spec.eta) != 1 or len(spec.algo) != 1:
                raise ValueError("simulate takes exactly one --eta and one --algo; use sweep for grids")
            return run_experiment(spec)
        if args.command == "sweep":
            return run_experiment(spec)
        if args.command == "eval":
            out = Path(spec.out)
            out.mkdir(parents=True, exist_ok=True)
            results = evaluate_recommenders(spec)
            write_evaluation(results, out / "evaluation.csv")
            for r in results:
                print(f"{r.algorithm}\t{r.hitrate:.4f}\t{r.mrr:.4f}\t{r.evaluated}\t{r.skipped}")
            return 0
        if args.command == "metrics":
            visits = read_simulated_visits(args.visits)
            result = M.run_metrics(visits, M.epoch_windows(visits))
            if spec.data:
                _, train_set, _, _ = prepare(spec)
                rep = M.decile_report(train_set.events, visits)
                result["decile_delta"] = [round(float(x), 6) for x in rep.delta]
            json.dump(result, sys.stdout, indent=2, sort_keys=True)
            print()
            return 0
        if args.command == "subsample":
            if spec.subsample is None:
                raise ValueError("subsample needs --subsample N")
            data, _, _, _ = prepare(spec)
            write_events(data, args.output)
            return 0
        if args.command == "jumps":
            data, _, _, _ = prepare(replace(spec, subsample=spec.subsample))
            dist = build_jump_distribution(data)
            _write_rows(args.output, ["jump_km"], [(f"{x:.6f}",) for x in dist.samples])
            return 0
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"venueloop: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
