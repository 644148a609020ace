"""Command-line runner: one subcommand per stage, each driven by a JSON config.

Every run writes its outputs, ``config.json`` (the resolved config) and ``manifest.json``
(config hash, seed, version, files, failed assertions) into ``--out``. Exit status is 0
when all assertions hold, 1 when some fail, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from ._validation import EQ_TOL, Box, ReconError
from .busemann import BusemannEstimator, interface_escape_stat, save_tree
from .delta import (
    coalescence_prob_estimate,
    delta_row,
    horizon_sample,
    partition_from_trees,
    plateau_partition,
)
from .differential import sweep, write_sweep_csv
from .gauge import gauge_study, write_study_csv
from .lpp import passage_time, sample_field, save_field
from .modified import build_switching_dag, modified_distance
from .pipeline import (
    DeltaField,
    ExperimentConfig,
    agreement,
    distance_reconstructor,
    end_to_end,
    nested_windows,
    reconstruct_tree,
    shock_sweep,
    window_directions,
)

THREADS_ENV = "RECON_DEFAULT_THREADS"

# defaults per subcommand; a config file may only set keys listed here
DEFAULTS: dict[str, dict] = {
    "sample-field": {"seed": 0, "box": 100, "distribution": "exponential", "include_weights": True},
    "build-trees": {"seed": 0, "window": 50, "directions": [0.5, 2.0], "horizon": None, "max_doublings": 3, "min_coverage": 0.99},
    "sweep-distances": {"seed": 0, "window": 40, "directions": [0.5, 1.0, 2.0], "horizon": None, "pairs": 200},
    "recon-partition": {"seed": 0, "window": 60, "directions": [0.5, 2.0], "horizon": None, "rows": 20},
    "recon-tree": {"seed": 0, "window": 60, "directions": [0.5, 2.0], "direction": 1.0, "horizon": None},
    "recon-distance": {"seed": 0, "window": 40, "direction": 1.0, "depth": 3, "horizon": None, "pairs": 200},
    "shock-measure": {"seed": 0, "window": 40, "direction": 1.0, "horizon": None, "rectangles": 1000},
    "gauge-study": {"seed": 0, "T": 16.0, "steps": 2**22, "drift": 1.0, "scale": 2.0**-16, "intervals": 4,
                    "trend_exponents": [8, 14], "max_relative_error": 0.2, "max_halves_gap": 0.25},
    "horizon-study": {"seed": 0, "theta1": -0.25, "theta2": 0.25, "half_width": 4.0, "grid_step": 2.0**-6,
                      "samples": 2000, "y_list": [1.0, 2.0, 4.0], "reps": 20000},
    "interface-study": {"seed": 0, "seeds": 40, "directions": [1.0, 4.0, 16.0], "window_side": 41,
                        "levels": [20, 40], "horizon": None},
    "end-to-end": {f: v.default for f, v in ExperimentConfig.__dataclass_fields__.items()},
    "report": {},
}
DEFAULTS["end-to-end"]["tolerance"] = EQ_TOL


class UsageError(Exception):
    pass


class Run:
    """Output directory bookkeeping for one subcommand invocation."""

    def __init__(self, command: str, config: dict, out: Path):
        self.command = command
        self.config = config
        self.out = out
        self.files: list[str] = []
        self.failures: list[dict] = []
        self.summary: dict = {}
        self.threads = 1
        blob = json.dumps({"command": command, **config}, sort_keys=True, default=str)
        self.config_hash = hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def meta(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.config.get("seed"), "version": __version__}

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def check(self, name: str, ok: bool, **detail) -> None:
        if not ok:
            self.failures.append({"check": name, **{k: _plain(v) for k, v in detail.items()}})

    def write_json(self, name: str, data) -> None:
        self.path(name).write_text(json.dumps({"meta": self.meta, **data}, indent=1, sort_keys=True, default=_plain))

    def write_csv(self, name: str, header: list[str], rows: list[list]) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
        self.path(name).write_text(self._stamp() + buf.getvalue())

    def stamp_file(self, name: str) -> None:
        """Prefix an already written CSV with the metadata comment line."""
        p = self.out / name
        p.write_text(self._stamp() + p.read_text())
        self.files.append(name)

    def _stamp(self) -> str:
        m = self.meta
        return f"# config_hash={m['config_hash']} seed={m['seed']} version={m['version']}\n"

    def finish(self) -> int:
        (self.out / "config.json").write_text(json.dumps({"command": self.command, **self.config}, indent=1, sort_keys=True))
        manifest = {
            **self.meta,
            "command": self.command,
            "files": sorted(set(self.files)),
            "failures": self.failures,
            "summary": self.summary,
            "threads": self.threads,
            "passed": not self.failures,
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=_plain))
        if self.failures:
            print(json.dumps(self.failures, indent=1, default=_plain), file=sys.stderr)
            return 1
        return 0


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else repr(round(float(v), 12))
    return v


def _window(cfg) -> Box:
    return Box.from_corner((0, 0), (cfg["window"], cfg["window"]))


def _fit(cfg, directions, **extra) -> BusemannEstimator:
    window = _window(cfg)
    field = sample_field(window, cfg["seed"])
    est = BusemannEstimator(directions=tuple(directions), horizon=cfg.get("horizon"), **extra)
    return est.fit(field, window)


# subcommands


def cmd_sample_field(cfg, run: Run) -> None:
    box = Box.from_corner((0, 0), (cfg["box"], cfg["box"]))
    field = sample_field(box, cfg["seed"], cfg["distribution"])
    name = "field.npz" if cfg["include_weights"] else "field.json"
    save_field(field, run.path(name), include_weights=cfg["include_weights"])
    run.summary.update(min_gap=field.min_gap(), mean=float(field.weights.mean()))


def cmd_build_trees(cfg, run: Run) -> None:
    est = _fit(cfg, cfg["directions"], max_doublings=cfg["max_doublings"], min_coverage=cfg["min_coverage"])
    for d in sorted(est.trees_):
        save_tree(est.tree(d), run.path(f"tree_{d:g}.npz"))
    run.summary.update(horizon=est.horizon_, coverage={f"{k:g}": v for k, v in est.coverage_.items()})
    run.check("coverage", not est.low_coverage_, coverage=est.coverage_)


def cmd_sweep_distances(cfg, run: Run) -> None:
    d1, d, d2 = sorted(cfg["directions"])
    est = _fit(cfg, (d1, d, d2))
    dag = build_switching_dag(est.tree(d1), est.tree(d2), est.field_)
    rng = np.random.default_rng([cfg["seed"], 2])
    pts = list(_window(cfg).points())
    pairs = []
    for _ in range(cfg["pairs"]):
        a, b = sorted((pts[k] for k in rng.choice(len(pts), 2, replace=False)), key=sum)
        if b[0] >= a[0] and b[1] >= a[1]:
            pairs.append((a, b))
    rows = sweep(est.tree(d), est.busemann(d), est.field_, dag, pairs)
    write_sweep_csv(rows, run.out / "sweep.csv")
    run.stamp_file("sweep.csv")
    gaps = [r["gap"] for r in rows if np.isfinite(r["gap"])]
    anc = [r["D"] for r in rows if r["ancestral"]]
    run.summary.update(pairs=len(rows), finite_gaps=len(gaps))
    run.check("restricted_dominates", all(g >= -EQ_TOL for g in gaps), min_gap=min(gaps, default=0.0))
    run.check("ancestral_zero", all(abs(v) <= EQ_TOL for v in anc), worst=max(map(abs, anc), default=0.0))


def cmd_recon_partition(cfg, run: Run) -> None:
    d1, d2 = sorted(cfg["directions"])
    est = _fit(cfg, (d1, d2))
    window = _window(cfg)
    lo, hi = 1, 2 * cfg["window"] - 3
    same = total = 0
    out = []
    for lev in np.unique(np.linspace(lo, hi, cfg["rows"]).astype(int)):
        prof = delta_row(est.busemann(d1), est.busemann(d2), int(lev), box=window)
        plateau = plateau_partition(prof)
        trees = partition_from_trees(est.tree(d1), est.tree(d2), int(lev), box=window)
        xs = prof.transverse[prof.certified]
        agree = (plateau.shape_of(xs) == trees.shape_of(xs)).all(axis=1) if len(xs) else np.array([], bool)
        same += int(agree.sum())
        total += len(xs)
        out.append({"level": int(lev), "from_delta": plateau.to_json(), "from_trees": trees.to_json()})
    frac = same / total if total else math.nan
    run.write_json("partitions.json", {"rows": out, "agreement": frac})
    run.summary.update(agreement=frac, columns=total)
    run.check("partition_agreement", total > 0 and frac >= 0.99, agreement=frac)


def cmd_recon_tree(cfg, run: Run) -> None:
    d1, d2 = sorted(cfg["directions"])
    d = cfg["direction"]
    est = _fit(cfg, (d1, d2), max_doublings=0)
    t1, t2 = est.tree(d1), est.tree(d2)
    delta = DeltaField.from_busemann(est.busemann(d1), est.busemann(d2))
    rec = reconstruct_tree(t1, t2, delta, d, on_tie="flag")
    save_tree(rec, run.path("reconstructed_tree.npz"))
    truth = BusemannEstimator(directions=(d,), horizon=rec.horizon, max_doublings=0).fit(est.field_, _window(cfg))
    frac, n = agreement(rec, truth.tree(d))
    deg, n2 = agreement(reconstruct_tree(t1, t2, delta, d2, on_tie="flag"), t2)
    run.summary.update(agreement=frac, compared=n, degenerate=deg, horizon=rec.horizon, coverage=rec.coverage)
    run.check("tree_agreement", n > 0 and frac >= 0.99, agreement=frac)
    run.check("degenerate_tree", n2 > 0 and deg == 1.0, agreement=deg)


def cmd_recon_distance(cfg, run: Run) -> None:
    d = cfg["direction"]
    est = _fit(cfg, window_directions(d, cfg["depth"]), max_doublings=0)
    windows = nested_windows(est, d, cfg["depth"])
    excluded = np.zeros(est.region_.shape, dtype=bool)
    for w in windows:
        excluded |= ~(w.tree1.stabilized & w.tree2.stabilized)
    recon = distance_reconstructor(windows, excluded)
    dags = [build_switching_dag(w.tree1, w.tree2, est.field_, excluded) for w in windows]
    bd = est.busemann(d)
    rng = np.random.default_rng([cfg["seed"], 3])
    pts = [p for p in _window(cfg).points() if not excluded[est.region_.local(p)]]
    rows, worst, bad_monotone = [], 0.0, 0
    for _ in range(cfg["pairs"]):
        p, q = sorted((pts[k] for k in rng.choice(len(pts), 2, replace=False)), key=sum)
        if q[0] < p[0] or q[1] < p[1]:
            continue
        trace = recon(p, q)
        g = passage_time(est.field_, p, q)
        switching = any(abs(modified_distance(dag, p, q) - g) <= EQ_TOL for dag in dags)
        truth = bd(p, q) - g
        if switching:
            worst = max(worst, abs(trace.value - truth))
        bad_monotone += not trace.monotone
        rows.append([*p, *q, *trace.values, truth, switching])
    header = ["p_i", "p_j", "q_i", "q_j", *[f"D_window{n}" for n in range(1, cfg["depth"] + 1)], "D_true", "switching"]
    run.write_csv("distances.csv", header, rows)
    run.summary.update(pairs=len(rows), max_error=worst)
    run.check("distance_exact", worst <= EQ_TOL, max_error=worst)
    run.check("window_monotone", bad_monotone == 0, violations=bad_monotone)


def cmd_shock_measure(cfg, run: Run) -> None:
    d = cfg["direction"]
    est = _fit(cfg, (d,), max_doublings=0)
    rng = np.random.default_rng([cfg["seed"], 4])
    conf = ExperimentConfig(window=cfg["window"], direction=d, rectangles=cfg["rectangles"])
    metrics: dict = {}
    ok = shock_sweep(est, _window(cfg), conf, rng, metrics)
    run.write_json("shock.json", metrics)
    run.summary.update(metrics)
    run.check("shock_identity", ok, **metrics)


def cmd_gauge_study(cfg, run: Run) -> None:
    lo, hi = cfg["trend_exponents"]
    study = gauge_study(
        T=cfg["T"], steps=cfg["steps"], drift=cfg["drift"], scale=cfg["scale"], n_intervals=cfg["intervals"],
        trend_scales=[2.0**-k for k in range(lo, hi + 1)], seed=cfg["seed"],
    )
    write_study_csv(study.rows(), run.out / "gauge_study.csv")
    run.stamp_file("gauge_study.csv")
    tr = study.trend
    run.write_csv(
        "scale_trend.csv", ["scale", "estimate"], [[s, e] for s, e in zip(tr.scales, tr.estimates)]
    )
    err = float(study.report.relative_errors.max())
    run.summary.update(max_relative_error=err, halves_gap=study.halves_gap, ratio=study.report.ratio)
    run.check("relative_error", err <= cfg["max_relative_error"], max_relative_error=err)
    run.check("halves", study.halves_gap <= cfg["max_halves_gap"], gap=study.halves_gap)
    run.check("scale_trend", tr.oscillation_decreasing(), changes=tr.relative_changes)


def cmd_horizon_study(cfg, run: Run) -> None:
    from scipy import stats

    th1, th2 = cfg["theta1"], cfg["theta2"]
    n = int(round(cfg["half_width"] / cfg["grid_step"]))
    grid = cfg["grid_step"] * np.arange(-n, n + 1)
    hs = horizon_sample(th1, th2, grid, cfg["seed"], cfg["samples"])
    x = grid[-1]
    incr = hs.b2[:, -1] - hs.b2[:, n]
    ks = stats.kstest(incr, "norm", args=(2 * th2 * x, math.sqrt(2 * x)))
    monotone = bool((np.diff(hs.b2 - hs.b1, axis=1) >= -1e-12).all())
    decay = coalescence_prob_estimate(th1, th2, cfg["y_list"], cfg["reps"], cfg["seed"])
    run.write_csv(
        "coalescence.csv",
        ["y", "estimate", "lower", "upper", "closed_form"],
        [[r.y, r.estimate, r.lower, r.upper, r.closed_form] for r in decay],
    )
    est = [r.estimate for r in decay]
    run.summary.update(ks_pvalue=ks.pvalue, monotone=monotone, decay=est)
    run.check("b2_marginal", ks.pvalue > 0.01, pvalue=ks.pvalue)
    run.check("b2_minus_b1_monotone", monotone)
    run.check("decay", est[0] > 0 and all(b < a for a, b in zip(est, est[1:])), estimates=est)


def cmd_interface_study(cfg, run: Run) -> None:
    side = cfg["window_side"]
    q = (side - 1, side - 1)
    seeds = range(cfg["seed"], cfg["seed"] + cfg["seeds"])
    stat = interface_escape_stat(seeds, q, cfg["directions"], tuple(cfg["levels"]), side, cfg.get("horizon"))
    med = [stat["median"][d] for d in sorted(stat["median"])]
    run.write_csv(
        "interface.csv",
        ["direction", "median_supremum", "flagged"],
        [[d, stat["median"][d], stat["flagged"][d]] for d in sorted(stat["median"])],
    )
    run.summary.update(medians=med)
    run.check("escape", all(b < a for a, b in zip(med, med[1:])), medians=med)


def cmd_end_to_end(cfg, run: Run) -> None:
    report = end_to_end(ExperimentConfig.from_dict(cfg))
    data = report.to_dict()
    data.pop("runtime")  # keeps the report a pure function of the config
    run.write_json("report.json", data)
    run.summary.update(passed=report.passed, runtime=report.runtime)
    for name, ok in report.checks.items():
        run.check(name, ok, **{k: v for k, v in report.metrics.items() if k.startswith(name.split("_")[0])})
    run.check("coverage", not report.low_coverage, coverage=report.coverage)
    for name, msg in report.errors.items():
        run.check(f"{name}_error", False, message=msg)


def cmd_report(cfg, run: Run) -> None:
    """Summarise every manifest found below ``--out``; fails if any recorded run failed."""
    found = sorted(p for p in run.out.rglob("manifest.json") if p.parent != run.out)
    if not found:
        raise UsageError(f"no manifests under {run.out}")
    rows = []
    for p in found:
        m = json.loads(p.read_text())
        rows.append([str(p.parent.relative_to(run.out)), m["command"], m["seed"], m["passed"], len(m["failures"])])
        run.check(str(p.parent.relative_to(run.out)), m["passed"], failures=m["failures"])
    run.write_csv("report.csv", ["run", "command", "seed", "passed", "failures"], rows)


COMMANDS: dict[str, Callable] = {
    "sample-field": cmd_sample_field,
    "build-trees": cmd_build_trees,
    "sweep-distances": cmd_sweep_distances,
    "recon-partition": cmd_recon_partition,
    "recon-tree": cmd_recon_tree,
    "recon-distance": cmd_recon_distance,
    "shock-measure": cmd_shock_measure,
    "gauge-study": cmd_gauge_study,
    "horizon-study": cmd_horizon_study,
    "interface-study": cmd_interface_study,
    "end-to-end": cmd_end_to_end,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geodesic-recon", description="Seeded reconstruction experiments.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.strip().splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--config", type=Path, help="JSON config; keys override the subcommand defaults")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or 1)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    return parser


def resolve_config(command: str, path: Path | None, seed: int | None) -> dict:
    cfg = dict(DEFAULTS[command])
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(data) - set(cfg)
        if unknown:
            raise UsageError(f"unknown keys for {command}: {sorted(unknown)}")
        cfg.update(data)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def _set_threads(n: int | None) -> int:
    if n is None:
        try:
            n = int(os.environ.get(THREADS_ENV, "1"))
        except ValueError as exc:
            raise UsageError(f"{THREADS_ENV} must be an integer") from exc
    if n < 1:
        raise UsageError("--threads must be positive")
    # the kernels are serial, so the count is recorded but cannot change results
    return n


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        threads = _set_threads(args.threads)
        cfg = resolve_config(args.command, args.config, args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cfg, args.out)
        run.threads = threads
        COMMANDS[args.command](cfg, run)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ReconError, ValueError, AssertionError) as exc:
        run.check("run", False, error=f"{type(exc).__name__}: {exc}")
    return run.finish()


if __name__ == "__main__":
    sys.exit(main())
