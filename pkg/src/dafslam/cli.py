"""Command-line front end.

Subcommands:

    generate     write a synthetic dataset file from a config
    solve        run one method on a dataset file and report ATE / K
    sweep        Monte-Carlo parameter sweep to CSV (optionally + figures)
    eval         aggregate a sweep CSV into a summary CSV and figures
    g2o-inspect  show the contents of a g2o pose-graph file

Exit codes: 0 success, 1 runtime failure, 2 usage or config error. The
environment variable DAFSLAM_SEED provides the base seed when no --seed /
base_seed is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace

import numpy as np

from . import baselines, datasets, evaluation, kslam
from .datasets import Dataset, DatasetConfig
from .evaluation import CSV_COLUMNS, EvalReport, ate
from .factor_graph import compose_chain
from .g2o_io import load_g2o
from .kslam import KslamConfig, beta_heuristic

METHODS = ("odom", "ml", "oracle", "kslam")


class UsageError(Exception):
    """Configuration/usage problems: exit code 2."""


def _env_seed(default=0) -> int:
    raw = os.environ.get("DAFSLAM_SEED")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise UsageError(f"DAFSLAM_SEED must be an integer, got {raw!r}") from exc


def _load_json(path, what: str) -> dict:
    if not os.path.exists(path):
        raise UsageError(f"{what} file not found: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} file {path} is not valid JSON: {exc}") from exc


def _config_from_dict(obj: dict) -> DatasetConfig:
    known = {f.name for f in fields(DatasetConfig)}
    unknown = set(obj) - known
    if unknown:
        raise UsageError(f"unknown dataset config fields: {sorted(unknown)}")
    if "grid_shape" in obj:
        obj = {**obj, "grid_shape": tuple(obj["grid_shape"])}
    try:
        return DatasetConfig(**obj)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid dataset config: {exc}") from exc


def _apply_overrides(config: DatasetConfig, pairs) -> DatasetConfig:
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        key, raw = pair.split("=", 1)
        if key not in {f.name for f in fields(DatasetConfig)}:
            raise UsageError(f"unknown config field {key!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if key == "grid_shape":
            value = tuple(value)
        try:
            config = replace(config, **{key: value})
        except ValueError as exc:
            raise UsageError(f"invalid value for {key}: {exc}") from exc
    return config


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.config:
        config = _config_from_dict(_load_json(args.config, "config"))
    elif args.preset:
        config = {"grid2d": DatasetConfig.grid_2d,
                  "grid3d": DatasetConfig.grid_3d}[args.preset]()
    else:
        raise UsageError("generate needs --config or --preset")
    config = _apply_overrides(config, args.set)
    seed = args.seed if args.seed is not None else _env_seed(config.seed)
    config = replace(config, seed=seed)
    ds = datasets.generate_grid(config)
    datasets.save_dataset(ds, args.out)
    print(f"wrote {args.out}: {ds.n_poses} poses, {ds.k_true} landmarks, "
          f"{ds.m} measurements, sigma={ds.sigma}")
    return 0


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def _default_beta(ds: Dataset, override=None) -> float:
    if override is not None:
        return float(override)
    n_avg = ds.m / ds.k_true
    return beta_heuristic(ds.dim, n_avg)


def run_method(ds: Dataset, method: str, seed: int = 0, beta=None,
               k_true=None, chi2_tail: float = 0.8, max_iterations: int = 15,
               n_k: int = 11, reference=None) -> tuple[EvalReport, object]:
    """Run one method on a dataset; ATE is against the known-association
    reference (computed here when not supplied)."""
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {METHODS}")
    if len(ds.gt_associations) != ds.m or ds.k_true < 1:
        raise UsageError(
            "dataset lacks ground-truth associations; they define the ATE "
            "reference (and the oracle's landmark count and initial guess)")
    reference = reference if reference is not None else datasets.reference_solution(ds)
    t0 = time.perf_counter()
    if method == "odom":
        trajectory = baselines.odom_trajectory(ds.odometry)
        result = None
        k_est = 0
    elif method == "oracle":
        k = int(k_true) if k_true is not None else ds.k_true
        x_init = compose_chain(ds.odometry)
        y_init = baselines.first_observation_init(
            ds.measurements, ds.gt_associations, x_init)[:, :k]
        result = baselines.oracle_solve(ds.odometry, ds.measurements, ds.sigma,
                                        k, y_init)
        trajectory, k_est = result.trajectory, result.k
    elif method == "ml":
        result = baselines.ml_solve(ds.odometry, ds.measurements, ds.sigma,
                                    baselines.MlConfig(chi2_tail=chi2_tail))
        trajectory, k_est = result.trajectory, result.k
    else:
        cfg = KslamConfig(max_iterations=max_iterations, n_k=n_k,
                          beta=_default_beta(ds, beta), seed=seed)
        result = kslam.outer_solve(ds.odometry, ds.measurements, ds.sigma, cfg)
        trajectory, k_est = result.trajectory, result.k
    runtime = time.perf_counter() - t0
    report = EvalReport(
        method=method,
        ate_rmse=ate(trajectory, reference.trajectory),
        k_est=k_est,
        k_true=ds.k_true,
        runtime_sec=runtime,
        seed=seed,
    )
    return report, result


def cmd_solve(args) -> int:
    ds = datasets.load_dataset(args.dataset) if os.path.exists(args.dataset) else None
    if ds is None:
        raise UsageError(f"dataset file not found: {args.dataset}")
    seed = args.seed if args.seed is not None else _env_seed()
    report, result = run_method(
        ds, args.method, seed=seed, beta=args.beta, k_true=args.k_true,
        chi2_tail=args.chi2_tail, max_iterations=args.max_iterations, n_k=args.n_k)
    print(f"method={report.method} ate={report.ate_rmse:.6f} "
          f"k_est={report.k_est} k_true={report.k_true} "
          f"runtime={report.runtime_sec:.3f}s")
    if args.out:
        payload = {
            "method": report.method,
            "ate_rmse": report.ate_rmse,
            "k_est": report.k_est,
            "k_true": report.k_true,
            "runtime_sec": report.runtime_sec,
            "seed": report.seed,
        }
        if result is not None:
            payload["objective"] = result.objective
            payload["trajectory"] = [
                {"t": p.translation.tolist()} for p in result.trajectory]
            payload["landmarks"] = result.landmarks.T.tolist()
            payload["associations"] = result.associations.tolist()
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _sweep_tasks(spec: dict):
    template = _config_from_dict(spec.get("dataset", {}))
    param = spec.get("param")
    values = spec.get("values")
    methods = spec.get("methods", list(METHODS))
    trials = int(spec.get("trials", 20))
    base_seed = int(spec["base_seed"]) if "base_seed" in spec else _env_seed()
    if param not in ("odom_noise", "lm_noise", "n_landmarks"):
        raise UsageError("sweep param must be odom_noise, lm_noise or n_landmarks")
    if not values:
        raise UsageError("sweep values must be non-empty")
    if trials < 1:
        raise UsageError("trials must be >= 1")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods in spec: {bad}")
    kslam_opts = spec.get("kslam", {})
    tasks = []
    for value in values:
        for trial in range(trials):
            tasks.append({
                "config": {f.name: getattr(template, f.name)
                           for f in fields(DatasetConfig)},
                "param": param,
                "value": value,
                "trial": trial,
                "seed": base_seed + trial,
                "methods": methods,
                "beta": spec.get("beta"),
                "chi2_tail": float(spec.get("chi2_tail", 0.8)),
                "max_iterations": int(kslam_opts.get("max_iterations", 15)),
                "n_k": int(kslam_opts.get("n_k", 11)),
                "dataset_name": spec.get("name", "grid"),
            })
    return tasks


def _run_sweep_task(task: dict) -> list:
    config = DatasetConfig(**{**task["config"],
                              "grid_shape": tuple(task["config"]["grid_shape"])})
    config = datasets.apply_sweep_parameter(config, task["param"], task["value"])
    config = replace(config, seed=task["seed"])
    ds = datasets.generate_grid(config)
    reference = datasets.reference_solution(ds)
    rows = []
    for method in task["methods"]:
        report, _ = run_method(
            ds, method, seed=task["seed"], beta=task["beta"],
            chi2_tail=task["chi2_tail"], max_iterations=task["max_iterations"],
            n_k=task["n_k"], reference=reference)
        rows.append(report.csv_row(task["dataset_name"], task["param"],
                                   task["value"], task["trial"]))
    return rows


def cmd_sweep(args) -> int:
    spec = _load_json(args.spec, "sweep spec")
    tasks = _sweep_tasks(spec)
    jobs = args.jobs if args.jobs else (os.cpu_count() or 1)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    all_rows = []
    try:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            fh.flush()
            if jobs == 1:
                for task in tasks:
                    for row in _run_sweep_task(task):
                        writer.writerow(row)
                        all_rows.append(row)
                    fh.flush()
            else:
                with ProcessPoolExecutor(max_workers=jobs) as pool:
                    for rows in pool.map(_run_sweep_task, tasks):
                        for row in rows:
                            writer.writerow(row)
                            all_rows.append(row)
                        fh.flush()
    except OSError as exc:
        print(f"cannot write {args.out}: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(all_rows)} rows to {args.out}")
    if args.plot_dir:
        from . import plots

        written = plots.render_sweep_figures(all_rows, args.plot_dir)
        for path in written:
            print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    if not os.path.exists(args.csv):
        raise UsageError(f"CSV file not found: {args.csv}")
    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise UsageError(f"no data rows in {args.csv}")
    from . import plots

    os.makedirs(args.out_dir, exist_ok=True)
    summary = plots.summarize_rows(rows)
    summary_path = os.path.join(args.out_dir, "summary.csv")
    with open(summary_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary[0].keys()))
        writer.writeheader()
        writer.writerows(summary)
    print(f"wrote {summary_path}")
    for path in plots.render_sweep_figures(rows, args.out_dir):
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# g2o-inspect
# ---------------------------------------------------------------------------

def cmd_g2o_inspect(args) -> int:
    if not os.path.exists(args.file):
        raise UsageError(f"g2o file not found: {args.file}")
    graph = load_g2o(args.file)
    print(f"dimension: {graph.dim}")
    print(f"vertices:  {graph.n_vertices}")
    print(f"edges:     {len(graph.edges)} "
          f"({len(graph.chain_edges)} chain, {len(graph.loop_closures)} loop closures)")
    if graph.poses:
        t = np.stack([p.translation for p in graph.poses])
        lo = ", ".join(f"{v:.2f}" for v in t.min(axis=0))
        hi = ", ".join(f"{v:.2f}" for v in t.max(axis=0))
        print(f"bounding box: [{lo}] .. [{hi}]")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dafslam",
        description="Batch landmark SLAM with unknown data association.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset file")
    p.add_argument("--config", help="JSON file with dataset parameters")
    p.add_argument("--preset", choices=["grid2d", "grid3d"],
                   help="built-in parameter set instead of --config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field (repeatable; flag wins)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="run one method on a dataset file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--beta", type=float, default=None,
                   help="landmark penalty (default: chi2 heuristic from GT)")
    p.add_argument("--k-true", type=int, default=None, dest="k_true",
                   help="landmark count for the oracle (default: from GT)")
    p.add_argument("--chi2-tail", type=float, default=0.8, dest="chi2_tail")
    p.add_argument("--max-iterations", type=int, default=15, dest="max_iterations")
    p.add_argument("--n-k", type=int, default=11, dest="n_k")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="write the full result as JSON")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="Monte-Carlo parameter sweep to CSV")
    p.add_argument("--spec", required=True, help="sweep spec JSON")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel trials (default: all cores)")
    p.add_argument("--plot-dir", default=None,
                   help="also render figures into this directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="summarize a sweep CSV (summary + figures)")
    p.add_argument("--csv", required=True)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("g2o-inspect", help="show a g2o pose graph's contents")
    p.add_argument("file")
    p.set_defaults(func=cmd_g2o_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
