"""Command-line interface: plan, bench, eval, export-plotdata.

Exit codes: 0 success (plan: converged), 2 plan ran but did not converge
(outputs still written), 1 input or configuration error. All CSV outputs are
byte-identical across reruns with the same config and seed; wall-clock
timings live in the manifest and report JSONs only. Files are written to
temporary names and atomically renamed, so a crash never leaves partial
outputs behind.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import BenchConfig, ConfigError, PlanConfig, load_bench_config, load_plan_config
from .domain import DegenerateDomain, DomainSamples, NormalizedDomain, ParseError, load_samples
from .dynamics import load_trajectory_json, save_trajectory_csv, save_trajectory_json
from .evaluation import coverage, format_benchmark_table, run_sweep_cell
from .solver import SolverReport, anneal_sequence, solve

log = logging.getLogger("coverplan")

REPORT_SCHEMA = 1
MANIFEST_SCHEMA = 1


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_with(path: Path, writer) -> None:
    """Run ``writer(tmp_path)`` then atomically rename tmp onto path."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_text(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def report_to_dict(report: SolverReport) -> dict:
    return {
        "schema_version": REPORT_SCHEMA,
        "converged": report.converged,
        "objective_value": report.objective_value,
        "wall_time": report.wall_time,
        "evaluations": report.evaluations,
        "line_search_evals": report.line_search_evals,
        "residuals": {
            "max_eq_violation": report.residuals.max_eq_violation,
            "max_ineq_violation": report.residuals.max_ineq_violation,
        },
        "extent": report.extent,
        "offset": [float(v) for v in np.asarray(report.offset).ravel()],
        "diagnostics": report.diagnostics,
        "config": report.config_echo,
        "trace": [[e.stage, e.h, e.al_round, e.inner_iter, e.value]
                  for e in report.objective_trace],
    }


def _write_manifest(path: Path, command: str, config_doc: dict, rng_seed: int,
                    inputs: dict, outputs: dict, extra: Optional[dict] = None) -> None:
    doc = {
        "schema_version": MANIFEST_SCHEMA,
        "tool_version": __version__,
        "command": command,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "rng_seed": rng_seed,
        "config_snapshot": config_doc,
        "input_digests": {str(k): _sha256(k) for k in inputs},
        "outputs": {k: str(v) for k, v in outputs.items()},
    }
    if extra:
        doc.update(extra)
    _atomic_write_text(path, _json_text(doc))


def cmd_plan(args) -> int:
    try:
        cfg: PlanConfig = load_plan_config(args.config, seed_override=args.seed)
    except (ConfigError, ParseError, DegenerateDomain, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    outdir = Path(args.output_dir)
    stem = cfg.output_stem
    report = solve(cfg.samples, cfg.model, cfg.solver)

    traj_csv = outdir / f"{stem}_trajectory.csv"
    traj_json = outdir / f"{stem}_trajectory.json"
    report_json = outdir / f"{stem}_report.json"
    manifest_json = outdir / f"{stem}_manifest.json"

    _atomic_write_with(traj_csv, lambda tmp: save_trajectory_csv(report.trajectory, tmp))
    _atomic_write_with(traj_json, lambda tmp: save_trajectory_json(
        report.trajectory, tmp, extent=report.extent, offset=report.offset))

    doc = report_to_dict(report)
    ann = cfg.solver.annealing
    doc["annealing_h"] = ([] if ann is None else [float(h) for h in anneal_sequence(ann)])
    doc["covering_radius"] = (float(np.sqrt(ann.h_phys_star)) if ann is not None
                              else float(np.sqrt(cfg.solver.h_fixed)))
    doc["domain"] = {"path": cfg.domain_path, "format": cfg.domain_format,
                     "has_weights": cfg.has_weights}
    doc["trajectory_files"] = {"csv": str(traj_csv), "json": str(traj_json)}
    _atomic_write_text(report_json, _json_text(doc))

    _write_manifest(
        manifest_json, "plan", cfg.raw, cfg.solver.rng_seed,
        inputs={Path(args.config): None, Path(cfg.domain_path): None},
        outputs={"trajectory_csv": traj_csv, "trajectory_json": traj_json,
                 "report": report_json},
    )
    status = "converged" if report.converged else "did not converge"
    print(f"plan: {status}; objective {report.objective_value:.6g}; "
          f"max violations eq {report.residuals.max_eq_violation:.2e} "
          f"ineq {report.residuals.max_ineq_violation:.2e}; outputs in {outdir}")
    return 0 if report.converged else 2


def cmd_bench(args) -> int:
    try:
        cfg: BenchConfig = load_bench_config(args.config, seed_override=args.seed)
    except (ConfigError, ParseError, DegenerateDomain, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    outdir = Path(args.output_dir)
    jobs = max(1, args.jobs)
    tasks = [(method, scale, r)
             for method in cfg.sweep.methods
             for scale in cfg.scales
             for r in range(cfg.repeats)]
    if jobs == 1:
        cells = [run_sweep_cell(cfg.sweep, m, s, r) for m, s, r in tasks]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_sweep_cell, cfg.sweep, m, s, r) for m, s, r in tasks]
            cells = [f.result() for f in futures]
    # Keyed aggregation keeps the output independent of completion order.
    cells = sorted(cells, key=lambda c: (cfg.sweep.methods.index(c.method), c.scale, c.repeat))

    from .evaluation import BenchmarkRow

    rows = []
    for method in cfg.sweep.methods:
        for scale in cfg.scales:
            grp = [c for c in cells if c.method == method and c.scale == float(scale)]
            times = np.array([c.wall_time for c in grp])
            rows.append(BenchmarkRow(
                method=method, scale=float(scale),
                coverage_pct=float(np.mean([c.coverage_pct for c in grp])),
                time_mean=float(times.mean()),
                time_std=float(times.std(ddof=1)) if len(grp) >= 3 else None,
                converged=all(c.converged for c in grp), repeats=len(grp)))

    cells_csv = outdir / "bench_cells.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "scale", "repeat", "coverage_pct", "converged", "path_length"])
    for c in cells:
        w.writerow([c.method, format(c.scale, ".17g"), c.repeat,
                    format(c.coverage_pct, ".17g"), int(c.converged),
                    format(c.path_length, ".17g")])
    _atomic_write_text(cells_csv, buf.getvalue())

    manifest_json = outdir / "bench_manifest.json"
    _write_manifest(
        manifest_json, "bench", cfg.raw, cfg.sweep.rng_seed,
        inputs={Path(args.config): None, Path(cfg.domain_path): None},
        outputs={"cells": cells_csv},
        extra={"timings": [{"method": c.method, "scale": c.scale, "repeat": c.repeat,
                            "wall_time": c.wall_time} for c in cells]},
    )
    print(format_benchmark_table(rows))
    print(f"bench: {len(cells)} cells -> {cells_csv}")
    return 0


def _load_trajectory_points(path: Path, dim: int):
    """Positions from a trajectory JSON/CSV or a bare polyline CSV.

    Returns (points, normalization_record_or_None).
    """
    if path.suffix.lower() == ".json":
        traj, norm = load_trajectory_json(path)
        return traj.positions, norm
    with open(path, "r", encoding="utf-8") as fh:
        rows = [ln.strip() for ln in fh if ln.strip() and not ln.strip().startswith("#")]
    if not rows:
        raise ParseError(path, None, "empty trajectory file")
    header = [h.strip() for h in rows[0].split(",")]
    if any(h and not _is_number(h) for h in header):
        names = header
        data_rows = rows[1:]
    else:
        names = None
        data_rows = rows
    data = []
    for ln in data_rows:
        vals = [v.strip() for v in ln.split(",")]
        data.append([float(v) if v else np.nan for v in vals])
    arr = np.asarray(data, dtype=float)
    if names is not None and "x_1" in names:
        cols = [names.index(f"x_{i + 1}") for i in range(dim)]
        return arr[:, cols], None
    if arr.shape[1] < dim:
        raise ParseError(path, None, f"trajectory file has {arr.shape[1]} columns, need {dim}")
    return arr[:, :dim], None


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def cmd_eval(args) -> int:
    try:
        if args.radius <= 0:
            raise ValueError(f"covering radius must be positive, got {args.radius}")
        samples = load_samples(args.domain, format=args.domain_format,
                               has_weights=args.has_weights)
        points, norm = _load_trajectory_points(Path(args.trajectory), samples.dim)
        if norm is not None:
            dom = NormalizedDomain(samples)
            rel = abs(norm["extent"] - dom.extent) / dom.extent
            off = np.abs(np.asarray(norm["offset"]) - dom.offset).max()
            if rel > 1e-6 or off > 1e-6 * max(1.0, dom.extent):
                raise ValueError(
                    f"unit metadata mismatch: trajectory was planned on a domain with "
                    f"extent {norm['extent']:.6g} / offset {norm['offset']}, but "
                    f"{args.domain} has extent {dom.extent:.6g} / offset "
                    f"{list(dom.offset)}")
        result = coverage(points, samples, args.radius)
    except (ConfigError, ParseError, DegenerateDomain, FileNotFoundError, ValueError,
            KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    doc = {
        "covered_fraction": result.covered_fraction,
        "radius_phys": result.radius_phys,
        "path_length": result.path_length,
        "num_covered": int(result.per_sample_covered.sum()),
        "num_samples": int(result.per_sample_covered.shape[0]),
        "per_sample_covered": [int(v) for v in result.per_sample_covered],
    }
    print(json.dumps(doc, indent=1))
    return 0


def cmd_export_plotdata(args) -> int:
    try:
        with open(args.report, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("schema_version") != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema version "
                             f"{doc.get('schema_version')!r}, expected {REPORT_SCHEMA}")
        traj_json = doc["trajectory_files"]["json"]
        traj, _ = load_trajectory_json(traj_json)
        samples = load_samples(doc["domain"]["path"], format=doc["domain"]["format"],
                               has_weights=doc["domain"]["has_weights"])
    except (FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    outdir = Path(args.output_dir) if args.output_dir else Path(args.report).parent
    stem = Path(args.report).name.replace("_report.json", "").replace(".json", "")

    def fmt(x):
        return format(float(x), ".17g")

    trace_csv = outdir / f"{stem}_trace.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "h", "al_round", "inner_iter", "value"])
    for stage, h, rnd, it, val in doc["trace"]:
        w.writerow([stage, fmt(h), rnd, it, fmt(val)])
    _atomic_write_text(trace_csv, buf.getvalue())

    schedule_csv = outdir / f"{stem}_schedule.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "h"])
    for k, h in enumerate(doc.get("annealing_h", [])):
        w.writerow([k, fmt(h)])
    _atomic_write_text(schedule_csv, buf.getvalue())

    d = samples.dim
    polyline_csv = outdir / f"{stem}_polyline.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x_{i + 1}" for i in range(d)])
    for row in traj.positions:
        w.writerow([fmt(v) for v in row])
    _atomic_write_text(polyline_csv, buf.getvalue())

    radius = doc.get("covering_radius")
    mask_csv = outdir / f"{stem}_coverage_mask.csv"
    cov = coverage(traj, samples, radius)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", "covered"])
    for i, v in enumerate(cov.per_sample_covered):
        w.writerow([i, int(v)])
    _atomic_write_text(mask_csv, buf.getvalue())

    print(f"export-plotdata: wrote {trace_csv}, {schedule_csv}, {polyline_csv}, {mask_csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coverplan",
                                description="Scale-invariant coverage trajectory planning")
    p.add_argument("--verbose", action="store_true", help="log diagnostics to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="solve a coverage problem from a config file")
    plan.add_argument("--config", required=True)
    plan.add_argument("--seed", type=int, default=None, help="override seed.rng_seed")
    plan.add_argument("--output-dir", default=".")
    plan.set_defaults(func=cmd_plan)

    bench = sub.add_parser("bench", help="run the scale-sweep benchmark")
    bench.add_argument("--config", required=True)
    bench.add_argument("--seed", type=int, default=None)
    bench.add_argument("--output-dir", default=".")
    bench.add_argument("--jobs", type=int, default=1, help="parallel sweep cells")
    bench.set_defaults(func=cmd_bench)

    ev = sub.add_parser("eval", help="coverage of a trajectory file against a domain")
    ev.add_argument("--trajectory", required=True)
    ev.add_argument("--domain", required=True)
    ev.add_argument("--radius", type=float, required=True)
    ev.add_argument("--domain-format", default=None)
    ev.add_argument("--has-weights", action="store_true", default=None)
    ev.set_defaults(func=cmd_eval)

    ex = sub.add_parser("export-plotdata", help="tidy CSVs from a solver report")
    ex.add_argument("--report", required=True)
    ex.add_argument("--output-dir", default=None)
    ex.set_defaults(func=cmd_export_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
