"""Command-line front end: ``certrom {generate,greedy,sweep,validate,compare}``.

Run configuration comes from a TOML or JSON file (tables ``benchmark``,
``greedy``, ``grid``) with command-line flags taking precedence. Every run
writes its fully resolved configuration as ``run_config_<command>.json``; passing that
file back through ``--config`` replays the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import scipy.io

from . import estimators as est
from .benchmarks import BenchmarkSpec, generate
from .errors import (
    CertromError,
    DegenerateGrid,
    DimensionTooLarge,
    InvalidSpec,
    NotConverged,
)
from .greedy import GreedyConfig, greedy_build
from .report import effectivity_table, speedup_report, sweep, write_json, SweepResult
from .rom import load_rom, save_rom
from .system import ParameterGrid, load_system, save_system

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("certrom")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 3
EXIT_INVALID_SPEC = 4
EXIT_IO = 5
EXIT_NUMERIC = 6

REPORT_DIR_ENV = "CERTROM_REPORT_DIR"
COMPARE_ORDER = ("standard", "residual", "randomized", "proposed")


def load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return json.loads(text)
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InvalidSpec(f"{path}: {exc}") from None


def _report_dir(args) -> Path:
    d = Path(args.report_dir or os.environ.get(REPORT_DIR_ENV) or "reports")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _greedy_config(args, config: dict) -> GreedyConfig:
    opts = dict(config.get("greedy", {}))
    for key in ("tol", "max_iterations", "estimator", "seed", "K", "tol_rd", "initial",
                "svd_cap", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    if getattr(args, "realify", None) is not None:
        opts["realify"] = args.realify
    if getattr(args, "track_true_error", False):
        opts["track_true_error"] = True
    if getattr(args, "deterministic", False):
        opts["jobs"] = 1
    opts.setdefault("jobs", os.cpu_count() or 1)
    return GreedyConfig.from_dict(opts)


def _grid(system, args, config: dict, name: str, default: str) -> tuple[ParameterGrid, dict]:
    """Grid from a file flag, the config's ``grid`` table, or a grid named in the manifest."""
    path = getattr(args, f"{name}_file", None)
    if path:
        spec = {"kind": "file", "path": str(path)}
    elif name in config.get("grid", {}):
        spec = config["grid"][name]
    else:
        grid_name = getattr(args, f"{name}_grid", None) or default
        if system is None or grid_name not in system.grids:
            raise InvalidSpec(f"no {name} grid: pass --{name}-file or declare it in the config")
        spec = system.grids[grid_name]
    return ParameterGrid.from_spec(spec), spec


def _write_resolved(out_dir: Path, payload: dict) -> None:
    write_json(out_dir / f"run_config_{payload['command']}.json", payload)


def cmd_generate(args) -> int:
    config = load_config(args.config)
    fields = dict(config.get("benchmark", config if "family" in config else {}))
    for key in ("family", "n", "p", "seed", "f_lo", "f_hi", "dims", "operator_scale", "eta"):
        value = getattr(args, key, None)
        if value is not None:
            fields[key] = value
    if args.modes:
        fields["modes"] = list(args.modes)
    if "family" not in fields or "n" not in fields:
        raise InvalidSpec("benchmark needs at least 'family' and 'n'")
    spec = BenchmarkSpec.from_dict(fields)
    system = generate(spec)
    out = Path(args.output)
    save_system(system, out)
    _write_resolved(out, {"command": "generate", "benchmark": spec.to_dict()})
    print(f"wrote {out} (n={system.n}, p={system.p}, terms={system.names}, "
          f"band=[{system.domain.f_lo:.6g}, {system.domain.f_hi:.6g}] Hz)")
    return EXIT_OK


def _run_greedy(system, grid, cfg):
    try:
        rm, report = greedy_build(system, grid, cfg, check=True)
        return rm, report, EXIT_OK
    except NotConverged as exc:
        log.error("%s", exc)
        return exc.rom, exc.report, EXIT_NOT_CONVERGED


def cmd_greedy(args) -> int:
    config = load_config(args.config)
    system = load_system(args.system)
    cfg = _greedy_config(args, config)
    if cfg.estimator == "standard" and system.n > cfg.svd_cap:
        raise DimensionTooLarge(
            f"the standard estimator needs dense SVDs of n={system.n} > svd_cap={cfg.svd_cap}; "
            "use --estimator proposed (or residual/randomized), or raise --svd-cap")
    grid, grid_spec = _grid(system, args, config, "train", "train")
    report_dir = _report_dir(args)
    rm, report, code = _run_greedy(system, grid, cfg)
    out = Path(args.output)
    save_rom(rm, out)
    stem = report_dir / f"greedy_{cfg.estimator}"
    report.write_csv(stem.with_suffix(".csv"))
    report.write_json(stem.with_suffix(".json"))
    _write_resolved(report_dir, {"command": "greedy", "system": str(args.system),
                                 "output": str(out), "greedy": cfg.to_dict(),
                                 "grid": {"train": grid_spec}})
    print(f"{cfg.estimator}: {report.termination} after {len(report.iterations)} iterations, "
          f"r={report.final_r}, eps_est={report.iterations[-1].eps_est:.3e}")
    return code


def _output_matrix(path):
    if path is None:
        return None
    M = scipy.io.mmread(path)
    return M.toarray() if hasattr(M, "toarray") else np.asarray(M)


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    rm = load_rom(args.rom)
    grid, grid_spec = _grid(None, args, config, "sweep", "sweep")
    result = sweep(rm, grid, _output_matrix(args.outputs))
    report_dir = _report_dir(args)
    result.write_csv(report_dir / "sweep.csv")
    write_json(report_dir / "sweep_summary.json", result.summary())
    _write_resolved(report_dir, {"command": "sweep", "rom": str(args.rom),
                                 "grid": {"sweep": grid_spec},
                                 "outputs": None if args.outputs is None else str(args.outputs)})
    print(f"swept {len(grid)} points in {result.online_seconds:.3e} s online")
    return EXIT_OK


def _state_for(rm, kind, svd_cap=None):
    if kind == "proposed":
        if "error_basis" not in rm.aux:
            raise InvalidSpec("this ROM bundle carries no error basis; validate with "
                              "--estimator residual or rebuild with the proposed estimator")
        return est.proposed_state(rm.aux["error_basis"])
    if kind == "randomized":
        if "dual_basis" not in rm.aux:
            raise InvalidSpec("this ROM bundle carries no randomized dual basis")
        return est.randomized_state(rm.aux["dual_basis"], rm.aux["random_vectors"])
    if kind == "standard":
        return est.standard_state(svd_cap or est.SVD_CAP)
    return est.residual_state()


def cmd_validate(args) -> int:
    config = load_config(args.config)
    system = load_system(args.system)
    rm = load_rom(args.rom)
    grid, grid_spec = _grid(system, args, config, "test", "test")
    kind = args.estimator or rm.info.get("estimator", "residual")
    state = _state_for(rm, kind, args.svd_cap)
    certs = est.certify(system, rm, state, grid)
    result = sweep(rm, grid)
    result.estimates = np.array([c.estimate for c in certs]).reshape(len(grid), rm.p)
    result.true_errors = np.array([c.true_error for c in certs]).reshape(len(grid), rm.p)
    summary = effectivity_table(certs).to_dict()
    summary.update({"estimator": kind, "max_true_error": summary["max_true_error"],
                    "r": rm.r, "points": len(grid)})
    report_dir = _report_dir(args)
    result.write_csv(report_dir / "certificates.csv")
    write_json(report_dir / "validate_summary.json", summary)
    _write_resolved(report_dir, {"command": "validate", "system": str(args.system),
                                 "rom": str(args.rom), "estimator": kind,
                                 "grid": {"test": grid_spec}})
    print(f"max true error {summary['max_true_error']:.3e}, max {kind} estimate "
          f"{summary['max_estimate']:.3e}, effectivity {summary['effectivity']}")
    return EXIT_OK


def compare(system, train, test, cfg: GreedyConfig, kinds=COMPARE_ORDER, report_dir=None):
    """Run the greedy loop once per estimator on the same system and grids.

    Returns the summary rows; the proposed-vs-residual dimension trend is in
    ``trend`` of the returned dict.
    """
    rows, roms = [], {}
    for kind in kinds:
        if kind == "standard" and system.n > cfg.svd_cap:
            log.warning("skipping the standard estimator: n=%d > svd_cap=%d", system.n, cfg.svd_cap)
            continue
        run_cfg = GreedyConfig.from_dict({**cfg.to_dict(), "estimator": kind})
        t0 = time.perf_counter()
        rm, report = greedy_build(system, train, run_cfg, check=False)
        offline = time.perf_counter() - t0
        test_err = float(est.true_errors(system, rm, test).max())
        last = report.iterations[-1]
        rows.append({"estimator": kind, "converged": report.converged,
                     "termination": report.termination, "iterations": len(report.iterations),
                     "r": report.final_r, "offline_seconds": offline,
                     "eps_est": last.eps_est, "eps_true": last.eps_true, "eff": last.eff,
                     "max_test_error": test_err, "dual_basis_size": report.dual_basis_size})
        roms[kind] = (rm, report)
        if report_dir is not None:
            report.write_csv(Path(report_dir) / f"convergence_{kind}.csv")
            report.write_json(Path(report_dir) / f"convergence_{kind}.json")
    dims = {row["estimator"]: row["r"] for row in rows}
    trend = None
    if "proposed" in dims and "residual" in dims:
        trend = {"proposed_r": dims["proposed"], "residual_r": dims["residual"],
                 "ok": dims["proposed"] <= dims["residual"]}
        if not trend["ok"]:
            log.warning("trend violation: proposed ROM dimension %d > residual ROM dimension %d",
                        dims["proposed"], dims["residual"])
    return {"schema_version": 1, "rows": rows, "trend": trend}, roms


def cmd_compare(args) -> int:
    config = load_config(args.config)
    system = load_system(args.system)
    cfg = _greedy_config(args, config)
    cfg = GreedyConfig.from_dict({**cfg.to_dict(), "track_true_error": True})
    train, train_spec = _grid(system, args, config, "train", "train")
    test, test_spec = _grid(system, args, config, "test", "test")
    kinds = tuple(args.estimators.split(",")) if args.estimators else COMPARE_ORDER
    for k in kinds:
        if k not in est.KINDS:
            raise InvalidSpec(f"unknown estimator {k!r}")
    report_dir = _report_dir(args)
    summary, _ = compare(system, train, test, cfg, kinds, report_dir)
    write_json(report_dir / "compare_summary.json", summary)
    cols = ["estimator", "converged", "iterations", "r", "offline_seconds", "max_test_error",
            "eff"]
    with open(report_dir / "compare_summary.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in summary["rows"]:
            fh.write(",".join("" if row[c] is None else str(row[c]) for c in cols) + "\n")
    _write_resolved(report_dir, {"command": "compare", "system": str(args.system),
                                 "greedy": cfg.to_dict(), "estimators": list(kinds),
                                 "grid": {"train": train_spec, "test": test_spec}})
    for row in summary["rows"]:
        print(f"{row['estimator']:>10}: r={row['r']:3d} iterations={row['iterations']:2d} "
              f"offline={row['offline_seconds']:.2f}s max_test_error={row['max_test_error']:.3e}")
    trend = summary["trend"]
    if trend is not None:
        status = "ok" if trend["ok"] else "TREND VIOLATION"
        print(f"trend proposed r={trend['proposed_r']} <= residual r={trend['residual_r']}: {status}")
    return EXIT_OK if all(r["converged"] for r in summary["rows"]) else EXIT_NOT_CONVERGED


def _add_common(p):
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--report-dir", help=f"report directory (default ${REPORT_DIR_ENV} or ./reports)")


def _add_greedy_flags(p):
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--estimator", choices=est.KINDS)
    p.add_argument("--seed", type=int)
    p.add_argument("--K", type=int, help="number of random vectors (randomized estimator)")
    p.add_argument("--tol-rd", type=float, help="dual-basis greedy tolerance")
    p.add_argument("--initial", choices=("random", "endpoints"))
    p.add_argument("--svd-cap", type=int)
    p.add_argument("--realify", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--track-true-error", action="store_true")
    p.add_argument("--jobs", type=int, help="worker threads (default: all cores)")
    p.add_argument("--deterministic", action="store_true", help="force single-threaded runs")
    p.add_argument("--train-file", help="JSON list of [f, d1, ...] rows")
    p.add_argument("--train-grid", help="grid name declared in the system manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="certrom", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic benchmark system bundle")
    _add_common(p)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--family")
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--f-lo", type=float)
    p.add_argument("--f-hi", type=float)
    p.add_argument("--modes", type=int, nargs=2)
    p.add_argument("--dims", type=int)
    p.add_argument("--operator-scale", type=float)
    p.add_argument("--eta", type=float)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("greedy", help="build a ROM with the greedy algorithm")
    _add_common(p)
    p.add_argument("system")
    p.add_argument("-o", "--output", required=True, help="ROM bundle directory")
    _add_greedy_flags(p)
    p.set_defaults(func=cmd_greedy)

    p = sub.add_parser("sweep", help="online sweep of a saved ROM (no FOM access)")
    _add_common(p)
    p.add_argument("rom")
    p.add_argument("--sweep-file", help="JSON list of [f, d1, ...] rows")
    p.add_argument("--outputs", help="Matrix Market file with the q x n output matrix C")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="certify a ROM on a held-out grid")
    _add_common(p)
    p.add_argument("system")
    p.add_argument("rom")
    p.add_argument("--estimator", choices=est.KINDS)
    p.add_argument("--svd-cap", type=int)
    p.add_argument("--test-file")
    p.add_argument("--test-grid")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("compare", help="run all four estimators on one system")
    _add_common(p)
    p.add_argument("system")
    p.add_argument("--estimators", help="comma-separated subset, default all four")
    _add_greedy_flags(p)
    p.add_argument("--test-file")
    p.add_argument("--test-grid")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidSpec, DegenerateGrid, DimensionTooLarge) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_SPEC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CertromError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
