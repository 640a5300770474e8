"""``qsdr`` command line tool.

Subcommands
-----------
fit        estimate a basis of the central subspace from a CSV file
dim        choose the structural dimension by cross-validation
bandwidth  show the bandwidth plan a fit would use
simulate   run a Monte Carlo experiment on a benchmark model
project    reduce a CSV file to ``B'X`` for external plotting
config     print every config key with its default

Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from . import config as cfgmod
from .bandwidth import plan_bandwidths
from .dimension import DimensionConfig, select_dimension_cv
from .errors import ConfigError, DataError, QsdrError
from .io import load_dataset_csv, write_report
from .opg import QopgConfig, qopg_fit
from .qmave import QmaveConfig, qmave_fit
from .simulation import run_replicates
from .sir import SirConfig, sir_fit
from .smoother import build_multi_index_set, fit_local_quantile

log = logging.getLogger("qsdr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    if data:
        p.add_argument("--input", help="CSV file with a header row")
        p.add_argument("--response", help="response column (name or zero-based index)")
        p.add_argument("--features", help="comma separated feature columns (default: all others)")
    p.add_argument("--q", type=int, help="number of directions")
    p.add_argument("--estimator", choices=("qopg", "qmave", "sir"))
    p.add_argument("--bandwidth", help="rot | cv | modified-cv | fixed:<h>")
    p.add_argument("--tau-grid", help="comma separated quantile levels")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="YAML or key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--output", help="write the JSON report here instead of stdout")
    p.add_argument("--threads", type=int, help="worker processes for simulate")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qsdr", description="Quantile-based sufficient dimension reduction.")
    parser.add_argument("--version", action="version", version=f"qsdr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="estimate central subspace directions")
    _common(p)
    p.add_argument("--csv", help="also write the basis as CSV")

    p = sub.add_parser("dim", help="select the structural dimension")
    _common(p)
    p.add_argument("--candidates", help="comma separated candidate dimensions (default 1,2,3)")

    p = sub.add_parser("bandwidth", help="resolve the bandwidth plan")
    _common(p)

    p = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    _common(p, data=False)
    p.add_argument("--model", choices=("A", "B", "C", "linear_heteroscedastic"))
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--error-dist", choices=("normal", "t3_scaled", "chisq1"))
    p.add_argument("--replicates", type=int)
    p.add_argument("--estimators", help="comma separated subset of qopg,qmave,sir")
    p.add_argument("--select-dimension", action="store_true")
    p.add_argument("--csv", help="also write per-replicate errors as CSV")

    p = sub.add_parser("project", help="reduced coordinates B'X for plotting")
    _common(p)
    p.add_argument("--basis", help="JSON report from `fit` or a p x q CSV matrix")
    p.add_argument("--csv", help="also write the reduced coordinates as CSV")
    p.add_argument("--curve-points", type=int, default=50,
                   help="grid size of the quantile curves when q = 1")

    p = sub.add_parser("config", help="print every config key and its default")
    p.add_argument("--output")
    return parser


def _parse_set(items: List[str]) -> Dict[str, object]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        out.update(cfgmod.parse_config_text(f"{key.strip()} = {val.strip()}"))
    cfgmod.check_keys(out)
    return out


def resolve(args) -> Dict[str, object]:
    """Merge defaults, config file, ``--set`` values and flags, in that order."""
    flat: Dict[str, object] = {}
    if getattr(args, "config", None):
        flat.update(cfgmod.load_config(args.config))
    flat.update(_parse_set(getattr(args, "set", [])))
    flags = {
        "run.input": getattr(args, "input", None),
        "run.response": getattr(args, "response", None),
        "run.features": getattr(args, "features", None),
        "run.q": args.q,
        "run.estimator": args.estimator,
        "run.seed": args.seed,
        "run.threads": args.threads,
        "run.output": args.output,
        "run.csv": getattr(args, "csv", None),
        "run.basis": getattr(args, "basis", None),
        "run.q_candidates": getattr(args, "candidates", None),
    }
    flat.update({k: v for k, v in flags.items() if v is not None})
    est = flat.get("run.estimator", "qopg")
    names = [est]
    if args.command == "simulate":
        sim_flags = {
            "simulate.model": args.model,
            "simulate.n": args.n,
            "simulate.p": args.p,
            "simulate.error_dist": args.error_dist,
            "simulate.n_replicates": args.replicates,
            "simulate.seed": args.seed,
            "simulate.select_dimension": True if args.select_dimension else None,
            "simulate.estimators": args.estimators,
        }
        flat.update({k: v for k, v in sim_flags.items() if v is not None})
        names = flat.get("simulate.estimators", ["qopg"])
        if isinstance(names, str):
            names = [s.strip() for s in names.split(",") if s.strip()]
            flat["simulate.estimators"] = names
    for name in names:
        if args.bandwidth is not None and name != "sir":
            flat[f"estimator.{name}.bandwidth"] = args.bandwidth
        if args.tau_grid is not None and name != "sir":
            flat[f"estimator.{name}.tau_grid"] = args.tau_grid
    if est in ("qopg", "qmave") and args.command == "dim" and args.tau_grid is not None:
        flat["estimator.qopg.tau_grid"] = args.tau_grid
    out = cfgmod.default_config()
    out.update(flat)
    return out


def _estimator_config(flat, name: str):
    if name == "qopg":
        return cfgmod.build(QopgConfig, flat, "estimator.qopg")
    if name == "qmave":
        return cfgmod.build(QmaveConfig, flat, "estimator.qmave")
    if name == "sir":
        return cfgmod.build(SirConfig, flat, "estimator.sir", q=int(flat["run.q"]))
    raise ConfigError(f"unknown estimator {name!r}")


def _load(flat):
    if not flat.get("run.input"):
        raise ConfigError("--input is required")
    if flat.get("run.response") is None:
        raise ConfigError("--response is required")
    feats = flat.get("run.features")
    if isinstance(feats, str):
        feats = [f.strip() for f in feats.split(",") if f.strip()]
    return load_dataset_csv(flat["run.input"], flat["run.response"], feats)


def _config_dict(cfg) -> dict:
    import dataclasses

    return dataclasses.asdict(cfg)


def cmd_fit(flat) -> dict:
    ds = _load(flat)
    name = flat["run.estimator"]
    q = int(flat["run.q"])
    cfg = _estimator_config(flat, name)
    if name == "qopg":
        est = qopg_fit(ds.X, ds.Y, q, cfg)
    elif name == "qmave":
        est = qmave_fit(ds.X, ds.Y, q, cfg)
    else:
        est = sir_fit(ds.X, ds.Y, cfg)
    report = {
        "command": "fit",
        "data": {"source": ds.source, "n": ds.n, "p": ds.p, "dropped_rows": ds.dropped,
                 "features": ds.column_names, "response": ds.response_name},
        "config": {"estimator": name, "q": q, name: _config_dict(cfg)},
        "result": est.to_dict(),
    }
    if flat.get("run.csv"):
        with open(flat["run.csv"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["feature"] + [f"b{j + 1}" for j in range(q)])
            for feat, row in zip(ds.column_names, est.basis):
                w.writerow([feat] + [f"{v:.17g}" for v in row])
    return report


def _candidates(flat):
    c = flat.get("run.q_candidates", [1, 2, 3])
    if isinstance(c, str):
        c = [int(v) for v in c.split(",") if v.strip()]
    elif isinstance(c, int):
        c = [c]
    return [int(v) for v in c]


def cmd_dim(flat) -> dict:
    ds = _load(flat)
    opg = cfgmod.build(QopgConfig, flat, "estimator.qopg")
    dim = cfgmod.build(DimensionConfig, flat, "dimension", skip=("opg", "estimator"),
                       opg=opg, estimator=flat["run.estimator"])
    res = select_dimension_cv(ds.X, ds.Y, _candidates(flat), dim, return_result=True)
    return {
        "command": "dim",
        "data": {"source": ds.source, "n": ds.n, "p": ds.p, "dropped_rows": ds.dropped},
        "config": {"dimension": {k: v for k, v in _config_dict(dim).items() if k != "opg"},
                   "qopg": _config_dict(opg), "candidates": _candidates(flat)},
        "result": {**res.to_dict(), "bases": {str(q): B for q, B in res.bases.items()}},
    }


def cmd_bandwidth(flat) -> dict:
    ds = _load(flat)
    name = flat["run.estimator"]
    if name == "sir":
        raise ConfigError("SIR does not use a bandwidth")
    cfg = _estimator_config(flat, name)
    A = build_multi_index_set(ds.p, getattr(cfg, "order", 1))
    plan = plan_bandwidths(ds.X, ds.Y, cfg.tau_grid, rule=cfg.bandwidth, h=cfg.h,
                           h_grid=cfg.h_grid, A=A, spec=cfg.kernel, solver_cfg=cfg.solver,
                           rot_constant=cfg.rot_constant, base=cfg.modified_cv_base)
    return {
        "command": "bandwidth",
        "data": {"source": ds.source, "n": ds.n, "p": ds.p, "dropped_rows": ds.dropped},
        "config": {"estimator": name, "bandwidth": cfg.bandwidth, "tau_grid": list(cfg.tau_grid)},
        "result": plan.to_dict(),
    }


def cmd_simulate(flat) -> dict:
    spec = cfgmod.sim_spec(flat)
    workers = max(1, int(flat.get("run.threads") or 1))
    report = run_replicates(spec, workers=workers)
    for line in report.summary_lines():
        log.info(line)
    if flat.get("run.csv"):
        with open(flat["run.csv"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "replicate", "error", "error_spectral"])
            for name, s in report.estimators.items():
                for r, e, es in zip(s.replicates, s.errors, s.errors_spectral):
                    w.writerow([name, r, f"{e:.17g}", f"{es:.17g}"])
    return {"command": "simulate", "result": report.to_dict()}


def _read_basis(path, p: int) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        B = np.asarray(doc.get("result", doc).get("basis"), dtype=float)
    else:
        rows = list(csv.reader(path.open(encoding="utf-8")))
        try:
            vals = [[float(v) for v in r if v.strip()] for r in rows]
        except ValueError:
            vals = [[float(v) for v in r[1:]] for r in rows[1:]]
        B = np.asarray(vals, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if B.ndim != 2 or B.shape[0] != p:
        raise DataError(f"basis has shape {B.shape}, expected {p} rows")
    return B


def cmd_project(flat, curve_points: int = 50) -> dict:
    ds = _load(flat)
    if not flat.get("run.basis"):
        raise ConfigError("--basis is required")
    B = _read_basis(flat["run.basis"], ds.p)
    Z = ds.X @ B
    result = {"basis": B, "coordinates": Z, "response": ds.Y}
    if B.shape[1] == 1 and curve_points > 1:
        cfg = cfgmod.build(QopgConfig, flat, "estimator.qopg")
        plan = plan_bandwidths(Z, ds.Y, cfg.tau_grid, rule=cfg.bandwidth, h=cfg.h,
                               rot_constant=cfg.rot_constant, base=cfg.modified_cv_base)
        grid = np.linspace(np.quantile(Z, 0.02), np.quantile(Z, 0.98), curve_points)
        curves = {}
        for tau in cfg.tau_grid:
            vals = []
            for z in grid:
                try:
                    vals.append(fit_local_quantile(Z, ds.Y, [z], tau, plan[tau]).coeffs[0])
                except QsdrError:
                    vals.append(float("nan"))
            curves[f"{tau:g}"] = vals
        result["quantile_curves"] = {"grid": grid, "levels": curves, "bandwidths": plan.to_dict()}
    if flat.get("run.csv"):
        with open(flat["run.csv"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([ds.response_name] + [f"z{j + 1}" for j in range(B.shape[1])])
            for y, z in zip(ds.Y, Z):
                w.writerow([f"{y:.17g}"] + [f"{v:.17g}" for v in z])
    return {"command": "project", "data": {"source": ds.source, "n": ds.n, "p": ds.p},
            "result": result}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"qsdr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "config":
            text = write_report(cfgmod.default_config(), args.output)
            if not args.output:
                sys.stdout.write(text)
            return EXIT_OK
        flat = resolve(args)
        if args.command == "fit":
            report = cmd_fit(flat)
        elif args.command == "dim":
            report = cmd_dim(flat)
        elif args.command == "bandwidth":
            report = cmd_bandwidth(flat)
        elif args.command == "simulate":
            report = cmd_simulate(flat)
        else:
            report = cmd_project(flat, args.curve_points)
        report["version"] = __version__
        out = flat.get("run.output")
        text = write_report(report, out)
        if not out:
            sys.stdout.write(text)
    except ConfigError as exc:
        print(f"qsdr: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataError) as exc:
        print(f"qsdr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (QsdrError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"qsdr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
