"""Command-line experiment driver.

Subcommands
-----------
run
    Convergence study on refined meshes, errors and optionally condition
    numbers per level.
sigma-sweep
    The same study repeated for several penalty strengths.
conditioning
    Condition number per level plus a least-squares slope of
    log(kappa) against log(h).

All commands emit one CSV with a fixed header; numbers are written with
repr so that two runs of the same configuration produce byte-identical
files.  Exit code 0 means success, 2 a configuration problem, 3 at least
one failed solve (failed rows still appear, flagged in `status`).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass

import numpy as np

from .analysis import (ErrorReport, compute_errors,
                       compute_errors_vs_reference, estimated_orders,
                       make_solution)
from .assembly import assemble_system
from .cases import CASES, get_case
from .levelset import EmptyActiveSetError, classify_domain, \
    interpolate_levelset
from .linalg import (NoConvergenceError, SingularMatrixError,
                     estimate_condition_number, solve)
from .mesh import build_background_mesh

__all__ = ["RunConfig", "run_case", "sigma_sweep", "conditioning_study",
           "write_csv", "main"]

CSV_HEADER = ("h,n_cells,dofs,k,l,sigma,err_l2_rel,err_h1_rel,"
              "eoc_l2,eoc_h1,kappa,status")

_SOLVE_TOL = 1e-11


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration of one experiment."""

    case: str = "circle"
    k: int = 1
    l: int | None = None
    sigma: float = 20.0
    n: int = 10
    levels: int = 3
    box: tuple[float, float, float, float] | None = None
    tasks: tuple[str, ...] = ("errors",)
    out: str | None = None
    sigmas: tuple[float, ...] | None = None

    @property
    def levelset_degree(self) -> int:
        return self.k if self.l is None else self.l

    def resolved_box(self) -> tuple[float, float, float, float]:
        return get_case(self.case).box if self.box is None else self.box

    def validate(self) -> None:
        if self.case not in CASES:
            raise ValueError(
                f"unknown case {self.case!r}; choose from {sorted(CASES)}")
        if self.k not in (1, 2, 3):
            raise ValueError(f"k must be 1, 2 or 3, got {self.k}")
        if self.levelset_degree not in (1, 2, 3):
            raise ValueError(f"l must be 1, 2 or 3, got {self.l}")
        if not np.isfinite(self.sigma) or self.sigma < 0.0:
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.box is not None:
            if len(self.box) != 4 or self.box[2] <= self.box[0] \
                    or self.box[3] <= self.box[1]:
                raise ValueError(f"degenerate box {self.box!r}")
        bad = set(self.tasks) - {"errors", "conditioning"}
        if bad:
            raise ValueError(f"unknown tasks {sorted(bad)}")
        if self.sigmas is not None:
            if len(self.sigmas) == 0:
                raise ValueError("sigmas must be a non-empty list")
            for s in self.sigmas:
                if not np.isfinite(s) or s < 0.0:
                    raise ValueError(f"sigma values must be >= 0, got {s}")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        data = dict(data)
        for key in ("box", "tasks", "sigmas"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        cfg = cls(**data)
        cfg.validate()
        return cfg


def _blank_row(config: RunConfig, sigma: float) -> dict:
    return {
        "h": None, "n_cells": None, "dofs": None,
        "k": config.k, "l": config.levelset_degree, "sigma": sigma,
        "err_l2_rel": None, "err_h1_rel": None,
        "eoc_l2": None, "eoc_h1": None, "kappa": None, "status": "ok",
    }


def _solve_level(config: RunConfig, n: int, sigma: float):
    """One mesh, classify, assemble, solve; returns (row, system, solution)."""
    case = get_case(config.case)
    row = _blank_row(config, sigma)
    row["n_cells"] = n
    mesh = build_background_mesh(config.resolved_box(), (n, n))
    row["h"] = mesh.h
    field = interpolate_levelset(case.phi, mesh, config.levelset_degree)
    domain = classify_domain(field, mesh)
    system = assemble_system(domain, field, case.f, config.k, sigma,
                             outer_data=case.outer_data)
    row["dofs"] = system.n_dofs
    solution = None
    try:
        report = solve(system, _SOLVE_TOL)
        solution = make_solution(system, field, report.x)
    except NoConvergenceError as err:
        row["status"] = "no-convergence"
        if err.best is not None:
            solution = make_solution(system, field, err.best)
    except SingularMatrixError:
        row["status"] = "singular"
    return row, domain, system, solution


def _fill_orders(rows: list[dict]) -> None:
    """Derive order columns from consecutive rows with both errors present."""
    for prev, cur in zip(rows, rows[1:]):
        ok = all(r["err_l2_rel"] is not None and r["err_h1_rel"] is not None
                 for r in (prev, cur))
        if not ok:
            continue
        reports = [ErrorReport(h=r["h"], n_dofs=r["dofs"] or 0,
                               rel_l2=r["err_l2_rel"],
                               rel_h1_semi=r["err_h1_rel"])
                   for r in (prev, cur)]
        (eoc_l2, eoc_h1), = estimated_orders(reports)
        cur["eoc_l2"] = eoc_l2
        cur["eoc_h1"] = eoc_h1


def _run_sigma(config: RunConfig, sigma: float) -> list[dict]:
    """All refinement levels for one penalty strength."""
    case = get_case(config.case)
    want_errors = "errors" in config.tasks
    want_kappa = "conditioning" in config.tasks
    extra = 2 if (want_errors and case.u_exact is None) else 0

    levels = []
    for i in range(config.levels + extra):
        n = config.n * 2 ** i
        levels.append(_solve_level(config, n, sigma))

    rows = []
    for i in range(config.levels):
        row, domain, system, solution = levels[i]
        if want_errors and solution is not None:
            if case.u_exact is not None:
                rep = compute_errors(solution, case.u_exact, domain)
            else:
                ref_solution = levels[i + 2][3]
                if ref_solution is None:
                    rep = None
                else:
                    rep = compute_errors_vs_reference(solution, ref_solution,
                                                      domain)
            if rep is not None:
                row["err_l2_rel"] = rep.rel_l2
                row["err_h1_rel"] = rep.rel_h1_semi
        if want_kappa:
            try:
                est = estimate_condition_number(system)
                row["kappa"] = est.kappa
            except NoConvergenceError as err:
                if err.best is not None:
                    row["kappa"] = err.best.kappa
                row["status"] = "no-convergence"
            except SingularMatrixError:
                row["status"] = "singular"
        rows.append(row)
    _fill_orders(rows)
    return rows


def run_case(config: RunConfig) -> list[dict]:
    """Convergence study for one case; one row per refinement level.

    For cases without a closed-form solution, each level is compared with
    the same discretization two levels finer; the reference levels are
    solved internally and not reported.
    """
    config.validate()
    return _run_sigma(config, config.sigma)


def sigma_sweep(config: RunConfig, sigmas: list[float]) -> list[dict]:
    """Repeat the study for each penalty strength; rows grouped by sigma."""
    config.validate()
    if not sigmas:
        raise ValueError("sigma sweep needs at least one value")
    rows = []
    for sigma in sigmas:
        if not np.isfinite(sigma) or sigma < 0.0:
            raise ValueError(f"sigma values must be >= 0, got {sigma}")
        rows.extend(_run_sigma(config, float(sigma)))
    return rows


def conditioning_study(config: RunConfig) -> tuple[list[dict], float | None]:
    """Condition number per level and the log-log slope against h.

    Returns (rows, slope); the slope is fitted by least squares over the
    levels whose estimate converged, and is None when fewer than two did.
    """
    config.validate()
    cfg = dataclasses.replace(config, tasks=("conditioning",))
    rows = _run_sigma(cfg, cfg.sigma)
    pts = [(row["h"], row["kappa"]) for row in rows
           if row["kappa"] is not None and row["status"] == "ok"]
    slope = None
    if len(pts) >= 2:
        hs = np.log([p[0] for p in pts])
        ks = np.log([p[1] for p in pts])
        slope = float(np.polyfit(hs, ks, 1)[0])
    return rows, slope


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(int(value)) if isinstance(value, np.integer) else str(value)


def write_csv(rows: list[dict], stream, slope: float | None = None) -> None:
    """Write rows under the fixed header; optional slope summary row."""
    stream.write(CSV_HEADER + "\n")
    keys = CSV_HEADER.split(",")
    for row in rows:
        stream.write(",".join(_fmt(row[key]) for key in keys) + "\n")
    if slope is not None:
        summary = {key: None for key in keys}
        summary["kappa"] = slope
        summary["status"] = "slope"
        stream.write(",".join(_fmt(summary[key]) for key in keys) + "\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phifem",
        description="Fictitious-domain Poisson experiments on level-set "
                    "geometries.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("run", "convergence study"),
            ("sigma-sweep", "study repeated over penalty strengths"),
            ("conditioning", "condition numbers per level")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--case", choices=sorted(CASES), default=None)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--l", type=int, default=None)
        p.add_argument("--sigma", type=float, default=None)
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--levels", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--config", default=None,
                       help="JSON file with RunConfig fields; flags override")
        if name == "sigma-sweep":
            p.add_argument("--sigmas", default=None,
                           help="comma-separated penalty strengths")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config is not None:
        with open(args.config) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a JSON object")
        data.update(loaded)
    for key in ("case", "k", "l", "sigma", "n", "levels", "out"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if getattr(args, "sigmas", None) is not None:
        data["sigmas"] = [float(s) for s in args.sigmas.split(",")]
    if args.command == "conditioning":
        data["tasks"] = ("conditioning",)
    return RunConfig.from_dict(data)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
    except (ValueError, TypeError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    slope = None
    try:
        if args.command == "run":
            rows = run_case(config)
        elif args.command == "sigma-sweep":
            if config.sigmas is None:
                print("error: sigma-sweep needs --sigmas or a `sigmas` "
                      "config entry", file=sys.stderr)
                return 2
            rows = sigma_sweep(config, list(config.sigmas))
        else:
            rows, slope = conditioning_study(config)
    except EmptyActiveSetError as err:
        print(f"error: EmptyActiveSet: {err}", file=sys.stderr)
        return 2

    if config.out is None:
        write_csv(rows, sys.stdout, slope)
    else:
        with open(config.out, "w", newline="") as fh:
            write_csv(rows, fh, slope)

    failed = sorted({row["status"] for row in rows} - {"ok"})
    if failed:
        print(f"error: {len([r for r in rows if r['status'] != 'ok'])} "
              f"level(s) failed: {', '.join(failed)}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
