"""Batch driver: configured adaptive runs, reference solves, effectivity.

Artifacts per run directory:

* ``convergence.csv``  - one row per iteration, fixed header
* ``indexset.log``     - parametric enrichments in parenthesized form
* ``mesh_final.txt``   - final triangulation in the plain-text mesh format
* ``summary.json``     - resolved configuration and final-state summary

``reference`` adds ``reference.json`` and ``effectivity.csv`` computed from
an overkill piecewise-linear solve on a uniform refinement of the final
mesh with an enriched index set.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from . import __version__
from .adapt import CSV_HEADER, MarkingParams, run
from .assembly import load as assemble_load
from .assembly import stiffness
from .chaos import (detail_index_set, format_index, parse_index, recurrence,
                    sort_indices, active_count)
from .errors import ConfigError, NumericError
from .mesh import dump_mesh_text, load_mesh_text, uniform_refine
from .problems import PROBLEMS, build_problem
from .solver import BlockVector, MeanPreconditioner, build_operator, solve

_RUN_KEYS = {"problem", "overrides", "theta_x", "theta_p", "m_bar", "tol",
             "max_iterations", "output_dir", "seed", "reference"}
_REF_KEYS = {"refinements", "enrich_indices", "dof_cap"}
_REF_DEFAULTS = {"refinements": 1, "enrich_indices": True, "dof_cap": 3_000_000}


def _fmt(x):
    """Floats rendered with 9 significant digits."""
    return f"{x:.9g}"


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "problem" not in raw:
        raise ConfigError("config is missing the 'problem' key")
    if raw["problem"] not in PROBLEMS:
        raise ConfigError(f"unknown problem {raw['problem']!r}; choose from "
                          f"{sorted(PROBLEMS)}")
    ref = raw.get("reference", {})
    if not isinstance(ref, dict) or set(ref) - _REF_KEYS:
        raise ConfigError("invalid 'reference' section")
    return raw


def resolve(config):
    """Build the problem and marking parameters from a validated config."""
    overrides = dict(config.get("overrides", {}))
    problem = build_problem(config["problem"], **overrides)
    params_kwargs = {}
    for key in ("theta_x", "theta_p", "m_bar", "tol", "max_iterations"):
        if key in config:
            params_kwargs[key] = config[key]
        else:
            params_kwargs[key] = getattr(problem.defaults, key)
    try:
        params = MarkingParams(**params_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return problem, params


def output_dir_for(config, config_path):
    if "output_dir" in config:
        out = Path(config["output_dir"])
    else:
        root = Path(os.environ.get("SGADAPT_OUTPUT_ROOT", "runs"))
        out = root / config["problem"]
    if not out.is_absolute():
        out = Path.cwd() / out
    return out


def _write_partial(out, exc):
    """Persist the progress attached to a failed run."""
    records = getattr(exc, "records", [])
    lines = [CSV_HEADER] + [r.csv_row() for r in records]
    (out / "convergence.csv").write_text("\n".join(lines) + "\n")
    (out / "summary.json").write_text(json.dumps(
        {"status": "failed", "error": str(exc),
         "iterations": len(records)}, indent=2) + "\n")


def run_experiment(config_path, quiet=False):
    """Execute one configured adaptive run and persist its artifacts."""
    config = load_config(config_path)
    problem, params = resolve(config)
    out = output_dir_for(config, config_path)
    out.mkdir(parents=True, exist_ok=True)

    def observer(record):
        if not quiet:
            print(f"iter {record.iteration:3d}  dofs {record.dofs:8d}  "
                  f"estimate {_fmt(record.product)}  {record.decision}")

    try:
        result = run(problem, params, observer=observer)
    except NumericError as exc:
        _write_partial(out, exc)
        raise

    (out / "convergence.csv").write_text(result.csv_text())
    (out / "indexset.log").write_text(result.index_log_text())
    (out / "mesh_final.txt").write_text(dump_mesh_text(result.mesh))
    summary = {
        "version": __version__,
        "problem": config["problem"],
        "overrides": config.get("overrides", {}),
        "seed": config.get("seed", 0),
        "marking": {
            "theta_x": params.theta_x, "theta_p": params.theta_p,
            "m_bar": params.m_bar, "tol": params.tol,
            "max_iterations": params.max_iterations,
        },
        "reference": {**_REF_DEFAULTS, **config.get("reference", {})},
        "status": result.status,
        "iterations": len(result.records),
        "final_product": float(result.final.product),
        "goal_value": float(result.final.goal_value),
        "n_total": int(sum(r.dofs for r in result.records)),
        "n_elements": int(result.final.n_elements),
        "card_p": len(result.indices),
        "active_m": int(result.final.active_m),
        "indices": [format_index(nu, max(result.final.active_m, 1))
                    for nu in result.indices],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if not quiet:
        print(f"{result.status}: estimate product {_fmt(result.final.product)} "
              f"after {len(result.records)} iterations -> {out}")
    return 0 if result.status == "converged" else 3


def _reference_solution(problem, params, final_mesh, final_indices, ref_cfg):
    """Overkill solve: uniformly refined final mesh, enriched index set."""
    tri = final_mesh
    for _ in range(int(ref_cfg["refinements"])):
        tri, _ = uniform_refine(tri)
    indices = sort_indices(final_indices)
    if ref_cfg["enrich_indices"]:
        indices = sort_indices(indices
                               + detail_index_set(indices, params.m_bar))
    reach = active_count(indices)
    if reach > problem.expansion.n_terms:
        raise NumericError("reference index set exceeds the expansion "
                           "truncation")
    dofs = tri.n_dofs * len(indices)
    if dofs > ref_cfg["dof_cap"]:
        raise NumericError(f"reference problem needs {dofs} dof, above the "
                           f"cap {ref_cfg['dof_cap']}")

    table = recurrence(problem.measure,
                       max((max(nu) for nu in indices if nu), default=0) + 2)
    mats = {}

    def matrix_for(m):
        if m not in mats:
            mats[m] = stiffness(tri, problem.expansion.coefficient(m))
        return mats[m]

    op = build_operator(indices, matrix_for, table)
    pre = MeanPreconditioner.shared(matrix_for(0), len(indices))
    rhs = BlockVector.zeros(indices, op.block_sizes)
    rhs.blocks[indices.index(())][:] = assemble_load(tri, problem.primal_spec)
    u_ref = solve(op, rhs, precond=pre, tol_rel=params.solver_tol)
    goal_vec = assemble_load(tri, problem.goal_spec)
    g_ref = float(goal_vec @ u_ref.blocks[indices.index(())])
    return g_ref, dofs, len(indices)


def reference_goal(run_dir, quiet=False):
    """Compute the reference goal value and per-iteration effectivity."""
    run_dir = Path(run_dir)
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        raise ConfigError(f"{run_dir} does not contain summary.json")
    summary = json.loads(summary_path.read_text())
    problem = build_problem(summary["problem"], **summary.get("overrides", {}))
    params = MarkingParams(**summary["marking"])
    final_mesh = load_mesh_text((run_dir / "mesh_final.txt").read_text())
    final_indices = [parse_index(s) for s in summary["indices"]]
    ref_cfg = {**_REF_DEFAULTS, **summary.get("reference", {})}

    g_ref, ref_dofs, ref_card = _reference_solution(
        problem, params, final_mesh, final_indices, ref_cfg)

    rows = (run_dir / "convergence.csv").read_text().strip().splitlines()
    if rows[0] != CSV_HEADER:
        raise ConfigError("convergence.csv has an unexpected header")
    eff_lines = ["iter,dofs,product,goal_error,effectivity"]
    effectivities = []
    for row in rows[1:]:
        parts = row.split(",")
        it, dofs = int(parts[0]), int(parts[1])
        product, goal = float(parts[4]), float(parts[9])
        err = abs(g_ref - goal)
        theta = product / err if err > 0 else float("inf")
        effectivities.append(theta)
        eff_lines.append(f"{it},{dofs},{_fmt(product)},{_fmt(err)},{_fmt(theta)}")
    (run_dir / "effectivity.csv").write_text("\n".join(eff_lines) + "\n")
    ref_summary = {
        "goal_reference": g_ref,
        "reference_dofs": ref_dofs,
        "reference_card_p": ref_card,
        "refinements": ref_cfg["refinements"],
        "effectivity_min": min(effectivities),
        "effectivity_max": max(effectivities),
    }
    (run_dir / "reference.json").write_text(json.dumps(ref_summary, indent=2)
                                            + "\n")
    if not quiet:
        print(f"reference goal {_fmt(g_ref)} ({ref_dofs} dof); effectivity in "
              f"[{_fmt(min(effectivities))}, {_fmt(max(effectivities))}]")
    return 0


def list_problems():
    for name in sorted(PROBLEMS):
        print(name)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="sgadapt",
        description="Goal-oriented adaptive stochastic Galerkin FEM driver")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a configured adaptive run")
    p_run.add_argument("config", help="path to a JSON run configuration")
    p_run.add_argument("--quiet", action="store_true")
    p_ref = sub.add_parser("reference",
                           help="reference goal value + effectivity indices")
    p_ref.add_argument("run_dir", help="directory written by 'run'")
    p_ref.add_argument("--quiet", action="store_true")
    sub.add_parser("list-problems", help="names of built-in problems")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return run_experiment(args.config, quiet=args.quiet)
        if args.command == "reference":
            return reference_goal(args.run_dir, quiet=args.quiet)
        if args.command == "list-problems":
            return list_problems()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    return 1


if __name__ == "__main__":
    sys.exit(main())
