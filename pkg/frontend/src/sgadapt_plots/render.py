"""Render convergence, effectivity and index-set-growth figures."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

CONVERGENCE_COLUMNS = ("iter", "dofs", "mu", "zeta", "product", "n_elements",
                       "card_P", "active_M", "decision", "goal_value",
                       "seconds")
EFFECTIVITY_COLUMNS = ("iter", "dofs", "product", "goal_error", "effectivity")

KINDS = ("convergence", "effectivity", "indexset-growth")


class SchemaError(ValueError):
    """A run artifact is missing or malformed."""


@dataclass
class PlotRequest:
    run_dir: Path
    kind: str
    slopes: tuple = field(default_factory=tuple)
    output: Path = None

    def __post_init__(self):
        self.run_dir = Path(self.run_dir)
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; "
                              f"expected one of {KINDS}")
        if self.output is None:
            self.output = self.run_dir / f"{self.kind}.png"
        self.output = Path(self.output)


def read_table(path, required):
    """Read a CSV artifact into numpy columns, validating the header."""
    if not path.exists():
        raise SchemaError(f"missing artifact {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    if header is None:
        raise SchemaError(f"{path} is empty")
    for column in required:
        if column not in header:
            raise SchemaError(f"{path.name} is missing column {column!r}")
    if not rows:
        raise SchemaError(f"{path} holds no data rows")
    out = {}
    for column in required:
        k = header.index(column)
        values = [r[k] for r in rows]
        try:
            out[column] = np.array([float(v) for v in values])
        except ValueError:
            out[column] = np.array(values)
    return out


def _slope_guides(ax, x, y_anchor, slopes):
    """Power-law guide lines through the last data point."""
    x_last = x[-1]
    grid = np.array([x.min(), x.max()])
    for s in slopes:
        ax.loglog(grid, y_anchor * (grid / x_last) ** s, "k-", linewidth=0.8,
                  label=f"slope {s:g}")


def build_figure(request):
    """Build the matplotlib Figure for a request (no file output)."""
    run = request.run_dir
    fig = Figure(figsize=(6.4, 4.8))
    ax = fig.subplots()

    if request.kind == "convergence":
        data = read_table(run / "convergence.csv", CONVERGENCE_COLUMNS)
        dofs = data["dofs"]
        ax.loglog(dofs, data["mu"], "o-", label="primal estimate")
        ax.loglog(dofs, data["zeta"], "s-", label="dual estimate")
        ax.loglog(dofs, data["product"], "d-", label="estimate product")
        eff_path = run / "effectivity.csv"
        if eff_path.exists():
            eff = read_table(eff_path, EFFECTIVITY_COLUMNS)
            ax.loglog(eff["dofs"], eff["goal_error"], "^-",
                      label="reference goal error")
        _slope_guides(ax, dofs, data["product"][-1], request.slopes)
        ax.set_xlabel("degrees of freedom")
        ax.set_ylabel("error estimate")
    elif request.kind == "effectivity":
        eff = read_table(run / "effectivity.csv", EFFECTIVITY_COLUMNS)
        theta = eff["effectivity"]
        ax.semilogx(eff["dofs"], theta, "o-", label="effectivity index")
        pad = 0.05 * (theta.max() - theta.min() or theta.max() or 1.0)
        ax.set_ylim(theta.min() - pad, theta.max() + pad)
        ax.set_xlabel("degrees of freedom")
        ax.set_ylabel("effectivity index")
    else:  # indexset-growth
        data = read_table(run / "convergence.csv", CONVERGENCE_COLUMNS)
        ax.semilogy(data["iter"], data["card_P"], "o-", label="index set size")
        ax.semilogy(data["iter"], data["active_M"], "^-",
                    label="active parameters")
        ax.set_xlabel("iteration")
        ax.set_ylabel("count")

    ax.grid(True, which="both", linestyle="--", alpha=0.4)
    ax.legend(loc="best", fontsize=9)
    ax.set_title(f"{run.name}: {request.kind}")
    return fig


_DETERMINISTIC_METADATA = {
    ".svg": {"Date": None},
    ".pdf": {"CreationDate": None},
}


def render(request):
    """Render a request to its output file; returns the output path.

    Output is byte-reproducible: format-level timestamps are stripped and
    the SVG id salt is pinned.
    """
    import matplotlib

    fig = build_figure(request)
    metadata = _DETERMINISTIC_METADATA.get(request.output.suffix.lower())
    with matplotlib.rc_context({"svg.hashsalt": "sgadapt-plots"}):
        fig.savefig(request.output, dpi=150, metadata=metadata)
    return request.output
