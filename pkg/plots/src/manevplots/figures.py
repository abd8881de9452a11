"""Figure rendering from serialized run directories.

Input contract (schema version 1, mirrored from the simulation CLI):
  summary.json       must carry "schema_version": 1
  diagnostics.csv    header must equal CSV_COLUMNS exactly; empty cells are
                     missing values

Any deviation (wrong schema version, missing/reordered columns, empty series)
raises SchemaMismatchError, which the command-line wrapper maps to exit 2.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SCHEMA_VERSION = 1

CSV_COLUMNS = (
    "t", "mass", "l1", "l2", "l53", "linf", "kinetic", "x_moment",
    "interaction", "entropy", "free_energy", "dissipation", "virial_margin",
    "min_pair_dist", "max_density", "boundary_loss",
)

FIGURE_KINDS = (
    "free-energy-vs-t",
    "moments-vs-t",
    "dichotomy-map",
    "eps-convergence",
    "lp-growth-vs-bound",
)

# pinned style so repeated renders of the same run are byte-identical
STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "manevplots",
}


class SchemaMismatchError(Exception):
    """Run-directory contents do not match the published output schema."""


@dataclass(frozen=True)
class FigureSpec:
    run_dir: str
    kind: str
    out_path: str

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(
                f"unknown figure kind {self.kind!r}; choose from {FIGURE_KINDS}"
            )


def load_summary(run_dir: str) -> dict:
    path = os.path.join(run_dir, "summary.json")
    if not os.path.exists(path):
        raise SchemaMismatchError(f"no summary.json in {run_dir}")
    with open(path) as fh:
        summary = json.load(fh)
    if summary.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatchError(
            f"schema version {summary.get('schema_version')!r} != "
            f"{SCHEMA_VERSION}"
        )
    return summary


def load_series(run_dir: str) -> list[dict]:
    path = os.path.join(run_dir, "diagnostics.csv")
    if not os.path.exists(path):
        raise SchemaMismatchError(f"no diagnostics.csv in {run_dir}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatchError("diagnostics.csv is empty")
        if tuple(header) != CSV_COLUMNS:
            raise SchemaMismatchError(
                f"csv columns {header} do not match the published schema"
            )
        rows = []
        for raw in reader:
            rows.append({
                col: (float(val) if val != "" else None)
                for col, val in zip(CSV_COLUMNS, raw)
            })
    return rows


def _series(rows, column):
    pts = [(r["t"], r[column]) for r in rows if r[column] is not None]
    if not pts:
        raise SchemaMismatchError(f"empty time series for column {column!r}")
    return [p[0] for p in pts], [p[1] for p in pts]


def _save(fig, out_path):
    fig.savefig(out_path, format=os.path.splitext(out_path)[1][1:] or "png",
                metadata={"Software": "manevplots"})
    plt.close(fig)


def _render_free_energy(summary, rows, out_path):
    t, fe = _series(rows, "free_energy")
    fig, ax = plt.subplots()
    ax.plot(t, fe, color="tab:blue", label="free energy")
    ax.set_xlabel("t")
    ax.set_ylabel("free energy")
    try:
        td, dis = _series(rows, "dissipation")
    except SchemaMismatchError:
        td = None
    if td is not None:
        ax2 = ax.twinx()
        ax2.plot(td, dis, color="tab:orange", label="dissipation")
        ax2.set_ylabel("dissipation")
        ax2.grid(False)
    ax.set_title("free energy and dissipation")
    fig.tight_layout()
    _save(fig, out_path)


def _render_moments(summary, rows, out_path):
    fig, ax = plt.subplots()
    for col, color in (("kinetic", "tab:blue"), ("x_moment", "tab:green"),
                       ("mass", "tab:gray")):
        try:
            t, vals = _series(rows, col)
        except SchemaMismatchError:
            if col != "mass":
                raise
            continue
        ax.plot(t, vals, color=color, label=col)
    ax.set_xlabel("t")
    ax.set_ylabel("moment")
    ax.legend()
    ax.set_title("second moments and mass")
    fig.tight_layout()
    _save(fig, out_path)


def _render_dichotomy(summary, rows, out_path):
    if summary.get("kind") != "sweep-mass":
        raise SchemaMismatchError(
            "dichotomy-map needs a sweep-mass run directory"
        )
    outcomes = summary.get("outcomes") or []
    if not outcomes:
        raise SchemaMismatchError("sweep-mass summary has no outcomes")
    styles = {
        "bounded": ("tab:green", "o"),
        "collapsed": ("tab:red", "x"),
        "undecided": ("tab:gray", "s"),
    }
    fig, ax = plt.subplots()
    seen = set()
    for entry in outcomes:
        color, marker = styles[entry["outcome"]]
        label = entry["outcome"] if entry["outcome"] not in seen else None
        seen.add(entry["outcome"])
        ax.scatter(entry["mass"], entry["virial_margin_initial"],
                   c=color, marker=marker, s=60, label=label)
    ax.axhline(0.0, color="black", linewidth=0.8)
    interval = summary.get("transition_interval")
    if interval:
        ax.axvspan(interval[0], interval[1], color="tab:orange", alpha=0.15)
    ax.set_xlabel("total mass M")
    ax.set_ylabel("initial virial margin")
    ax.set_title("mass dichotomy")
    ax.legend()
    fig.tight_layout()
    _save(fig, out_path)


def _render_eps_convergence(summary, rows, out_path):
    if summary.get("kind") != "sweep-epsilon":
        raise SchemaMismatchError(
            "eps-convergence needs a sweep-epsilon run directory"
        )
    eps = summary.get("epsilons") or []
    l1 = summary.get("l1_differences") or []
    l32 = summary.get("l32_differences") or []
    if len(eps) < 2 or not l1:
        raise SchemaMismatchError("sweep-epsilon summary has no differences")
    pair_eps = eps[:-1]  # difference k compares eps[k] with eps[k+1]
    fig, ax = plt.subplots()
    ax.loglog(pair_eps, l1, "o-", color="tab:blue", label=r"$L^1$")
    if l32:
        ax.loglog(pair_eps, l32, "s-", color="tab:orange", label=r"$L^{3/2}$")
    ax.set_xlabel(r"$\varepsilon$ (larger of each pair)")
    ax.set_ylabel("successive density difference")
    ax.invert_xaxis()
    ax.set_title("regularization convergence")
    ax.legend()
    fig.tight_layout()
    _save(fig, out_path)


def _render_lp_growth(summary, rows, out_path):
    config = summary.get("config") or {}
    sigma = config.get("sigma")
    if sigma is None:
        raise SchemaMismatchError("summary config carries no sigma")
    if config.get("solver") == "phase-grid":
        d = (config.get("grid") or {}).get("d", 1)
    else:
        d = (config.get("initial") or {}).get("dim", 3)
    fig, ax = plt.subplots()
    for col, p, color in (("l2", 2.0, "tab:blue"), ("linf", math.inf,
                                                    "tab:red")):
        t, vals = _series(rows, col)
        rate = d * sigma * (1.0 if math.isinf(p) else 1.0 - 1.0 / p)
        bound = [vals[0] * math.exp(rate * (tk - t[0])) for tk in t]
        label = "sup norm" if math.isinf(p) else f"L{p:g} norm"
        ax.plot(t, vals, color=color, label=label)
        ax.plot(t, bound, color=color, linestyle="--", alpha=0.6,
                label=f"{label} bound")
    ax.set_xlabel("t")
    ax.set_ylabel("norm")
    ax.set_yscale("log")
    ax.set_title(rf"Lebesgue norms vs growth bound ($\sigma$={sigma:g}, d={d})")
    ax.legend()
    fig.tight_layout()
    _save(fig, out_path)


_RENDERERS = {
    "free-energy-vs-t": _render_free_energy,
    "moments-vs-t": _render_moments,
    "dichotomy-map": _render_dichotomy,
    "eps-convergence": _render_eps_convergence,
    "lp-growth-vs-bound": _render_lp_growth,
}


def render(spec: FigureSpec) -> None:
    """Render one figure; raises SchemaMismatchError on contract violations."""
    summary = load_summary(spec.run_dir)
    if spec.kind in ("dichotomy-map", "eps-convergence"):
        rows = []  # sweep figures draw from the summary, not the CSV
    else:
        rows = load_series(spec.run_dir)
    with plt.rc_context(STYLE):
        _RENDERERS[spec.kind](summary, rows, spec.out_path)
