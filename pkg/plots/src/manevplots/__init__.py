"""Standard figure set for simulation run directories.

Reads only the serialized outputs (summary.json, diagnostics.csv) written by
the simulation CLI; never imports the solver package and never writes into a
run directory.
"""

from .figures import FIGURE_KINDS, FigureSpec, SchemaMismatchError, render

__all__ = ["FIGURE_KINDS", "FigureSpec", "SchemaMismatchError", "render"]
