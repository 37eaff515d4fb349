"""Numerical laboratory for volume-constrained minimization of the first
eigenvalue of -Delta_p - Delta with Dirichlet conditions.

Submodules: grid, fields, eigensolver, fbsolver, geometry, analysis,
diagnostics, io, cli. Importing the package itself loads nothing heavy, so
the CLI can set thread limits before numpy starts.
"""

__version__ = "0.1.0"

__all__ = [
    "analysis", "cli", "diagnostics", "eigensolver", "errors", "fbsolver", "fields",
    "geometry", "grid", "io",
]
