"""Publication-style figures from sgadapt run directories.

Coupling to the solver package is through its public artifacts only:
``convergence.csv`` (fixed header), ``effectivity.csv`` and
``reference.json`` when a reference solve has been performed.
"""

__version__ = "0.1.0"

from .render import PlotRequest, SchemaError, build_figure, render

__all__ = ["PlotRequest", "SchemaError", "build_figure", "render",
           "__version__"]
