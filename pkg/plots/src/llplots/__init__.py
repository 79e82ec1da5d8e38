"""Figure rendering for lodll experiment CSV outputs.

Strictly downstream of the experiment driver: every plot is a pure function
of the CSV files it reads, so re-rendering the same inputs reproduces the
same image files.
"""

from .spec import PlotSpec, SchemaError, load_spec_file
from .figures import KINDS, build_figure, render

__all__ = ["PlotSpec", "SchemaError", "load_spec_file", "KINDS",
           "build_figure", "render"]
