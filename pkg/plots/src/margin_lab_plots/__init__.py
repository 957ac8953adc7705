"""Static figure rendering for margin-lab experiment outputs."""

from .render import FIGURE_KINDS, FigureSpec, SchemaError, render

__version__ = "0.1.0"

__all__ = ["FIGURE_KINDS", "FigureSpec", "SchemaError", "render", "__version__"]
