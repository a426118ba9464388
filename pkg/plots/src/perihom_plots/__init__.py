"""Figure generation for perihom sweep artifacts.

Reads the fixed-schema CSV files (and legacy-VTK point dumps) the simulator
writes and renders them; no quantity is ever recomputed here.
"""

from perihom_plots.figures import FIGURE_KINDS, FigureSpec, SchemaError, plot

__all__ = ["FigureSpec", "plot", "FIGURE_KINDS", "SchemaError"]

__version__ = "0.1.0"
