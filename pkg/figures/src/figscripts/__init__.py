"""Figure rendering for cpqt experiment outputs.

Reads the CSV files written by the ``cpqt`` CLI and renders one image per
figure family.  Rendering never transforms the numbers: columns are
plotted as stored (no smoothing, resampling or reinterpretation).
"""

__version__ = "0.1.0"
