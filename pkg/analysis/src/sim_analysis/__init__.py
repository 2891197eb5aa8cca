"""Post-processing for simulator sweep outputs: aggregation and figures."""

from .aggregate import (AnalysisError, SweepRow, SweepTable, aggregate,
                        verify_against_summaries, write_csv)
from .figures import FIGURE_KINDS, plot_figure

__all__ = ["AnalysisError", "SweepRow", "SweepTable", "aggregate",
           "verify_against_summaries", "write_csv", "FIGURE_KINDS",
           "plot_figure"]
