"""Multi-step transient forecasting with fuzzy-weighted shape/time losses.

Modules: ``scenario`` (synthetic break campaigns), ``dataprep`` (scaling,
feature screening, windows), ``network`` (recurrent forecaster and Adam),
``similarity`` (DTW, Soft-DTW, TDI, composite loss), ``fuzzy`` (expert
evaluation), ``uncertainty`` (MC dropout bands) and ``harness`` / ``cli``.
"""
from .errors import EfemError

__version__ = "0.1.0"

__all__ = ["EfemError", "__version__"]
