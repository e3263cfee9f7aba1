"""Two-component price impact: empirical responses, propagator kernels and calibration."""

from .core import BarSeries, LagCurve, PairPanel, SessionGrid, align_pair
from .propagator import KernelParams, build_sign_matrix, invert_response, kernel_eval, theo_response

__all__ = ["BarSeries", "LagCurve", "PairPanel", "SessionGrid", "align_pair", "KernelParams",
           "build_sign_matrix", "invert_response", "kernel_eval", "theo_response"]
__version__ = "0.1.0"
