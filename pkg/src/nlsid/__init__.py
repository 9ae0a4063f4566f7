"""Frequency-domain nonlinear system identification toolkit.

Pipeline: design an odd-random multisine, acquire or simulate multi-period
records, quantify even/odd distortion on detection lines, estimate the best
linear approximation with the local polynomial method, fit and refine a
parametric linear model, remove slow trends, and estimate a polynomial
nonlinear state-space model on top of the linear one.
"""

__version__ = "0.1.0"

from . import bench, cli, linmodel, lpm, pnlss, signals, spectral, trend  # noqa: F401
