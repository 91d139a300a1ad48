"""Stein variational gradient descent for variational autoencoders.

Subpackages are plain modules: :mod:`numcore`, :mod:`nn`, :mod:`kernels`,
:mod:`svgd`, :mod:`models`, :mod:`recognition`, :mod:`iwsvgd`,
:mod:`trainer`, :mod:`evaluation`, :mod:`oracles`, :mod:`experiments` and
:mod:`cli`.
"""
from .kernels import RbfKernel, median_bandwidth
from .numcore import RngStream, log_sum_exp, lu_log_abs_det
from .svgd import ParticleSet, apply_step, kl_directional_derivative, svgd_direction
from .trainer import RunConfig, TrainState

__version__ = "0.1.0"

__all__ = ["RbfKernel", "median_bandwidth", "RngStream", "log_sum_exp", "lu_log_abs_det",
           "ParticleSet", "apply_step", "kl_directional_derivative", "svgd_direction",
           "RunConfig", "TrainState", "__version__"]
