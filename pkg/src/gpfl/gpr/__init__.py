"""Exact Gaussian-process regression, one independent GP per joint."""

from .kernels import (
    GIPKernel, Kernel, PolyKernel, SEKernel, default_gip, default_se, gip_transform, kernel_eval,
    kernel_from_dict,
)
from .model import GpModel, Standardizer, cholesky_with_jitter, fit, log_marginal_likelihood, nmse, predict_mean
from .optimize import HyperOptResult, bfgs_minimize, optimize_hyperparameters

__all__ = [
    "GIPKernel", "GpModel", "HyperOptResult", "Kernel", "PolyKernel", "SEKernel", "Standardizer", "bfgs_minimize",
    "cholesky_with_jitter",
    "default_gip", "default_se", "fit", "gip_transform", "kernel_eval", "kernel_from_dict",
    "log_marginal_likelihood", "nmse", "optimize_hyperparameters", "predict_mean",
]
