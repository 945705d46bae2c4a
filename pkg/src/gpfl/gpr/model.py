"""Exact GP regression: fitting, posterior mean, marginal likelihood."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from ..errors import IllConditionedKernelError, InvalidInputError, UndefinedMetricError
from .kernels import Kernel

LOG_2PI = np.log(2.0 * np.pi)
PREDICT_CHUNK = 256  # test rows per kernel block; bounds memory at large N


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X):
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, X):
        return (X - self.mean) / self.std


def features(kernel: Kernel, X, standardizer: Optional[Standardizer] = None):
    F = kernel.prepare(X)
    return standardizer(F) if standardizer is not None else F


@dataclass(frozen=True)
class GpModel:
    """One trained GP: f(x*) = k(x*, X) alpha."""

    kernel: Kernel
    noise: float
    X: np.ndarray
    alpha: np.ndarray
    standardizer: Optional[Standardizer] = None
    chol: Optional[np.ndarray] = None
    log_likelihood: Optional[float] = None

    def __post_init__(self):
        if self.alpha.shape != (self.X.shape[0],):
            raise InvalidInputError("alpha must have one weight per training input")
        object.__setattr__(self, "_train_features", features(self.kernel, self.X, self.standardizer))

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    def predict(self, Xs) -> np.ndarray:
        """Posterior mean at every row of ``Xs``."""
        Xs = np.asarray(Xs, dtype=float)
        rows = Xs[None, :] if Xs.ndim == 1 else Xs
        if rows.shape[1] != self.input_dim:
            raise InvalidInputError(f"GP input must have {self.input_dim} entries, got {rows.shape[1]}")
        Fs = features(self.kernel, rows, self.standardizer)
        out = np.empty(Fs.shape[0])
        for start in range(0, Fs.shape[0], PREDICT_CHUNK):
            block = slice(start, start + PREDICT_CHUNK)
            out[block] = self.kernel.weighted_sum(Fs[block], self._train_features, self.alpha)
        return out


def predict_mean(model: GpModel, x_star) -> float:
    return float(model.predict(np.asarray(x_star, dtype=float).reshape(1, -1))[0])


def _check_data(X, y, noise):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise InvalidInputError("X must be (N, d) with N >= 1 matching len(y)")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidInputError("training data must be finite")
    if not noise > 0:
        raise InvalidInputError("noise standard deviation must be positive")
    return X, y


def cholesky_with_jitter(A):
    """Lower Cholesky factor of A, retrying once with 1e-8 * trace / N jitter."""
    try:
        return scipy.linalg.cholesky(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    N = A.shape[0]
    jitter = 1e-8 * np.trace(A) / N
    try:
        return scipy.linalg.cholesky(A + jitter * np.eye(N), lower=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        try:
            lam = float(scipy.linalg.eigh(A, eigvals_only=True, subset_by_index=[0, 0])[0])
        except (np.linalg.LinAlgError, ValueError):
            lam = float("nan")
        raise IllConditionedKernelError(
            f"K + sigma^2 I is not positive definite (smallest eigenvalue ~ {lam:.3e})", lam) from None


def _factorize(kernel, noise, F):
    with np.errstate(over="ignore", invalid="ignore"):
        A = kernel.matrix(F)
    A[np.diag_indices_from(A)] += noise**2
    if not np.all(np.isfinite(A)):
        raise IllConditionedKernelError("kernel matrix has non-finite entries")
    return cholesky_with_jitter(A)


def fit(X, y, kernel: Kernel, noise: float, standardize=None) -> GpModel:
    """Posterior weights alpha = (K + sigma^2 I)^-1 y.

    ``standardize`` defaults to the kernel's preference (on for SE).
    """
    X, y = _check_data(X, y, noise)
    if standardize is None:
        standardize = kernel.standardize_inputs
    standardizer = Standardizer.fit(kernel.prepare(X)) if standardize else None
    L = _factorize(kernel, noise, features(kernel, X, standardizer))
    alpha = scipy.linalg.cho_solve((L, True), y, check_finite=False)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * y.shape[0] * LOG_2PI
    return GpModel(kernel, float(noise), X, alpha, standardizer, L, float(lml))


def log_marginal_likelihood(kernel: Kernel, noise: float, X, y, standardize=None, grad=True,
                            prepared=False):
    """log p(y | X) and its gradient w.r.t. (kernel log-params..., log noise).

    With ``prepared=True``, ``X`` already holds kernel features.
    """
    if prepared:
        F = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        if not noise > 0:
            raise InvalidInputError("noise standard deviation must be positive")
    else:
        X, y = _check_data(X, y, noise)
        if standardize is None:
            standardize = kernel.standardize_inputs
        F = kernel.prepare(X)
        if standardize:
            F = Standardizer.fit(F)(F)
    N = y.shape[0]
    L = _factorize(kernel, noise, F)
    alpha = scipy.linalg.cho_solve((L, True), y, check_finite=False)
    value = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * N * LOG_2PI
    if not grad:
        return float(value)
    Linv = scipy.linalg.solve_triangular(L, np.eye(N), lower=True, check_finite=False)
    W = np.outer(alpha, alpha) - Linv.T @ Linv
    g = [0.5 * np.sum(W * dK) for dK in kernel.grad_matrices(F)]
    g.append(noise**2 * np.trace(W))
    return float(value), np.array(g)


def nmse(predictions, targets) -> float:
    """Mean squared error over the (population) target variance, in percent."""
    p = np.asarray(predictions, dtype=float).reshape(-1)
    t = np.asarray(targets, dtype=float).reshape(-1)
    if p.shape != t.shape:
        raise InvalidInputError("predictions and targets must have equal length")
    var = t.var()
    if not var > 0:
        raise UndefinedMetricError("nMSE is undefined for constant targets")
    return float(100.0 * np.mean((p - t) ** 2) / var)
