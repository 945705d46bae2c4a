"""Marginal-likelihood maximization over log-hyperparameters."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import IllConditionedKernelError, InvalidInputError, OptimizationFailedError
from .kernels import Kernel
from .model import Standardizer, log_marginal_likelihood

log = logging.getLogger(__name__)

MAX_STEP = 2.0  # largest change of any log-parameter per iteration


@dataclass
class HyperOptResult:
    kernel: Kernel
    noise: float
    log_likelihood: float
    history: list = field(default_factory=list)
    starts_failed: int = 0

    def __iter__(self):
        yield self.kernel
        yield self.noise


def bfgs_minimize(fun, x0, max_iter, gtol=1e-5, ftol=1e-10, max_halvings=40):
    """Minimize ``fun(x) -> (f, g)`` with BFGS and Armijo backtracking.

    ``fun`` may raise ``IllConditionedKernelError``; such trial points are
    treated as infinitely bad. Returns (x, f, trace) where trace holds the
    objective after each accepted step and is therefore non-increasing.
    """
    x = np.asarray(x0, dtype=float)
    f, g = fun(x)
    trace = [f]
    H = None
    for _ in range(max_iter):
        if np.max(np.abs(g)) < gtol:
            break
        p = -(g if H is None else H @ g)
        slope = g @ p
        if not slope < 0:
            H = None
            p = -g
            slope = g @ p
        biggest = np.max(np.abs(p))
        if biggest > MAX_STEP:
            p *= MAX_STEP / biggest
            slope = g @ p
        step = 1.0
        accepted = False
        for _ in range(max_halvings):
            x_new = x + step * p
            try:
                f_new, g_new = fun(x_new)
            except IllConditionedKernelError:
                f_new = np.inf
            if np.isfinite(f_new) and f_new <= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        s = x_new - x
        yv = g_new - g
        sy = s @ yv
        if sy > 1e-12:
            if H is None:
                H = np.eye(x.shape[0]) * (sy / (yv @ yv))
            rho = 1.0 / sy
            V = np.eye(x.shape[0]) - rho * np.outer(s, yv)
            H = V @ H @ V.T + rho * np.outer(s, s)
        converged = abs(f - f_new) <= ftol * (1.0 + abs(f))
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        if converged:
            break
    return x, f, trace


def optimize_hyperparameters(kernel: Kernel, noise: float, X, y, budget=100, restarts=4, seed=0,
                             max_points=None, noise_floor=1e-4, standardize=None) -> HyperOptResult:
    """Maximize the log marginal likelihood from ``(kernel, noise)``.

    The first start is the given seed; the remaining ``restarts - 1`` starts
    perturb it with unit Gaussian noise in log space. ``max_points`` caps the
    number of (randomly chosen) rows used in the search. The noise standard
    deviation is kept above ``noise_floor * std(y)``.
    """
    if budget < 1:
        raise InvalidInputError("budget must be at least one iteration")
    if restarts < 1:
        raise InvalidInputError("need at least one start")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    rng = np.random.default_rng(seed)
    if max_points is not None and X.shape[0] > max_points:
        idx = np.sort(rng.choice(X.shape[0], max_points, replace=False))
        X, y = X[idx], y[idx]
    if standardize is None:
        standardize = kernel.standardize_inputs
    F = kernel.prepare(X)
    if standardize:
        F = Standardizer.fit(F)(F)
    floor = noise_floor * (y.std() if y.std() > 0 else 1.0)
    noise = max(float(noise), 2.0 * floor)
    n_kernel = kernel.log_params.shape[0]

    def unpack(theta):
        return kernel.with_log_params(theta[:n_kernel]), floor + np.exp(theta[n_kernel])

    def objective(theta):
        if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > 50:
            raise IllConditionedKernelError("log-parameters out of range")
        k, s = unpack(theta)
        value, grad = log_marginal_likelihood(k, s, F, y, prepared=True)
        # last entry is d/dlog(sigma); chain through sigma = floor + exp(u)
        grad[-1] *= (s - floor) / s
        return -value, -grad

    theta0 = np.concatenate([kernel.log_params, [np.log(noise - floor)]])
    best = None
    failed = 0
    for start in range(restarts):
        x0 = theta0 if start == 0 else theta0 + rng.standard_normal(theta0.shape[0])
        try:
            theta, f, trace = bfgs_minimize(objective, x0, budget)
        except IllConditionedKernelError:
            failed += 1
            log.debug("start %d failed to factorize", start)
            continue
        log.debug("start %d: lml %.6g after %d steps", start, -f, len(trace) - 1)
        if best is None or f < best[1]:
            best = (theta, f, [-v for v in trace])
    if best is None:
        raise OptimizationFailedError("every start failed to factorize the kernel matrix",
                                      best=HyperOptResult(kernel, noise, float("-inf"), [], failed))
    theta, f, history = best
    k, s = unpack(theta)
    return HyperOptResult(k, float(s), float(-f), history, failed)
