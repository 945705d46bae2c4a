"""Dynamics components recovered from black-box GP inverse-dynamics models.

Each joint torque has its own GP ``f_i(q, dq, ddq)``. Probing the models at
chosen inputs yields

* gravity            g_i(q)    = f_i(q, 0, 0)
* inertia            B_ij(q)   = f_i(q, 0, e_j) - g_i(q)
* acceleration-free  n_i(q,dq) = f_i(q, dq, 0)
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def _n_joints(models):
    if len(models) == 0:
        raise InvalidInputError("need one GP model per joint")
    n = len(models)
    for m in models:
        if m.input_dim != 3 * n:
            raise InvalidInputError(f"models must take 3n = {3 * n} inputs, got {m.input_dim}")
    return n


def predict_all(models, Xs) -> np.ndarray:
    """(m, n) array: column i holds model i's posterior mean at every row of Xs."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    return np.column_stack([m.predict(Xs) for m in models])


def _probe(q, dq, ddq):
    return np.concatenate([q, dq, ddq])[None, :]


def estimate_gravity(models, q) -> np.ndarray:
    n = _n_joints(models)
    q = np.asarray(q, dtype=float)
    return predict_all(models, _probe(q, np.zeros(n), np.zeros(n)))[0]


def estimate_bias(models, q, dq) -> np.ndarray:
    n = _n_joints(models)
    return predict_all(models, _probe(np.asarray(q, float), np.asarray(dq, float), np.zeros(n)))[0]


def estimate_inertia(models, q, probe=1.0) -> np.ndarray:
    """B_hat with column j from a probe of ``probe`` rad/s^2 on joint j.

    The default unit probe is the literal estimator; other magnitudes give
    the secant slope (f(q, 0, probe e_j) - g(q)) / probe.
    """
    n = _n_joints(models)
    q = np.asarray(q, dtype=float)
    rows = np.vstack([_probe(q, np.zeros(n), np.zeros(n))] +
                     [_probe(q, np.zeros(n), probe * e) for e in np.eye(n)])
    f = predict_all(models, rows)
    return (f[1:] - f[0]).T / probe


def components(models, q, dq):
    """(B_hat, n_hat, g_hat) from a single batch of n + 2 probes per model."""
    n = _n_joints(models)
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    zero = np.zeros(n)
    rows = np.vstack([_probe(q, zero, zero)] + [_probe(q, zero, e) for e in np.eye(n)] + [_probe(q, dq, zero)])
    f = predict_all(models, rows)
    g = f[0]
    return (f[1:n + 1] - g).T, f[n + 1], g


def asymmetry(B) -> float:
    """Frobenius norm of B - B^T, a model-quality diagnostic."""
    B = np.asarray(B)
    return float(np.linalg.norm(B - B.T))


def component_table(models, robot_model, configs, velocities=None):
    """Per-configuration estimates next to ground truth, as CSV-ready rows.

    Columns: q, dq, g_hat, g, B_hat (row-major), B, n_hat, n.
    """
    from . import robot as rb

    configs = np.atleast_2d(np.asarray(configs, dtype=float))
    n = configs.shape[1]
    if velocities is None:
        velocities = np.zeros_like(configs)
    rows = []
    for q, dq in zip(configs, np.atleast_2d(velocities)):
        B_hat, n_hat, g_hat = components(models, q, dq)
        rows.append(np.concatenate([
            q, dq, g_hat, rb.gravity_vector(robot_model, q), B_hat.ravel(),
            rb.inertia_matrix(robot_model, q).ravel(), n_hat, rb.bias_forces(robot_model, q, dq),
        ]))
    header = [f"q{j + 1}" for j in range(n)] + [f"dq{j + 1}" for j in range(n)]
    header += [f"g_hat{j + 1}" for j in range(n)] + [f"g{j + 1}" for j in range(n)]
    header += [f"B_hat{i + 1}{j + 1}" for i in range(n) for j in range(n)]
    header += [f"B{i + 1}{j + 1}" for i in range(n) for j in range(n)]
    header += [f"n_hat{j + 1}" for j in range(n)] + [f"n{j + 1}" for j in range(n)]
    return header, np.array(rows)

