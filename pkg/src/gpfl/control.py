"""Control laws: PD, exact feedback linearization, GP-FL and GP-FL-DCE.

Every law is a pure function of (reference sample, measured q, measured dq).
``make_controller`` wraps one into the ``(t, q, dq, ref) -> tau`` callable
the simulator expects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dyncomp, robot
from .errors import ControllerFaultError, InvalidInputError

KINDS = ("pd", "exact", "gp-fl", "gp-fl-dce")


@dataclass(frozen=True)
class Gains:
    """Diagonal PD gains, stored as their diagonals."""

    kp: np.ndarray
    kd: np.ndarray

    def __post_init__(self):
        kp = np.atleast_1d(np.asarray(self.kp, dtype=float))
        kd = np.atleast_1d(np.asarray(self.kd, dtype=float))
        if kp.shape != kd.shape or kp.ndim != 1:
            raise InvalidInputError("kp and kd must be vectors of equal length")
        if np.any(kp < 0) or np.any(kd < 0):
            raise InvalidInputError("gains must be non-negative")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)

    @classmethod
    def from_natural(cls, omega, zeta, n) -> Gains:
        """Kp = omega^2 I, Kd = 2 zeta omega I."""
        return cls(np.full(n, omega**2), np.full(n, 2.0 * zeta * omega))

    @classmethod
    def uniform(cls, kp, kd, n) -> Gains:
        return cls(np.full(n, float(kp)), np.full(n, float(kd)))

    @property
    def Kp(self) -> np.ndarray:
        return np.diag(self.kp)

    @property
    def Kd(self) -> np.ndarray:
        return np.diag(self.kd)


def _errors(ref, q, dq, gains):
    r, dr, ddr = (np.asarray(v, dtype=float) for v in ref)
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    n = gains.kp.shape[0]
    if not (r.shape == dr.shape == ddr.shape == q.shape == dq.shape == (n,)):
        raise InvalidInputError(f"reference and state must be {n}-vectors")
    return r - q, dr - dq, ddr


def commanded_acceleration(ref, q, dq, gains: Gains) -> np.ndarray:
    """a = ddr + Kp e + Kd de."""
    e, de, ddr = _errors(ref, q, dq, gains)
    return ddr + gains.kp * e + gains.kd * de


def pd_controller(ref, q, dq, gains: Gains) -> np.ndarray:
    e, de, _ = _errors(ref, q, dq, gains)
    return gains.kp * e + gains.kd * de


def exact_fl(model: robot.RobotModel, ref, q, dq, gains: Gains) -> np.ndarray:
    """Computed torque with the true B(q) and n(q, dq)."""
    a = commanded_acceleration(ref, q, dq, gains)
    return robot.inertia_matrix(model, q) @ a + robot.bias_forces(model, q, dq)


def _finite(tau, what):
    if not np.all(np.isfinite(tau)):
        raise ControllerFaultError(f"{what} produced a non-finite torque")
    return tau


def gp_fl(models, ref, q, dq, gains: Gains) -> np.ndarray:
    """Evaluate each joint's GP directly at (q, dq, a)."""
    a = commanded_acceleration(ref, q, dq, gains)
    x = np.concatenate([np.asarray(q, float), np.asarray(dq, float), a])
    return _finite(dyncomp.predict_all(models, x)[0], "GP-FL")


def gp_fl_dce(models, ref, q, dq, gains: Gains) -> np.ndarray:
    """B_hat(q) a + n_hat(q, dq), both estimated from the GPs at the measured state."""
    a = commanded_acceleration(ref, q, dq, gains)
    B_hat, n_hat, _ = dyncomp.components(models, q, dq)
    return _finite(B_hat @ a + n_hat, "GP-FL-DCE")


def make_controller(kind, gains: Gains, robot_model=None, gp_models=None):
    """Simulator-ready controller of the given kind."""
    if kind == "pd":
        return lambda t, q, dq, ref: pd_controller(ref, q, dq, gains)
    if kind == "exact":
        if robot_model is None:
            raise InvalidInputError("exact feedback linearization needs the robot model")
        return lambda t, q, dq, ref: exact_fl(robot_model, ref, q, dq, gains)
    if kind in ("gp-fl", "gp-fl-dce"):
        if gp_models is None:
            raise InvalidInputError(f"{kind} needs trained GP models")
        law = gp_fl if kind == "gp-fl" else gp_fl_dce
        models = tuple(gp_models)
        return lambda t, q, dq, ref: law(models, ref, q, dq, gains)
    raise InvalidInputError(f"unknown controller kind {kind!r}; expected one of {KINDS}")
