"""Fixed-step closed-loop simulation, reference generators and differencing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import robot
from .errors import ControllerFaultError, DivergenceError, InvalidInputError

INTEGRATORS = ("semi-implicit-euler", "rk4")
DIVERGENCE_LIMIT = 1e3


@dataclass(frozen=True)
class SimConfig:
    duration: float
    dt: float = 1e-3
    integrator: str = "semi-implicit-euler"
    seed: int = 0
    noise_q: float = 0.0
    noise_dq: float = 0.0
    torque_limits: Optional[tuple] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidInputError("dt must be positive")
        if not self.duration >= self.dt:
            raise InvalidInputError("duration must be at least one step")
        if self.integrator not in INTEGRATORS:
            raise InvalidInputError(f"integrator must be one of {INTEGRATORS}")
        if self.noise_q < 0 or self.noise_dq < 0:
            raise InvalidInputError("noise standard deviations must be non-negative")
        if self.seed < 0:
            raise InvalidInputError("seed must be a non-negative integer")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass(frozen=True)
class Reference:
    """Reference position, velocity and acceleration sampled on the step grid."""

    t: np.ndarray
    r: np.ndarray
    dr: np.ndarray
    ddr: np.ndarray

    def __post_init__(self):
        if not (self.r.shape == self.dr.shape == self.ddr.shape) or self.r.shape[0] != self.t.shape[0]:
            raise InvalidInputError("reference series must share the time grid")

    def __len__(self):
        return self.t.shape[0]

    @property
    def n(self) -> int:
        return self.r.shape[1]

    def sample(self, k):
        return self.r[k], self.dr[k], self.ddr[k]


@dataclass
class TrajectoryLog:
    t: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    tau: np.ndarray
    r: np.ndarray
    e: np.ndarray

    @property
    def n(self) -> int:
        return self.q.shape[1]

    def __len__(self):
        return self.t.shape[0]

    def to_array(self) -> np.ndarray:
        return np.column_stack([self.t, self.q, self.dq, self.tau, self.r, self.e])

    def header(self) -> str:
        cols = ["t"]
        for name in ("q", "dq", "tau", "r", "e"):
            cols += [f"{name}{j + 1}" for j in range(self.n)]
        return ",".join(cols)

    def to_csv(self, path):
        np.savetxt(path, self.to_array(), fmt="%.17g", delimiter=",", header=self.header(), comments="")

    @classmethod
    def from_csv(cls, path) -> TrajectoryLog:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        n = (len(header) - 1) // 5
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        blocks = [data[:, 1 + i * n: 1 + (i + 1) * n] for i in range(5)]
        return cls(data[:, 0], *blocks)


def semi_implicit_euler_step(model, q, dq, tau, dt):
    ddq = robot.forward_dynamics(model, q, dq, tau)
    dq_next = dq + dt * ddq
    return q + dt * dq_next, dq_next


def rk4_step(model, q, dq, tau, dt):
    """Classic RK4 with the torque held constant over the step."""
    def f(q_, dq_):
        return dq_, robot.forward_dynamics(model, q_, dq_, tau)

    k1q, k1v = f(q, dq)
    k2q, k2v = f(q + 0.5 * dt * k1q, dq + 0.5 * dt * k1v)
    k3q, k3v = f(q + 0.5 * dt * k2q, dq + 0.5 * dt * k2v)
    k4q, k4v = f(q + dt * k3q, dq + dt * k3v)
    q_next = q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
    dq_next = dq + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return q_next, dq_next


_STEPPERS = {"semi-implicit-euler": semi_implicit_euler_step, "rk4": rk4_step}

Controller = Callable[[float, np.ndarray, np.ndarray, tuple], np.ndarray]


def simulate(model: robot.RobotModel, controller: Controller, reference: Reference,
             init: robot.JointState, config: SimConfig) -> TrajectoryLog:
    """Run the closed loop for ``config.steps`` steps.

    Each step measures the (optionally noised) state, queries the controller,
    clamps the torque, and integrates the plant. Row ``k`` of the log holds
    the true state at ``t_k`` and the torque applied over ``[t_k, t_k+1)``.
    """
    n = model.n
    if init.n != n or reference.n != n:
        raise InvalidInputError("initial state and reference must match the model dimension")
    steps = config.steps
    if len(reference) < steps:
        raise InvalidInputError(f"reference has {len(reference)} samples, need {steps}")
    limits = None
    if config.torque_limits is not None:
        limits = np.broadcast_to(np.asarray(config.torque_limits, dtype=float), (n,))
    step = _STEPPERS[config.integrator]
    rng = np.random.default_rng(config.seed)
    noisy = config.noise_q > 0 or config.noise_dq > 0

    t = np.arange(steps) * config.dt
    Q = np.empty((steps, n))
    DQ = np.empty((steps, n))
    TAU = np.empty((steps, n))
    q = init.q.copy()
    dq = init.dq.copy()

    def partial(k):
        return TrajectoryLog(t[:k], Q[:k], DQ[:k], TAU[:k], reference.r[:k], reference.r[:k] - Q[:k])

    for k in range(steps):
        Q[k] = q
        DQ[k] = dq
        qm, dqm = q, dq
        if noisy:
            qm = q + config.noise_q * rng.standard_normal(n)
            dqm = dq + config.noise_dq * rng.standard_normal(n)
        tau = np.asarray(controller(t[k], qm, dqm, reference.sample(k)), dtype=float)
        if tau.shape != (n,) or not np.all(np.isfinite(tau)):
            raise ControllerFaultError(f"controller returned invalid torque at step {k}", step=k, log=partial(k))
        if limits is not None:
            tau = np.clip(tau, -limits, limits)
        TAU[k] = tau
        q, dq = step(model, q, dq, tau, config.dt)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(dq))) or np.abs(q).max() > DIVERGENCE_LIMIT:
            raise DivergenceError(f"state diverged at step {k}", step=k, log=partial(k + 1))
    return partial(steps)


def central_difference(dq, dt):
    """Acausal acceleration estimate (dq[t+1] - dq[t-1]) / (2 dt).

    Returns the interior accelerations and the indices of the samples they
    belong to; both endpoints are dropped.
    """
    dq = np.asarray(dq, dtype=float)
    if dq.shape[0] < 3:
        raise InvalidInputError("central difference needs at least 3 samples")
    ddq = (dq[2:] - dq[:-2]) / (2.0 * dt)
    return ddq, np.arange(1, dq.shape[0] - 1)


def _grid(duration, dt):
    if not dt > 0 or not duration > 0:
        raise InvalidInputError("duration and dt must be positive")
    return np.arange(int(round(duration / dt))) * dt


def filtered_noise_reference(seed, duration, dt, cutoff=1.0, amplitude=1.0, n_joints=1,
                             knot_rate=None) -> Reference:
    """Gaussian noise through a second-order Butterworth low-pass, per joint.

    Gaussian knots of standard deviation ``amplitude`` are drawn at
    ``knot_rate`` (default 20 x cutoff) and linearly interpolated onto the
    step grid. That input drives the continuous-time filter, discretized
    exactly, so r and dr are filter states and ddr follows from the state
    equation.
    """
    if not cutoff > 0:
        raise InvalidInputError("cutoff must be positive")
    if amplitude < 0:
        raise InvalidInputError("amplitude must be non-negative")
    t = _grid(duration, dt)
    knot_rate = 20.0 * cutoff if knot_rate is None else knot_rate
    rng = np.random.default_rng(seed)
    n_knots = int(np.ceil(t[-1] * knot_rate)) + 2
    knots = amplitude * rng.standard_normal((n_knots, n_joints))
    knot_t = np.arange(n_knots) / knot_rate
    u = np.column_stack([np.interp(t, knot_t, knots[:, j]) for j in range(n_joints)])
    u_next = np.column_stack([np.interp(t + dt, knot_t, knots[:, j]) for j in range(n_joints)])
    slope = (u_next - u) / dt

    wn = 2.0 * np.pi * cutoff
    zeta = np.sqrt(0.5)
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-wn**2, -2 * zeta * wn, wn**2, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
    Phi = scipy.linalg.expm(A * dt)[:2]
    steps = t.shape[0]
    r = np.zeros((steps, n_joints))
    dr = np.zeros((steps, n_joints))
    x = np.zeros((4, n_joints))
    for k in range(steps - 1):
        x[2] = u[k]
        x[3] = slope[k]
        x[:2] = Phi @ x
        r[k + 1] = x[0]
        dr[k + 1] = x[1]
    ddr = wn**2 * (u - r) - 2 * zeta * wn * dr
    return Reference(t, r, dr, ddr)


def growing_sine_reference(frequencies, duration, dt, rate=0.165) -> Reference:
    """r_j(t) = rate * t * sin(2 pi F_j t) with analytic derivatives."""
    F = np.atleast_1d(np.asarray(frequencies, dtype=float))
    t = _grid(duration, dt)[:, None]
    w = 2.0 * np.pi * F
    s, c = np.sin(w * t), np.cos(w * t)
    r = rate * t * s
    dr = rate * s + rate * t * w * c
    ddr = 2 * rate * w * c - rate * t * w**2 * s
    return Reference(t[:, 0], r, dr, ddr)


def sample_frequencies(seed, n, mean=0.5, std=1.0):
    """Frequencies drawn from N(mean, std) and folded to be non-negative."""
    return np.abs(np.random.default_rng(seed).normal(mean, std, n))
