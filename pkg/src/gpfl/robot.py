"""Rigid-body dynamics of serial-chain manipulators.

The model follows the URDF convention: joint ``i`` sits at a fixed transform
(``origin_xyz``, ``origin_rpy``) from the frame of joint ``i-1`` and moves its
link about (revolute) or along (prismatic) ``axis``. Link inertial data is
expressed in the link frame.

Inverse dynamics uses the recursive Newton-Euler algorithm, the joint-space
inertia matrix the composite-rigid-body algorithm. Friction is viscous plus a
tanh-smoothed Coulomb term, applied identically in inverse and forward
dynamics so the two are exact inverses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.spatial.transform import Rotation

from .errors import InvalidInputError, SingularDynamicsError

REVOLUTE = "revolute"
PRISMATIC = "prismatic"
JOINT_TYPES = (REVOLUTE, PRISMATIC)

DEFAULT_GRAVITY = (0.0, 0.0, -9.81)
COULOMB_EPS = 1e-3  # rad/s, width of the tanh Coulomb smoothing


def _cross(a, b):
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def _skew(v):
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def axis_rotation(axis, angle):
    """Rotation matrix for ``angle`` radians about the unit vector ``axis``."""
    k = _skew(axis)
    s, c = np.sin(angle), np.cos(angle)
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


@dataclass(frozen=True)
class Link:
    """One joint together with the rigid body it moves."""

    mass: float
    com: np.ndarray
    inertia: np.ndarray
    joint_type: str = REVOLUTE
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    origin_xyz: np.ndarray = field(default_factory=lambda: np.zeros(3))
    origin_rpy: np.ndarray = field(default_factory=lambda: np.zeros(3))
    viscous: float = 0.0
    coulomb: float = 0.0

    def __post_init__(self):
        set_ = object.__setattr__
        for name in ("com", "axis", "origin_xyz", "origin_rpy"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise InvalidInputError(f"link {name} must be a finite 3-vector")
            set_(self, name, v)
        inertia = np.asarray(self.inertia, dtype=float)
        if inertia.shape != (3, 3):
            raise InvalidInputError("link inertia must be 3x3")
        set_(self, "inertia", inertia)
        if self.joint_type not in JOINT_TYPES:
            raise InvalidInputError(f"unknown joint type {self.joint_type!r}")
        if not self.mass > 0:
            raise InvalidInputError("link mass must be positive")
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-12:
            raise InvalidInputError("joint axis must have unit norm")
        if not np.allclose(inertia, inertia.T, atol=1e-12):
            raise InvalidInputError("rotational inertia must be symmetric")
        eig = np.linalg.eigvalsh(inertia)
        tol = 1e-12 * max(1.0, eig.max())
        if eig.min() < -tol:
            raise InvalidInputError("rotational inertia must be positive semidefinite")
        if eig[0] + eig[1] < eig[2] - tol:
            raise InvalidInputError("rotational inertia violates the triangle inequality")
        if self.viscous < 0 or self.coulomb < 0:
            raise InvalidInputError("friction coefficients must be non-negative")
        set_(self, "_origin_rot", Rotation.from_euler("xyz", self.origin_rpy).as_matrix())

    @property
    def origin_rotation(self) -> np.ndarray:
        return self._origin_rot

    def joint_transform(self, q):
        """Rotation and translation of this joint frame relative to its parent."""
        if self.joint_type == REVOLUTE:
            return self._origin_rot @ axis_rotation(self.axis, q), self.origin_xyz
        return self._origin_rot, self.origin_xyz + self._origin_rot @ (self.axis * q)


@dataclass(frozen=True)
class RobotModel:
    """Kinematic and inertial parameters of an n-DoF serial chain."""

    links: tuple
    gravity: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_GRAVITY))
    coulomb_eps: float = COULOMB_EPS

    def __post_init__(self):
        links = tuple(self.links)
        if len(links) < 1:
            raise InvalidInputError("a robot needs at least one joint")
        if not all(isinstance(link, Link) for link in links):
            raise InvalidInputError("links must be Link instances")
        object.__setattr__(self, "links", links)
        g = np.asarray(self.gravity, dtype=float).reshape(-1)
        if g.shape != (3,) or not np.all(np.isfinite(g)):
            raise InvalidInputError("gravity must be a finite 3-vector")
        object.__setattr__(self, "gravity", g)
        if not self.coulomb_eps > 0:
            raise InvalidInputError("coulomb_eps must be positive")

    @property
    def n(self) -> int:
        return len(self.links)

    @property
    def joint_types(self) -> tuple:
        return tuple(link.joint_type for link in self.links)

    def with_friction(self, enabled: bool) -> RobotModel:
        """Copy of the model with friction kept or zeroed."""
        if enabled:
            return self
        links = tuple(_replace(link, viscous=0.0, coulomb=0.0) for link in self.links)
        return RobotModel(links, self.gravity, self.coulomb_eps)

    def with_gravity(self, gravity) -> RobotModel:
        return RobotModel(self.links, gravity, self.coulomb_eps)


def _replace(link, **changes):
    kw = dict(
        mass=link.mass, com=link.com, inertia=link.inertia, joint_type=link.joint_type,
        axis=link.axis, origin_xyz=link.origin_xyz, origin_rpy=link.origin_rpy,
        viscous=link.viscous, coulomb=link.coulomb,
    )
    kw.update(changes)
    return Link(**kw)


@dataclass(frozen=True)
class JointState:
    """Joint positions, velocities and accelerations."""

    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, k), dtype=float).reshape(-1) for k in ("q", "dq", "ddq")]
        if not (arrays[0].shape == arrays[1].shape == arrays[2].shape):
            raise InvalidInputError("q, dq and ddq must have the same length")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise InvalidInputError("joint state entries must be finite")
        for k, a in zip(("q", "dq", "ddq"), arrays):
            object.__setattr__(self, k, a)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def as_input(self) -> np.ndarray:
        """GP input: the concatenation (q, dq, ddq)."""
        return np.concatenate([self.q, self.dq, self.ddq])


def _vec(model, v, name):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (model.n,):
        raise InvalidInputError(f"{name} must have length {model.n}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return v


def friction_torque(model: RobotModel, dq) -> np.ndarray:
    """Viscous plus smoothed Coulomb friction, F(dq)."""
    dq = _vec(model, dq, "dq")
    viscous = np.array([link.viscous for link in model.links])
    coulomb = np.array([link.coulomb for link in model.links])
    return viscous * dq + coulomb * np.tanh(dq / model.coulomb_eps)


def rnea(model: RobotModel, q, dq, ddq, gravity=True, friction=True) -> np.ndarray:
    """Recursive Newton-Euler inverse dynamics.

    Quantities of link ``i`` are expressed in frame ``i``. Gravity enters as
    a fictitious upward acceleration of the base.
    """
    q = _vec(model, q, "q")
    dq = _vec(model, dq, "dq")
    ddq = _vec(model, ddq, "ddq")
    n = model.n
    rots = []
    poss = []
    w = np.zeros(3)
    dw = np.zeros(3)
    a = -model.gravity if gravity else np.zeros(3)
    forces = []
    moments = []
    for i, link in enumerate(model.links):
        R, p = link.joint_transform(q[i])
        rots.append(R)
        poss.append(p)
        z = link.axis
        # base acceleration of frame i (origin), still in parent coordinates
        a_parent = a + _cross(dw, p) + _cross(w, _cross(w, p))
        w_in = R.T @ w
        dw_in = R.T @ dw
        a = R.T @ a_parent
        if link.joint_type == REVOLUTE:
            w = w_in + dq[i] * z
            dw = dw_in + ddq[i] * z + _cross(w_in, dq[i] * z)
        else:
            w = w_in
            dw = dw_in
            a = a + ddq[i] * z + 2.0 * _cross(w_in, dq[i] * z)
        c = link.com
        a_c = a + _cross(dw, c) + _cross(w, _cross(w, c))
        forces.append(link.mass * a_c)
        moments.append(link.inertia @ dw + _cross(w, link.inertia @ w))

    tau = np.empty(n)
    f = np.zeros(3)
    m = np.zeros(3)
    for i in range(n - 1, -1, -1):
        link = model.links[i]
        if i + 1 < n:
            f_child = rots[i + 1] @ f
            m_child = rots[i + 1] @ m
            m = moments[i] + m_child + _cross(link.com, forces[i]) + _cross(poss[i + 1], f_child)
            f = forces[i] + f_child
        else:
            m = moments[i] + _cross(link.com, forces[i])
            f = forces[i]
        tau[i] = (m if link.joint_type == REVOLUTE else f) @ link.axis
    if friction:
        tau += friction_torque(model, dq)
    return tau


def inverse_dynamics(model: RobotModel, state: JointState) -> np.ndarray:
    """tau = B(q) ddq + c(q, dq) + g(q) + F(dq)."""
    if state.n != model.n:
        raise InvalidInputError(f"state has {state.n} joints, model has {model.n}")
    return rnea(model, state.q, state.dq, state.ddq)


def link_frames(model: RobotModel, q):
    """World rotation and origin of every link frame at configuration ``q``."""
    q = _vec(model, q, "q")
    R = np.eye(3)
    p = np.zeros(3)
    frames = []
    for i, link in enumerate(model.links):
        R_rel, p_rel = link.joint_transform(q[i])
        p = p + R @ p_rel
        R = R @ R_rel
        frames.append((R, p))
    return frames


def inertia_matrix(model: RobotModel, q) -> np.ndarray:
    """Joint-space inertia matrix B(q) by the composite-rigid-body algorithm.

    Spatial quantities are expressed at the world origin, so composite
    inertias of the serial chain are plain suffix sums.
    """
    frames = link_frames(model, q)
    n = model.n
    S = np.zeros((n, 6))
    body = []
    for i, (link, (R, p)) in enumerate(zip(model.links, frames)):
        z = R @ link.axis
        if link.joint_type == REVOLUTE:
            S[i, :3] = z
            S[i, 3:] = _cross(p, z)
        else:
            S[i, 3:] = z
        c = p + R @ link.com
        cx = _skew(c)
        spatial = np.empty((6, 6))
        spatial[:3, :3] = R @ link.inertia @ R.T + link.mass * cx @ cx.T
        spatial[:3, 3:] = link.mass * cx
        spatial[3:, :3] = link.mass * cx.T
        spatial[3:, 3:] = link.mass * np.eye(3)
        body.append(spatial)

    B = np.empty((n, n))
    composite = np.zeros((6, 6))
    for j in range(n - 1, -1, -1):
        composite = composite + body[j]
        F = composite @ S[j]
        for i in range(j + 1):
            B[i, j] = B[j, i] = S[i] @ F
    return B


def bias_forces(model: RobotModel, q, dq) -> np.ndarray:
    """n(q, dq) = c(q, dq) + g(q) + F(dq)."""
    return rnea(model, q, dq, np.zeros(model.n))


def gravity_vector(model: RobotModel, q) -> np.ndarray:
    """g(q), with friction disabled."""
    z = np.zeros(model.n)
    return rnea(model, q, z, z, friction=False)


def forward_dynamics(model: RobotModel, q, dq, tau) -> np.ndarray:
    """Solve B(q) ddq = tau - n(q, dq) for ddq."""
    tau = _vec(model, tau, "tau")
    B = inertia_matrix(model, q)
    rhs = tau - bias_forces(model, q, dq)
    return solve_spd(B, rhs)


def solve_spd(B, rhs):
    try:
        factor = scipy.linalg.cho_factor(B, lower=True)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * max(1.0, float(np.trace(B)) / B.shape[0])
        try:
            factor = scipy.linalg.cho_factor(B + jitter * np.eye(B.shape[0]), lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularDynamicsError("inertia matrix is not positive definite") from exc
    return scipy.linalg.cho_solve(factor, rhs)


def kinetic_energy(model: RobotModel, q, dq) -> float:
    dq = _vec(model, dq, "dq")
    return 0.5 * dq @ inertia_matrix(model, q) @ dq


def potential_energy(model: RobotModel, q) -> float:
    energy = 0.0
    for link, (R, p) in zip(model.links, link_frames(model, q)):
        energy -= link.mass * model.gravity @ (p + R @ link.com)
    return energy


def total_energy(model: RobotModel, q, dq) -> float:
    return kinetic_energy(model, q, dq) + potential_energy(model, q)


# --- model files -----------------------------------------------------------

_TRIU = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def model_to_dict(model: RobotModel) -> dict:
    joints = []
    for link in model.links:
        joints.append({
            "type": link.joint_type,
            "axis": link.axis.tolist(),
            "origin": {"xyz": link.origin_xyz.tolist(), "rpy": link.origin_rpy.tolist()},
            "mass": float(link.mass),
            "com": link.com.tolist(),
            "inertia": [float(link.inertia[i, j]) for i, j in _TRIU],
            "viscous": float(link.viscous),
            "coulomb": float(link.coulomb),
        })
    return {"gravity": model.gravity.tolist(), "joints": joints}


def model_from_dict(doc: dict) -> RobotModel:
    try:
        links = []
        for j in doc["joints"]:
            I6 = j["inertia"]
            if len(I6) != 6:
                raise InvalidInputError("inertia must list 6 upper-triangular entries")
            inertia = np.zeros((3, 3))
            for value, (r, c) in zip(I6, _TRIU):
                inertia[r, c] = inertia[c, r] = value
            origin = j.get("origin", {})
            links.append(Link(
                mass=float(j["mass"]),
                com=j["com"],
                inertia=inertia,
                joint_type=j.get("type", REVOLUTE),
                axis=j["axis"],
                origin_xyz=origin.get("xyz", [0.0, 0.0, 0.0]),
                origin_rpy=origin.get("rpy", [0.0, 0.0, 0.0]),
                viscous=float(j.get("viscous", 0.0)),
                coulomb=float(j.get("coulomb", 0.0)),
            ))
        return RobotModel(tuple(links), doc.get("gravity", DEFAULT_GRAVITY))
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"malformed robot model document: {exc}") from exc


def load_model(path) -> RobotModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: RobotModel, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model), indent=2) + "\n")
    return path


# --- reference robots ------------------------------------------------------

def pendulum(mass=1.0, length=1.0, gravity=9.81) -> RobotModel:
    """Frictionless point-mass pendulum, q measured from the downward vertical."""
    link = Link(mass=mass, com=[0.0, 0.0, -length], inertia=np.zeros((3, 3)), axis=[0.0, 1.0, 0.0])
    return RobotModel((link,), (0.0, 0.0, -gravity))


def planar_two_link(m1=1.0, m2=0.8, l1=0.5, lc1=0.25, lc2=0.2, I1=0.02, I2=0.01,
                    gravity=9.81) -> RobotModel:
    """Two-link arm in the vertical x-y plane, angles from the x axis, gravity along -y."""
    link1 = Link(mass=m1, com=[lc1, 0.0, 0.0], inertia=np.diag([I1 / 2, I1 / 2, I1]))
    link2 = Link(mass=m2, com=[lc2, 0.0, 0.0], inertia=np.diag([I2 / 2, I2 / 2, I2]),
                 origin_xyz=[l1, 0.0, 0.0])
    return RobotModel((link1, link2), (0.0, -gravity, 0.0))


def _rod_inertia(mass, length, radius=0.03):
    """Solid cylinder along x."""
    axial = 0.5 * mass * radius**2
    transverse = mass * (3 * radius**2 + length**2) / 12.0
    return np.diag([axial, transverse, transverse])


def desk_arm(friction=True) -> RobotModel:
    """Three-DoF spatial arm: base yaw, shoulder pitch, elbow pitch.

    Link lengths 0.4 m and 0.3 m; at q = 0 the arm is stretched horizontally
    along x. The forearm carries a tool body whose inertia keeps the smallest
    effective joint inertia near 0.03 kg m^2, so PD data collection at 1 kHz
    stays inside the semi-implicit Euler stability region.
    """
    viscous = (0.05, 0.05, 0.03) if friction else (0.0, 0.0, 0.0)
    coulomb = (0.02, 0.02, 0.01) if friction else (0.0, 0.0, 0.0)
    links = (
        Link(mass=3.0, com=[0.0, 0.0, 0.05], inertia=np.diag([0.05, 0.05, 0.08]),
             axis=[0.0, 0.0, 1.0], origin_xyz=[0.0, 0.0, 0.2],
             viscous=viscous[0], coulomb=coulomb[0]),
        Link(mass=2.0, com=[0.2, 0.0, 0.0], inertia=_rod_inertia(2.0, 0.4),
             axis=[0.0, 1.0, 0.0], origin_xyz=[0.0, 0.0, 0.1],
             viscous=viscous[1], coulomb=coulomb[1]),
        Link(mass=1.0, com=[0.15, 0.0, 0.0], inertia=np.diag([0.02, 0.04, 0.04]),
             axis=[0.0, 1.0, 0.0], origin_xyz=[0.4, 0.0, 0.0],
             viscous=viscous[2], coulomb=coulomb[2]),
    )
    return RobotModel(links)
