"""Covariance functions with analytic gradients in log-parameter space.

Every kernel works on *features*: ``SEKernel`` on (standardized) raw GP
inputs, ``PolyKernel`` on raw inputs, ``GIPKernel`` on the output of
:func:`gip_transform`. ``prepare`` maps raw (q, dq, ddq) rows to features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import InvalidInputError
from ..robot import PRISMATIC, REVOLUTE


def _rows(X):
    X = np.asarray(X, dtype=float)
    return X[None, :] if X.ndim == 1 else X


def _pos(values, name, allow_zero=False):
    values = np.asarray(values, dtype=float)
    bad = values < 0 if allow_zero else values <= 0
    if np.any(~np.isfinite(values)) or np.any(bad):
        raise InvalidInputError(f"{name} must be {'non-negative' if allow_zero else 'strictly positive'}")
    return values


class Kernel:
    """Interface shared by the covariance functions."""

    tag = ""
    standardize_inputs = False

    @property
    def input_dim(self) -> int:
        raise NotImplementedError

    def prepare(self, X):
        """Map raw GP inputs to the features this kernel consumes."""
        return _rows(X)

    def matrix(self, A, B=None):
        raise NotImplementedError

    def grad_matrices(self, A):
        """Yield dK(A, A)/d(theta_k) for every log-parameter theta_k."""
        raise NotImplementedError

    def weighted_sum(self, A, B, weights) -> np.ndarray:
        """k(A, B) @ weights, accumulated in extended precision.

        The terms of a posterior mean are large and of both signs; long
        double accumulation (where the platform has it) recovers a few
        digits lost to cancellation.
        """
        K = self.matrix(A, B)
        return np.asarray(K.astype(np.longdouble) @ np.asarray(weights, dtype=np.longdouble), dtype=float)

    @property
    def log_params(self) -> np.ndarray:
        raise NotImplementedError

    def with_log_params(self, theta) -> Kernel:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _check(self, A, B):
        A = _rows(A)
        B = A if B is None else _rows(B)
        if A.shape[1] != self.input_dim or B.shape[1] != self.input_dim:
            raise InvalidInputError(
                f"{self.tag} kernel expects {self.input_dim}-dim features, got {A.shape[1]} and {B.shape[1]}")
        return A, B


@dataclass(frozen=True)
class SEKernel(Kernel):
    """lambda * exp(-sum_k (x_k - x'_k)^2 / l_k^2)."""

    scale: float
    lengthscales: np.ndarray

    tag = "SE"
    standardize_inputs = True

    def __post_init__(self):
        _pos(self.scale, "SE scale")
        object.__setattr__(self, "lengthscales", _pos(np.atleast_1d(self.lengthscales), "SE lengthscales"))

    @property
    def input_dim(self):
        return self.lengthscales.shape[0]

    def _sqdist(self, A, B):
        return cdist(A / self.lengthscales, B / self.lengthscales, "sqeuclidean")

    def matrix(self, A, B=None):
        A, B = self._check(A, B)
        return self.scale * np.exp(-self._sqdist(A, B))

    def grad_matrices(self, A):
        A, _ = self._check(A, None)
        K = self.matrix(A)
        yield K
        for k in range(self.input_dim):
            col = A[:, k:k + 1] / self.lengthscales[k]
            yield K * (2.0 * (col - col.T) ** 2)

    @property
    def log_params(self):
        return np.concatenate([[np.log(self.scale)], np.log(self.lengthscales)])

    def with_log_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        return SEKernel(float(np.exp(theta[0])), np.exp(theta[1:]))

    def to_dict(self):
        return {"tag": self.tag, "scale": float(self.scale), "lengthscales": self.lengthscales.tolist()}


@dataclass(frozen=True)
class PolyKernel(Kernel):
    """(bias + x^T diag(weights) x')^degree."""

    degree: int
    weights: np.ndarray
    bias: float

    tag = "Poly"

    def __post_init__(self):
        if self.degree not in (1, 2):
            raise InvalidInputError("polynomial degree must be 1 or 2")
        object.__setattr__(self, "weights", _pos(np.atleast_1d(self.weights), "Poly weights", True))
        _pos(self.bias, "Poly bias", True)

    @property
    def input_dim(self):
        return self.weights.shape[0]

    def base(self, A, B):
        # column-by-column rather than a GEMM: every entry then rounds the
        # same way whatever the batch shape, so single and batched probes agree
        out = np.full((A.shape[0], B.shape[0]), float(self.bias))
        for k in range(A.shape[1]):
            out += np.outer(self.weights[k] * A[:, k], B[:, k])
        return out

    def matrix(self, A, B=None):
        A, B = self._check(A, B)
        return self.base(A, B) ** self.degree

    def grad_matrices(self, A):
        A, _ = self._check(A, None)
        base = self.base(A, A)
        outer = self.degree * base ** (self.degree - 1)
        yield outer * self.bias
        for k in range(self.input_dim):
            yield outer * (self.weights[k] * np.outer(A[:, k], A[:, k]))

    @property
    def log_params(self):
        with np.errstate(divide="ignore"):
            return np.concatenate([[np.log(self.bias)], np.log(self.weights)])

    def with_log_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        return PolyKernel(self.degree, np.exp(theta[1:]), float(np.exp(theta[0])))

    def to_dict(self):
        return {"tag": self.tag, "degree": self.degree, "bias": float(self.bias),
                "weights": self.weights.tolist()}


def gip_slices(joint_types):
    """Column slices of each joint's configuration block inside the q-tilde vector."""
    slices = []
    start = 0
    for jt in joint_types:
        width = 2 if jt == REVOLUTE else 1
        slices.append(slice(start, start + width))
        start += width
    return slices


def gip_transform(X, joint_types):
    """Raw rows (q, dq, ddq) -> (ddq, dq, q_tilde).

    q_tilde stacks ``q_j`` for prismatic joints and ``(sin q_j, cos q_j)``
    for revolute ones.
    """
    X = _rows(X)
    n = len(joint_types)
    if X.shape[1] != 3 * n:
        raise InvalidInputError(f"GIP transform expects {3 * n} columns, got {X.shape[1]}")
    q, dq, ddq = X[:, :n], X[:, n:2 * n], X[:, 2 * n:]
    blocks = []
    for j, jt in enumerate(joint_types):
        if jt == PRISMATIC:
            blocks.append(q[:, j:j + 1])
        else:
            blocks.append(np.sin(q[:, j:j + 1]))
            blocks.append(np.cos(q[:, j:j + 1]))
    return np.hstack([ddq, dq] + blocks)


@dataclass(frozen=True)
class GIPKernel(Kernel):
    """(k_acc(ddq, ddq') + k_vel(dq, dq')) * prod_j k_j(q~_j, q~'_j).

    ``acc`` is a degree-1 and ``vel`` a degree-2 polynomial kernel; each
    configuration factor is a degree-2 polynomial kernel over one joint's
    q-tilde slice.
    """

    joint_types: tuple
    acc: PolyKernel
    vel: PolyKernel
    config: tuple

    tag = "GIP"

    def __post_init__(self):
        n = len(self.joint_types)
        object.__setattr__(self, "joint_types", tuple(self.joint_types))
        object.__setattr__(self, "config", tuple(self.config))
        if self.acc.degree != 1 or self.acc.input_dim != n:
            raise InvalidInputError("GIP acceleration kernel must be degree 1 over n inputs")
        if self.vel.degree != 2 or self.vel.input_dim != n:
            raise InvalidInputError("GIP velocity kernel must be degree 2 over n inputs")
        if len(self.config) != n:
            raise InvalidInputError("GIP needs one configuration factor per joint")
        for jt, sl, factor in zip(self.joint_types, gip_slices(self.joint_types), self.config):
            if factor.degree != 2 or factor.input_dim != sl.stop - sl.start:
                raise InvalidInputError(f"bad GIP configuration factor for {jt} joint")

    @property
    def n(self):
        return len(self.joint_types)

    @property
    def input_dim(self):
        return 2 * self.n + sum(2 if jt == REVOLUTE else 1 for jt in self.joint_types)

    def prepare(self, X):
        return gip_transform(X, self.joint_types)

    def _split(self, A):
        n = self.n
        qt = A[:, 2 * n:]
        return A[:, :n], A[:, n:2 * n], [qt[:, sl] for sl in gip_slices(self.joint_types)]

    def matrix(self, A, B=None):
        A, B = self._check(A, B)
        aa, av, aq = self._split(A)
        ba, bv, bq = self._split(B)
        K = self.acc.base(aa, ba) + self.vel.base(av, bv) ** 2
        for factor, xa, xb in zip(self.config, aq, bq):
            K *= factor.base(xa, xb) ** 2
        return K

    def weighted_sum(self, A, B, weights):
        """k(A, B) @ weights, grouped so the result is affine in ddq.

        With beta_i = k_q(A, B_i) weights_i the sum splits into
        ``bias * sum(beta) + sum_j w_j ddq_j (beta . ddq'_j) + sum(k_vel beta)``;
        rows sharing q and dq share every beta-sum, so differences between
        probes that vary only ddq are free of the cancellation in the full sum.
        """
        A, B = self._check(A, B)
        aa, av, aq = self._split(A)
        ba, bv, bq = self._split(B)
        kq = np.ones((A.shape[0], B.shape[0]))
        for factor, xa, xb in zip(self.config, aq, bq):
            kq *= factor.base(xa, xb) ** 2
        beta = kq.astype(np.longdouble) * np.asarray(weights, dtype=np.longdouble)
        vel = self.vel.base(av, bv) ** 2
        acc = (aa * self.acc.weights) * (beta @ ba.astype(np.longdouble))
        total = self.acc.bias * beta.sum(axis=1) + acc.sum(axis=1) + (vel * beta).sum(axis=1)
        return np.asarray(total, dtype=float)

    def grad_matrices(self, A):
        A, _ = self._check(A, None)
        aa, av, aq = self._split(A)
        bases = [f.base(x, x) for f, x in zip(self.config, aq)]
        powers = [b ** 2 for b in bases]
        kq = np.prod(powers, axis=0)
        yield self.acc.bias * kq
        for k in range(self.n):
            yield self.acc.weights[k] * np.outer(aa[:, k], aa[:, k]) * kq
        vbase = self.vel.base(av, av)
        twice = 2.0 * vbase * kq
        yield twice * self.vel.bias
        for k in range(self.n):
            yield twice * (self.vel.weights[k] * np.outer(av[:, k], av[:, k]))
        poly_sum = self.acc.base(aa, aa) + vbase ** 2
        for j, (factor, x) in enumerate(zip(self.config, aq)):
            others = poly_sum.copy()
            for l, p in enumerate(powers):
                if l != j:
                    others *= p
            scaled = 2.0 * bases[j] * others
            yield scaled * factor.bias
            for m in range(factor.input_dim):
                yield scaled * (factor.weights[m] * np.outer(x[:, m], x[:, m]))

    @property
    def log_params(self):
        return np.concatenate([self.acc.log_params, self.vel.log_params] + [f.log_params for f in self.config])

    def with_log_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = []
        i = 0
        for part in (self.acc, self.vel) + self.config:
            size = part.log_params.shape[0]
            out.append(part.with_log_params(theta[i:i + size]))
            i += size
        return GIPKernel(self.joint_types, out[0], out[1], tuple(out[2:]))

    def to_dict(self):
        return {"tag": self.tag, "joint_types": list(self.joint_types), "acc": self.acc.to_dict(),
                "vel": self.vel.to_dict(), "config": [f.to_dict() for f in self.config]}


def kernel_from_dict(doc) -> Kernel:
    tag = doc["tag"]
    if tag == "SE":
        return SEKernel(float(doc["scale"]), np.asarray(doc["lengthscales"], dtype=float))
    if tag == "Poly":
        return PolyKernel(int(doc["degree"]), np.asarray(doc["weights"], dtype=float), float(doc["bias"]))
    if tag == "GIP":
        return GIPKernel(tuple(doc["joint_types"]), kernel_from_dict(doc["acc"]),
                         kernel_from_dict(doc["vel"]), tuple(kernel_from_dict(f) for f in doc["config"]))
    raise InvalidInputError(f"unknown kernel tag {tag!r}")


def kernel_eval(kernel: Kernel, x1, x2) -> float:
    """Covariance between two feature vectors."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.ndim != 1 or x2.ndim != 1:
        raise InvalidInputError("kernel_eval takes single input vectors")
    return float(kernel.matrix(x1, x2)[0, 0])


def default_se(X, y):
    """SE starting point on standardized inputs."""
    d = X.shape[1]
    return SEKernel(float(np.mean(y**2)) or 1.0, np.full(d, np.sqrt(d)))


def default_gip(X, y, joint_types):
    """GIP starting point with each factor roughly unit-scale on the data."""
    n = len(joint_types)
    X = _rows(X)
    amp = float(np.mean(y**2)) or 1.0
    dq2 = np.mean(X[:, n:2 * n] ** 2, axis=0) + 1e-12
    ddq2 = np.mean(X[:, 2 * n:] ** 2, axis=0) + 1e-12
    acc = PolyKernel(1, amp / (2 * n * ddq2), amp / 4)
    root = np.sqrt(amp / 4)
    vel = PolyKernel(2, root / (2 * n * dq2), root / 2)
    config = tuple(
        PolyKernel(2, np.full(2 if jt == REVOLUTE else 1, 0.5), 0.5) for jt in joint_types)
    return GIPKernel(tuple(joint_types), acc, vel, config)
