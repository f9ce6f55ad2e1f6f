"""Stochastic LTI plant and the lifted Gaussian law of stacked outputs.

The plant is

    X(k+1) = A X(k) + B U(k) + M(k)
    Y(k)   = C X(k) + W(k)
    S(k)   = D X(k)

with Gaussian ``M``, ``W`` and ``X(1)``.  Stacking ``K`` consecutive steps
gives a joint Gaussian for ``(Y_k, ..., Y_{k+K-1}, S_k, ..., S_{k+K-1})``
(all sensor coordinates first, then all private coordinates).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np


class ModelError(ValueError):
    """Raised for inconsistent or ill-conditioned model data."""

    def __init__(self, message: str, field: str | None = None, eigenvalue: float | None = None):
        super().__init__(message)
        self.field = field
        self.eigenvalue = eigenvalue


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ModelError(f"{name} must be a matrix, got shape {arr.shape}", field=name)
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} has non-finite entries", field=name)
    arr.setflags(write=False)
    return arr


def _check_spd(mat: np.ndarray, name: str) -> None:
    if mat.shape[0] != mat.shape[1]:
        raise ModelError(f"{name} must be square, got {mat.shape}", field=name)
    scale = max(np.abs(mat).max(), 1e-300)
    if np.abs(mat - mat.T).max() > 1e-12 * scale:
        raise ModelError(f"{name} is not symmetric", field=name)
    lam = np.linalg.eigvalsh(mat).min()
    if lam <= 0:
        raise ModelError(f"{name} is not positive definite (min eigenvalue {lam:.3e})",
                         field=name, eigenvalue=float(lam))


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """Linear time-invariant plant with Gaussian disturbances.

    All arrays are stored read-only.  ``sigma_M``, ``sigma_W`` and
    ``sigma_X1`` must be symmetric positive definite and ``D`` must have
    full row rank.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    sigma_M: np.ndarray
    sigma_W: np.ndarray
    mu_X1: np.ndarray
    sigma_X1: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "C", "D", "sigma_M", "sigma_W", "sigma_X1"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        mu = np.array(self.mu_X1, dtype=float).reshape(-1)
        mu.setflags(write=False)
        object.__setattr__(self, "mu_X1", mu)

        n_x = self.A.shape[0]
        if self.A.shape != (n_x, n_x):
            raise ModelError(f"A must be square, got {self.A.shape}", field="A")
        if self.B.shape[0] != n_x:
            # a single input given as a flat vector arrives as 1 x n_x
            if self.B.shape == (1, n_x):
                object.__setattr__(self, "B", _as_matrix(self.B.T, "B"))
            else:
                raise ModelError(f"B must have {n_x} rows, got {self.B.shape}", field="B")
        if self.C.shape[1] != n_x:
            raise ModelError(f"C must have {n_x} columns, got {self.C.shape}", field="C")
        if self.D.shape[1] != n_x:
            raise ModelError(f"D must have {n_x} columns, got {self.D.shape}", field="D")
        if self.mu_X1.shape != (n_x,):
            raise ModelError(f"mu_X1 must have length {n_x}, got {self.mu_X1.shape}", field="mu_X1")
        for name, size in (("sigma_M", n_x), ("sigma_W", self.C.shape[0]), ("sigma_X1", n_x)):
            mat = getattr(self, name)
            if mat.shape != (size, size):
                raise ModelError(f"{name} must be {size}x{size}, got {mat.shape}", field=name)
            _check_spd(mat, name)
        sv = np.linalg.svd(self.D, compute_uv=False)
        if len(sv) < self.D.shape[0] or sv.min() <= 1e-10 * sv.max():
            raise ModelError("D must have full row rank", field="D")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def n_s(self) -> int:
        return self.D.shape[0]

    @classmethod
    def from_dict(cls, data: Mapping) -> "LtiSystem":
        missing = [key for key in ("A", "B", "C", "D", "sigma_M", "sigma_W", "mu_X1", "sigma_X1")
                   if key not in data]
        if missing:
            raise ModelError(f"system definition lacks {', '.join(missing)}", field=missing[0])
        return cls(**{key: data[key] for key in
                      ("A", "B", "C", "D", "sigma_M", "sigma_W", "mu_X1", "sigma_X1")})

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist() for name in
                ("A", "B", "C", "D", "sigma_M", "sigma_W", "mu_X1", "sigma_X1")}


@dataclass(frozen=True, eq=False)
class GaussianDist:
    """Multivariate normal law given by ``mean`` and ``cov``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        m = mean.shape[0]
        if cov.shape != (m, m):
            raise ModelError(f"covariance shape {cov.shape} does not match mean length {m}", field="cov")
        scale = max(np.abs(cov).max(), 1e-300)
        if np.abs(cov - cov.T).max() > 1e-10 * scale:
            raise ModelError("covariance is not symmetric", field="cov")
        if m and np.linalg.eigvalsh(cov).min() < -1e-10 * np.trace(cov):
            raise ModelError("covariance is not positive semidefinite", field="cov")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def marginal(self, index) -> "GaussianDist":
        index = np.asarray(index, dtype=int)
        return GaussianDist(self.mean[index], self.cov[np.ix_(index, index)])


@dataclass(frozen=True, eq=False)
class LiftMatrices:
    """Block matrices mapping ``X(1)``, stacked noise and inputs to stacked states."""

    F: np.ndarray
    T: np.ndarray
    L: np.ndarray
    C_tilde: np.ndarray
    D_tilde: np.ndarray


def build_lift_matrices(sys: LtiSystem, K: int) -> LiftMatrices:
    """Lifting matrices over a horizon of ``K`` steps.

    Block row ``i`` of ``F`` is ``A^(i-1)``; block ``(i, j)`` of ``T`` is
    ``A^(i-j-1)`` below the diagonal and zero elsewhere, so the first block
    row of ``T`` vanishes.  ``L = T (I_{K-1} kron B)``.
    """
    if int(K) != K or K < 1:
        raise ValueError(f"horizon must be a positive integer, got {K}")
    K = int(K)
    n_x = sys.n_x
    powers = [np.eye(n_x)]
    for _ in range(K - 1):
        powers.append(sys.A @ powers[-1])

    F = np.vstack(powers)
    T = np.zeros((K * n_x, (K - 1) * n_x))
    for i in range(K):
        for j in range(i):
            T[i * n_x:(i + 1) * n_x, j * n_x:(j + 1) * n_x] = powers[i - j - 1]
    L = T @ np.kron(np.eye(K - 1), sys.B)
    return LiftMatrices(
        F=F,
        T=T,
        L=L,
        C_tilde=np.kron(np.eye(K), sys.C),
        D_tilde=np.kron(np.eye(K), sys.D),
    )


def _stack_inputs(sys: LtiSystem, U, count: int) -> np.ndarray:
    if count == 0:
        return np.zeros(0)
    U = np.asarray(U, dtype=float)
    flat = U.reshape(-1)
    if flat.shape[0] != count * sys.n_u:
        raise ModelError(f"expected {count} inputs of size {sys.n_u}, got {U.shape}", field="U")
    return flat


def _lift(sys: LtiSystem, K: int, mu_x: np.ndarray, sigma_x: np.ndarray, U_flat: np.ndarray) -> GaussianDist:
    lift = build_lift_matrices(sys, K)
    out = np.vstack([lift.C_tilde, lift.D_tilde])
    n_yk = K * sys.n_y

    mean = out @ (lift.F @ mu_x)
    if K > 1:
        mean = mean + out @ (lift.L @ U_flat)

    Q = lift.F @ sigma_x @ lift.F.T
    if K > 1:
        Q = Q + lift.T @ np.kron(np.eye(K - 1), sys.sigma_M) @ lift.T.T
    cov = out @ Q @ out.T
    cov[:n_yk, :n_yk] += np.kron(np.eye(K), sys.sigma_W)
    cov = 0.5 * (cov + cov.T)

    m = cov.shape[0]
    lam = np.linalg.eigvalsh(cov).min()
    if lam <= 1e-10 * np.trace(cov) / m:
        raise ModelError(f"lifted covariance is numerically singular (min eigenvalue {lam:.3e})",
                         field="cov", eigenvalue=float(lam))
    return GaussianDist(mean, cov)


def lifted_joint(sys: LtiSystem, K: int, U_seq=()) -> GaussianDist:
    """Joint law of ``(Y(1..K), S(1..K))`` given inputs ``U(1..K-1)``."""
    return _lift(sys, K, sys.mu_X1, sys.sigma_X1, _stack_inputs(sys, U_seq, K - 1))


def marginal_private(joint: GaussianDist, K: int, n_y: int, n_s: int) -> GaussianDist:
    """Law of ``S(1..K)``: the trailing ``K*n_s`` block of the joint."""
    if joint.dim != K * (n_y + n_s):
        raise ModelError(f"joint has dimension {joint.dim}, expected {K * (n_y + n_s)}", field="joint")
    return joint.marginal(np.arange(K * n_y, K * (n_y + n_s)))


def state_moments_recursion(sys: LtiSystem, k: int, U_seq=()) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``X(k)``.

    ``U_seq`` holds ``U(1), ..., U(k-1)``; ``U(j)`` drives the step from
    ``j`` to ``j+1``.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"time index must be a positive integer, got {k}")
    U_flat = _stack_inputs(sys, U_seq, k - 1).reshape(k - 1, sys.n_u)
    mu = sys.mu_X1.copy()
    sigma = sys.sigma_X1.copy()
    for j in range(k - 1):
        mu = sys.A @ mu + sys.B @ U_flat[j]
        sigma = sys.A @ sigma @ sys.A.T + sys.sigma_M
        sigma = 0.5 * (sigma + sigma.T)
    return mu, sigma


def lifted_joint_window(sys: LtiSystem, k: int, K: int, U) -> GaussianDist:
    """Joint law of ``(Y(k..k+K-1), S(k..k+K-1))``.

    ``U`` lists inputs from ``U(1)`` on; at least ``k+K-2`` rows are used.
    At ``k == 1`` this coincides exactly with :func:`lifted_joint`.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"time index must be a positive integer, got {k}")
    need = k + K - 2
    U = np.asarray(U, dtype=float).reshape(-1, sys.n_u) if need else np.zeros((0, sys.n_u))
    if U.shape[0] < need:
        raise ModelError(f"window at k={k}, K={K} needs {need} inputs, got {U.shape[0]}", field="U")
    if k == 1:
        mu, sigma = sys.mu_X1, sys.sigma_X1
    else:
        mu, sigma = state_moments_recursion(sys, k, U[:k - 1])
    return _lift(sys, K, mu, sigma, U[k - 1:need].reshape(-1))
