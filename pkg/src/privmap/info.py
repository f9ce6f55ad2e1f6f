"""Mutual information between private symbols and released data.

Everything is in nats.  For a noise pmf ``q`` over stacked shifts the
released-data channel is ``W(z | s) = sum_v q(v) p(y = z - v | s)``, so
``W`` is linear in ``q`` and the leakage ``I[S; Z]`` is convex in ``q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pmf import CondPmf, Pmf, PmfError, factorize, noise_size, sensor_marginal, unshift_table
from .quantization import unstack_index

_LOG_FLOOR = 1e-300


def _xlogy_ratio(w, p_z):
    """Elementwise ``w * ln(w / p_z)`` with ``0 ln 0 = 0``."""
    out = np.zeros_like(w)
    pos = w > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        np.multiply(w, np.log(np.where(pos, w, 1.0) / np.where(pos, p_z, 1.0)), out=out, where=pos)
    return out


def _mi_rows(p_s, w):
    """Leakage for supported-row probabilities ``p_s`` and channel rows ``w``."""
    p_z = p_s @ w
    if w.min() > 0:
        terms = w * np.log(w / p_z)
    else:
        terms = _xlogy_ratio(w, p_z[None, :])
    value = float(p_s @ terms.sum(axis=1))
    return max(value, 0.0) if value > -1e-12 else value


def mutual_information(p_s: Pmf, p_z_given_s: CondPmf) -> float:
    """``I[S; Z]`` for the joint ``p(s) p(z | s)``."""
    if p_s.size != p_z_given_s.shape[0]:
        raise PmfError("conditioning alphabets differ")
    mask = p_z_given_s.support & (p_s.probs > 0)
    return _mi_rows(p_s.probs[mask], p_z_given_s.matrix[mask])


def entropy(probs) -> float:
    probs = np.asarray(probs.probs if isinstance(probs, Pmf) else probs, dtype=float).reshape(-1)
    pos = probs[probs > 0]
    return float(-np.sum(pos * np.log(pos)))


@dataclass(frozen=True, eq=False)
class CostData:
    """Fixed data of one noise-design program.

    ``shifted[v, s * n_z + z]`` equals ``p(y | s)`` at ``y = (z - v) mod N``
    stagewise; it turns the channel into one matrix-vector product with
    ``q``.  Only rows with positive ``p(s)`` are kept in ``shifted``.
    """

    p_s: Pmf
    p_y_given_s: CondPmf
    d: np.ndarray
    n_levels: int
    n_noise: int
    K: int
    stage_costs: np.ndarray | None = None
    shifted: np.ndarray = field(init=False, repr=False)
    p_s_active: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = np.array(self.d, dtype=float).reshape(-1)
        if d.shape[0] != self.n_noise ** self.K:
            raise PmfError(f"need {self.n_noise ** self.K} distortion coefficients, got {d.shape[0]}")
        if np.any(d < 0) or d[0] != 0:
            raise PmfError("distortion coefficients must be nonnegative with d[0] == 0")
        if self.p_y_given_s.shape != (self.p_s.size, self.n_levels ** self.K):
            raise PmfError("conditional sensor pmf has the wrong shape")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)
        mask = self.p_y_given_s.support & (self.p_s.probs > 0)
        table = unshift_table(self.n_levels, self.n_noise, self.K)
        rows = self.p_y_given_s.matrix[mask]
        shifted = np.ascontiguousarray(rows[:, table].transpose(1, 0, 2).reshape(table.shape[0], -1))
        shifted.setflags(write=False)
        object.__setattr__(self, "shifted", shifted)
        object.__setattr__(self, "p_s_active", self.p_s.probs[mask])

    @property
    def n_vars(self) -> int:
        return self.n_noise ** self.K

    @classmethod
    def from_joint(cls, joint: Pmf, levels, n_private: int, n_noise: int, K: int) -> "CostData":
        """Build from a joint pmf over stacked sensor x private symbols.

        ``levels`` are the sensor quantizer levels, shape ``(N, n_y)``.
        """
        levels = np.asarray(levels, dtype=float)
        levels = levels.reshape(levels.shape[0], -1)
        n_levels = levels.shape[0]
        n_sensor = n_levels ** K
        n_priv = n_private ** K
        p_s, p_y_given_s = factorize(joint, n_sensor, n_priv)
        p_y = sensor_marginal(joint, n_sensor, n_priv)
        stage = stage_distortion(p_y, levels, n_noise, K)
        return cls(p_s, p_y_given_s, _sum_stage_costs(stage), n_levels, n_noise, K, stage)

    def channel_rows(self, q) -> np.ndarray:
        """Rows ``W(z | s)`` of the released-data channel, supported ``s`` only."""
        q = _as_array(q)
        return (q @ self.shifted).reshape(self.p_s_active.shape[0], -1)


def _as_array(q) -> np.ndarray:
    return q.probs if isinstance(q, Pmf) else np.asarray(q, dtype=float)


def baseline_leakage(data: CostData) -> float:
    """Leakage with no randomization, ``I[S; Y]``."""
    return mutual_information(data.p_s, data.p_y_given_s)


def mi_of_noise(q, data: CostData) -> float:
    """Leakage ``I[S; Z]`` produced by the noise pmf ``q``.

    ``q`` may be any nonnegative vector; off the simplex this evaluates the
    natural positively homogeneous extension used for finite differences.
    """
    q = _as_array(q)
    if q.shape != (data.n_vars,):
        raise PmfError(f"noise pmf must have {data.n_vars} entries")
    return _mi_rows(data.p_s_active, data.channel_rows(q))


def mi_gradient(q, data: CostData) -> np.ndarray:
    """Gradient of :func:`mi_of_noise` with respect to ``q``.

    Uses ``dI/dW(z|s) = p(s) ln(W(z|s) / p(z))`` with the logarithms
    floored at ``ln(1e-300)``; exact only where ``W > 0``.
    """
    q = _as_array(q)
    w = data.channel_rows(q)
    p_s = data.p_s_active
    p_z = p_s @ w
    g = p_s[:, None] * (np.log(np.maximum(w, _LOG_FLOOR)) - np.log(np.maximum(p_z, _LOG_FLOOR))[None, :])
    return data.shifted @ g.reshape(-1)


def stage_distortion(p_y: Pmf, levels, n_noise: int, K: int) -> np.ndarray:
    """Expected squared level change per stage and shift, shape ``(K, n_noise)``.

    Entry ``[i, v]`` is ``E ||beta(alpha(Y_i) + v) - Y_i||^2`` under the
    stage-``i`` marginal of ``p_y``.
    """
    levels = np.asarray(levels, dtype=float)
    levels = levels.reshape(levels.shape[0], -1)
    n = levels.shape[0]
    if not 1 <= n_noise <= n:
        raise PmfError(f"noise alphabet size {n_noise} must lie in 1..{n}")
    marg = p_y.probs.reshape([n] * K, order="F")
    shifts = (np.arange(n)[:, None] + np.arange(n_noise)[None, :]) % n
    cost = np.sum((levels[shifts] - levels[:, None, :]) ** 2, axis=-1)  # (n, n_noise)
    out = np.empty((K, n_noise))
    for i in range(K):
        axes = tuple(j for j in range(K) if j != i)
        p_i = marg.sum(axis=axes) if axes else marg
        out[i] = p_i @ cost
    return out


def _sum_stage_costs(stage: np.ndarray) -> np.ndarray:
    K, n_noise = stage.shape
    sub = unstack_index(np.arange(n_noise ** K), [n_noise] * K)
    d = stage[np.arange(K)[None, :], sub].sum(axis=1)
    d[0] = 0.0
    return d


def distortion_coefficients(p_y: Pmf, levels, n_noise: int, K: int) -> np.ndarray:
    """Coefficients ``d`` with ``E||Z - Y||^2 = d . q`` over stacked windows."""
    n_levels = np.asarray(levels).shape[0]
    if p_y.size != n_levels ** K:
        raise PmfError(f"sensor pmf has {p_y.size} entries, expected {n_levels ** K}")
    return _sum_stage_costs(stage_distortion(p_y, levels, n_noise, K))


def expected_distortion(q, data: CostData) -> float:
    return float(data.d @ _as_array(q))


def first_stage_distortion(q, data: CostData) -> float:
    """Expected squared change of the first released sample under ``q``."""
    q = _as_array(q)
    sub = unstack_index(np.arange(data.n_vars), [data.n_noise] * data.K)
    return float(q @ data.stage_costs[0, sub[:, 0]])


__all__ = [
    "CostData", "mutual_information", "mi_of_noise", "mi_gradient", "distortion_coefficients",
    "stage_distortion", "baseline_leakage", "entropy", "expected_distortion",
    "first_stage_distortion", "noise_size",
]
