"""Dense pmfs over product alphabets and the shift-noise channel.

Stacked alphabets over a window of ``K`` steps are flattened with the
earliest step varying fastest (see :func:`privmap.quantization.stacked_index`).
A joint pmf over sensor and private symbols is flattened with the whole
sensor block varying fastest, so it reshapes to ``(n_private, n_sensor)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .quantization import unstack_index, stacked_index


class PmfError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Pmf:
    """Probability vector over a finite alphabet ``{0, ..., N-1}``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float).reshape(-1)
        if probs.size == 0:
            raise PmfError("empty pmf")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise PmfError("pmf entries must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise PmfError(f"pmf sums to {probs.sum():.12f}")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def uniform(cls, n: int) -> "Pmf":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def delta(cls, n: int, index: int = 0) -> "Pmf":
        probs = np.zeros(n)
        probs[index] = 1.0
        return cls(probs)


@dataclass(frozen=True, eq=False)
class CondPmf:
    """Row-stochastic matrix ``P[row, col] = p(col | row)``.

    Rows whose conditioning symbol has zero probability are marked in
    ``support`` as False; their entries are zero and carry no meaning.
    """

    matrix: np.ndarray
    support: np.ndarray | None = None

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2:
            raise PmfError("conditional pmf must be a matrix")
        support = (np.ones(matrix.shape[0], dtype=bool) if self.support is None
                   else np.array(self.support, dtype=bool).reshape(-1))
        if support.shape[0] != matrix.shape[0]:
            raise PmfError("support mask length differs from the number of rows")
        if np.any(matrix < 0) or not np.all(np.isfinite(matrix)):
            raise PmfError("conditional pmf entries must be finite and nonnegative")
        sums = matrix[support].sum(axis=1)
        if sums.size and np.abs(sums - 1.0).max() > 1e-9:
            raise PmfError(f"supported rows must sum to one (worst {sums[np.argmax(np.abs(sums - 1))]:.12f})")
        matrix.setflags(write=False)
        support.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "support", support)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def factorize(joint: Pmf, n_sensor: int, n_private: int) -> tuple[Pmf, CondPmf]:
    """Split a sensor x private joint into ``p(s)`` and ``p(y | s)``."""
    if joint.size != n_sensor * n_private:
        raise PmfError(f"joint has {joint.size} entries, expected {n_sensor} x {n_private}")
    table = joint.probs.reshape(n_private, n_sensor)
    p_s = table.sum(axis=1)
    support = p_s > 0
    cond = np.zeros_like(table)
    cond[support] = table[support] / p_s[support, None]
    return Pmf(p_s / p_s.sum()), CondPmf(cond, support)


def sensor_marginal(joint: Pmf, n_sensor: int, n_private: int) -> Pmf:
    table = joint.probs.reshape(n_private, n_sensor)
    p_y = table.sum(axis=0)
    return Pmf(p_y / p_y.sum())


@lru_cache(maxsize=32)
def shift_table(n_levels: int, n_noise: int, K: int) -> np.ndarray:
    """``table[v, y]`` is the flat index of ``(y + v) mod n_levels`` stagewise.

    Read-only array of shape ``(n_noise**K, n_levels**K)``.
    """
    if not 1 <= n_noise <= n_levels:
        raise PmfError(f"noise alphabet size {n_noise} must lie in 1..{n_levels}")
    v_sub = unstack_index(np.arange(n_noise ** K), [n_noise] * K)
    y_sub = unstack_index(np.arange(n_levels ** K), [n_levels] * K)
    z_sub = (y_sub[None, :, :] + v_sub[:, None, :]) % n_levels
    table = np.asarray(stacked_index(z_sub, [n_levels] * K), dtype=np.int64)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=32)
def unshift_table(n_levels: int, n_noise: int, K: int) -> np.ndarray:
    """``table[v, z]`` is the flat index of ``(z - v) mod n_levels`` stagewise."""
    fwd = shift_table(n_levels, n_noise, K)
    table = np.empty_like(fwd)
    rows = np.arange(fwd.shape[0])[:, None]
    table[rows, fwd] = np.arange(fwd.shape[1])[None, :]
    table.setflags(write=False)
    return table


def noise_size(q_len: int, K: int) -> int:
    n = int(round(q_len ** (1.0 / K)))
    for cand in (n - 1, n, n + 1):
        if cand >= 1 and cand ** K == q_len:
            return cand
    raise PmfError(f"noise pmf of length {q_len} is not a {K}-fold product alphabet")


def channel_from_noise(q: Pmf, n_levels: int, K: int) -> CondPmf:
    """Channel ``p(z | y) = q((alpha(z) - alpha(y)) mod N)`` as a dense matrix."""
    n_noise = noise_size(q.size, K)
    table = shift_table(n_levels, n_noise, K)
    n_y = n_levels ** K
    matrix = np.zeros((n_y, n_y))
    matrix[np.arange(n_y)[None, :], table] = q.probs[:, None]
    return CondPmf(matrix)


def compose(p_y_given_s: CondPmf, p_z_given_y: CondPmf) -> CondPmf:
    """``p(z | s) = sum_y p(y | s) p(z | y)``; unsupported rows stay zero."""
    if p_y_given_s.shape[1] != p_z_given_y.shape[0]:
        raise PmfError("inner alphabets differ")
    matrix = p_y_given_s.matrix @ p_z_given_y.matrix
    matrix[~p_y_given_s.support] = 0.0
    return CondPmf(matrix, p_y_given_s.support)


def marginal_z(p_s: Pmf, p_z_given_s: CondPmf) -> Pmf:
    """Output law ``p(z) = sum_s p(s) p(z | s)``."""
    if p_s.size != p_z_given_s.shape[0]:
        raise PmfError("conditioning alphabets differ")
    mask = p_z_given_s.support
    p_z = p_s.probs[mask] @ p_z_given_s.matrix[mask]
    return Pmf(p_z / p_z.sum())


def joint_table(p_s: Pmf, p_x_given_s: CondPmf) -> np.ndarray:
    """Joint ``p(x, s)`` flattened with ``x`` fastest."""
    table = p_s.probs[:, None] * p_x_given_s.matrix
    table[~p_x_given_s.support] = 0.0
    return table.reshape(-1)


def total_variation(p, r) -> float:
    p = p.probs if isinstance(p, Pmf) else np.asarray(p)
    r = r.probs if isinstance(r, Pmf) else np.asarray(r)
    return 0.5 * float(np.abs(p - r).sum())


def write_pmf_csv(path, probs, labels: list[str] | None = None, bases=None) -> None:
    """Write ``index[,symbols],probability`` rows with full float precision."""
    probs = probs.probs if isinstance(probs, Pmf) else np.asarray(probs)
    path = Path(path)
    header = ["index"]
    subs = None
    if bases is not None:
        subs = unstack_index(np.arange(probs.size), bases)
        header += labels or [f"sym{i + 1}" for i in range(len(bases))]
    header.append("probability")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, p in enumerate(probs):
            row = [i]
            if subs is not None:
                row += subs[i].tolist()
            row.append(repr(float(p)))
            writer.writerow(row)


def read_pmf_csv(path) -> Pmf:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return Pmf(np.array([float(r["probability"]) for r in rows]))
