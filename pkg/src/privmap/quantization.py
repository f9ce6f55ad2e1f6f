"""Rectangular quantizers, the index maps and the modular randomizing map.

Cells of a :class:`RectQuantizer` are products of right-closed intervals
``(b_i, b_{i+1}]``.  Multi-index tuples are flattened with the first
coordinate varying fastest, which is also how stacked alphabets over a time
window are ordered (earliest time step fastest).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


class QuantizerError(ValueError):
    pass


def stacked_index(symbols, bases: Sequence[int]):
    """Flatten index tuples, first coordinate fastest.

    ``symbols`` has its last axis running over coordinates; a batch of
    tuples may be passed as a 2-D array.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    bases = tuple(int(b) for b in bases)
    if symbols.shape[-1] != len(bases):
        raise QuantizerError(f"expected {len(bases)} coordinates, got {symbols.shape[-1]}")
    flat = np.ravel_multi_index(tuple(np.moveaxis(symbols, -1, 0)), bases, order="F")
    return int(flat) if np.ndim(flat) == 0 else flat


def unstack_index(flat, bases: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`stacked_index`; coordinates on the last axis."""
    bases = tuple(int(b) for b in bases)
    parts = np.unravel_index(np.asarray(flat, dtype=np.int64), bases, order="F")
    return np.stack(parts, axis=-1)


@dataclass(frozen=True)
class HyperRect:
    """Axis-aligned box ``(lower, upper]`` with infinite ends allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float).reshape(-1)
        upper = np.array(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise QuantizerError("lower and upper limits differ in length")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)) or not np.all(lower < upper):
            raise QuantizerError("box limits must satisfy lower < upper componentwise")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)


class RectQuantizer:
    """Vector quantizer with axis-product cells and one level per cell.

    Parameters
    ----------
    boundaries : sequence of sequences
        Strictly increasing finite cut points for each dimension.
    levels : array_like, shape (N, dims) or (N,)
        Reconstruction point of every cell, in flat cell order.
    """

    def __init__(self, boundaries, levels):
        if boundaries and np.ndim(boundaries[0]) == 0:
            boundaries = [boundaries]
        self.boundaries = tuple(np.array(b, dtype=float).reshape(-1) for b in boundaries)
        if not self.boundaries:
            raise QuantizerError("quantizer needs at least one dimension")
        for i, cuts in enumerate(self.boundaries):
            if not np.all(np.isfinite(cuts)):
                raise QuantizerError(f"cut points of dimension {i} must be finite")
            if np.any(np.diff(cuts) <= 0):
                raise QuantizerError(f"cut points of dimension {i} are not strictly increasing")
        self.shape = tuple(len(cuts) + 1 for cuts in self.boundaries)
        self.dims = len(self.boundaries)
        self.size = math.prod(self.shape)

        levels = np.array(levels, dtype=float)
        if levels.ndim == 1 and self.dims == 1:
            levels = levels.reshape(-1, 1)
        if levels.shape != (self.size, self.dims):
            raise QuantizerError(f"expected {self.size} levels of dimension {self.dims}, got {levels.shape}")
        for j, level in enumerate(levels):
            if self.quantize(level) != j:
                raise QuantizerError(f"level {j} = {level.tolist()} is not inside its cell")
        levels.setflags(write=False)
        self.levels = levels

    @classmethod
    def from_dict(cls, data: Mapping) -> "RectQuantizer":
        return cls(data["boundaries"], data["levels"])

    def to_dict(self) -> dict:
        return {"boundaries": [b.tolist() for b in self.boundaries], "levels": self.levels.tolist()}

    def __eq__(self, other):
        return (isinstance(other, RectQuantizer) and self.shape == other.shape
                and all(np.array_equal(a, b) for a, b in zip(self.boundaries, other.boundaries))
                and np.array_equal(self.levels, other.levels))

    def __hash__(self):
        return hash((self.shape, self.levels.tobytes()))

    def __repr__(self):
        return f"RectQuantizer(shape={self.shape})"

    def quantize(self, point) -> int:
        """Index of the cell containing ``point``."""
        point = np.asarray(point, dtype=float).reshape(-1)
        if point.shape != (self.dims,):
            raise QuantizerError(f"point has dimension {point.shape[0]}, quantizer has {self.dims}")
        if np.any(np.isnan(point)):
            raise QuantizerError("cannot quantize NaN")
        # right-closed cells: x == b_i belongs to the interval ending at b_i
        sub = [int(np.searchsorted(cuts, x, side="left")) for cuts, x in zip(self.boundaries, point)]
        return stacked_index(sub, self.shape)

    def quantize_many(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, self.dims)
        if np.any(np.isnan(points)):
            raise QuantizerError("cannot quantize NaN")
        sub = np.stack([np.searchsorted(cuts, points[:, i], side="left")
                        for i, cuts in enumerate(self.boundaries)], axis=-1)
        return np.asarray(stacked_index(sub, self.shape))

    def cell(self, index: int) -> HyperRect:
        lower, upper = self.cell_limits()
        return HyperRect(lower[index], upper[index])

    def cell_limits(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper limits of every cell, shape ``(N, dims)`` each."""
        edges = [np.concatenate([[-np.inf], cuts, [np.inf]]) for cuts in self.boundaries]
        sub = unstack_index(np.arange(self.size), self.shape)
        lower = np.stack([edges[i][sub[:, i]] for i in range(self.dims)], axis=-1)
        upper = np.stack([edges[i][sub[:, i] + 1] for i in range(self.dims)], axis=-1)
        return lower, upper

    def alpha(self, level) -> int:
        """Index of a quantization level."""
        level = np.asarray(level, dtype=float).reshape(-1)
        hits = np.flatnonzero(np.all(self.levels == level, axis=1))
        if hits.size != 1:
            raise QuantizerError(f"{level.tolist()} is not a quantization level")
        return int(hits[0])

    def beta(self, index) -> np.ndarray:
        """Level with the given index."""
        if int(index) != index or not 0 <= index < self.size:
            raise QuantizerError(f"level index {index} out of range 0..{self.size - 1}")
        return self.levels[int(index)]


@dataclass(frozen=True)
class NoiseAlphabet:
    """Shift alphabet ``{0, ..., size-1}`` paired with an ``n_levels``-level quantizer."""

    size: int
    n_levels: int

    def __post_init__(self):
        if self.size < 1:
            raise QuantizerError("noise alphabet needs at least one symbol")
        if self.size > self.n_levels:
            # larger shifts alias modulo n_levels
            raise QuantizerError(f"noise alphabet size {self.size} exceeds {self.n_levels} levels")


def apply_mapping(q: RectQuantizer, y_tilde, v: int, n_noise: int | None = None) -> np.ndarray:
    """Released level ``beta((alpha(y_tilde) + v) mod N)``."""
    if n_noise is not None and not 0 <= v < n_noise:
        raise QuantizerError(f"noise symbol {v} outside 0..{n_noise - 1}")
    if v < 0:
        raise QuantizerError(f"noise symbol must be nonnegative, got {v}")
    return q.beta((q.alpha(y_tilde) + int(v)) % q.size)


def stacked_alpha(q: RectQuantizer, y_stack) -> np.ndarray:
    """Componentwise level indices of a stacked sequence of levels."""
    y_stack = np.asarray(y_stack, dtype=float).reshape(-1, q.dims)
    return np.array([q.alpha(y) for y in y_stack], dtype=np.int64)


def stacked_shift(q: RectQuantizer, z_stack, y_stack) -> np.ndarray:
    """Shift sequence taking ``y_stack`` to ``z_stack``, modulo the level count."""
    return (stacked_alpha(q, z_stack) - stacked_alpha(q, y_stack)) % q.size


def stacked_cells(quantizers: Sequence[RectQuantizer]) -> tuple[np.ndarray, np.ndarray]:
    """Limits of the product cells of several quantizers.

    The coordinates of the product space are the concatenation of the
    quantizers' coordinates in order, and cells are enumerated with the
    first quantizer's index varying fastest.
    """
    per_lower, per_upper = zip(*(quant.cell_limits() for quant in quantizers))
    bases = [quant.size for quant in quantizers]
    sub = unstack_index(np.arange(math.prod(bases)), bases)
    lower = np.concatenate([lo[sub[:, i]] for i, lo in enumerate(per_lower)], axis=1)
    upper = np.concatenate([up[sub[:, i]] for i, up in enumerate(per_upper)], axis=1)
    return lower, upper
