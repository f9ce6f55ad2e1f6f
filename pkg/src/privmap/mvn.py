"""Gaussian probabilities of axis-aligned boxes.

Separation of variables after a Cholesky factorization (Genz's method)
turns a box probability into an integral over the unit cube, which is then
estimated with randomly shifted rank-1 lattice rules.  All boxes of a batch
share the lattice and the shifts, so a batch is integrated with one set of
vectorized passes and the result does not depend on how it is chunked.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .lti import GaussianDist, ModelError
from .quantization import HyperRect

log = logging.getLogger(__name__)

_PRIMES = np.array([2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
                    73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151])
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class IntegrationConfig:
    """Accuracy and budget of the lattice rule.

    ``abs_tol`` is the target for three standard errors of every box
    estimate.  ``max_points`` caps the total points per box (all shifts
    together); ``n_shifts`` independent random shifts give the error
    estimate.
    """

    abs_tol: float = 1e-6
    max_points: int = 1 << 20
    seed: int = 0
    n_shifts: int = 8
    min_points: int = 1 << 10

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if self.n_shifts < 2:
            raise ValueError("need at least two shifts for an error estimate")
        if self.max_points < self.n_shifts:
            raise ValueError("max_points smaller than the number of shifts")

    def to_dict(self) -> dict:
        return {"abs_tol": self.abs_tol, "max_points": self.max_points, "seed": self.seed,
                "n_shifts": self.n_shifts, "min_points": self.min_points}


class RectProb(NamedTuple):
    prob: float
    error: float
    converged: bool


class BatchResult(NamedTuple):
    probs: np.ndarray
    errors: np.ndarray
    converged: bool
    points: int


def _cholesky(g: GaussianDist) -> np.ndarray:
    try:
        return np.linalg.cholesky(g.cov)
    except np.linalg.LinAlgError as exc:
        raise ModelError("covariance is singular; box probabilities need a nondegenerate Gaussian",
                         field="cov") from exc


def _genz_sums(chol, lower, upper, pts):
    """Sum of the Genz integrand over ``pts`` for each box.

    ``lower``/``upper`` are centered limits, shape (n_boxes, m); ``pts`` has
    shape (n_pts, m-1).  Returns shape (n_boxes,).
    """
    n_boxes, m = lower.shape
    n_pts = pts.shape[0]
    # first coordinate needs no sampling
    a = lower[:, 0] / chol[0, 0]
    b = upper[:, 0] / chol[0, 0]
    d0, e0 = _phi_interval(a, b)
    if m == 1:
        return (e0 - d0) * n_pts
    d = np.broadcast_to(d0[:, None], (n_boxes, n_pts))
    e = np.broadcast_to(e0[:, None], (n_boxes, n_pts))
    flip = np.broadcast_to((a > 0)[:, None], (n_boxes, n_pts))
    f = e - d
    ys = []
    for i in range(1, m):
        y = _phi_inv_between(d, e, flip, pts[None, :, i - 1])
        ys.append(y)
        s = chol[i, 0] * ys[0]
        for j in range(1, i):
            s = s + chol[i, j] * ys[j]
        a = (lower[:, i, None] - s) / chol[i, i]
        b = (upper[:, i, None] - s) / chol[i, i]
        flip = a > 0
        d, e = _phi_interval(a, b)
        f = f * (e - d)
    return f.sum(axis=1)


def _phi_interval(a, b):
    """Return (d, e) with e - d = Phi(b) - Phi(a), computed in the accurate tail.

    Where ``a > 0`` both values are upper-tail probabilities in reversed
    order, i.e. d = Q(b) and e = Q(a).
    """
    upper_tail = a > 0
    d = np.where(upper_tail, ndtr(-b), ndtr(a))
    e = np.where(upper_tail, ndtr(-a), ndtr(b))
    return d, e


def _phi_inv_between(d, e, flip, w):
    u = d + w * (e - d)
    u = np.clip(u, 1e-300, 1.0)
    y = ndtri(u)
    return np.where(flip, -y, y)


def _lattice(n_start: int, n_stop: int, dim: int) -> np.ndarray:
    gen = np.sqrt(_PRIMES[:dim].astype(float))
    n = np.arange(n_start + 1, n_stop + 1, dtype=float)[:, None]
    return np.mod(n * gen[None, :], 1.0)


def integrate_boxes(g: GaussianDist, lower, upper, cfg: IntegrationConfig = IntegrationConfig(),
                    threads: int = 1) -> BatchResult:
    """Probabilities of many boxes under ``g`` without renormalization.

    The lattice grows by doubling until every box's error estimate is
    below ``cfg.abs_tol`` or the point budget is spent.
    """
    lower = np.atleast_2d(np.asarray(lower, dtype=float))
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    m = g.dim
    if lower.shape != upper.shape or lower.shape[1] != m:
        raise ValueError(f"box limits of shape {lower.shape}/{upper.shape} do not match dimension {m}")
    if np.any(np.isnan(lower)) or np.any(np.isnan(upper)) or np.any(lower >= upper):
        raise ValueError("box limits must satisfy lower < upper")
    chol = _cholesky(g)
    lo = lower - g.mean
    hi = upper - g.mean
    n_boxes = lo.shape[0]

    if m == 1:
        d, e = _phi_interval(lo[:, 0] / chol[0, 0], hi[:, 0] / chol[0, 0])
        return BatchResult(e - d, np.zeros(n_boxes), True, 0)

    shifts = np.random.default_rng(cfg.seed).random((cfg.n_shifts, m - 1))
    sums = np.zeros((cfg.n_shifts, n_boxes))
    n_done = 0
    n_target = max(1, cfg.min_points // cfg.n_shifts)
    per_shift_cap = max(1, cfg.max_points // cfg.n_shifts)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        while True:
            n_target = min(n_target, per_shift_cap)
            base = _lattice(n_done, n_target, m - 1)
            for r in range(cfg.n_shifts):
                pts = np.mod(base + shifts[r], 1.0)
                pts = np.abs(2.0 * pts - 1.0)  # periodizing tent transform
                sums[r] += _sum_chunked(chol, lo, hi, pts, pool)
            n_done = n_target
            means = sums / n_done
            probs = means.mean(axis=0)
            errors = 3.0 * means.std(axis=0, ddof=1) / np.sqrt(cfg.n_shifts)
            converged = bool(errors.max() <= cfg.abs_tol)
            if converged or n_done >= per_shift_cap:
                break
            n_target = 2 * n_done
    finally:
        if pool is not None:
            pool.shutdown()
    if not converged:
        log.warning("box integration stopped at the point budget: max error %.2e > %.2e",
                    errors.max(), cfg.abs_tol)
    return BatchResult(probs, errors, converged, n_done * cfg.n_shifts)


def _sum_chunked(chol, lo, hi, pts, pool):
    n_boxes = lo.shape[0]
    step = max(1, _CHUNK_ELEMENTS // max(1, pts.shape[0]))
    slices = [slice(i, min(i + step, n_boxes)) for i in range(0, n_boxes, step)]
    if pool is None:
        parts = [_genz_sums(chol, lo[s], hi[s], pts) for s in slices]
    else:
        parts = list(pool.map(lambda s: _genz_sums(chol, lo[s], hi[s], pts), slices))
    return np.concatenate(parts)


def _grid_sums(chol, edges, pts):
    """Sum of the Genz integrand over ``pts`` for every cell of a product grid.

    ``edges[i]`` holds the centered finite cut points of coordinate ``i``.
    Cells sharing their leading intervals share the conditional draws, so
    the recursion runs over a tree whose level ``i`` has one node per
    combination of the first ``i`` intervals.  Returns a flat array in
    C order (first coordinate slowest).
    """
    m = chol.shape[0]
    n_pts = pts.shape[0]
    acc = np.zeros((1, m, n_pts))
    f = np.ones((1, n_pts))
    for i in range(m):
        n_nodes = f.shape[0]
        t = (edges[i][None, :, None] - acc[:, i, None, :]) / chol[i, i]
        phi = ndtr(t)
        q = ndtr(-t)
        zeros = np.zeros((n_nodes, 1, n_pts))
        ones = np.ones((n_nodes, 1, n_pts))
        t_low = np.concatenate([np.full((n_nodes, 1, n_pts), -np.inf), t], axis=1)
        flip = t_low > 0
        d = np.where(flip, np.concatenate([q, zeros], axis=1), np.concatenate([zeros, phi], axis=1))
        e = np.where(flip, np.concatenate([ones, q], axis=1), np.concatenate([phi, ones], axis=1))
        width = e - d
        f_child = f[:, None, :] * width
        n_child = width.shape[1]
        if i == m - 1:
            return f_child.reshape(-1, n_pts).sum(axis=1)
        u = np.clip(d + pts[None, None, :, i] * width, 1e-300, 1.0 - 2.0 ** -53)
        y = ndtri(u)
        y = np.where(flip, -y, y)
        acc = acc[:, None, :, :] + chol[None, None, :, i, None] * y[:, :, None, :]
        acc = acc.reshape(n_nodes * n_child, m, n_pts)
        f = f_child.reshape(n_nodes * n_child, n_pts)
    raise AssertionError("unreachable")


def integrate_grid(g: GaussianDist, edges: Sequence, cfg: IntegrationConfig = IntegrationConfig(),
                   order: Sequence[int] | None = None) -> BatchResult:
    """Probabilities of all cells of a product grid of right-closed intervals.

    ``edges[i]`` lists the finite, increasing cut points of coordinate
    ``i``; coordinate ``i`` then has ``len(edges[i]) + 1`` intervals.  The
    result is flat with the first coordinate's interval index varying
    fastest.  For a fixed lattice point the integrand values of all cells
    add up to one, so the raw estimates already sum to one up to rounding.

    ``order`` is the sequence in which coordinates enter the recursion
    (natural order by default); it changes the variance of the estimate,
    not its expectation.
    """
    edges = [np.asarray(e, dtype=float).reshape(-1) for e in edges]
    m = g.dim
    if len(edges) != m:
        raise ValueError(f"got cut points for {len(edges)} coordinates, Gaussian has {m}")
    order = list(range(m) if order is None else order)
    if sorted(order) != list(range(m)):
        raise ValueError(f"order {order} is not a permutation of 0..{m - 1}")
    perm_g = g.marginal(order)
    chol = _cholesky(perm_g)
    centered = [edges[i] - g.mean[i] for i in order]
    shape = [len(e) + 1 for e in centered]

    if m == 1:
        res = integrate_boxes(g, *_grid_limits(edges), cfg)
        return res

    shifts = np.random.default_rng(cfg.seed).random((cfg.n_shifts, m - 1))
    n_cells = int(np.prod(shape))
    sums = np.zeros((cfg.n_shifts, n_cells))
    n_done = 0
    n_target = max(1, cfg.min_points // cfg.n_shifts)
    per_shift_cap = max(1, cfg.max_points // cfg.n_shifts)
    chunk = max(16, _CHUNK_ELEMENTS // (n_cells * 4))
    while True:
        n_target = min(n_target, per_shift_cap)
        for start in range(n_done, n_target, chunk):
            stop = min(start + chunk, n_target)
            base = _lattice(start, stop, m - 1)
            for r in range(cfg.n_shifts):
                pts = np.abs(2.0 * np.mod(base + shifts[r], 1.0) - 1.0)
                sums[r] += _grid_sums(chol, centered, pts)
        n_done = n_target
        means = sums / n_done
        probs = means.mean(axis=0)
        errors = 3.0 * means.std(axis=0, ddof=1) / np.sqrt(cfg.n_shifts)
        converged = bool(errors.max() <= cfg.abs_tol)
        if converged or n_done >= per_shift_cap:
            break
        n_target = 2 * n_done
    if not converged:
        log.warning("grid integration stopped at the point budget: max error %.2e > %.2e",
                    errors.max(), cfg.abs_tol)

    # C order over the processing order -> first original coordinate fastest
    probs = probs.reshape(shape)
    errors = errors.reshape(shape)
    inverse = np.argsort(order)
    probs = np.transpose(probs, inverse).reshape(-1, order="F")
    errors = np.transpose(errors, inverse).reshape(-1, order="F")
    return BatchResult(probs, errors, converged, n_done * cfg.n_shifts)


def _grid_limits(edges):
    from .quantization import unstack_index

    full = [np.concatenate([[-np.inf], e, [np.inf]]) for e in edges]
    shape = [len(e) - 1 for e in full]
    sub = unstack_index(np.arange(int(np.prod(shape))), shape)
    lower = np.stack([full[i][sub[:, i]] for i in range(len(full))], axis=-1)
    upper = np.stack([full[i][sub[:, i] + 1] for i in range(len(full))], axis=-1)
    return lower, upper


def rect_prob(g: GaussianDist, r: HyperRect, cfg: IntegrationConfig = IntegrationConfig()) -> RectProb:
    """Probability that ``g`` falls in the box ``r`` with a 3-sigma error estimate."""
    if r.lower.shape[0] != g.dim:
        raise ValueError(f"box has dimension {r.lower.shape[0]}, Gaussian has {g.dim}")
    res = integrate_boxes(g, r.lower[None, :], r.upper[None, :], cfg)
    prob = float(np.clip(res.probs[0], 0.0, 1.0))
    return RectProb(prob, float(res.errors[0]), res.converged)


def renormalize(probs) -> np.ndarray:
    probs = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    return probs / probs.sum()


def cell_pmf(g: GaussianDist, cells: Sequence[HyperRect] | tuple[np.ndarray, np.ndarray],
             cfg: IntegrationConfig = IntegrationConfig(), threads: int = 1):
    """Pmf over a partition of the space into boxes.

    ``cells`` is either a sequence of :class:`HyperRect` or a pair of
    ``(lower, upper)`` arrays.  Raw estimates are clipped at zero and
    rescaled to sum to one.
    """
    from .pmf import Pmf

    if isinstance(cells, tuple) and len(cells) == 2 and isinstance(cells[0], np.ndarray):
        lower, upper = cells
    else:
        lower = np.array([c.lower for c in cells])
        upper = np.array([c.upper for c in cells])
    res = integrate_boxes(g, lower, upper, cfg, threads=threads)
    total = res.probs.sum()
    if abs(total - 1.0) > 4096 * cfg.abs_tol:
        log.warning("cell probabilities sum to %.8f before renormalization", total)
    return Pmf(renormalize(res.probs))
