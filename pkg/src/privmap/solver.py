"""Conditional-gradient solver for the leakage-minimizing noise pmf.

The feasible set is the probability simplex cut by one distortion
half-space ``d . q <= eps``.  Its vertices are unit vectors ``e_i`` with
``d_i <= eps`` and, on edges crossing the half-space, the blends
``lam e_i + (1 - lam) e_j`` with ``lam d_i + (1 - lam) d_j = eps``.  The
linear subproblem therefore has a closed-form answer and no projection is
ever needed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .info import CostData, _mi_rows, mi_gradient, mi_of_noise
from .pmf import Pmf

log = logging.getLogger(__name__)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
# away-step atoms lighter than this are dropped without a line search
_DROP_WEIGHT = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule and variant of the Frank-Wolfe iteration.

    ``variant`` is ``"away"`` (away steps enabled, the default) or
    ``"vanilla"``.  ``init`` is ``"uniform"`` or an explicit starting pmf.
    """

    tol: float = 1e-6
    max_iter: int = 20000
    variant: str = "away"
    init: object = "uniform"
    line_tol: float = 1e-12

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.variant not in ("away", "vanilla"):
            raise ValueError(f"unknown variant {self.variant!r}")

    def to_dict(self) -> dict:
        return {"tol": self.tol, "max_iter": self.max_iter, "variant": self.variant,
                "line_tol": self.line_tol}


@dataclass(frozen=True)
class ProgramInstance:
    data: CostData
    epsilon: float = math.inf

    def __post_init__(self):
        if math.isnan(self.epsilon) or self.epsilon < 0:
            raise ValueError(f"distortion budget must be nonnegative, got {self.epsilon}")


@dataclass
class Solution:
    q_star: Pmf
    objective: float
    distortion: float
    gap: float
    iterations: int
    converged: bool
    epsilon: float = math.inf
    history: list = field(default_factory=list, repr=False)


def _oracle(c: np.ndarray, d: np.ndarray, epsilon: float) -> tuple[int, int, float, float]:
    """Minimizing vertex as ``(i, j, lam, value)`` meaning ``lam e_i + (1-lam) e_j``.

    Candidates are ordered by ``(i, j)``, unit vertices as ``(i, i)``; ties
    go to the first one.
    """
    n = c.shape[0]
    feasible = d <= epsilon
    values = np.full((n, n), np.inf)
    idx = np.flatnonzero(feasible)
    values[idx, idx] = c[idx]
    lam = None
    if math.isfinite(epsilon) and not feasible.all():
        over = np.flatnonzero(~feasible)
        lam = np.zeros((n, n))
        dl = d[idx][:, None]
        dh = d[over][None, :]
        lam_pairs = (dh - epsilon) / (dh - dl)
        lam[np.ix_(idx, over)] = lam_pairs
        values[np.ix_(idx, over)] = lam_pairs * c[idx][:, None] + (1.0 - lam_pairs) * c[over][None, :]
    flat = int(np.argmin(values))
    i, j = divmod(flat, n)
    weight = 1.0 if i == j else float(lam[i, j])
    return i, j, weight, float(values[i, j])


def _vertex(n: int, i: int, j: int, lam: float) -> np.ndarray:
    out = np.zeros(n)
    out[i] += lam
    out[j] += 1.0 - lam
    return out


def linear_oracle(c, d, epsilon: float = math.inf) -> np.ndarray:
    """Vertex of ``{q >= 0, sum q = 1, d . q <= eps}`` minimizing ``c . q``."""
    c = np.asarray(c, dtype=float)
    d = np.asarray(d, dtype=float)
    if d.shape != c.shape:
        raise ValueError("cost and distortion vectors differ in length")
    if not (d >= 0).all() or d.min() > epsilon:
        raise ValueError("feasible set is empty: need some d_i <= eps")
    i, j, lam, _ = _oracle(c, d, epsilon)
    return _vertex(c.shape[0], i, j, lam)


def _golden_section(phi, hi: float, tol: float) -> tuple[float, float]:
    """Minimize a convex ``phi`` on ``[0, hi]``; returns ``(step, value)``.

    The endpoints are compared with the interior estimate so a boundary
    minimizer is returned exactly.  Ties go to the longer step: on a flat
    stretch it costs nothing and lets drop steps empty their atom.
    """
    a, b = 0.0, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = phi(x1), phi(x2)
    while b - a > tol * max(hi, 1e-300):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = phi(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = phi(x2)
    best = (x2, f2) if f2 <= f1 else (x1, f1)
    value = phi(hi)
    if value <= best[1]:
        best = (hi, value)
    value = phi(0.0)
    if value < best[1]:
        best = (0.0, value)
    return best


def _decompose(q: np.ndarray, d: np.ndarray, epsilon: float) -> dict:
    """Write a feasible ``q`` as a convex combination of polytope vertices.

    Mass on components with ``d_i > eps`` is paired greedily with slack on
    components with ``d_i < eps``; each pair becomes one edge vertex and the
    unpaired mass stays on unit vertices.  Rounding leftovers are kept in a
    residual atom.  Returns the away-step active set ``key -> [weight, vertex]``.
    """
    n = q.shape[0]
    atoms: dict = {}
    rest = q.astype(float).copy()
    if math.isfinite(epsilon):
        low = [i for i in np.argsort(d, kind="stable") if d[i] < epsilon and rest[i] > 0]
        high = [j for j in np.flatnonzero(d > epsilon) if rest[j] > 0]
        slack = {i: rest[i] * (epsilon - d[i]) for i in low}
        it = iter(low)
        i = next(it, None)
        for j in high:
            demand = rest[j] * (d[j] - epsilon)
            while demand > 0 and i is not None:
                b = min(demand, slack[i])
                m_i, m_j = b / (epsilon - d[i]), b / (d[j] - epsilon)
                m_i, m_j = min(m_i, rest[i]), min(m_j, rest[j])
                w = m_i + m_j
                if w > 0:
                    atoms[(int(i), int(j))] = [w, _vertex(n, i, j, m_i / w)]
                rest[i] -= m_i
                rest[j] -= m_j
                demand -= b
                slack[i] -= b
                if slack[i] <= 0:
                    i = next(it, None)
            if demand > 0:
                break
    for i in np.flatnonzero(rest > 0):
        if d[i] <= epsilon:
            atoms[(int(i),)] = [float(rest[i]), np.eye(n)[i]]
            rest[i] = 0.0
    leftover = float(rest.sum())
    if leftover > 0:
        atoms[("start",)] = [leftover, rest / leftover]
    return atoms


def initial_point(data: CostData, epsilon: float, init="uniform") -> np.ndarray:
    n = data.n_vars
    if not isinstance(init, str):
        q0 = np.asarray(init.probs if isinstance(init, Pmf) else init, dtype=float).copy()
        if q0.shape != (n,) or data.d @ q0 > epsilon + 1e-12:
            raise ValueError("warm start is not a feasible point of this program")
        return q0
    if init != "uniform":
        raise ValueError(f"unknown initial point rule {init!r}")
    q0 = np.full(n, 1.0 / n)
    load = float(data.d @ q0)
    if load <= epsilon:
        return q0
    # blend toward the zero shift just far enough to satisfy the budget
    lam = 1.0 - max(epsilon - 1e-9, 0.0) / load
    lam = min(max(lam, 0.0), 1.0)
    delta = np.zeros(n)
    delta[0] = 1.0
    return (1.0 - lam) * q0 + lam * delta


def solve(instance: ProgramInstance, cfg: SolverConfig = SolverConfig(), keep_history: bool = False) -> Solution:
    """Minimize the leakage over feasible noise pmfs.

    Stops when the Frank-Wolfe gap ``grad . (q - s)`` drops below
    ``cfg.tol``; that gap bounds the suboptimality of the returned point.
    Hitting ``cfg.max_iter`` returns the last iterate with
    ``converged=False``.
    """
    data = instance.data
    eps = float(instance.epsilon)
    d = data.d
    n = data.n_vars
    p_s = data.p_s_active

    q = initial_point(data, eps, cfg.init)
    w_q = data.channel_rows(q)
    value = _mi_rows(p_s, w_q)
    history = [value] if keep_history else []
    # active set for away steps: atom key -> (weight, vector)
    atoms = _decompose(q, d, eps) if cfg.variant == "away" else {}

    gap = math.inf
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        grad = mi_gradient(q, data)
        i, j, lam, _ = _oracle(grad, d, eps)
        s = _vertex(n, i, j, lam)
        gap = float(grad @ (q - s))
        if gap <= cfg.tol:
            converged = True
            it -= 1
            break

        direction = s - q
        step_max = 1.0
        away_key = None
        if cfg.variant == "away" and len(atoms) > 1:
            away_key = max(atoms, key=lambda k: float(grad @ atoms[k][1]))
            away_vec = atoms[away_key][1]
            away_gap = float(grad @ (away_vec - q))
            w_a = atoms[away_key][0]
            if away_gap > gap and w_a < 1.0:
                direction = q - away_vec
                step_max = w_a / (1.0 - w_a)
            else:
                away_key = None

        w_dir = data.channel_rows(direction)
        forced = away_key is not None and step_max <= _DROP_WEIGHT
        if forced:
            # the objective decreases along an away direction to first order, and a
            # line search over so short an interval only resolves rounding noise
            step = step_max
            new_value = _mi_rows(p_s, w_q + step * w_dir)
        else:
            step, new_value = _golden_section(lambda t: _mi_rows(p_s, w_q + t * w_dir), step_max, cfg.line_tol)
            if away_key is not None and step >= step_max * (1.0 - 1e-9):
                step = step_max
        if (new_value > value and not forced) or step == 0.0:
            log.debug("line search made no progress at iteration %d (gap %.3e)", it, gap)
            if away_key is None:
                break
            # retry as a plain FW step before giving up
            away_key = None
            direction = s - q
            w_dir = data.channel_rows(direction)
            step, new_value = _golden_section(lambda t: _mi_rows(p_s, w_q + t * w_dir), 1.0, cfg.line_tol)
            if new_value > value or step == 0.0:
                break
            step_max = 1.0

        q = q + step * direction
        np.clip(q, 0.0, None, out=q)
        w_q = w_q + step * w_dir
        value = new_value
        if keep_history:
            history.append(value)

        if away_key is None:
            for atom in atoms.values():
                atom[0] *= 1.0 - step
            key = (i, j) if i != j else (i,)
            if step >= 1.0:
                atoms = {key: [1.0, s]}
            elif key in atoms:
                atoms[key][0] += step
            else:
                atoms[key] = [step, s]
        else:
            for atom in atoms.values():
                atom[0] *= 1.0 + step
            atoms[away_key][0] -= step
            if step >= step_max or atoms[away_key][0] <= 1e-15:
                del atoms[away_key]
        if it % 64 == 0:
            # rounding in the step updates accumulates in w_q; resync it
            w_q = data.channel_rows(q)
            value = _mi_rows(p_s, w_q)
    else:
        log.info("iteration cap %d reached with gap %.3e", cfg.max_iter, gap)

    q = np.clip(q, 0.0, None)
    q = q / q.sum()
    return Solution(
        q_star=Pmf(q),
        objective=mi_of_noise(q, data),
        distortion=float(d @ q),
        gap=gap,
        iterations=it,
        converged=converged,
        epsilon=eps,
        history=history,
    )


def solve_sweep(data: CostData, epsilons, cfg: SolverConfig = SolverConfig()) -> list[Solution]:
    """Solve for several budgets, warm-starting from the next-smaller budget.

    Results are returned in the order of ``epsilons``.
    """
    epsilons = [float(e) for e in epsilons]
    order = sorted(range(len(epsilons)), key=lambda k: epsilons[k])
    results: dict[int, Solution] = {}
    prev = None
    for k in order:
        run_cfg = cfg if prev is None else SolverConfig(cfg.tol, cfg.max_iter, cfg.variant, prev, cfg.line_tol)
        sol = solve(ProgramInstance(data, epsilons[k]), run_cfg)
        results[k] = sol
        prev = sol.q_star.probs
    return [results[k] for k in range(len(epsilons))]
