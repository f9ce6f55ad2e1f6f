"""Receding-horizon synthesis and closed-loop simulation.

At every time ``k`` a fresh ``K``-step program is built from the
unconditional law of the window ``(Y(k..k+K-1), S(k..k+K-1))`` and solved
off-line.  During simulation only the first stage of a draw from each
window's optimal noise pmf is applied.  Window programs never look at the
realized past, so they can all be computed before the simulation starts.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .cache import PmfCache, cache_key
from .info import CostData, baseline_leakage, first_stage_distortion
from .lti import GaussianDist, LtiSystem, lifted_joint_window
from .mvn import IntegrationConfig, integrate_grid, renormalize
from .pmf import Pmf
from .quantization import NoiseAlphabet, RectQuantizer, apply_mapping
from .signals import InputSignal
from .solver import ProgramInstance, Solution, SolverConfig, solve, solve_sweep

log = logging.getLogger(__name__)


class WindowError(RuntimeError):
    """Failure while building or solving the program of window ``k``."""

    def __init__(self, k: int, cause: BaseException):
        super().__init__(f"window k={k}: {cause}")
        self.k = k
        self.cause = cause


@dataclass(frozen=True)
class Scenario:
    """Plant, quantizers, noise alphabet and reference input of a study."""

    system: LtiSystem
    sensor: RectQuantizer
    private: RectQuantizer
    n_noise: int
    K: int
    inputs: InputSignal | None = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"window length must be at least 1, got {self.K}")
        if self.sensor.dims != self.system.n_y:
            raise ValueError(f"sensor quantizer has {self.sensor.dims} dimensions, Y has {self.system.n_y}")
        if self.private.dims != self.system.n_s:
            raise ValueError(f"private quantizer has {self.private.dims} dimensions, S has {self.system.n_s}")
        NoiseAlphabet(self.n_noise, self.sensor.size)
        if self.inputs is None:
            object.__setattr__(self, "inputs", InputSignal("zero", self.system.n_u))
        elif self.inputs.n_u != self.system.n_u:
            raise ValueError(f"input signal has {self.inputs.n_u} channels, B has {self.system.n_u}")

    def window_gaussian(self, k: int) -> GaussianDist:
        """Law of the stacked window starting at ``k``."""
        U = self.inputs.sequence(1, k + self.K - 2)
        return lifted_joint_window(self.system, k, self.K, U)

    def cut_points(self) -> list[np.ndarray]:
        """Cut points per coordinate of the stacked window, sensor block first."""
        return ([c for _ in range(self.K) for c in self.sensor.boundaries]
                + [c for _ in range(self.K) for c in self.private.boundaries])

    def interleaved_order(self) -> list[int]:
        """Coordinates grouped by time: ``Y(k), S(k), Y(k+1), S(k+1), ...``."""
        n_y, n_s, K = self.system.n_y, self.system.n_s, self.K
        order = []
        for t in range(K):
            order += list(range(t * n_y, (t + 1) * n_y))
            order += list(range(K * n_y + t * n_s, K * n_y + (t + 1) * n_s))
        return order


class WindowPmf(NamedTuple):
    """Integrated window law: renormalized joint, raw sums and error bounds."""

    joint: Pmf
    raw: np.ndarray
    errors: np.ndarray


def window_pmf(scn: Scenario, k: int, icfg: IntegrationConfig = IntegrationConfig(),
               cache: PmfCache | None = None) -> WindowPmf:
    """Joint pmf of quantized sensor and private windows starting at ``k``.

    Flattened with the stacked sensor index fastest, so it reshapes to
    ``(N_S**K, N_Y**K)``.  With a cache, entries are keyed by the exact
    window Gaussian, the cut points and the integration settings.
    """
    g = scn.window_gaussian(k)
    edges = scn.cut_points()
    order = scn.interleaved_order()
    key = None
    if cache is not None:
        key = cache_key({
            "mean": g.mean.tolist(), "cov": g.cov.tolist(),
            "edges": [e.tolist() for e in edges], "order": order,
            "integration": icfg.to_dict(),
        })
        hit = cache.get(key)
        if hit is not None:
            raw, errors = hit
            return WindowPmf(Pmf(renormalize(raw)), raw, errors)
    res = integrate_grid(g, edges, icfg, order=order)
    if cache is not None:
        cache.put(key, res.probs, res.errors)
    return WindowPmf(Pmf(renormalize(res.probs)), res.probs, res.errors)


def window_data(scn: Scenario, k: int, icfg: IntegrationConfig = IntegrationConfig(),
                cache: PmfCache | None = None) -> tuple[CostData, WindowPmf]:
    wp = window_pmf(scn, k, icfg, cache)
    data = CostData.from_joint(wp.joint, scn.sensor.levels, scn.private.size, scn.n_noise, scn.K)
    return data, wp


@dataclass
class WindowResult:
    """Optimal noise design of one window and its figures of merit."""

    k: int
    epsilon: float
    q_star: Pmf
    objective: float
    baseline: float
    distortion: float
    gap: float
    iterations: int
    converged: bool
    applied: int | None = None
    data: CostData | None = field(default=None, repr=False, compare=False)
    window: WindowPmf | None = field(default=None, repr=False, compare=False)

    def check(self, tol: float = 1e-9) -> None:
        if self.objective > self.baseline + tol:
            raise ArithmeticError(f"k={self.k}: leakage {self.objective} exceeds baseline {self.baseline}")
        if self.distortion > self.epsilon + tol:
            raise ArithmeticError(f"k={self.k}: distortion {self.distortion} exceeds budget {self.epsilon}")


def _result(k: int, sol: Solution, baseline: float, data: CostData, wp: WindowPmf) -> WindowResult:
    return WindowResult(k, sol.epsilon, sol.q_star, sol.objective, baseline, sol.distortion,
                        sol.gap, sol.iterations, sol.converged, None, data, wp)


def _window_inputs(scn, k_range, icfg, cache, threads):
    k_list = [int(k) for k in k_range]
    if not k_list:
        raise ValueError("empty range of time indices")
    if min(k_list) < 1:
        raise ValueError("time indices start at 1")

    def build(k):
        try:
            return window_data(scn, k, icfg, cache)
        except Exception as exc:
            raise WindowError(k, exc) from exc

    if threads > 1 and len(k_list) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            built = list(pool.map(build, k_list))
    else:
        built = [build(k) for k in k_list]
    return k_list, built


def _solve_window(data: CostData, epsilon: float, scfg: SolverConfig) -> Solution:
    return solve(ProgramInstance(data, epsilon), scfg)


def receding_solve(scn: Scenario, epsilon: float, k_range: Sequence[int],
                   icfg: IntegrationConfig = IntegrationConfig(), scfg: SolverConfig = SolverConfig(),
                   cache: PmfCache | None = None, threads: int = 1) -> list[WindowResult]:
    """Solve the window program at every ``k`` in ``k_range`` for one budget."""
    k_list, built = _window_inputs(scn, k_range, icfg, cache, threads)
    out = []
    for k, (data, wp) in zip(k_list, built):
        try:
            sol = _solve_window(data, epsilon, scfg)
        except Exception as exc:
            raise WindowError(k, exc) from exc
        out.append(_result(k, sol, baseline_leakage(data), data, wp))
    return out


def receding_sweep(scn: Scenario, epsilons: Sequence[float], k_range: Sequence[int],
                   icfg: IntegrationConfig = IntegrationConfig(), scfg: SolverConfig = SolverConfig(),
                   cache: PmfCache | None = None, threads: int = 1) -> list[list[WindowResult]]:
    """Solve every window for several budgets; ``out[i]`` belongs to ``epsilons[i]``.

    Each window is integrated once.  Budgets are solved in increasing
    order, each warm-started at the optimum of the previous one, so the
    leakage never increases with the budget.
    """
    k_list, built = _window_inputs(scn, k_range, icfg, cache, threads)
    out: list[list[WindowResult]] = [[] for _ in epsilons]
    for k, (data, wp) in zip(k_list, built):
        try:
            sols = solve_sweep(data, epsilons, scfg)
        except Exception as exc:
            raise WindowError(k, exc) from exc
        base = baseline_leakage(data)
        for i, sol in enumerate(sols):
            out[i].append(_result(k, sol, base, data, wp))
    return out


def finite_horizon_solve(scn: Scenario, epsilon: float, icfg: IntegrationConfig = IntegrationConfig(),
                         scfg: SolverConfig = SolverConfig(), cache: PmfCache | None = None) -> Solution:
    """One-shot design over ``k = 1..K``; the ``k = 1`` window of :func:`receding_solve`."""
    data, _ = window_data(scn, 1, icfg, cache)
    return _solve_window(data, epsilon, scfg)


def sample_first(q_star: Pmf, rng, n_noise: int) -> int:
    """Draw a stacked shift from ``q_star`` and return its first stage.

    ``rng`` is a seed or a :class:`numpy.random.Generator`; the draw uses
    one uniform variate and the inverse CDF over the flat index.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    probs = q_star.probs if isinstance(q_star, Pmf) else np.asarray(q_star, dtype=float)
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    idx = min(int(np.searchsorted(cdf, u, side="right")), probs.shape[0] - 1)
    return idx % n_noise


@dataclass
class Trajectory:
    """Sample path of the closed loop; row ``i`` holds time ``k = i + 1``."""

    seed: int | None
    X: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    Y_tilde: np.ndarray
    y_index: np.ndarray
    S: np.ndarray
    S_tilde: np.ndarray
    s_index: np.ndarray
    V: np.ndarray
    Z: np.ndarray
    z_index: np.ndarray

    @property
    def k(self) -> np.ndarray:
        return np.arange(1, self.X.shape[0] + 1)


def simulate(scn: Scenario, plan: Sequence, seed, k_max: int) -> Trajectory:
    """Run the plant for ``k = 1..k_max`` and release ``Z(k)``.

    ``plan[k-1]`` is the window result (or noise pmf) used at time ``k``.
    Per step the generator draws ``W(k)``, then the noise symbol, then
    ``M(k)``; ``X(1)`` is drawn first.
    """
    if len(plan) < k_max:
        raise ValueError(f"plan covers {len(plan)} steps, need {k_max}")
    sys = scn.system
    rng = np.random.default_rng(seed)
    chol_x = np.linalg.cholesky(sys.sigma_X1)
    chol_m = np.linalg.cholesky(sys.sigma_M)
    chol_w = np.linalg.cholesky(sys.sigma_W)

    rows: dict[str, list] = {name: [] for name in
                             ("X", "U", "Y", "Yt", "yi", "S", "St", "si", "V", "Z", "zi")}
    x = sys.mu_X1 + chol_x @ rng.standard_normal(sys.n_x)
    for k in range(1, k_max + 1):
        u = scn.inputs(k)
        y = sys.C @ x + chol_w @ rng.standard_normal(sys.n_y)
        s = sys.D @ x
        yi = scn.sensor.quantize(y)
        si = scn.private.quantize(s)
        step = plan[k - 1]
        q = step.q_star if isinstance(step, WindowResult) else step
        v = sample_first(q, rng, scn.n_noise)
        y_t = scn.sensor.beta(yi)
        z = apply_mapping(scn.sensor, y_t, v, scn.n_noise)
        for name, value in (("X", x), ("U", u), ("Y", y), ("Yt", y_t), ("yi", yi), ("S", s),
                            ("St", scn.private.beta(si)), ("si", si), ("V", v), ("Z", z),
                            ("zi", (yi + v) % scn.sensor.size)):
            rows[name].append(value)
        x = sys.A @ x + sys.B @ u + chol_m @ rng.standard_normal(sys.n_x)

    arr = {name: np.array(values) for name, values in rows.items()}
    return Trajectory(seed, arr["X"], arr["U"], arr["Y"], arr["Yt"], arr["yi"], arr["S"], arr["St"],
                      arr["si"], arr["V"], arr["Z"], arr["zi"])


def predicted_step_distortion(result: WindowResult | Pmf, data: CostData | None = None) -> float:
    """Model value of ``E||Z(k) - Y~(k)||^2`` for the first stage of a window."""
    if isinstance(result, WindowResult):
        data, q = result.data, result.q_star
    else:
        q = result
    if data is None:
        raise ValueError("cost data needed to predict the distortion")
    return first_stage_distortion(q, data)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_windows_csv(path, results: Sequence[WindowResult]) -> None:
    header = ["k", "epsilon", "objective_nats", "baseline_nats", "distortion", "gap", "iterations", "converged"]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in results:
            writer.writerow([_fmt(r.k), _fmt(r.epsilon), _fmt(r.objective), _fmt(r.baseline),
                             _fmt(r.distortion), _fmt(r.gap), _fmt(r.iterations), _fmt(r.converged)])


def _names(prefix: str, n: int) -> list[str]:
    return [prefix] if n == 1 else [f"{prefix}{i + 1}" for i in range(n)]


def write_trajectory_csv(path, traj: Trajectory) -> None:
    blocks = [("X", traj.X), ("Y", traj.Y), ("Ytilde", traj.Y_tilde), ("S", traj.S),
              ("Stilde", traj.S_tilde)]
    header = ["k"]
    for name, arr in blocks:
        header += _names(name, arr.shape[1])
    header += ["V"] + _names("Z", traj.Z.shape[1])
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, k in enumerate(traj.k):
            row = [_fmt(k)]
            for _, arr in blocks:
                row += [_fmt(x) for x in arr[i]]
            row += [_fmt(traj.V[i])] + [_fmt(x) for x in traj.Z[i]]
            writer.writerow(row)


__all__ = [
    "Scenario", "WindowPmf", "WindowResult", "WindowError", "Trajectory", "window_pmf", "window_data",
    "receding_solve", "receding_sweep", "finite_horizon_solve", "sample_first", "simulate",
    "predicted_step_distortion", "write_windows_csv", "write_trajectory_csv",
]
