import itertools
import math

import numpy as np
import pytest

from privmap.cache import PmfCache
from privmap.config import builtin_config
from privmap.info import CostData
from privmap.lti import LtiSystem
from privmap.pmf import Pmf
from privmap.horizon import Scenario, window_data
from privmap.quantization import RectQuantizer

ACCEPTANCE_LINES: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    """Record one acceptance line; the terminal summary repeats all of them."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def session_cache(tmp_path_factory):
    return PmfCache(tmp_path_factory.mktemp("pmf-cache"))


@pytest.fixture(scope="session")
def reactor_config():
    return builtin_config("reactor")


@pytest.fixture(scope="session")
def reactor_scenario(reactor_config):
    return reactor_config.scenario()


@pytest.fixture(scope="session")
def reactor_k1(reactor_config, reactor_scenario, session_cache):
    """Cost data and window pmf of the reactor study at ``k = 1``."""
    return window_data(reactor_scenario, 1, reactor_config.integration, session_cache)


def scalar_system(a=0.5, c=1.0, d=1.0, sm=1.0, sw=1.0, sx=1.0, mu=0.0, b=1.0):
    return LtiSystem([[a]], [[b]], [[c]], [[d]], [[sm]], [[sw]], [mu], [[sx]])


def scalar_scenario(n_levels=4, n_noise=2, K=2, a=0.0, **kw):
    """Scalar plant with an evenly spaced sensor quantizer and a sign private quantizer."""
    kw.setdefault("sx", kw.get("sm", 1.0))
    sys = scalar_system(a=a, **kw)
    span = 1.5
    cuts = np.linspace(-span, span, n_levels - 1)
    step = cuts[1] - cuts[0] if n_levels > 2 else 1.0
    levels = np.concatenate([[cuts[0] - step / 2], (cuts[:-1] + cuts[1:]) / 2, [cuts[-1] + step / 2]]) \
        if n_levels > 2 else np.array([cuts[0] - 0.5, cuts[0] + 0.5])
    sensor = RectQuantizer([cuts.tolist()], levels.tolist())
    private = RectQuantizer([[0.0]], [-1.0, 1.0])
    return Scenario(sys, sensor, private, n_noise, K)


def random_cost_data(rng, n_levels=2, n_private=2, n_noise=2, K=2) -> CostData:
    """Random joint pmf over sensor x private windows with random levels."""
    n_sensor = n_levels ** K
    n_priv = n_private ** K
    joint = rng.dirichlet(np.ones(n_sensor * n_priv))
    levels = np.sort(rng.uniform(0.0, 1.0, size=n_levels))
    return CostData.from_joint(Pmf(joint), levels, n_private, n_noise, K)


def mi_batch(data: CostData, Q: np.ndarray) -> np.ndarray:
    """Leakage at every row of ``Q`` by the plain double-sum formula."""
    n_s = data.p_s_active.shape[0]
    W = (Q @ data.shifted).reshape(Q.shape[0], n_s, -1)
    p_s = data.p_s_active
    p_z = np.einsum("s,nsz->nz", p_s, W)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(W > 0, W * np.log(W / p_z[:, None, :]), 0.0)
    return np.einsum("s,nsz->n", p_s, terms)


def simplex_grid_min(data: CostData, epsilon: float, resolution: int = 200) -> tuple[float, np.ndarray]:
    """Exhaustive minimum over the simplex grid with spacing ``1/resolution``."""
    n = data.n_vars
    best, arg = math.inf, None
    # enumerate compositions of `resolution` into n parts, chunked by the first part
    for first in range(resolution + 1):
        rest = resolution - first
        parts = [np.array(c) for c in itertools.combinations(range(rest + n - 2), n - 2)]
        if not parts:
            continue
        bars = np.array(parts)
        full = np.concatenate([-np.ones((len(bars), 1), int), bars, np.full((len(bars), 1), rest + n - 2)], axis=1)
        counts = np.diff(full, axis=1) - 1
        Q = np.concatenate([np.full((len(counts), 1), first), counts], axis=1) / resolution
        feasible = Q @ data.d <= epsilon + 1e-12
        if not feasible.any():
            continue
        Q = Q[feasible]
        vals = mi_batch(data, Q)
        i = int(np.argmin(vals))
        if vals[i] < best:
            best, arg = float(vals[i]), Q[i]
    return best, arg
