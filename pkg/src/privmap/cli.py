"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 solver did not converge (artifacts are still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .cache import PmfCache
from .config import ConfigError, ExperimentConfig, builtin_config, epsilon_tag, load_config, parse_epsilon_list
from .horizon import (WindowError, WindowResult, receding_sweep, simulate, window_data,
                      write_trajectory_csv, write_windows_csv)
from .info import baseline_leakage
from .lti import ModelError
from .pmf import PmfError, channel_from_noise, compose, joint_table, total_variation, write_pmf_csv
from .solver import solve_sweep

log = logging.getLogger("privmap")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NOCONV = 0, 2, 3, 4


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else _num(c) for c in row])


def _write_json(path: Path, payload: dict) -> None:
    def clean(v):
        if isinstance(v, float) and math.isinf(v):
            return "inf"
        return v

    payload = {k: clean(v) for k, v in payload.items()}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _coord_names(cfg: ExperimentConfig, k: int) -> list[str]:
    def names(prefix, n, t):
        return [f"{prefix}[{t}]"] if n == 1 else [f"{prefix}{j + 1}[{t}]" for j in range(n)]

    times = range(k, k + cfg.K)
    return ([n for t in times for n in names("Y", cfg.system.n_y, t)]
            + [n for t in times for n in names("S", cfg.system.n_s, t)])


def _stack_labels(prefix: str, k: int, K: int) -> list[str]:
    return [f"{prefix}[{k + t}]" for t in range(K)]


def _solution_record(eps, sol, baseline) -> dict:
    return {"epsilon": eps, "objective_nats": sol.objective, "baseline_nats": baseline,
            "distortion": sol.distortion, "gap": sol.gap, "iterations": sol.iterations,
            "converged": sol.converged}


def cmd_lift(cfg: ExperimentConfig, out: Path, **_) -> int:
    """Mean and covariance of every window in the configured range."""
    scn = cfg.scenario()
    for k in cfg.k_range:
        g = scn.window_gaussian(k)
        names = _coord_names(cfg, k)
        _write_rows(out / f"lift_mean_k{k:03d}.csv", ["coordinate", "mean"], zip(names, g.mean))
        _write_rows(out / f"lift_cov_k{k:03d}.csv", ["coordinate"] + names,
                    ([n] + list(row) for n, row in zip(names, g.cov)))
    return EXIT_OK


def cmd_solve(cfg: ExperimentConfig, out: Path, cache=None, **_) -> int:
    """One-shot design over ``k = 1..K`` for every configured budget.

    Budgets are swept exactly as in ``receding``, so a one-window receding
    run reproduces these numbers.
    """
    scn = cfg.scenario()
    data, _ = window_data(scn, 1, cfg.integration, cache)
    baseline = baseline_leakage(data)
    status = EXIT_OK
    for eps, sol in zip(cfg.epsilons, solve_sweep(data, cfg.epsilons, cfg.solver)):
        tag = epsilon_tag(eps)
        write_pmf_csv(out / f"solve_eps{tag}_q.csv", sol.q_star, _stack_labels("v", 1, cfg.K),
                      [cfg.n_noise] * cfg.K)
        _write_json(out / f"solve_eps{tag}.json", _solution_record(eps, sol, baseline))
        if not sol.converged:
            log.error("budget %s: solver stopped with gap %.3e", tag, sol.gap)
            status = EXIT_NOCONV
    return status


def _receding(cfg, out, cache, threads):
    t0 = time.perf_counter()
    series = receding_sweep(cfg.scenario(), cfg.epsilons, cfg.k_range, cfg.integration, cfg.solver,
                            cache, threads)
    log.info("solved %d windows x %d budgets in %.1f s", len(cfg.k_range), len(cfg.epsilons),
             time.perf_counter() - t0)
    for eps, results in zip(cfg.epsilons, series):
        write_windows_csv(out / f"windows_eps{epsilon_tag(eps)}.csv", results)
    header = ["k", "baseline_nats"] + [f"objective_nats_eps{epsilon_tag(e)}" for e in cfg.epsilons]
    rows = ([r0.k, r0.baseline] + [s[i].objective for s in series] for i, r0 in enumerate(series[0]))
    _write_rows(out / "mi_vs_k.csv", header, rows)
    converged = all(r.converged for s in series for r in s)
    if not converged:
        log.error("some window programs did not converge")
    return series, converged


def _simulate_all(cfg, out, series, prefix="trajectory"):
    if cfg.k_first != 1:
        log.warning("simulation needs windows from k = 1; skipped")
        return
    k_max = min(cfg.k_max or len(cfg.k_range), len(cfg.k_range))
    for eps, results in zip(cfg.epsilons, series):
        traj = simulate(cfg.scenario(), results, cfg.sim_seed, k_max)
        write_trajectory_csv(out / f"{prefix}_eps{epsilon_tag(eps)}.csv", traj)


def cmd_receding(cfg: ExperimentConfig, out: Path, cache=None, threads: int = 1, simulate_paths=False, **_) -> int:
    series, converged = _receding(cfg, out, cache, threads)
    if simulate_paths or cfg.k_max is not None:
        _simulate_all(cfg, out, series)
    return EXIT_OK if converged else EXIT_NOCONV


def _joint_rows(cfg: ExperimentConfig, result: WindowResult, with_z: bool):
    data = result.data
    n_y, n_s, K = cfg.sensor.size, cfg.private.size, cfg.K
    p_ys = joint_table(data.p_s, data.p_y_given_s)
    cols = [p_ys]
    if with_z:
        w = compose(data.p_y_given_s, channel_from_noise(result.q_star, n_y, K))
        cols.append(joint_table(data.p_s, w))
    y_sub = np.indices([n_y] * K).reshape(K, -1).T[:, ::-1]
    s_sub = np.indices([n_s] * K).reshape(K, -1).T[:, ::-1]
    n_sensor = n_y ** K
    for idx in range(p_ys.shape[0]):
        iy, is_ = idx % n_sensor, idx // n_sensor
        yield [idx, *y_sub[iy], *s_sub[is_], *(c[idx] for c in cols)]


def cmd_reproduce_reactor(cfg: ExperimentConfig, out: Path, cache=None, threads: int = 1, **_) -> int:
    """Full artifact bundle of the reactor study plus a hash manifest."""
    series, converged = _receding(cfg, out, cache, threads)
    K = cfg.K
    first = series[0]

    # integration diagnostics and per-window joint pmfs
    diag = []
    for r in first:
        diag.append([r.k, float(r.window.raw.sum()), float(r.window.errors.max()),
                     float(r.window.errors.sum())])
        _write_rows(out / f"fig5_joint_k{r.k:03d}.csv",
                    ["index", *_stack_labels("y", r.k, K), *_stack_labels("s", r.k, K), "probability"],
                    _joint_rows(cfg, r, with_z=False))
    _write_rows(out / "integration.csv", ["k", "raw_sum", "max_error", "sum_errors"], diag)

    _write_rows(out / "fig7_mi.csv",
                ["k", "baseline_nats"] + [f"objective_nats_eps{epsilon_tag(e)}" for e in cfg.epsilons],
                ([r.k, r.baseline] + [s[i].objective for s in series] for i, r in enumerate(first)))

    tv_rows = []
    v_sub = np.indices([cfg.n_noise] * K).reshape(K, -1).T[:, ::-1]
    for eps, results in zip(cfg.epsilons, series):
        tag = epsilon_tag(eps)
        _write_rows(out / f"fig6_q_series_eps{tag}.csv", ["k", "index", *[f"v{t + 1}" for t in range(K)], "probability"],
                    ([r.k, i, *v_sub[i], p] for r in results for i, p in enumerate(r.q_star.probs)))
        r1 = results[0]
        if K >= 2:
            q2 = r1.q_star.probs.reshape([cfg.n_noise] * K, order="F").sum(axis=tuple(range(2, K)))
            _write_rows(out / f"fig6_q12_k{r1.k:03d}_eps{tag}.csv", ["v1", "v2", "probability"],
                        ([a, b, q2[a, b]] for b in range(cfg.n_noise) for a in range(cfg.n_noise)))
        rows = list(_joint_rows(cfg, r1, with_z=True))
        _write_rows(out / f"fig8_joint_k{r1.k:03d}_eps{tag}.csv",
                    ["index", *_stack_labels("y", r1.k, K), *_stack_labels("s", r1.k, K), "p_y_s", "p_z_s"], rows)
        arr = np.array([[row[-2], row[-1]] for row in rows])
        tv_rows.append([tag, total_variation(arr[:, 0], arr[:, 1])])
    _write_rows(out / "fig8_tv.csv", ["epsilon", "total_variation"], tv_rows)

    _simulate_all(cfg, out, series, prefix="fig4_trajectory")
    return EXIT_OK if converged else EXIT_NOCONV


def write_manifest(out: Path) -> Path:
    """``sha256  relative/path`` for every file below ``out``, sorted by path."""
    lines = []
    for path in sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.txt"):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        lines.append(f"{digest}  {path.relative_to(out).as_posix()}\n")
    manifest = out / "manifest.txt"
    manifest.write_text("".join(lines))
    return manifest


COMMANDS = {
    "lift": cmd_lift,
    "solve": cmd_solve,
    "receding": cmd_receding,
    "reproduce-reactor": cmd_reproduce_reactor,
}


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privmap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "lift": "write the window Gaussian (mean, covariance) for each k",
        "solve": "one-shot noise design over k = 1..K",
        "receding": "per-window designs over the k range, optionally simulated",
        "reproduce-reactor": "full reactor study bundle with manifest",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path,
                       help="experiment JSON (default: the built-in reactor study)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=_u64, help="simulation seed override")
        p.add_argument("--epsilon", help="comma-separated budgets, e.g. inf,7,2")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker cap")
        p.add_argument("--no-cache", action="store_true", help="do not read or write the window cache")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "receding":
            p.add_argument("--simulate", action="store_true", help="also write sample paths")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config is not None else builtin_config("reactor")
        eps = parse_epsilon_list(args.epsilon) if args.epsilon is not None else None
        cfg = cfg.with_overrides(seed=args.seed, epsilons=eps)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out or Path(cfg.output_dir or "privmap_out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    cache = None if args.no_cache else PmfCache()
    try:
        code = COMMANDS[args.command](cfg, out, cache=cache, threads=args.threads,
                                      simulate_paths=getattr(args, "simulate", False))
    except (WindowError, ModelError, PmfError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.command == "reproduce-reactor":
        write_manifest(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
