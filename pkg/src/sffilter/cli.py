"""Command-line interface.

Subcommands:
    validate   check the model hypotheses and print a pass/fail report
    simulate   one truth + reduced-system run with a tracking summary
    filter     one replication: full vs reduced filter on shared observations
    sweep      Monte Carlo mean-square error over epsilon and x~(0) grids

Exit codes: 0 success, 1 runtime failure, 2 usage error. All outputs are
CSV files under --out, byte-deterministic for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .errors import SFFilterError
from .sde import generate_noise_grid, simulate_full_system, validate_hypotheses
from .manifold import build_environment, simulate_reduced_system, tracking_error
from .experiment import (
    ExperimentConfig,
    emit_csv,
    run_single_replication,
    sweep_grid,
)

__all__ = ["cli_main", "main", "build_parser"]


def _float_list(text: str):
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sffilter",
        description="Slow-fast SDE simulation and particle filtering on the reduced slow manifold.",
    )
    sub = parser.add_subparsers(dest="command")

    def add_common(p):
        p.add_argument("--config", metavar="PATH", help="key=value config file")
        p.add_argument("--epsilon", type=_float_list, metavar="LIST", help="time-scale ratios, comma-separated")
        p.add_argument("--particles", type=int, metavar="N", help="particles per filter")
        p.add_argument("--substeps", type=int, metavar="M", help="fine substeps per coarse step")
        p.add_argument("--dt", type=float, metavar="DT", help="coarse step")
        p.add_argument("--horizon", type=float, metavar="T", help="final time")
        p.add_argument("--x0", type=float, metavar="V", help="truth slow initial value")
        p.add_argument("--y0", type=float, metavar="V", help="truth fast initial value")
        p.add_argument("--x-tilde0", type=_float_list, metavar="LIST", help="reduced initial values")
        p.add_argument("--reps", type=int, metavar="R", help="Monte Carlo replications")
        p.add_argument("--seed", type=int, metavar="S", help="master seed")
        p.add_argument("--jobs", type=int, metavar="J", help="parallel replication workers")
        p.add_argument("--expansion-order", type=int, choices=(0, 1), help="manifold expansion order")
        p.add_argument("--out", metavar="DIR", help="output directory")

    for name, desc in (
        ("validate", "check model hypotheses"),
        ("simulate", "simulate truth and reduced system, report tracking"),
        ("filter", "run one full-vs-reduced filter replication"),
        ("sweep", "Monte Carlo MSE over epsilon and x~(0) grids"),
    ):
        add_common(sub.add_parser(name, help=desc))
    return parser


def _config_from_args(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.particles is not None:
        overrides["n_particles"] = args.particles
    if args.substeps is not None:
        overrides["m_sub"] = args.substeps
    if args.dt is not None:
        overrides["dt_coarse"] = args.dt
    if args.horizon is not None:
        overrides["t_end"] = args.horizon
    if args.x0 is not None:
        overrides["x0"] = args.x0
    if args.y0 is not None:
        overrides["y0"] = args.y0
    if args.reps is not None:
        overrides["n_replications"] = args.reps
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.expansion_order is not None:
        overrides["expansion_order"] = args.expansion_order
    if args.out is not None:
        overrides["output_dir"] = args.out
    if overrides:
        config = config.with_overrides(**overrides)
    return config


def _grids_from_args(args, config):
    epsilons = args.epsilon if args.epsilon else [config.epsilon]
    x_tildes = args.x_tilde0 if args.x_tilde0 else [config.x_tilde0]
    return epsilons, x_tildes


def _tag(value: float) -> str:
    return f"{value:g}".replace("-", "m")


def cmd_validate(args) -> int:
    config = _config_from_args(args)
    epsilons, _ = _grids_from_args(args, config)
    ok = True
    for eps in epsilons:
        report = validate_hypotheses(config.with_overrides(epsilon=eps).model(), probe_count=500, rng_seed=config.master_seed)
        print(f"epsilon = {eps:g}:")
        print(report.summary())
        ok = ok and report.all_passed
    return 0 if ok else 1


def cmd_simulate(args) -> int:
    config = _config_from_args(args)
    epsilons, x_tildes = _grids_from_args(args, config)
    out = Path(config.output_dir)
    for eps in epsilons:
        cfg = config.with_overrides(epsilon=eps)
        model = cfg.model()
        mcfg = cfg.manifold_config()
        dt = cfg.dt_fine
        ext = int(math.ceil(mcfg.S_trunc / dt)) + 1
        grid = generate_noise_grid(
            1, 1, cfg.t_end, dt, ext, cfg.master_seed, t_start=-mcfg.S_trunc * eps
        )
        env = build_environment(grid, model, mcfg)
        truth = simulate_full_system(
            model, grid, (np.array([cfg.x0]), np.array([cfg.y0])), t_start=0.0
        )
        engine = "tables" if model.trig_structure is not None else "quadrature"
        for x_t0 in x_tildes:
            reduced = simulate_reduced_system(
                model, grid, env, np.array([x_t0]), mcfg, t_start=0.0, engine=engine
            )
            res = tracking_error(truth, reduced, fit_window=5 * eps)
            t_report = min(0.5, cfg.t_end / 2.0)
            tail = res.distance[truth.times >= t_report]
            print(
                f"epsilon={eps:g} x_tilde0={x_t0:g}: "
                f"sup_{{t>={t_report:g}}} |z - z~| = {tail.max():.6g}, "
                f"transient rate = {res.fit_rate and round(res.fit_rate, 2)}"
            )
            p = emit_csv(reduced, out / f"reduced_eps{_tag(eps)}_x{_tag(x_t0)}.csv")
            print(f"wrote {p}")
        p = emit_csv(truth, out / f"truth_eps{_tag(eps)}.csv")
        print(f"wrote {p}")
    return 0


def cmd_filter(args) -> int:
    config = _config_from_args(args)
    epsilons, x_tildes = _grids_from_args(args, config)
    out = Path(config.output_dir)
    for eps in epsilons:
        for x_t0 in x_tildes:
            cfg = config.with_overrides(epsilon=eps, x_tilde0=x_t0)
            res = run_single_replication(cfg, 0)
            p = emit_csv((res.full, res.reduced), out / f"filter_eps{_tag(eps)}_x{_tag(x_t0)}.csv")
            sq = res.squared_difference
            print(
                f"epsilon={eps:g} x_tilde0={x_t0:g}: time-avg squared difference "
                f"= {sq.mean():.6g}; wrote {p}"
            )
    return 0


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    epsilons, x_tildes = _grids_from_args(args, config)
    out = Path(config.output_dir)
    grid = sweep_grid(config, epsilons, x_tildes)
    for eps in epsilons:
        for x_t0 in x_tildes:
            errors = grid[(eps, x_t0)]
            p = emit_csv(errors, out / f"mse_eps{_tag(eps)}_x{_tag(x_t0)}.csv")
            print(
                f"epsilon={eps:g} x_tilde0={x_t0:g}: time_avg_mse = "
                f"{errors.time_avg_mse:.6g} over {errors.n_replications} replications"
                + (f" (failed: {list(errors.failed)})" if errors.failed else "")
                + f"; wrote {p}"
            )
    return 0


def cli_main(argv=None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    handler = {
        "validate": cmd_validate,
        "simulate": cmd_simulate,
        "filter": cmd_filter,
        "sweep": cmd_sweep,
    }[args.command]
    try:
        return handler(args)
    except SFFilterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(cli_main())
