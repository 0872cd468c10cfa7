"""Experiment orchestration: config, replications, Monte Carlo error, CSV.

One replication is the seeded pipeline

    noise grid -> truth trajectory -> observation path
               -> full-flavor filter and reduced-flavor filter
               -> per-time squared difference of the two estimates,

with every stream derived deterministically from (master_seed, replication).
`monte_carlo_mse` averages the squared differences across replications and
reports Monte Carlo standard errors; a failed replication is excluded with a
warning rather than aborting the sweep. All emitted CSV is deterministic,
full-precision text keyed only by the config and master seed.
"""

from __future__ import annotations

import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ParameterError, SFFilterError
from .sde import SlowFastModel, Trajectory, generate_noise_grid, make_trig_model, simulate_full_system
from .manifold import (
    ManifoldConfig,
    TrackingResult,
    build_environment,
    simulate_reduced_system,
    tracking_error,
)
from .filtering import (
    FilterParams,
    FilterSeries,
    dirac_prior,
    generate_observations,
    prob_metric_d,
    run_filter,
)
from . import rng as _rng

__all__ = [
    "ExperimentConfig",
    "ErrorSeries",
    "ReplicationResult",
    "run_single_replication",
    "monte_carlo_mse",
    "emit_csv",
    "emit_plot_data",
    "PHI_REGISTRY",
    "H_REGISTRY",
]


PHI_REGISTRY: dict = {
    "bump": lambda x: 10.0 * x[..., 0] / (1.0 + x[..., 0] ** 2),
    "identity_clipped": lambda x: np.clip(x[..., 0], -5.0, 5.0),
    "sin": lambda x: np.sin(x[..., 0]),
    "indicator": lambda x: ((x[..., 0] >= -1.0) & (x[..., 0] <= 1.0)).astype(float),
}

H_REGISTRY: dict = {
    "arctan": lambda x, y: np.arctan(x[..., 0]),
    "zero": lambda x, y: np.zeros(np.asarray(x).shape[:-1]),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat, text-serialisable experiment description.

    Model fields cover the scalar benchmark class (trig drifts); defaults
    reproduce the reference setup: 200 particles, 400 substeps per coarse
    step of 0.02 up to T = 8, unit initial values, phi = 10x/(1+x^2).
    """

    # model
    a: float = 1.0
    b: float = -1.0
    sigma1: float = 0.01
    sigma2: float = 1.0
    f_amp: float = 0.25
    g_amp: float = 0.25
    epsilon: float = 0.01
    # grid / filter
    n_particles: int = 200
    m_sub: int = 400
    dt_coarse: float = 0.02
    t_end: float = 8.0
    x0: float = 1.0
    y0: float = 1.0
    x_tilde0: float = 1.0
    n_replications: int = 20
    master_seed: int = 42
    # manifold
    S_trunc: float = 20.0
    h_quad: float = 0.02
    expansion_order: int = 1
    picard_tol: float = 1e-8
    picard_max_iter: int = 100
    shared_xi: bool = False
    reduced_engine: str = "auto"
    # experiment
    phi: str = "bump"
    h: str = "arctan"
    output_dir: str = "out"
    jobs: int = 1
    snapshot_times: tuple = ()
    tracking: bool = False

    def __post_init__(self):
        if self.n_replications < 1:
            raise ParameterError("n_replications must be >= 1")
        if self.dt_fine > self.epsilon / 10.0 + 1e-15:
            raise ParameterError(
                f"dt_coarse/m_sub = {self.dt_fine:g} violates the stiffness guard "
                f"epsilon/10 = {self.epsilon / 10.0:g}"
            )
        if self.phi not in PHI_REGISTRY:
            raise ParameterError(f"unknown phi {self.phi!r}; known: {sorted(PHI_REGISTRY)}")
        if self.h not in H_REGISTRY:
            raise ParameterError(f"unknown h {self.h!r}; known: {sorted(H_REGISTRY)}")

    @property
    def dt_fine(self) -> float:
        return self.dt_coarse / self.m_sub

    def model(self) -> SlowFastModel:
        return make_trig_model(
            self.epsilon,
            sigma1=self.sigma1,
            sigma2=self.sigma2,
            f_amp=self.f_amp,
            g_amp=self.g_amp,
            a=self.a,
            b=self.b,
        )

    def manifold_config(self) -> ManifoldConfig:
        return ManifoldConfig(
            S_trunc=self.S_trunc,
            h_quad=self.h_quad,
            expansion_order=self.expansion_order,
            picard_tol=self.picard_tol,
            picard_max_iter=self.picard_max_iter,
        )

    def phi_fn(self) -> Callable:
        return PHI_REGISTRY[self.phi]

    def h_fn(self) -> Callable:
        return H_REGISTRY[self.h]

    # -- text round trip ----------------------------------------------------

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """Parse a flat key=value file ('#' starts a comment)."""
        values = {}
        text = Path(path).read_text()
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{ln}: expected key=value, got {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key] = val
        return cls().with_overrides(**values)

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        """Replace fields, coercing strings to the field types."""
        spec = {f.name: f for f in fields(self)}
        parsed = {}
        for key, val in kwargs.items():
            if key not in spec:
                raise ParameterError(f"unknown config key {key!r}")
            if isinstance(val, str):
                val = _coerce(val, spec[key].type, key)
            parsed[key] = val
        return replace(self, **parsed)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(t)) for t in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


def _coerce(val: str, ftype, key: str):
    ftype = str(ftype)
    try:
        if "bool" in ftype:
            if val.lower() in ("1", "true", "yes"):
                return True
            if val.lower() in ("0", "false", "no"):
                return False
            raise ValueError(val)
        if "int" in ftype:
            return int(val)
        if "float" in ftype:
            return float(val)
        if "tuple" in ftype:
            return tuple(float(p) for p in val.split(",") if p.strip()) if val else ()
        return val
    except ValueError as exc:
        raise ParameterError(f"cannot parse config value {key}={val!r}") from exc


# ---------------------------------------------------------------------------
# single replication
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationResult:
    full: FilterSeries
    reduced: FilterSeries
    tracking: Optional[TrackingResult]

    @property
    def squared_difference(self) -> np.ndarray:
        return (self.full.estimates - self.reduced.estimates) ** 2


def run_single_replication(config: ExperimentConfig, rep_index: int) -> ReplicationResult:
    """Truth, observations, and both filters for one seeded replication.

    The two filters share the observation path and the same filter seed, so
    their slow-increment streams coincide; the reduced filter's environment
    and per-particle xi use streams of their own.
    """
    model = config.model()
    mcfg = config.manifold_config()
    dt = config.dt_fine
    t_lead = mcfg.S_trunc * model.epsilon
    a_min = float(np.min(model.a_diag_positive()))
    ext = int(math.ceil(mcfg.S_trunc / a_min / dt)) + 1

    grid_seed = _rng.derived_seed(config.master_seed, _rng.ROLE_REPLICATION, rep_index, 1)
    filter_seed = _rng.derived_seed(config.master_seed, _rng.ROLE_REPLICATION, rep_index, 2)

    grid = generate_noise_grid(
        model.n, model.m, config.t_end, dt, ext, grid_seed, t_start=-t_lead
    )
    truth = simulate_full_system(
        model, grid, (np.array([config.x0]), np.array([config.y0])), t_start=0.0
    )
    h = config.h_fn()
    obs = generate_observations(truth, h, grid.dU[grid.index_at(0.0):])

    params = FilterParams(
        n_particles=config.n_particles,
        m_sub=config.m_sub,
        dt_coarse=config.dt_coarse,
        t_end=config.t_end,
        seed=filter_seed,
        shared_xi=config.shared_xi,
        snapshot_times=tuple(config.snapshot_times),
    )
    phi = config.phi_fn()
    full = run_filter(
        "full", model, obs, params, h, phi, dirac_prior(config.x0, config.y0)
    )
    reduced = run_filter(
        "reduced", model, obs, params, h, phi, dirac_prior(config.x_tilde0),
        mconfig=mcfg,
    )

    tracking = None
    if config.tracking:
        env = build_environment(grid, model, mcfg)
        engine = "tables" if model.trig_structure is not None else "quadrature"
        red_truth = simulate_reduced_system(
            model, grid, env, np.array([config.x_tilde0]), mcfg,
            t_start=0.0, engine=engine,
        )
        tracking = tracking_error(truth, red_truth, fit_window=5 * model.epsilon)

    return ReplicationResult(full=full, reduced=reduced, tracking=tracking)


# ---------------------------------------------------------------------------
# Monte Carlo aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorSeries:
    """Replication-averaged squared filter difference with standard errors."""

    times: np.ndarray
    mse: np.ndarray
    std_err: np.ndarray
    time_avg_mse: float
    n_replications: int
    failed: tuple = ()
    metric_means: dict = field(default_factory=dict)


def aggregate_error_series(times: np.ndarray, sq_diffs: list, failed=(), metric_means=None) -> ErrorSeries:
    """Average per-time squared differences over replications."""
    arr = np.asarray(sq_diffs, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ParameterError("need at least one replication to aggregate")
    mse = arr.mean(axis=0)
    if arr.shape[0] >= 2:
        std_err = arr.std(axis=0, ddof=1) / math.sqrt(arr.shape[0])
    else:
        std_err = np.zeros_like(mse)
    return ErrorSeries(
        times=np.asarray(times, float),
        mse=mse,
        std_err=std_err,
        time_avg_mse=float(mse.mean()),
        n_replications=arr.shape[0],
        failed=tuple(failed),
        metric_means=metric_means or {},
    )


def _grid_replication_task(args):
    """One replication shared across a grid of reduced initial values.

    The truth, observations, and full-flavor filter are computed once; each
    x~(0) gets its own reduced filter against the same observation path (and
    the same filter seed, so the comparisons ride common random numbers).
    """
    config, rep, x_tilde_grid = args
    model = config.model()
    mcfg = config.manifold_config()
    dt = config.dt_fine
    t_lead = mcfg.S_trunc * model.epsilon
    a_min = float(np.min(model.a_diag_positive()))
    ext = int(math.ceil(mcfg.S_trunc / a_min / dt)) + 1
    grid_seed = _rng.derived_seed(config.master_seed, _rng.ROLE_REPLICATION, rep, 1)
    filter_seed = _rng.derived_seed(config.master_seed, _rng.ROLE_REPLICATION, rep, 2)
    grid = generate_noise_grid(model.n, model.m, config.t_end, dt, ext, grid_seed, t_start=-t_lead)
    truth = simulate_full_system(
        model, grid, (np.array([config.x0]), np.array([config.y0])), t_start=0.0
    )
    h = config.h_fn()
    phi = config.phi_fn()
    obs = generate_observations(truth, h, grid.dU[grid.index_at(0.0):])
    params = FilterParams(
        n_particles=config.n_particles, m_sub=config.m_sub, dt_coarse=config.dt_coarse,
        t_end=config.t_end, seed=filter_seed, shared_xi=config.shared_xi,
        snapshot_times=tuple(config.snapshot_times),
    )
    full = run_filter("full", model, obs, params, h, phi, dirac_prior(config.x0, config.y0))

    out = {}
    for x_t0 in x_tilde_grid:
        reduced = run_filter(
            "reduced", model, obs, params, h, phi, dirac_prior(float(x_t0)), mconfig=mcfg
        )
        metric = {}
        for t in config.snapshot_times:
            if t in full.snapshots and t in reduced.snapshots:
                metric[t] = prob_metric_d(full.snapshots[t], reduced.snapshots[t]).value
        out[float(x_t0)] = ((full.estimates - reduced.estimates) ** 2, metric)
    return rep, full.times, out


def sweep_grid(
    config: ExperimentConfig,
    epsilons,
    x_tilde0s,
    progress: Optional[Callable] = None,
) -> dict:
    """Monte Carlo error series for every (epsilon, x~(0)) combination.

    Shares the truth and full filter across the x~(0) grid within each
    replication. Returns {(epsilon, x_tilde0): ErrorSeries}.
    """
    tasks = []
    for eps in epsilons:
        cfg = replace(config, epsilon=float(eps))
        for rep in range(config.n_replications):
            tasks.append((cfg, rep, tuple(float(x) for x in x_tilde0s)))

    results: dict = {}
    failures: dict = {}

    def on_done(task, payload):
        cfg, rep, _ = task
        rep_idx, times, by_x = payload
        for x_t0, (sq, metric) in by_x.items():
            results.setdefault((cfg.epsilon, x_t0), []).append((rep_idx, times, sq, metric))
        if progress is not None:
            progress(cfg.epsilon, rep)

    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = [(t, pool.submit(_grid_replication_task, t)) for t in tasks]
            for t, fut in futures:
                try:
                    on_done(t, fut.result())
                except SFFilterError as exc:
                    failures[(t[0].epsilon, t[1])] = str(exc)
                    print(f"warning: replication {t[1]} (epsilon={t[0].epsilon:g}) failed: {exc}", file=sys.stderr)
    else:
        for t in tasks:
            try:
                on_done(t, _grid_replication_task(t))
            except SFFilterError as exc:
                failures[(t[0].epsilon, t[1])] = str(exc)
                print(f"warning: replication {t[1]} (epsilon={t[0].epsilon:g}) failed: {exc}", file=sys.stderr)

    if not results:
        raise SFFilterError(f"all replications failed: {failures}")

    out = {}
    for key, rows in results.items():
        rows.sort(key=lambda r: r[0])
        times = rows[0][1]
        sq = [r[2] for r in rows]
        metric_means = {}
        for t in config.snapshot_times:
            vals = [r[3][t] for r in rows if t in r[3]]
            if vals:
                metric_means[t] = float(np.mean(vals))
        failed = tuple(rep for (eps_f, rep) in failures if eps_f == key[0])
        out[key] = aggregate_error_series(times, sq, failed=failed, metric_means=metric_means)
    return out


def monte_carlo_mse(config: ExperimentConfig, progress: Optional[Callable] = None) -> ErrorSeries:
    """E|pi_t(phi) - pi~_t(phi)|^2 over seeded replications.

    Replications run in a process pool when config.jobs > 1. A replication
    that raises is excluded with a warning on stderr and recorded in
    `failed`; if every replication fails the run errors out.
    """
    wrapped = None if progress is None else (lambda eps, rep: progress(rep))
    grid = sweep_grid(config, [config.epsilon], [config.x_tilde0], progress=wrapped)
    return grid[(config.epsilon, config.x_tilde0)]


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def emit_csv(series, path) -> Path:
    """Write one series in the documented CSV format (deterministic bytes).

    Accepts an ErrorSeries (`t,mse,std_err`), a Trajectory (`t,x1..,y1..`),
    a (full, reduced) FilterSeries pair (`t,pi_full,pi_reduced`), or a single
    FilterSeries (`t,pi_<flavor>`).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(series, ErrorSeries):
        rows = ["t,mse,std_err"]
        for t, m, s in zip(series.times, series.mse, series.std_err):
            rows.append(f"{_fmt(t)},{_fmt(m)},{_fmt(s)}")
    elif isinstance(series, Trajectory):
        n = series.x.shape[1]
        m = series.y.shape[1]
        head = ["t"] + [f"x{i+1}" for i in range(n)] + [f"y{i+1}" for i in range(m)]
        rows = [",".join(head)]
        for k, t in enumerate(series.times):
            vals = [t, *series.x[k], *series.y[k]]
            rows.append(",".join(_fmt(v) for v in vals))
    elif isinstance(series, tuple) and len(series) == 2 and all(isinstance(s, FilterSeries) for s in series):
        full, reduced = series
        if len(full.times) != len(reduced.times) or not np.allclose(full.times, reduced.times):
            raise ParameterError("filter series must share coarse times")
        rows = ["t,pi_full,pi_reduced"]
        for t, a_, b_ in zip(full.times, full.estimates, reduced.estimates):
            rows.append(f"{_fmt(t)},{_fmt(a_)},{_fmt(b_)}")
    elif isinstance(series, FilterSeries):
        rows = [f"t,pi_{series.flavor}"]
        for t, v in zip(series.times, series.estimates):
            rows.append(f"{_fmt(t)},{_fmt(v)}")
    else:
        raise ParameterError(f"cannot serialise {type(series).__name__}")
    path.write_text("\n".join(rows) + "\n")
    return path


def emit_plot_data(full: FilterSeries, reduced: FilterSeries, errors: ErrorSeries, base_path) -> list:
    """Paired plot-ready files: <base>_filters.csv and <base>_mse.csv."""
    if len(full.times) != len(errors.times) or not np.allclose(full.times, errors.times):
        raise ParameterError("filter and error series must share coarse times")
    base = Path(base_path)
    p1 = emit_csv((full, reduced), base.parent / (base.name + "_filters.csv"))
    p2 = emit_csv(errors, base.parent / (base.name + "_mse.csv"))
    return [p1, p2]
