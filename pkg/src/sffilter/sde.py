"""Slow-fast SDE engine: seeded noise grids, model container, integrators.

The system integrated here is the two-time-scale Ito system

    dx = (A x + f(x, y)) dt + sigma1 dV,
    dy = (1/eps) (B y + g(x, y)) dt + (sigma2 / sqrt(eps)) dW,

with V, W independent Brownian motions and eps << 1 the time-scale ratio.
A third independent Brownian motion U drives the observation channel used
by the filtering module. All three are realised as increment arrays on one
uniform fine grid (`NoiseGrid`), so that every consumer (full system,
reduced system, environment processes, observations) is driven pathwise by
the same realisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import GridCoverageError, NumericalBlowupError, ParameterError, UnsupportedModelError
from . import rng as _rng

__all__ = [
    "NoiseGrid",
    "SlowFastModel",
    "Trajectory",
    "TrigStructure",
    "HypothesisCheck",
    "ValidationReport",
    "generate_noise_grid",
    "validate_hypotheses",
    "euler_maruyama_step",
    "simulate_full_system",
    "ou_exact_step",
    "make_trig_model",
]

# Explicit Euler on the 1/eps drift is stable only for dt << eps; reject
# anything looser than dt <= eps/10 before a long run melts down.
STIFFNESS_FACTOR = 10.0

_REL_TOL = 1e-9


def _grid_count(span: float, dt: float) -> int:
    k = span / dt
    k_round = round(k)
    if k_round < 1 or abs(k - k_round) > _REL_TOL * max(1.0, abs(k)):
        raise ParameterError(
            f"horizon {span!r} is not an integer multiple of dt_fine {dt!r}"
        )
    return int(k_round)


@dataclass(frozen=True)
class NoiseGrid:
    """Brownian increments for V, W, U on a uniform fine grid.

    `n_steps` counts increments including `future_extension` trailing steps;
    the usable horizon ends at ``t0 + (n_steps - future_extension) * dt_fine``.
    The extension exists because the stationary environment process of the
    slow auxiliary equation integrates *future* V-noise.
    """

    t0: float
    dt_fine: float
    n_steps: int
    dV: np.ndarray
    dW: np.ndarray
    dU: np.ndarray
    seed: int
    future_extension: int

    @property
    def n_dim(self) -> int:
        return self.dV.shape[1]

    @property
    def m_dim(self) -> int:
        return self.dW.shape[1]

    @property
    def t_end(self) -> float:
        """End of the usable (non-extension) horizon."""
        return self.t0 + (self.n_steps - self.future_extension) * self.dt_fine

    @property
    def times(self) -> np.ndarray:
        """All grid times, including the extension tail."""
        return self.t0 + self.dt_fine * np.arange(self.n_steps + 1)

    def index_at(self, t: float) -> int:
        """Grid index of time `t`; `t` must sit on the grid."""
        k = (t - self.t0) / self.dt_fine
        k_round = round(k)
        if abs(k - k_round) > 1e-6 or not (0 <= k_round <= self.n_steps):
            raise GridCoverageError(f"time {t!r} is not on the grid [{self.t0}, {self.times[-1]}]")
        return int(k_round)


def generate_noise_grid(
    n: int,
    m: int,
    t_end: float,
    dt_fine: float,
    future_ext: int,
    seed: int,
    t_start: float = 0.0,
) -> NoiseGrid:
    """Draw the V/W/U increment arrays from three independent seeded streams.

    Covers [t_start, t_end] plus `future_ext` extra steps. Increments are
    i.i.d. N(0, dt_fine) per coordinate; identical arguments reproduce
    bit-identical arrays.
    """
    if dt_fine <= 0:
        raise ParameterError(f"dt_fine must be positive, got {dt_fine}")
    if t_end <= t_start:
        raise ParameterError(f"empty horizon: t_end={t_end} <= t_start={t_start}")
    if future_ext < 0:
        raise ParameterError(f"future_ext must be >= 0, got {future_ext}")
    n_main = _grid_count(t_end - t_start, dt_fine)
    n_steps = n_main + int(future_ext)
    root = math.sqrt(dt_fine)
    dV = _rng.stream(seed, _rng.ROLE_NOISE_V).standard_normal((n_steps, n)) * root
    dW = _rng.stream(seed, _rng.ROLE_NOISE_W).standard_normal((n_steps, m)) * root
    dU = _rng.stream(seed, _rng.ROLE_NOISE_U).standard_normal(n_steps) * root
    return NoiseGrid(
        t0=float(t_start),
        dt_fine=float(dt_fine),
        n_steps=n_steps,
        dV=dV,
        dW=dW,
        dU=dU,
        seed=int(seed),
        future_extension=int(future_ext),
    )


@dataclass(frozen=True)
class TrigStructure:
    """Marks the benchmark drift shape f = f_amp*sin(y), g = g_amp*cos(x).

    Scalar slow/fast models with this structure get a fast separable
    evaluation of the manifold inside the reduced particle filter; the
    generic quadrature path stays available as the reference.
    """

    f_amp: float
    g_amp: float


@dataclass(frozen=True)
class SlowFastModel:
    """Coefficients, interaction functions, and declared hypothesis constants.

    `f`, `g` must broadcast over leading axes: inputs shaped (..., n) and
    (..., m) produce (..., n) / (..., m). The partial derivatives `g_x`,
    `g_y` return Jacobians shaped (..., m, n) and (..., m, m); they are only
    needed by the first-order manifold expansion.

    Hypothesis constants (gamma1, gamma2, L, C_f, C_g) are *declared*, not
    derived; `validate_hypotheses` probes whether the callables live up to
    them. `alpha` is the manifold decay rate used in tracking-rate checks
    and must satisfy 0 < alpha and gamma2 - alpha > L.
    """

    n: int
    m: int
    A: np.ndarray
    B: np.ndarray
    sigma1: float
    sigma2: float
    epsilon: float
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    g_x: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    g_y: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    gamma1: float = 1.0
    gamma2: float = 1.0
    L: float = 0.25
    C_f: float = 0.25
    C_g: float = 0.25
    alpha: float = 0.5
    g_depends_on_y: bool = False
    trig_structure: Optional[TrigStructure] = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if A.shape != (self.n, self.n):
            raise ParameterError(f"A must be {self.n}x{self.n}, got {A.shape}")
        if B.shape != (self.m, self.m):
            raise ParameterError(f"B must be {self.m}x{self.m}, got {B.shape}")
        if self.epsilon <= 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")

    # -- structural helpers used by the manifold machinery -----------------

    def b_diag(self) -> np.ndarray:
        """Diagonal of B, requiring B diagonal with strictly negative entries."""
        off = self.B - np.diag(np.diag(self.B))
        if np.any(np.abs(off) > 1e-14 * max(1.0, float(np.abs(self.B).max()))):
            raise UnsupportedModelError("B must be diagonal for exact fast-variable sampling")
        d = np.diag(self.B)
        if np.any(d >= 0):
            raise UnsupportedModelError("diagonal of B must be strictly negative")
        return d

    def a_diag_positive(self) -> np.ndarray:
        """Diagonal of A, requiring A diagonal with strictly positive entries.

        The stationary environment of the slow auxiliary equation is a
        forward-in-time integral, which exists in this class.
        """
        off = self.A - np.diag(np.diag(self.A))
        if np.any(np.abs(off) > 1e-14 * max(1.0, float(np.abs(self.A).max()))):
            raise UnsupportedModelError("A must be diagonal for the stationary environment path")
        d = np.diag(self.A)
        if np.any(d <= 0):
            raise UnsupportedModelError("diagonal of A must be strictly positive")
        return d


def make_trig_model(
    epsilon: float,
    sigma1: float = 0.01,
    sigma2: float = 1.0,
    f_amp: float = 0.25,
    g_amp: float = 0.25,
    a: float = 1.0,
    b: float = -1.0,
) -> SlowFastModel:
    """Scalar benchmark system: f = f_amp*sin(y), g = g_amp*cos(x).

    Defaults give A = 1, B = -1, sigma1 = 0.01, sigma2 = 1 and hypothesis
    constants gamma1 = gamma2 = 1, L = C_f = C_g = 1/4.
    """

    def f(x, y):
        return f_amp * np.sin(y)

    def g(x, y):
        return g_amp * np.cos(x)

    def g_x(x, y):
        return (-g_amp * np.sin(x))[..., None]

    def g_y(x, y):
        return np.zeros(x.shape[:-1] + (1, 1))

    return SlowFastModel(
        n=1,
        m=1,
        A=np.array([[a]]),
        B=np.array([[b]]),
        sigma1=sigma1,
        sigma2=sigma2,
        epsilon=epsilon,
        f=f,
        g=g,
        g_x=g_x,
        g_y=g_y,
        gamma1=abs(a),
        gamma2=abs(b),
        L=max(abs(f_amp), abs(g_amp)),
        C_f=abs(f_amp),
        C_g=abs(g_amp),
        alpha=0.5,
        g_depends_on_y=False,
        trig_structure=TrigStructure(f_amp=f_amp, g_amp=g_amp),
    )


@dataclass(frozen=True)
class Trajectory:
    """States on a uniform time grid; x is (N+1, n), y is (N+1, m)."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.x) or len(self.times) != len(self.y):
            raise ParameterError("times and states must have equal length")
        if len(self.times) >= 2:
            steps = np.diff(self.times)
            if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps[0]:
                raise ParameterError("times must be strictly increasing and uniform")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


# ---------------------------------------------------------------------------
# hypothesis validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list:
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            lines.append(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
        return "\n".join(lines)


def validate_hypotheses(model: SlowFastModel, probe_count: int = 200, rng_seed: int = 0) -> ValidationReport:
    """Probe the structural hypotheses of the slow-fast system.

    Checks, in order: operator norm of A against gamma1 (plus hyperbolicity
    of A), dissipativity of B on random unit vectors, boundedness of f and g
    against C_f/C_g and Lipschitz ratios against L on random point pairs,
    the spectral-gap condition gamma2 > L, and the declared alpha. Failures
    are reported, never raised.
    """
    if probe_count < 1:
        raise ParameterError("probe_count must be >= 1")
    gen = _rng.stream(rng_seed, _rng.ROLE_PROBE)
    checks = []
    tol = 1e-9

    a_norm = float(np.linalg.norm(model.A, 2))
    checks.append(
        HypothesisCheck(
            "H1_operator_norm",
            a_norm <= model.gamma1 + tol,
            f"||A|| = {a_norm:.6g} vs gamma1 = {model.gamma1:.6g}",
        )
    )
    eig_re = np.real(np.linalg.eigvals(model.A))
    min_re = float(np.min(np.abs(eig_re)))
    checks.append(
        HypothesisCheck(
            "H1_hyperbolic",
            min_re > tol,
            f"min |Re eig(A)| = {min_re:.6g}",
        )
    )

    ys = gen.standard_normal((probe_count, model.m))
    ys /= np.linalg.norm(ys, axis=1, keepdims=True)
    quad = np.einsum("ki,ij,kj->k", ys, model.B, ys)
    worst = float(np.max(quad))
    checks.append(
        HypothesisCheck(
            "H2_dissipative",
            bool(np.all(quad <= -model.gamma2 + tol)),
            f"max (By,y) on unit sphere probes = {worst:.6g} vs -gamma2 = {-model.gamma2:.6g}",
        )
    )

    # Point cloud mixing moderate and wide scales so boundedness is probed
    # away from the origin as well.
    scales = np.where(gen.random(probe_count) < 0.5, 3.0, 30.0)[:, None]
    xs1 = gen.standard_normal((probe_count, model.n)) * scales
    ys1 = gen.standard_normal((probe_count, model.m)) * scales
    xs2 = gen.standard_normal((probe_count, model.n)) * scales
    ys2 = gen.standard_normal((probe_count, model.m)) * scales
    f1, f2 = model.f(xs1, ys1), model.f(xs2, ys2)
    g1, g2 = model.g(xs1, ys1), model.g(xs2, ys2)

    sup_f = float(max(np.abs(f1).max(), np.abs(f2).max()))
    sup_g = float(max(np.abs(g1).max(), np.abs(g2).max()))
    checks.append(
        HypothesisCheck(
            "H5_bounded",
            sup_f <= model.C_f + tol and sup_g <= model.C_g + tol,
            f"sampled sup|f| = {sup_f:.6g} (C_f = {model.C_f:.6g}), sup|g| = {sup_g:.6g} (C_g = {model.C_g:.6g})",
        )
    )

    denom = np.linalg.norm(xs1 - xs2, axis=1) + np.linalg.norm(ys1 - ys2, axis=1)
    denom = np.where(denom == 0, np.inf, denom)
    lip_f = float(np.max(np.linalg.norm(f1 - f2, axis=-1) / denom))
    lip_g = float(np.max(np.linalg.norm(g1 - g2, axis=-1) / denom))
    checks.append(
        HypothesisCheck(
            "H3_lipschitz",
            lip_f <= model.L + tol and lip_g <= model.L + tol,
            f"sampled Lip(f) = {lip_f:.6g}, Lip(g) = {lip_g:.6g} vs L = {model.L:.6g}",
        )
    )

    checks.append(
        HypothesisCheck(
            "H4_spectral_gap",
            model.gamma2 > model.L,
            f"gamma2 = {model.gamma2:.6g} vs L = {model.L:.6g}",
        )
    )
    checks.append(
        HypothesisCheck(
            "alpha_condition",
            model.alpha > 0 and model.gamma2 - model.alpha > model.L,
            f"alpha = {model.alpha:.6g}, gamma2 - alpha = {model.gamma2 - model.alpha:.6g} vs L = {model.L:.6g}",
        )
    )
    return ValidationReport(checks=tuple(checks))


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------


def euler_maruyama_step(state, model: SlowFastModel, dV_k, dW_k, dt: float):
    """One Euler-Maruyama step of the coupled system; returns (x', y')."""
    if dt <= 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    x, y = state
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x_new = x + (x @ model.A.T + model.f(x, y)) * dt + model.sigma1 * dV_k
    y_new = (
        y
        + (y @ model.B.T + model.g(x, y)) * (dt / model.epsilon)
        + (model.sigma2 / math.sqrt(model.epsilon)) * dW_k
    )
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(y_new))):
        raise NumericalBlowupError("non-finite state after Euler-Maruyama step")
    return x_new, y_new


def simulate_full_system(
    model: SlowFastModel,
    noise: NoiseGrid,
    init,
    t_start: Optional[float] = None,
    t_end: Optional[float] = None,
) -> Trajectory:
    """Integrate the full slow-fast system over the grid's usable horizon.

    Both systems' pathwise comparisons rely on consuming increments from the
    same `NoiseGrid`, so integration is locked to grid indices. `t_start`
    defaults to the grid origin; the experiment pipeline passes 0.0 when the
    grid carries a negative warm-up segment.
    """
    if noise.dt_fine > model.epsilon / STIFFNESS_FACTOR:
        raise ParameterError(
            f"dt_fine = {noise.dt_fine:g} too coarse for epsilon = {model.epsilon:g}; "
            f"need dt_fine <= epsilon/{STIFFNESS_FACTOR:g}"
        )
    t0 = noise.t0 if t_start is None else t_start
    t1 = noise.t_end if t_end is None else t_end
    k0 = noise.index_at(t0)
    k1 = noise.index_at(t1)
    if k1 <= k0:
        raise ParameterError("empty integration window")
    if k1 > noise.n_steps - noise.future_extension:
        raise GridCoverageError("integration window extends into the grid's future extension")

    x0, y0 = init
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    y = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ParameterError("initial state must be finite")

    n_out = k1 - k0
    xs = np.empty((n_out + 1, model.n))
    ys = np.empty((n_out + 1, model.m))
    xs[0], ys[0] = x, y
    dt = noise.dt_fine
    for j, k in enumerate(range(k0, k1)):
        try:
            x, y = euler_maruyama_step((x, y), model, noise.dV[k], noise.dW[k], dt)
        except NumericalBlowupError as exc:
            raise NumericalBlowupError(
                f"blow-up at step {k} (t = {noise.t0 + k * dt:.6g})", step_index=k
            ) from exc
        xs[j + 1], ys[j + 1] = x, y
    times = noise.t0 + dt * np.arange(k0, k1 + 1)
    return Trajectory(times=times, x=xs, y=ys)


def ou_exact_step(xi, dt: float, model: SlowFastModel, gauss) -> np.ndarray:
    """Exact one-step transition of the fast auxiliary OU process.

    Per coordinate i with rate |B_ii|/eps:

        xi' = exp(-|B_ii| dt / eps) xi
              + gauss_i * sigma2 * sqrt((1 - exp(-2 |B_ii| dt / eps)) / (2 |B_ii|))

    Only diagonal negative-definite B is supported; the exact transition is
    what removes stiffness from the fast sampling at small eps.
    """
    if dt < 0:
        raise ParameterError(f"dt must be >= 0, got {dt}")
    d = model.b_diag()
    rate = np.abs(d) / model.epsilon
    decay = np.exp(-rate * dt)
    scale = model.sigma2 * np.sqrt((1.0 - decay**2) / (2.0 * np.abs(d)))
    return decay * np.asarray(xi, dtype=float) + np.asarray(gauss, dtype=float) * scale
