"""Slow-fast SDE simulation, random slow-manifold reduction, and filtering."""

from .errors import (
    ConvergenceError,
    DegenerateEnsembleError,
    GridCoverageError,
    NumericalBlowupError,
    ParameterError,
    SFFilterError,
    UnsupportedModelError,
)
from .sde import (
    NoiseGrid,
    SlowFastModel,
    Trajectory,
    TrigStructure,
    ValidationReport,
    euler_maruyama_step,
    generate_noise_grid,
    make_trig_model,
    ou_exact_step,
    simulate_full_system,
    validate_hypotheses,
)
from .manifold import (
    EnvironmentPaths,
    ManifoldConfig,
    build_environment,
    compute_H0,
    compute_H1,
    compute_Heps,
    sample_eta_path,
    sample_xi_path,
    simulate_reduced_system,
    tracking_error,
)
from .filtering import (
    FilterParams,
    FilterSeries,
    ObservationPath,
    ParticleEnsemble,
    deterministic_resample,
    estimate,
    generate_observations,
    kalman_bucy_reference,
    pf_init,
    pf_propagate,
    pf_weight_update,
    prob_metric_d,
    run_filter,
)
from .experiment import (
    ErrorSeries,
    ExperimentConfig,
    emit_csv,
    emit_plot_data,
    monte_carlo_mse,
    run_single_replication,
)

__version__ = "0.1.0"
