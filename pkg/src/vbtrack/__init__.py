"""Multi-target tracking with PMHT, variational PMHT and PDAF baselines."""
from .bench import ExperimentSpec, RunResult, run_experiment, summarize
from .kalman import filter_smooth, kf_update, predict, rts_smooth_step, weighted_info_update
from .metrics import OspaParams, TrackStatus, detect_track_loss, ospa
from .models import (
    ConfigurationError,
    GaussianBelief,
    LinearDynamics,
    Measurement,
    Region,
    Scan,
    SensorModel,
    SingularModelError,
    TrackingError,
    clutter_log_density,
    constant_velocity,
    gaussian_log_density,
    position_sensor,
    state_vector,
)
from .pdaf import PdafConfig, pdaf_step, pdaf_update
from .pmht import PmhtState, TrackerConfig, pmht_batch_iterate, pmht_estep, pmht_likelihood
from .sim import ScenarioConfig, ScenarioTruth, generate_scenario, read_scenario, write_scenario
from .vpmht import (
    DirichletWeights,
    ResponsibilityMatrix,
    VpmhtResult,
    dirichlet_update,
    elbo,
    expected_log_pi,
    log_rho,
    responsibilities,
    vpmht_batch_iterate,
)

__version__ = "0.1.0"
