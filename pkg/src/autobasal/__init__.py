"""Automated basal-insulin titration from closed-loop excitation data.

The pipeline this package implements, end to end:

1. sample a virtual patient cohort and screen it for plausibility
   (cohort),
2. excite each patient with a short closed-loop pump trial driven by an
   integrating controller on noisy CGM data (simulate),
3. fit the insulin-glucose model to the recorded trace by maximum
   likelihood over an extended Kalman filter (estimate),
4. convert the fitted parameters into a once-daily basal dose in closed
   form and simulate the injection days that follow (model, simulate),
5. score clinical outcomes and compare excitation scenarios (scenario).

Note on realism: the data-generating "truth" for every virtual patient
is the prediction model itself plus process noise, so estimation runs
under a correct model structure. Conclusions about estimator behavior
transfer to reality only up to that idealization.
"""

from . import _kernels
from ._kernels import backend_name, have_compiled
from .cohort import (
    Cohort,
    CohortError,
    PopulationConfig,
    ScreeningRules,
    ScreenResult,
    VirtualPatient,
    generate_cohort,
    sample_patient,
    screen,
    write_cohort_csv,
)
from .config import ConfigError, RunConfig
from .estimate import (
    EstimationResult,
    EstimatorConfig,
    FilterDiagnostics,
    FilterError,
    FilterState,
    FilterStepRecord,
    default_filter_init,
    estimate_parameters,
    measurement_update,
    neg_log_likelihood,
    run_filter,
    time_update,
)
from .model import (
    MINUTES_PER_DAY,
    POPULATION,
    DoseResult,
    PredictionParams,
    daily_dose,
    dose_required,
    fasting_glucose,
    fasting_state,
    jacobian,
    rhs,
    steady_state,
    steady_state_glucose,
)
from .figures import render_scenario_figure, write_scenario_figure
from .scenario import (
    ClinicalTargets,
    OutcomeMetrics,
    PatientResult,
    PipelineConfig,
    ScenarioError,
    ScenarioResult,
    ScenarioSpec,
    ScenarioSummary,
    TrendReport,
    compare_scenarios,
    compute_metrics,
    run_patient,
    run_scenario,
    write_scenario_csv,
    write_summary_csv,
)
from .simulate import (
    ControllerConfig,
    GlucoseTrace,
    InjectionParams,
    SimGrid,
    SimulationError,
    cgm_sample,
    controller_step,
    em_step,
    read_trace_csv,
    run_closed_loop,
    run_injection_phase,
    total_insulin,
    write_trace_csv,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
