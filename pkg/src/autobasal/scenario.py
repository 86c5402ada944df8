"""Scenario orchestration: excite, estimate, dose, inject, score.

A scenario names one excitation recipe (closed-loop duration and
controller gain multiplier) followed by a fixed number of injection
days at the estimated dose. Running a scenario maps the per-patient
pipeline over a cohort, optionally in parallel, and aggregates clinical
outcome metrics; comparing the three canonical scenarios yields the
ordinal trend verdict that is this package's headline result.
"""

import csv
import math
import statistics
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cohort import Cohort, VirtualPatient
from .estimate import EstimationResult, EstimatorConfig, estimate_parameters
from .model import daily_dose, dose_required
from .simulate import (
    ControllerConfig,
    GlucoseTrace,
    InjectionParams,
    SimGrid,
    _fmt,
    run_closed_loop,
    run_injection_phase,
    total_insulin,
)

# An excitation phase that never opened the pump cannot inform the
# estimator; scenarios flag such patients instead of failing them.
LOW_EXCITATION_U = 1e-9


class ScenarioError(RuntimeError):
    """A per-patient pipeline failure, annotated with the patient id."""


@dataclass(frozen=True)
class ScenarioSpec:
    """One excitation recipe.

    The canonical set is 48 h at base gain, 24 h at base gain, and 24 h
    at triple gain; free-form combinations are allowed.
    """

    name: str
    closed_loop_hours: float
    gain_multiplier: float = 1.0
    injection_days: int = 5
    y_ref: float = 5.8  # mmol/L

    def validate(self) -> "ScenarioSpec":
        if not self.name:
            raise ValueError("scenario name must be nonempty")
        if self.closed_loop_hours <= 0:
            raise ValueError(f"scenario {self.name}: closed_loop_hours must be positive")
        if self.gain_multiplier <= 0:
            raise ValueError(f"scenario {self.name}: gain_multiplier must be positive")
        if self.injection_days < 1:
            raise ValueError(f"scenario {self.name}: injection_days must be >= 1")
        if self.y_ref <= 0:
            raise ValueError(f"scenario {self.name}: y_ref must be positive")
        return self


@dataclass(frozen=True)
class ClinicalTargets:
    """Glucose thresholds and the first-day insulin safety bound."""

    y_ref: float = 5.8        # mmol/L
    range_low: float = 4.4    # mmol/L
    range_high: float = 7.2   # mmol/L
    hypo: float = 3.9         # mmol/L
    first_day_insulin_cap_u_per_kg: float = 0.2


@dataclass(frozen=True)
class PipelineConfig:
    """Everything run_patient needs besides the patient and the spec."""

    controller: ControllerConfig = field(default_factory=ControllerConfig)
    grid: SimGrid = field(default_factory=SimGrid)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    injection: InjectionParams = field(default_factory=InjectionParams)
    targets: ClinicalTargets = field(default_factory=ClinicalTargets)


@dataclass(frozen=True)
class OutcomeMetrics:
    """Clinical outcomes of one patient's injection phase."""

    min_glucose_injection_phase: float
    time_in_range_fraction: float
    hypo_flag: bool
    dose_est: float
    dose_true: float
    dose_rel_error: float


def compute_metrics(
    injection_trace: GlucoseTrace,
    dose_est: float,
    dose_true: float,
    targets: ClinicalTargets,
) -> OutcomeMetrics:
    """Score an injection phase against the clinical targets.

    All injection-phase samples count, at the trace's own cadence.
    """
    g = injection_trace.glucose
    if g.size == 0:
        raise ValueError("injection trace is empty")
    g_min = float(g.min())
    in_range = float(np.mean((g >= targets.range_low) & (g <= targets.range_high)))
    return OutcomeMetrics(
        min_glucose_injection_phase=g_min,
        time_in_range_fraction=in_range,
        hypo_flag=g_min < targets.hypo,
        dose_est=dose_est,
        dose_true=dose_true,
        dose_rel_error=(dose_est - dose_true) / dose_true,
    )


@dataclass(frozen=True, eq=False)
class PatientResult:
    """Outcome of one patient's pipeline run, failed or not."""

    patient_id: int
    scenario: str
    error: str | None = None
    estimation: EstimationResult | None = None
    metrics: OutcomeMetrics | None = None
    low_excitation: bool = False
    first_day_insulin_u: float | None = None
    closed_loop: GlucoseTrace | None = None
    injection: GlucoseTrace | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_patient(
    patient: VirtualPatient,
    spec: ScenarioSpec,
    pipeline: PipelineConfig | None = None,
    backend=None,
) -> PatientResult:
    """Closed loop, fit, dose, injection days, metrics — for one patient.

    The patient's seed opens one random stream that feeds the closed
    loop and then the injection phase, so the whole trial is one
    reproducible draw. Failures raise ScenarioError with the patient id;
    run_scenario converts those into recorded per-patient failures.
    """
    spec.validate()
    pl = pipeline or PipelineConfig()
    try:
        grid = pl.grid.with_horizon(spec.closed_loop_hours * 60.0).validate()
        controller = replace(
            pl.controller, gain_multiplier=spec.gain_multiplier, y_ref=spec.y_ref
        )
        rng = np.random.default_rng(patient.seed)
        closed = run_closed_loop(patient, controller, grid, rng=rng, backend=backend)
        first_day = total_insulin(closed, horizon_min=min(1440.0, grid.horizon_min))
        low_excitation = total_insulin(closed) <= LOW_EXCITATION_U
        est_cfg = replace(pl.estimator, y_ref=spec.y_ref).for_patient(patient)
        est = estimate_parameters(closed, est_cfg, backend=backend)
        injection = run_injection_phase(
            patient,
            est.dose.u_basal,
            spec.injection_days,
            grid,
            pl.injection,
            start_state=closed.x[-1],
            start_time_min=float(closed.times_min[-1]),
            rng=rng,
            backend=backend,
        )
        dose_true = daily_dose(dose_required(patient.truth, spec.y_ref)).u_basal
        metrics = compute_metrics(injection, est.dose.u_basal, dose_true, pl.targets)
    except Exception as exc:
        raise ScenarioError(f"patient {patient.id}: {exc}") from exc
    return PatientResult(
        patient_id=patient.id,
        scenario=spec.name,
        estimation=est,
        metrics=metrics,
        low_excitation=low_excitation,
        first_day_insulin_u=first_day,
        closed_loop=closed,
        injection=injection,
    )


@dataclass(frozen=True)
class ScenarioSummary:
    """Deterministic aggregate over one scenario's patient results."""

    scenario: str
    n_patients: int
    n_failed: int
    hypo_count: int
    overest_count: int
    overest_fraction: float
    mean_time_in_range: float
    mean_dose_rel_error: float
    median_dose_rel_error: float
    low_excitation_count: int


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    spec: ScenarioSpec
    results: list[PatientResult]
    summary: ScenarioSummary


def _run_patient_task(args):
    patient, spec, pipeline, backend = args
    try:
        return run_patient(patient, spec, pipeline, backend=backend)
    except ScenarioError as exc:
        return PatientResult(patient_id=patient.id, scenario=spec.name, error=str(exc))
    except Exception as exc:  # totality: a worker never takes down the scenario
        detail = traceback.format_exception_only(type(exc), exc)[-1].strip()
        return PatientResult(
            patient_id=patient.id, scenario=spec.name,
            error=f"patient {patient.id}: unexpected {detail}",
        )


def summarize(spec: ScenarioSpec, results: list[PatientResult]) -> ScenarioSummary:
    ok = [r for r in results if r.ok]
    metrics = [r.metrics for r in ok]
    n_ok = len(ok)
    hypo = sum(m.hypo_flag for m in metrics)
    over = sum(m.dose_est > m.dose_true for m in metrics)
    rels = [m.dose_rel_error for m in metrics]
    return ScenarioSummary(
        scenario=spec.name,
        n_patients=len(results),
        n_failed=len(results) - n_ok,
        hypo_count=hypo,
        overest_count=over,
        overest_fraction=over / n_ok if n_ok else math.nan,
        mean_time_in_range=(
            float(np.mean([m.time_in_range_fraction for m in metrics])) if n_ok else math.nan
        ),
        mean_dose_rel_error=float(np.mean(rels)) if n_ok else math.nan,
        median_dose_rel_error=float(statistics.median(rels)) if n_ok else math.nan,
        low_excitation_count=sum(r.low_excitation for r in ok),
    )


def run_scenario(
    spec: ScenarioSpec,
    cohort: Cohort,
    pipeline: PipelineConfig | None = None,
    parallel: int | None = None,
    backend=None,
) -> ScenarioResult:
    """Run every cohort patient through the scenario pipeline.

    Individual patient failures are recorded in their PatientResult and
    the scenario continues. With parallel > 1 patients run in separate
    processes; results are ordered by patient id either way, so the
    outcome is independent of scheduling. For parallel runs the backend
    must be None or a backend name, not a module object.
    """
    if len(cohort) == 0:
        raise ValueError("no patients in cohort")
    spec.validate()
    pl = pipeline or PipelineConfig()
    tasks = [(p, spec, pl, backend) for p in cohort]
    if parallel is not None and parallel > 1:
        if backend is not None and not isinstance(backend, str):
            raise ValueError("parallel runs need a backend name, not a module")
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_patient_task, tasks, chunksize=1))
    else:
        results = [_run_patient_task(t) for t in tasks]
    results.sort(key=lambda r: r.patient_id)
    return ScenarioResult(spec=spec, results=results, summary=summarize(spec, results))


@dataclass(frozen=True)
class TrendReport:
    """Ordinal comparison of three scenario results.

    ordered holds the results most-informative excitation first: longer
    closed loop before shorter, higher gain breaking ties, so the
    canonical set reads (48 h x1, 24 h x3, 24 h x1). The trend under
    test: hypoglycemia counts non-decreasing along that order, and dose
    overestimation more frequent in the last slot than the first.
    """

    ordered: tuple[ScenarioResult, ScenarioResult, ScenarioResult]
    hypo_counts: tuple[int, int, int]
    overest_fractions: tuple[float, float, float]
    trend_holds: bool
    tie: bool
    overest_increases: bool

    @property
    def verdict(self) -> str:
        names = ", ".join(r.spec.name for r in self.ordered)
        counts = " <= ".join(str(c) for c in self.hypo_counts)
        if self.tie:
            return f"trend: tie (hypo {counts} across {names})"
        state = "holds" if self.trend_holds else "violated"
        return f"trend: {state} (hypo {counts} across {names})"

    def lines(self) -> list[str]:
        out = []
        for r in self.ordered:
            s = r.summary
            out.append(
                f"{s.scenario}: hypo {s.hypo_count}/{s.n_patients - s.n_failed}"
                f", overestimated {s.overest_count}"
                f" ({s.overest_fraction:.0%}), failed {s.n_failed}"
            )
        out.append(self.verdict)
        return out


def compare_scenarios(results) -> TrendReport:
    """Order three scenario results into the trend report.

    Accepts the results in any order; the sort is stable, so comparing
    identical scenarios keeps the given order and yields a tie. A
    violated trend is an experimental finding, reported in the verdict
    rather than raised.
    """
    results = list(results)
    if len(results) != 3:
        raise ValueError(f"compare takes exactly three scenario results, got {len(results)}")
    ordered = sorted(
        results,
        key=lambda r: (-r.spec.closed_loop_hours, -r.spec.gain_multiplier),
    )
    hypo = tuple(r.summary.hypo_count for r in ordered)
    fracs = tuple(r.summary.overest_fraction for r in ordered)
    return TrendReport(
        ordered=tuple(ordered),
        hypo_counts=hypo,
        overest_fractions=fracs,
        trend_holds=hypo[0] <= hypo[1] <= hypo[2],
        tie=hypo[0] == hypo[1] == hypo[2],
        overest_increases=fracs[2] > fracs[0],
    )


_RESULTS_COLUMNS = (
    "id", "p4_true", "p6_true", "p7_true", "p4_est", "p6_est", "p7_est",
    "V_min", "converged", "u_basal_true", "u_basal_est",
    "min_glucose_injection", "time_in_range", "hypo_flag",
    "dose_rel_error", "low_excitation", "first_day_insulin_u", "error",
)


def _bool(v: bool) -> str:
    return "true" if v else "false"


def write_scenario_csv(path, scenario_result: ScenarioResult, cohort: Cohort) -> None:
    """Per-patient results of one scenario: estimates plus metrics."""
    by_id = {p.id: p for p in cohort}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_RESULTS_COLUMNS)
        for r in scenario_result.results:
            truth = by_id[r.patient_id].truth
            if not r.ok:
                w.writerow(
                    [r.patient_id, _fmt(truth.p4), _fmt(truth.p6), _fmt(truth.p7)]
                    + [""] * 13 + [r.error]
                )
                continue
            est, m = r.estimation, r.metrics
            w.writerow([
                r.patient_id,
                _fmt(truth.p4), _fmt(truth.p6), _fmt(truth.p7),
                _fmt(est.theta_hat[0]), _fmt(est.theta_hat[1]), _fmt(est.theta_hat[2]),
                _fmt(est.V_min), _bool(est.converged),
                _fmt(m.dose_true), _fmt(m.dose_est),
                _fmt(m.min_glucose_injection_phase), _fmt(m.time_in_range_fraction),
                _bool(m.hypo_flag), _fmt(m.dose_rel_error),
                _bool(r.low_excitation), _fmt(r.first_day_insulin_u), "",
            ])


_SUMMARY_COLUMNS = (
    "scenario", "closed_loop_hours", "gain_multiplier", "injection_days",
    "n_patients", "n_failed", "hypo_count", "overest_count",
    "overest_fraction", "mean_time_in_range", "mean_dose_rel_error",
    "median_dose_rel_error", "low_excitation_count",
)


def write_summary_csv(path, scenario_results) -> None:
    """Cross-scenario aggregate table, one row per scenario."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_SUMMARY_COLUMNS)
        for r in scenario_results:
            s = r.summary
            w.writerow([
                s.scenario,
                _fmt(r.spec.closed_loop_hours), _fmt(r.spec.gain_multiplier),
                r.spec.injection_days,
                s.n_patients, s.n_failed, s.hypo_count, s.overest_count,
                _fmt(s.overest_fraction), _fmt(s.mean_time_in_range),
                _fmt(s.mean_dose_rel_error), _fmt(s.median_dose_rel_error),
                s.low_excitation_count,
            ])
