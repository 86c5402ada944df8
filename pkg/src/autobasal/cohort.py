"""Virtual patient sampling and physiological screening.

Patients are drawn from configurable surrogate population distributions
(log-normal on the estimable parameters, truncated normal on body
weight) and rejection-sampled until they satisfy two feasibility rules:
the untreated fasting glucose must sit in a plausible range, and the
insulin dose needed to reach target must stay under a hard cap.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .model import POPULATION, DoseResult, PredictionParams, daily_dose, dose_required, fasting_glucose


class CohortError(RuntimeError):
    """Cohort generation failed, usually a misconfigured population."""


@dataclass(frozen=True)
class ScreeningRules:
    """Feasibility rules a sampled patient must pass."""

    fasting_min: float = 7.5   # mmol/L
    fasting_max: float = 20.0  # mmol/L
    dose_cap_u_day: float = 150.0
    y_ref: float = 5.8         # mmol/L, target the dose cap refers to


@dataclass(frozen=True)
class PopulationConfig:
    """Surrogate population distribution and per-patient noise levels.

    The coefficient of variation (cv) values parameterize log-normal
    draws whose *median* is the population value, so cv = 0 collapses to
    the population parameters exactly.
    """

    cv_p4: float = 0.4
    cv_p6: float = 0.4
    cv_p7: float = 0.4
    weight_mean: float = 90.0  # kg
    weight_sd: float = 15.0    # kg
    weight_min: float = 50.0   # kg
    weight_max: float = 150.0  # kg
    process_noise_sd: float = 0.05  # mmol/L per sqrt(min), enters the glucose state
    cgm_noise_sd: float = 0.4       # mmol/L
    seed: int = 0
    screening: ScreeningRules = field(default_factory=ScreeningRules)

    def validate(self) -> "PopulationConfig":
        for name in ("cv_p4", "cv_p6", "cv_p7", "weight_sd", "process_noise_sd", "cgm_noise_sd"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"population.{name} must be nonnegative")
        if not (0.0 < self.weight_min < self.weight_max):
            raise ValueError("population weight bounds must be positive with min < max")
        if self.weight_sd == 0.0 and not (self.weight_min <= self.weight_mean <= self.weight_max):
            raise ValueError("population.weight_mean falls outside the truncation bounds")
        return self


@dataclass(frozen=True)
class VirtualPatient:
    """Ground truth for one simulated person."""

    id: int
    truth: PredictionParams
    body_weight: float  # kg
    sigma: float        # process noise sd, mmol/L per sqrt(min)
    r_cgm: float        # CGM measurement noise *variance*, (mmol/L)^2
    seed: int           # seeds every stochastic simulation of this patient


@dataclass(frozen=True)
class ScreenResult:
    accepted: bool
    reason: str | None
    fasting: float
    dose: DoseResult


@dataclass(frozen=True)
class Cohort:
    """An accepted cohort plus rejection-sampling bookkeeping."""

    patients: list[VirtualPatient]
    attempts: int
    config: PopulationConfig

    @property
    def acceptance_rate(self) -> float:
        return len(self.patients) / self.attempts if self.attempts else 0.0

    def __len__(self) -> int:
        return len(self.patients)

    def __iter__(self):
        return iter(self.patients)

    def __getitem__(self, i) -> VirtualPatient:
        return self.patients[i]


def _lognormal_sigma(cv: float) -> float:
    # sd of log(X) for a log-normal with the given coefficient of variation
    return math.sqrt(math.log1p(cv * cv))


def patient_seed(master_seed: int, patient_id: int) -> int:
    """Deterministic per-patient seed, independent of rejection counts."""
    ss = np.random.SeedSequence((master_seed, 1, patient_id))
    return int(ss.generate_state(1, np.uint64)[0])


def sample_patient(
    config: PopulationConfig,
    rng: np.random.Generator,
    patient_id: int = 0,
    seed: int | None = None,
) -> VirtualPatient:
    """Draw one unscreened candidate from the population.

    Draw order is fixed (p4, p6, p7, then weight) so the result is a
    deterministic function of the rng state. Weight is drawn by
    rejection from the parent normal until it falls inside the bounds.
    """
    base = POPULATION
    p4 = base.p4 * math.exp(_lognormal_sigma(config.cv_p4) * rng.standard_normal())
    p6 = base.p6 * math.exp(_lognormal_sigma(config.cv_p6) * rng.standard_normal())
    p7 = base.p7 * math.exp(_lognormal_sigma(config.cv_p7) * rng.standard_normal())
    for _ in range(10_000):
        weight = config.weight_mean + config.weight_sd * rng.standard_normal()
        if config.weight_min <= weight <= config.weight_max:
            break
    else:
        raise CohortError("body-weight truncation bounds reject essentially all draws")
    return VirtualPatient(
        id=patient_id,
        truth=base.with_theta(p4, p6, p7),
        body_weight=weight,
        sigma=config.process_noise_sd,
        r_cgm=config.cgm_noise_sd**2,
        seed=seed if seed is not None else patient_seed(config.seed, patient_id),
    )


def screen(patient: VirtualPatient, rules: ScreeningRules | None = None) -> ScreenResult:
    """Accept or reject a candidate against the feasibility rules."""
    rules = rules or ScreeningRules()
    fasting = fasting_glucose(patient.truth)
    dose = daily_dose(dose_required(patient.truth, rules.y_ref))
    if not (rules.fasting_min <= fasting <= rules.fasting_max):
        return ScreenResult(False, "fasting out of range", fasting, dose)
    if dose.u_basal > rules.dose_cap_u_day:
        return ScreenResult(False, "dose cap", fasting, dose)
    return ScreenResult(True, None, fasting, dose)


_COHORT_COLUMNS = (
    "id", "p4", "p6", "p7", "weight_kg", "fasting_mmol_L", "u_basal_true",
)


def write_cohort_csv(path, cohort: "Cohort") -> None:
    """One row per accepted patient with truth, weight, and derived facts."""
    import csv

    from .simulate import _fmt

    y_ref = cohort.config.screening.y_ref
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_COHORT_COLUMNS)
        for p in cohort:
            w.writerow([
                p.id,
                _fmt(p.truth.p4), _fmt(p.truth.p6), _fmt(p.truth.p7),
                _fmt(p.body_weight),
                _fmt(fasting_glucose(p.truth)),
                _fmt(daily_dose(dose_required(p.truth, y_ref)).u_basal),
            ])


def generate_cohort(n: int, config: PopulationConfig) -> Cohort:
    """Rejection-sample exactly n accepted patients, ids 0..n-1.

    Fully reproducible: candidate draws come from one stream seeded by
    the master seed, and each accepted patient carries a seed derived
    from (master seed, id) only, so patient seeds do not depend on how
    many candidates were rejected before them.
    """
    if n < 1:
        raise ValueError("cohort size must be >= 1")
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0)))
    patients: list[VirtualPatient] = []
    attempts = 0
    for pid in range(n):
        seed = patient_seed(config.seed, pid)
        while True:
            attempts += 1
            if attempts >= 1000 and len(patients) / attempts < 0.001:
                raise CohortError(
                    f"cohort acceptance rate {len(patients)}/{attempts} fell below 0.1%; "
                    "population config is likely incompatible with the screening rules"
                )
            candidate = sample_patient(config, rng, patient_id=pid, seed=seed)
            if screen(candidate, config.screening).accepted:
                patients.append(candidate)
                break
    return Cohort(patients=patients, attempts=attempts, config=config)
