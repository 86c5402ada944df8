"""Kalman filtering of glucose traces and maximum-likelihood estimation.

The filter is a continuous-discrete extended Kalman filter: discrete
measurement updates at the CGM samples (Joseph-form covariance
recursion), continuous moment propagation in between (state and
covariance ODEs integrated jointly by fixed-step fourth-order
Runge-Kutta with one-minute substeps). Its innovation sequence defines
the negative log-likelihood that a Nelder-Mead search minimizes over
the log-transformed estimable parameters (p4, p6, p7); the remaining
parameters stay fixed at their population values.

The scalar likelihood goes through the selected kernel backend; the
step-by-step operations and the recording filter here are the plain
numpy reference used for unit tests and diagnostics.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.optimize

from ._kernels import reference, resolve
from .cohort import VirtualPatient
from .model import POPULATION, DoseResult, PredictionParams, daily_dose, dose_required
from .simulate import GlucoseTrace

SUBSTEP_MIN = 1.0  # RK4 substep target for the moment ODEs, minutes

# Process noise enters the glucose state only.
_NOISE_INDEX = 3


class FilterError(RuntimeError):
    """The filter covariance or innovation left its valid domain."""


@dataclass(frozen=True, eq=False)
class FilterState:
    """State estimate and covariance of the CDEKF."""

    x_hat: np.ndarray
    P: np.ndarray

    def validate(self) -> "FilterState":
        if self.x_hat.shape != (4,) or self.P.shape != (4, 4):
            raise ValueError("filter state must be a 4-vector with 4x4 covariance")
        if not np.allclose(self.P, self.P.T, rtol=0.0, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        return self


@dataclass(frozen=True, eq=False)
class FilterStepRecord:
    """Innovation, its variance, and the gain of one measurement update."""

    e: float
    R_e: float
    K: np.ndarray


@dataclass(frozen=True)
class EstimationResult:
    theta_hat: tuple[float, float, float]  # (p4, p6, p7)
    V_min: float
    iterations: int
    n_evals: int
    converged: bool
    dose: DoseResult

    def params(self, fixed: PredictionParams) -> PredictionParams:
        return fixed.with_theta(*self.theta_hat)


@dataclass(frozen=True)
class EstimatorConfig:
    """Noise assumptions and optimizer budget for one estimation run.

    sigma / r_cgm set to None mean "match the simulator's values for the
    patient at hand" (resolved by for_patient); r_cgm is a variance.
    """

    fixed: PredictionParams = POPULATION
    sigma: float | None = None
    r_cgm: float | None = None
    y_ref: float = 5.8
    max_evals: int = 500
    rel_tol: float = 1e-6

    def for_patient(self, patient: VirtualPatient) -> "EstimatorConfig":
        return replace(
            self,
            sigma=self.sigma if self.sigma is not None else patient.sigma,
            r_cgm=self.r_cgm if self.r_cgm is not None else patient.r_cgm,
        )

    def validate(self) -> "EstimatorConfig":
        if self.sigma is None or self.r_cgm is None:
            raise ValueError("estimator noise levels are unresolved; call for_patient or set them")
        if self.sigma < 0 or self.r_cgm <= 0:
            raise ValueError("estimator requires sigma >= 0 and r_cgm > 0")
        if self.max_evals < 1:
            raise ValueError("estimator.max_evals must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("estimator.rel_tol must be positive")
        return self


def default_filter_init(trace: GlucoseTrace, params: PredictionParams) -> FilterState:
    """Initial filter state built from the first sample of a trace.

    The input compartments start at the first applied input, the
    effect compartment at its steady-state value for the first
    measurement under the proposed parameters, and the glucose state at
    that measurement. The prior is tight on the input-driven states and
    CGM-sized on glucose.
    """
    u0 = float(trace.u[0])
    y0 = float(trace.y[0])
    x0 = np.array([u0, u0, u0 + params.p7 * y0, y0])
    P0 = np.diag([1e-4, 1e-4, 1e-4, 1.0])
    return FilterState(x_hat=x0, P=P0)


def measurement_update(fs: FilterState, y_k: float, R_k: float) -> tuple[FilterState, FilterStepRecord]:
    """Joseph-form update for the scalar glucose observation."""
    if R_k <= 0:
        raise FilterError("measurement variance must be positive")
    P = fs.P
    R_e = float(P[_NOISE_INDEX, _NOISE_INDEX] + R_k)
    if not (np.isfinite(R_e) and R_e > 0.0):
        raise FilterError(f"innovation variance {R_e} is not positive; covariance corrupted")
    e = float(y_k - fs.x_hat[_NOISE_INDEX])
    K = P[:, _NOISE_INDEX] / R_e
    x_new = fs.x_hat + K * e
    IKC = np.eye(4)
    IKC[:, _NOISE_INDEX] -= K
    P_new = IKC @ P @ IKC.T + R_k * np.outer(K, K)
    P_new = 0.5 * (P_new + P_new.T)
    return FilterState(x_hat=x_new, P=P_new), FilterStepRecord(e=e, R_e=R_e, K=K)


def time_update(
    fs: FilterState,
    u_k: float,
    dt: float,
    params: PredictionParams,
    sigma: float,
) -> FilterState:
    """Propagate mean and covariance through the model ODEs over dt.

    Joint fixed-step RK4 on dx/dt = f(x, u) and dP/dt = AP + PA' + Q
    with A relinearized at every stage and Q = diag(0, 0, 0, sigma^2).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = params.as_array()
    n_sub = max(1, int(round(dt / SUBSTEP_MIN)))
    h = dt / n_sub
    A = np.array([
        [-1.0 / params.p1, 0.0, 0.0, 0.0],
        [1.0 / params.p1, -1.0 / params.p1, 0.0, 0.0],
        [0.0, params.p3, -params.p3, params.p3 * params.p7],
        [0.0, 0.0, 0.0, 0.0],
    ])
    Q = np.zeros((4, 4))
    Q[_NOISE_INDEX, _NOISE_INDEX] = sigma * sigma
    xh = fs.x_hat.copy()
    P = fs.P.copy()
    args = (float(u_k), A, Q, *(float(v) for v in p))
    for _ in range(n_sub):
        f1, D1 = reference._moment_deriv(xh, P, *args)
        f2, D2 = reference._moment_deriv(xh + 0.5 * h * f1, P + 0.5 * h * D1, *args)
        f3, D3 = reference._moment_deriv(xh + 0.5 * h * f2, P + 0.5 * h * D2, *args)
        f4, D4 = reference._moment_deriv(xh + h * f3, P + h * D3, *args)
        xh = xh + (h / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        P = P + (h / 6.0) * (D1 + 2.0 * D2 + 2.0 * D3 + D4)
    min_eig = float(np.linalg.eigvalsh(P).min())
    if min_eig < -reference.PSD_JITTER:
        raise FilterError(f"covariance lost positive semidefiniteness (min eigenvalue {min_eig:.3e})")
    return FilterState(x_hat=xh, P=P)


def _filter_inputs(theta, trace: GlucoseTrace, fixed: PredictionParams, init: FilterState | None):
    p4, p6, p7 = (float(v) for v in theta)
    if not (p4 > 0 and p6 > 0 and p7 > 0):
        raise ValueError("estimable parameters must be strictly positive")
    if len(trace) == 0:
        raise ValueError("trace is empty")
    if not np.all(np.isfinite(trace.y)):
        raise ValueError("trace has missing measurements; estimation needs a monitored phase")
    params = fixed.with_theta(p4, p6, p7)
    fs = init if init is not None else default_filter_init(trace, params)
    dt = trace.dt_sample if len(trace) > 1 else SUBSTEP_MIN
    n_sub = max(1, int(round(dt / SUBSTEP_MIN)))
    return params, fs, dt, n_sub


def neg_log_likelihood(
    theta,
    trace: GlucoseTrace,
    fixed: PredictionParams,
    sigma: float,
    r_k: float,
    init: FilterState | None = None,
    backend=None,
) -> float:
    """Innovation-based negative log-likelihood of a trace under theta.

    Runs the full filter over all samples. Divergence (non-finite state,
    non-positive innovation variance, indefinite covariance) yields +inf
    so derivative-free optimizers simply step away from the point.
    """
    params, fs, dt, n_sub = _filter_inputs(theta, trace, fixed, init)
    kern = resolve(backend)
    return float(
        kern.cdekf_loglik(
            trace.y, trace.u, dt, params.as_array(), sigma, r_k, fs.x_hat, fs.P, n_sub
        )
    )


@dataclass(frozen=True, eq=False)
class FilterDiagnostics:
    """Per-sample internals of one recorded filter pass."""

    V: float
    e: np.ndarray
    R_e: np.ndarray
    K: np.ndarray
    x_prior: np.ndarray
    x_post: np.ndarray
    P_prior: np.ndarray
    P_post: np.ndarray

    @property
    def normalized_innovations(self) -> np.ndarray:
        return self.e / np.sqrt(self.R_e)

    def min_covariance_eigenvalue(self) -> float:
        prior = np.linalg.eigvalsh(self.P_prior).min()
        post = np.linalg.eigvalsh(self.P_post).min()
        return float(min(prior, post))

    def lag1_autocorr(self) -> float:
        nu = self.normalized_innovations
        m = nu.mean()
        d = nu - m
        denom = float(d @ d)
        if denom == 0.0:
            return 0.0
        return float(d[:-1] @ d[1:] / denom)

    def whiteness(self, n_sd: float = 3.0) -> tuple[float, float]:
        """Lag-1 autocorrelation and its acceptance bound n_sd/sqrt(N)."""
        return self.lag1_autocorr(), n_sd / math.sqrt(len(self.e))


def run_filter(
    params: PredictionParams,
    trace: GlucoseTrace,
    sigma: float,
    r_k: float,
    init: FilterState | None = None,
) -> FilterDiagnostics:
    """Recorded reference-backend filter pass for diagnostics."""
    _, fs, dt, n_sub = _filter_inputs(params.theta, trace, params, init)
    V, rec = reference.cdekf_filter(
        trace.y, trace.u, dt, params.as_array(), sigma, r_k, fs.x_hat, fs.P,
        n_sub, record=True,
    )
    if rec is None:
        raise FilterError("filter diverged while recording diagnostics")
    return FilterDiagnostics(V=float(V), **rec)


def estimate_parameters(
    trace: GlucoseTrace,
    config: EstimatorConfig,
    backend=None,
) -> EstimationResult:
    """Maximum-likelihood fit of (p4, p6, p7) to one closed-loop trace.

    Nelder-Mead over the log-transformed parameters, started at the
    fixed (population) values. Convergence means the simplex collapsed
    to rel_tol in log-parameter spread and to rel_tol relative in
    likelihood spread within the evaluation budget; otherwise the best
    point found is returned with converged = False.
    """
    config.validate()
    if len(trace) == 0:
        raise ValueError("cannot estimate from an empty trace")

    def objective(log_theta):
        return neg_log_likelihood(
            np.exp(log_theta), trace, config.fixed, config.sigma, config.r_cgm,
            backend=backend,
        )

    log_theta0 = np.log(np.asarray(config.fixed.theta))
    V0 = objective(log_theta0)
    if not np.isfinite(V0):
        raise FilterError("filter diverges at the initial parameter values")
    # scipy's fatol is absolute; scale it to make the stopping rule
    # relative in V
    res = scipy.optimize.minimize(
        objective,
        log_theta0,
        method="Nelder-Mead",
        options={
            "maxfev": config.max_evals,
            "xatol": config.rel_tol,
            "fatol": config.rel_tol * max(1.0, abs(V0)),
        },
    )
    theta_hat = tuple(float(v) for v in np.exp(res.x))
    params_hat = config.fixed.with_theta(*theta_hat)
    dose = daily_dose(dose_required(params_hat, config.y_ref))
    return EstimationResult(
        theta_hat=theta_hat,
        V_min=float(res.fun),
        iterations=int(res.nit),
        n_evals=int(res.nfev),
        converged=bool(res.success),
        dose=dose,
    )


_ESTIMATES_COLUMNS = (
    "id", "p4_true", "p6_true", "p7_true", "p4_est", "p6_est", "p7_est",
    "V_min", "converged", "u_basal_true", "u_basal_est",
)


def write_estimates_csv(path, patients, results, y_ref: float) -> None:
    """Cohort-level estimation summary, one row per patient."""
    import csv

    from .simulate import _fmt

    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_ESTIMATES_COLUMNS)
        for patient, result in zip(patients, results, strict=True):
            truth = patient.truth
            true_dose = daily_dose(dose_required(truth, y_ref))
            w.writerow([
                patient.id,
                _fmt(truth.p4), _fmt(truth.p6), _fmt(truth.p7),
                _fmt(result.theta_hat[0]), _fmt(result.theta_hat[1]), _fmt(result.theta_hat[2]),
                _fmt(result.V_min),
                "true" if result.converged else "false",
                _fmt(true_dose.u_basal),
                _fmt(result.dose.u_basal),
            ])
