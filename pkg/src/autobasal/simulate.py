"""Stochastic closed-loop and injection-phase simulation.

The data-generating system is the prediction model itself driven by
process noise on the glucose state (Euler-Maruyama on a fine grid,
one-minute steps by default). Closed-loop treatment couples it to a
discrete integrating controller fed by noisy CGM samples; the
injection phase replaces the pump input with a once-daily bolus into a
slow two-compartment absorption channel.

Heavy loops live in the kernel backends; this module owns the
randomness contract: per patient, one generator stream supplies first
the closed-loop process noise block, then the CGM noise block, then
(when the phases are chained) the injection-phase process noise block.
"""

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from . import _kernels
from .cohort import VirtualPatient
from .model import MINUTES_PER_DAY, PredictionParams, fasting_state, rhs

X4_FLOOR = 0.1  # mmol/L, keeps Euler-Maruyama glucose out of nonphysical territory

PHASE_CLOSED_LOOP = "closed_loop"
PHASE_INJECTION = "injection"


class SimulationError(RuntimeError):
    """A simulated trajectory left the finite domain."""


@dataclass(frozen=True)
class SimGrid:
    """Time discretization: fine integration step, CGM cadence, horizon.

    All values in minutes. The sampling interval must be an integer
    multiple of the fine step, and the horizon an integer multiple of
    the sampling interval, so the final state lands on a sample point.
    """

    dt_min: float = 1.0
    sample_min: float = 5.0
    horizon_min: float = 2880.0

    def validate(self) -> "SimGrid":
        if not (self.dt_min > 0 and self.sample_min > 0 and self.horizon_min > 0):
            raise ValueError("grid times must be positive")
        if abs(self.sample_min / self.dt_min - round(self.sample_min / self.dt_min)) > 1e-9:
            raise ValueError("grid.sample_min must be an integer multiple of grid.dt_min")
        if abs(self.horizon_min / self.sample_min - round(self.horizon_min / self.sample_min)) > 1e-9:
            raise ValueError("grid.horizon_min must be an integer multiple of grid.sample_min")
        return self

    @property
    def sample_every(self) -> int:
        return int(round(self.sample_min / self.dt_min))

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_min / self.dt_min))

    @property
    def n_samples(self) -> int:
        return self.n_steps // self.sample_every + 1

    def with_horizon(self, horizon_min: float) -> "SimGrid":
        return replace(self, horizon_min=horizon_min)


@dataclass(frozen=True)
class ControllerConfig:
    """Discrete integrating controller acting on CGM samples.

    gain is in U/min of infusion change per mmol/L of glucose error per
    update; the default is calibrated so that every screened patient
    receives under 0.2 U/kg of insulin during the first 24 hours.
    """

    gain: float = 5.0e-6
    gain_multiplier: float = 1.0
    y_ref: float = 5.8   # mmol/L
    u_max: float = 0.25  # U/min
    u_init: float = 0.0  # U/min

    @property
    def effective_gain(self) -> float:
        return self.gain * self.gain_multiplier


@dataclass(frozen=True)
class InjectionParams:
    """Long-acting absorption channel and injection clock settings."""

    p1_long: float = 600.0  # min, time constant of the slow chain
    start_hour: float = 7.0  # clock time of both trial start and daily injections

    def validate(self) -> "InjectionParams":
        if self.p1_long <= 0:
            raise ValueError("injection.p1_long must be positive")
        if not (0.0 <= self.start_hour < 24.0):
            raise ValueError("injection.start_hour must lie in [0, 24)")
        return self


@dataclass(frozen=True, eq=False)
class GlucoseTrace:
    """One simulated phase sampled at CGM cadence.

    y holds NaN where no measurement exists (the injection phase records
    latent glucose only). chan carries the two absorption-channel states
    when the phase has them, else None.
    """

    times_min: np.ndarray
    phase: str
    y: np.ndarray
    u: np.ndarray
    x: np.ndarray
    chan: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.times_min.shape[0])

    @property
    def dt_sample(self) -> float:
        steps = np.diff(self.times_min)
        if steps.size == 0:
            raise ValueError("trace needs at least two samples to define a cadence")
        if not np.allclose(steps, steps[0], rtol=0.0, atol=1e-9):
            raise ValueError("trace is not uniformly sampled")
        return float(steps[0])

    @property
    def glucose(self) -> np.ndarray:
        """Latent glucose at the sample times."""
        return self.x[:, 3]


def total_insulin(trace: GlucoseTrace, horizon_min: float | None = None) -> float:
    """Insulin delivered through the fast-acting input, in units.

    The input is held between samples, so the last sample's value is
    applied for zero minutes. With horizon_min given, only delivery
    within that many minutes of the trace start counts (intervals
    straddling the horizon contribute pro rata).
    """
    if len(trace) < 2:
        return 0.0
    dt = trace.dt_sample
    if horizon_min is None:
        return float(np.sum(trace.u[:-1]) * dt)
    t_end = trace.times_min[0] + horizon_min
    widths = np.clip(t_end - trace.times_min[:-1], 0.0, dt)
    return float(trace.u[:-1] @ widths)


def em_step(state, u, dt, params: PredictionParams, sigma, rng) -> np.ndarray:
    """One Euler-Maruyama step; noise enters the glucose state only."""
    out = np.asarray(state, dtype=float) + dt * rhs(state, u, params)
    out[3] += sigma * math.sqrt(dt) * rng.standard_normal()
    if out[3] < X4_FLOOR:
        out[3] = X4_FLOOR
    return out


def cgm_sample(state, r_cgm, rng) -> float:
    """Noisy glucose measurement; r_cgm is a variance."""
    return float(state[3]) + math.sqrt(r_cgm) * rng.standard_normal()


def controller_step(cfg: ControllerConfig, y_k: float, u_prev: float) -> float:
    """One integrator update with output clamping as anti-windup."""
    u = u_prev + cfg.effective_gain * (y_k - cfg.y_ref)
    return min(max(u, 0.0), cfg.u_max)


def _check_finite(arr, patient: VirtualPatient, phase: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise SimulationError(
            f"patient {patient.id}: non-finite state during {phase} phase"
        )


def run_closed_loop(
    patient: VirtualPatient,
    cfg: ControllerConfig,
    grid: SimGrid,
    rng: np.random.Generator | None = None,
    backend=None,
) -> GlucoseTrace:
    """Simulate closed-loop treatment from the patient's fasting state.

    The controller updates at every CGM sample (including t = 0) and the
    infusion is held between samples. When rng is omitted a fresh stream
    is seeded from the patient; passing the stream in lets callers chain
    the injection phase onto the same randomness.
    """
    grid.validate()
    kern = _kernels.resolve(backend)
    if rng is None:
        rng = np.random.default_rng(patient.seed)
    n_steps = grid.n_steps
    z_proc = rng.standard_normal(n_steps)
    z_meas = rng.standard_normal(grid.n_samples)
    x, y, u_seq = kern.closed_loop(
        fasting_state(patient.truth),
        patient.truth.as_array(),
        grid.dt_min,
        patient.sigma,
        math.sqrt(patient.r_cgm),
        cfg.u_init,
        cfg.effective_gain,
        cfg.y_ref,
        cfg.u_max,
        X4_FLOOR,
        n_steps,
        grid.sample_every,
        z_proc,
        z_meas,
    )
    _check_finite(x, patient, PHASE_CLOSED_LOOP)
    times = np.arange(grid.n_samples) * grid.sample_min
    return GlucoseTrace(
        times_min=times,
        phase=PHASE_CLOSED_LOOP,
        y=y,
        u=u_seq,
        x=np.ascontiguousarray(x[:: grid.sample_every]),
    )


def run_injection_phase(
    patient: VirtualPatient,
    u_basal: float,
    days: int,
    grid: SimGrid,
    injection_params: InjectionParams | None = None,
    start_state=None,
    start_time_min: float = 0.0,
    rng: np.random.Generator | None = None,
    backend=None,
) -> GlucoseTrace:
    """Simulate daily injections of u_basal units of long-acting insulin.

    Continues from start_state (default: the patient's fasting state) at
    start_time_min minutes into the trial. Injections land on the grid
    points whose clock time matches the configured injection hour; the
    trial itself starts at that hour, so a phase beginning a whole
    number of days in gets its first bolus immediately. Each bolus is an
    impulse into the absorption channel sized so the chain delivers
    exactly u_basal units.

    The trace records latent states only (y is NaN): no CGM is worn
    during this phase.
    """
    if u_basal < 0:
        raise ValueError("u_basal must be nonnegative")
    if days < 1:
        raise ValueError("days must be >= 1")
    grid.validate()
    inj = (injection_params or InjectionParams()).validate()
    kern = _kernels.resolve(backend)
    if rng is None:
        rng = np.random.default_rng(patient.seed)
    if start_state is None:
        start_state = fasting_state(patient.truth)
    x0 = np.zeros(6)
    x0[:4] = np.asarray(start_state, dtype=float)
    n_steps = int(round(days * MINUTES_PER_DAY / grid.dt_min))
    bolus_every = int(round(MINUTES_PER_DAY / grid.dt_min))
    offset_min = (-start_time_min) % MINUTES_PER_DAY
    bolus_offset = int(round(offset_min / grid.dt_min))
    z_proc = rng.standard_normal(n_steps)
    x = kern.injection(
        x0,
        patient.truth.as_array(),
        inj.p1_long,
        grid.dt_min,
        patient.sigma,
        X4_FLOOR,
        n_steps,
        bolus_every,
        bolus_offset,
        u_basal / inj.p1_long,
        z_proc,
    )
    _check_finite(x, patient, PHASE_INJECTION)
    every = grid.sample_every
    n_samples = n_steps // every + 1
    times = start_time_min + np.arange(n_samples) * grid.sample_min
    sub = np.ascontiguousarray(x[::every])
    return GlucoseTrace(
        times_min=times,
        phase=PHASE_INJECTION,
        y=np.full(n_samples, np.nan),
        u=np.zeros(n_samples),
        x=sub[:, :4],
        chan=sub[:, 4:],
    )


_TRACE_COLUMNS = ("time_min", "phase", "y_cgm", "u", "x1", "x2", "x3", "x4")
_CHAN_COLUMNS = ("s1", "s2")


def _fmt(v: float) -> str:
    # repr of a Python float is the shortest round-trip form, which makes
    # re-serialization byte-stable
    if math.isnan(v):
        return ""
    return repr(float(v))


def write_trace_csv(path, traces: Iterable[GlucoseTrace]) -> None:
    """Write one or more phases of a patient's trial to a single CSV."""
    traces = list(traces)
    with_chan = any(t.chan is not None for t in traces)
    header = _TRACE_COLUMNS + (_CHAN_COLUMNS if with_chan else ())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t in traces:
            for i in range(len(t)):
                row = [
                    _fmt(t.times_min[i]),
                    t.phase,
                    _fmt(t.y[i]),
                    _fmt(t.u[i]),
                    _fmt(t.x[i, 0]),
                    _fmt(t.x[i, 1]),
                    _fmt(t.x[i, 2]),
                    _fmt(t.x[i, 3]),
                ]
                if with_chan:
                    if t.chan is None:
                        row += ["", ""]
                    else:
                        row += [_fmt(t.chan[i, 0]), _fmt(t.chan[i, 1])]
                w.writerow(row)


def _parse(field: str) -> float:
    return float(field) if field else math.nan


def read_trace_csv(path) -> list[GlucoseTrace]:
    """Read back a trace CSV, one GlucoseTrace per contiguous phase run."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header[: len(_TRACE_COLUMNS)]) != _TRACE_COLUMNS:
            raise ValueError(f"{path}: unrecognized trace header {header!r}")
        with_chan = tuple(header[len(_TRACE_COLUMNS):]) == _CHAN_COLUMNS
        rows = list(r)
    traces: list[GlucoseTrace] = []
    start = 0
    while start < len(rows):
        phase = rows[start][1]
        stop = start
        while stop < len(rows) and rows[stop][1] == phase:
            stop += 1
        block = rows[start:stop]
        times = np.array([_parse(b[0]) for b in block])
        y = np.array([_parse(b[2]) for b in block])
        u = np.array([_parse(b[3]) for b in block])
        x = np.array([[_parse(b[4 + j]) for j in range(4)] for b in block])
        chan = None
        if with_chan and block and block[0][8] != "":
            chan = np.array([[_parse(b[8]), _parse(b[9])] for b in block])
        traces.append(GlucoseTrace(times, phase, y, u, x, chan))
        start = stop
    return traces
