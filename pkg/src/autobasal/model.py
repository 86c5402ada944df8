"""Four-state glucose-insulin dose-response model.

States (units in brackets): x1 and x2 are a two-compartment chain for
absorption of infused insulin [U/min], x3 is the delayed insulin effect
[U/min], and x4 is the blood glucose concentration [mmol/L]. The only
nonlinearity is the bilinear clearance term x3*x4.

All functions here are pure; the stochastic machinery lives in
:mod:`autobasal.simulate` and the filtering in :mod:`autobasal.estimate`.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

MINUTES_PER_DAY = 60 * 24

PARAM_NAMES = ("p1", "p3", "p4", "p5", "p6", "p7")


@dataclass(frozen=True)
class PredictionParams:
    """Parameter set for the dose-response model.

    There is no p2: the customary numbering for this model family skips
    it, and keeping the gap avoids off-by-one mistakes against the state
    equations. p1, p3, p5 are treated as fixed population values; the
    estimable subset is (p4, p6, p7).

    p1: insulin absorption time constant [min]
    p3: insulin effect delay rate [1/min]
    p4: insulin sensitivity [1/U]
    p5: insulin-independent glucose clearance [1/min]
    p6: endogenous glucose production [mmol/(L*min)]
    p7: endogenous insulin production [U*L/(mmol*min)]
    """

    p1: float
    p3: float
    p4: float
    p5: float
    p6: float
    p7: float

    def validate(self) -> "PredictionParams":
        """Raise ValueError unless every parameter is finite and > 0."""
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0.0:
                raise ValueError(f"parameter {name} must be strictly positive and finite, got {value!r}")
        return self

    @property
    def theta(self) -> tuple[float, float, float]:
        """The estimable subset (p4, p6, p7)."""
        return (self.p4, self.p6, self.p7)

    @property
    def fixed(self) -> tuple[float, float, float]:
        """The population-fixed subset (p1, p3, p5)."""
        return (self.p1, self.p3, self.p5)

    def with_theta(self, p4: float, p6: float, p7: float) -> "PredictionParams":
        return replace(self, p4=p4, p6=p6, p7=p7)

    def as_array(self) -> np.ndarray:
        """Parameters as a length-6 array ordered (p1, p3, p4, p5, p6, p7)."""
        return np.array([self.p1, self.p3, self.p4, self.p5, self.p6, self.p7])


#: Population parameter values used as sampling medians and as the
#: initial guess for estimation.
POPULATION = PredictionParams(p1=60.0, p3=0.011, p4=0.44, p5=0.0023, p6=0.0672, p7=0.0018)


@dataclass(frozen=True)
class DoseResult:
    """A target infusion rate and the daily dose it implies.

    u_target is the raw (possibly negative) rate in U/min; u_basal is
    the nonnegative daily dose in U/day. clamped is True iff the raw
    rate was negative and got floored to zero.
    """

    u_target: float
    u_basal: float
    clamped: bool


def rhs(x, u: float, p: PredictionParams) -> np.ndarray:
    """Time derivative of the four states, per minute.

    Non-finite inputs propagate to non-finite outputs; callers that
    integrate are responsible for catching divergence.
    """
    x1, x2, x3, x4 = x
    return np.array(
        [
            (u - x1) / p.p1,
            (x1 - x2) / p.p1,
            p.p3 * (x2 + p.p7 * x4) - p.p3 * x3,
            -(p.p5 + p.p4 * x3) * x4 + p.p6,
        ]
    )


def jacobian(x, u: float, p: PredictionParams) -> np.ndarray:
    """Analytic Jacobian of :func:`rhs` with respect to the state, 4x4."""
    x3 = x[2]
    x4 = x[3]
    a = np.zeros((4, 4))
    a[0, 0] = -1.0 / p.p1
    a[1, 0] = 1.0 / p.p1
    a[1, 1] = -1.0 / p.p1
    a[2, 1] = p.p3
    a[2, 2] = -p.p3
    a[2, 3] = p.p3 * p.p7
    a[3, 2] = -p.p4 * x4
    a[3, 3] = -(p.p5 + p.p4 * x3)
    return a


def steady_state_glucose(p: PredictionParams, u: float) -> float:
    """Equilibrium glucose under a constant infusion u >= 0 [U/min].

    At equilibrium x1 = x2 = u and x3 = u + p7*g, so g solves

        p4*p7*g^2 + (p5 + p4*u)*g - p6 = 0.

    The positive root is returned in the cancellation-free form
    2*p6 / (b + sqrt(b^2 + 4*a*p6)), which degrades gracefully to the
    linear balance p6 / (p5 + p4*u) as p7 -> 0.
    """
    a = p.p4 * p.p7
    b = p.p5 + p.p4 * u
    disc = b * b + 4.0 * a * p.p6
    if disc < 0.0:
        raise ArithmeticError(f"steady-state discriminant negative ({disc}); parameters are nonphysical")
    denom = b + math.sqrt(disc)
    if denom == 0.0:
        return 0.0
    return 2.0 * p.p6 / denom


def fasting_glucose(p: PredictionParams) -> float:
    """Equilibrium glucose with no exogenous insulin, mmol/L."""
    return steady_state_glucose(p, 0.0)


def steady_state(p: PredictionParams, u: float) -> np.ndarray:
    """Full equilibrium state vector under constant infusion u."""
    g = steady_state_glucose(p, u)
    return np.array([u, u, u + p.p7 * g, g])


def fasting_state(p: PredictionParams) -> np.ndarray:
    """Equilibrium state vector with u = 0."""
    return steady_state(p, 0.0)


def dose_required(p: PredictionParams, y_ref: float) -> float:
    """Constant infusion rate [U/min] whose equilibrium glucose is y_ref.

    Solves the steady-state balance for u. The result is *not* clamped;
    it is negative when the fasting glucose already lies below y_ref.
    """
    return (p.p6 - y_ref * p.p5) / (y_ref * p.p4) - p.p7 * y_ref


def daily_dose(u_target: float) -> DoseResult:
    """Convert a target infusion rate [U/min] into a daily dose [U/day].

    Negative rates clamp to a zero dose and set the clamped flag; the
    model has no way to remove insulin.
    """
    clamped = u_target < 0.0
    u_basal = max(0.0, u_target) * MINUTES_PER_DAY
    return DoseResult(u_target=u_target, u_basal=u_basal, clamped=clamped)
