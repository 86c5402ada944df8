"""Reference kernels: plain numpy/Python implementations.

Every public callable here has a compiled twin in ``_speedups`` with the
same signature. The two simulation kernels are written as scalar
arithmetic with a fixed expression order so that, given identical noise
arrays, the compiled twin (built with floating-point contraction off)
reproduces them bit for bit. The filter kernel uses numpy linear
algebra; its twin hand-rolls the 4x4 operations and agrees to roundoff
rather than bitwise.

Noise is never drawn here: callers pre-draw the standard-normal arrays,
which keeps the randomness contract in one place (the simulate module)
and makes every kernel a pure function of its arguments.
"""

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

# Covariance indefiniteness below this jitter level counts as filter
# divergence; the same bound appears in the filter-health diagnostics.
PSD_JITTER = 1e-8


def closed_loop(x0, params, dt, sigma, cgm_sd, u_init, gain, y_ref, u_max,
                x4_floor, n_steps, sample_every, z_proc, z_meas):
    """Simulate the glucose-insulin loop under discrete integral control.

    Euler-Maruyama on the fine grid (step ``dt`` minutes) with process
    noise entering the glucose state only; a CGM sample is taken and the
    integrating controller updates the infusion every ``sample_every``
    steps, starting at step 0, and the infusion is held in between.

    Parameters
    ----------
    x0 : (4,) array
        Initial latent state.
    params : (6,) array
        Model parameters ordered (p1, p3, p4, p5, p6, p7).
    z_proc : (n_steps,) array
        Pre-drawn standard normals for the process noise.
    z_meas : (n_steps // sample_every + 1,) array
        Pre-drawn standard normals for the CGM noise.

    Returns
    -------
    x : (n_steps + 1, 4) array of fine-grid states
    y : CGM samples
    u_seq : infusion applied from each sample time onward, U/min
    """
    p1, p3, p4, p5, p6, p7 = (float(v) for v in params)
    n_samples = n_steps // sample_every + 1
    x = np.empty((n_steps + 1, 4))
    y = np.empty(n_samples)
    u_seq = np.empty(n_samples)
    x1 = float(x0[0])
    x2 = float(x0[1])
    x3 = float(x0[2])
    x4 = float(x0[3])
    u = float(u_init)
    sdt = sigma * math.sqrt(dt)
    j = 0
    for k in range(n_steps + 1):
        x[k, 0] = x1
        x[k, 1] = x2
        x[k, 2] = x3
        x[k, 3] = x4
        if k % sample_every == 0:
            yk = x4 + cgm_sd * z_meas[j]
            u = u + gain * (yk - y_ref)
            if u < 0.0:
                u = 0.0
            elif u > u_max:
                u = u_max
            y[j] = yk
            u_seq[j] = u
            j += 1
        if k == n_steps:
            break
        d1 = (u - x1) / p1
        d2 = (x1 - x2) / p1
        d3 = p3 * (x2 + p7 * x4) - p3 * x3
        d4 = -(p5 + p4 * x3) * x4 + p6
        x1 = x1 + dt * d1
        x2 = x2 + dt * d2
        x3 = x3 + dt * d3
        x4 = x4 + dt * d4 + sdt * z_proc[k]
        if x4 < x4_floor:
            x4 = x4_floor
    return x, y, u_seq


def injection(x0, params, p1_long, dt, sigma, x4_floor, n_steps,
              bolus_every, bolus_offset, bolus_amount, z_proc):
    """Simulate the daily-injection phase (no fast-acting infusion).

    The state is augmented to (x1..x4, s1, s2) where s1, s2 form a slow
    two-compartment absorption chain with time constant ``p1_long``
    feeding the effect compartment alongside x2. A bolus impulse of size
    ``bolus_amount`` is added to s1 at steps bolus_offset,
    bolus_offset + bolus_every, ... (while below n_steps), before the
    state is recorded, so the stored trajectory is right-continuous at
    injection instants.

    Returns the (n_steps + 1, 6) fine-grid state array.
    """
    p1, p3, p4, p5, p6, p7 = (float(v) for v in params)
    x = np.empty((n_steps + 1, 6))
    x1 = float(x0[0])
    x2 = float(x0[1])
    x3 = float(x0[2])
    x4 = float(x0[3])
    s1 = float(x0[4])
    s2 = float(x0[5])
    sdt = sigma * math.sqrt(dt)
    for k in range(n_steps + 1):
        if k < n_steps and k >= bolus_offset and (k - bolus_offset) % bolus_every == 0:
            s1 = s1 + bolus_amount
        x[k, 0] = x1
        x[k, 1] = x2
        x[k, 2] = x3
        x[k, 3] = x4
        x[k, 4] = s1
        x[k, 5] = s2
        if k == n_steps:
            break
        d1 = (0.0 - x1) / p1
        d2 = (x1 - x2) / p1
        d3 = p3 * (x2 + s2 + p7 * x4) - p3 * x3
        d4 = -(p5 + p4 * x3) * x4 + p6
        e1 = -s1 / p1_long
        e2 = (s1 - s2) / p1_long
        x1 = x1 + dt * d1
        x2 = x2 + dt * d2
        x3 = x3 + dt * d3
        x4 = x4 + dt * d4 + sdt * z_proc[k]
        if x4 < x4_floor:
            x4 = x4_floor
        s1 = s1 + dt * e1
        s2 = s2 + dt * e2
    return x


def _moment_deriv(xh, P, u, A, Q, p1, p3, p4, p5, p6, p7):
    # A rows 0..2 are state-independent and prefilled by the caller;
    # only the glucose row is relinearized along the trajectory.
    x1 = xh[0]
    x2 = xh[1]
    x3 = xh[2]
    x4 = xh[3]
    f = np.array([(u - x1) / p1,
                  (x1 - x2) / p1,
                  p3 * (x2 + p7 * x4) - p3 * x3,
                  -(p5 + p4 * x3) * x4 + p6])
    A[3, 2] = -p4 * x4
    A[3, 3] = -(p5 + p4 * x3)
    dP = A @ P + P @ A.T + Q
    return f, dP


def cdekf_filter(y, u_seq, dt_sample, params, sigma, r_k, x0, P0, n_sub,
                 record=False):
    """Extended Kalman filter over one uniformly sampled trace.

    Measurement updates observe the glucose state with variance ``r_k``
    and use the Joseph-form covariance recursion followed by
    symmetrization. Between samples the estimate and covariance follow
    the moment ODEs dx/dt = f(x, u), dP/dt = AP + PA' + Q (Q has the
    single entry sigma^2 in the glucose slot), integrated jointly by
    fixed-step fourth-order Runge-Kutta with ``n_sub`` substeps per
    sampling interval and the input held constant.

    Returns ``(V, rec)`` where V is the negative log-likelihood
    accumulated over all samples and rec is a dict of per-sample filter
    internals when ``record`` is set (None otherwise). A non-finite
    innovation, a non-positive innovation variance, or a covariance that
    fails Cholesky even after PSD_JITTER regularization short-circuits
    to V = +inf, which optimizers treat as a rejected point.
    """
    p1, p3, p4, p5, p6, p7 = (float(v) for v in params)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    xh = np.array(x0, dtype=float, copy=True)
    P = np.array(P0, dtype=float, copy=True)
    A = np.array([[-1.0 / p1, 0.0, 0.0, 0.0],
                  [1.0 / p1, -1.0 / p1, 0.0, 0.0],
                  [0.0, p3, -p3, p3 * p7],
                  [0.0, 0.0, 0.0, 0.0]])
    Q = np.zeros((4, 4))
    Q[3, 3] = sigma * sigma
    eye = np.eye(4)
    jitter = PSD_JITTER * eye
    h = dt_sample / n_sub
    acc = 0.0
    rec = None
    if record:
        rec = {
            "e": np.empty(n),
            "R_e": np.empty(n),
            "K": np.empty((n, 4)),
            "x_prior": np.empty((n, 4)),
            "x_post": np.empty((n, 4)),
            "P_prior": np.empty((n, 4, 4)),
            "P_post": np.empty((n, 4, 4)),
        }
    # overflow inside a candidate evaluation is an expected route to the
    # +inf divergence sentinel, not a numerical accident worth a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            R_e = P[3, 3] + r_k
            e = y[k] - xh[3]
            if not (np.isfinite(R_e) and R_e > 0.0 and np.isfinite(e)):
                return np.inf, None
            acc += math.log(R_e) + e * e / R_e
            K = P[:, 3] / R_e
            if record:
                rec["e"][k] = e
                rec["R_e"][k] = R_e
                rec["K"][k] = K
                rec["x_prior"][k] = xh
                rec["P_prior"][k] = P
            xh = xh + K * e
            IKC = eye.copy()
            IKC[:, 3] -= K
            P = IKC @ P @ IKC.T + r_k * np.outer(K, K)
            P = 0.5 * (P + P.T)
            try:
                np.linalg.cholesky(P + jitter)
            except np.linalg.LinAlgError:
                return np.inf, None
            if record:
                rec["x_post"][k] = xh
                rec["P_post"][k] = P
            if k == n - 1:
                break
            u = float(u_seq[k])
            for _ in range(n_sub):
                f1, D1 = _moment_deriv(xh, P, u, A, Q, p1, p3, p4, p5, p6, p7)
                f2, D2 = _moment_deriv(xh + 0.5 * h * f1, P + 0.5 * h * D1,
                                       u, A, Q, p1, p3, p4, p5, p6, p7)
                f3, D3 = _moment_deriv(xh + 0.5 * h * f2, P + 0.5 * h * D2,
                                       u, A, Q, p1, p3, p4, p5, p6, p7)
                f4, D4 = _moment_deriv(xh + h * f3, P + h * D3,
                                       u, A, Q, p1, p3, p4, p5, p6, p7)
                xh = xh + (h / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
                P = P + (h / 6.0) * (D1 + 2.0 * D2 + 2.0 * D3 + D4)
            if not np.all(np.isfinite(xh)):
                return np.inf, None
    V = 0.5 * n * LOG_2PI + 0.5 * acc
    return V, rec


def cdekf_loglik(y, u_seq, dt_sample, params, sigma, r_k, x0, P0, n_sub):
    """Negative log-likelihood of a trace under the filter; scalar only."""
    return cdekf_filter(y, u_seq, dt_sample, params, sigma, r_k, x0, P0,
                        n_sub, record=False)[0]
