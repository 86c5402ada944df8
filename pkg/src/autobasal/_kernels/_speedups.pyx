# cython: language_level=3
# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the reference kernels.

The two simulation kernels follow the reference expression order
exactly; together with the build flag that disables floating-point
contraction this makes them bit-identical to the reference backend for
the same noise arrays. The filter kernel hand-rolls the 4x4 linear
algebra (exploiting the rank-one observation structure) and agrees with
the reference to roundoff.
"""

import numpy as np

from libc.math cimport M_PI, isfinite, log, sqrt

cdef double LOG_2PI = log(2.0 * M_PI)
cdef double PSD_JITTER = 1e-8


def closed_loop(x0, params, double dt, double sigma, double cgm_sd,
                double u_init, double gain, double y_ref, double u_max,
                double x4_floor, Py_ssize_t n_steps, Py_ssize_t sample_every,
                z_proc, z_meas):
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[::1] zp = np.ascontiguousarray(z_proc, dtype=np.float64)
    cdef double[::1] zm = np.ascontiguousarray(z_meas, dtype=np.float64)
    cdef Py_ssize_t n_samples = n_steps // sample_every + 1
    x_arr = np.empty((n_steps + 1, 4))
    y_arr = np.empty(n_samples)
    u_arr = np.empty(n_samples)
    cdef double[:, ::1] x = x_arr
    cdef double[::1] y = y_arr
    cdef double[::1] useq = u_arr
    cdef double p1 = p[0], p3 = p[1], p4 = p[2], p5 = p[3], p6 = p[4], p7 = p[5]
    cdef double x1 = x0v[0], x2 = x0v[1], x3 = x0v[2], x4 = x0v[3]
    cdef double u = u_init
    cdef double sdt = sigma * sqrt(dt)
    cdef double d1, d2, d3, d4, yk
    cdef Py_ssize_t k, j = 0
    for k in range(n_steps + 1):
        x[k, 0] = x1
        x[k, 1] = x2
        x[k, 2] = x3
        x[k, 3] = x4
        if k % sample_every == 0:
            yk = x4 + cgm_sd * zm[j]
            u = u + gain * (yk - y_ref)
            if u < 0.0:
                u = 0.0
            elif u > u_max:
                u = u_max
            y[j] = yk
            useq[j] = u
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
        x4 = x4 + dt * d4 + sdt * zp[k]
        if x4 < x4_floor:
            x4 = x4_floor
    return x_arr, y_arr, u_arr


def injection(x0, params, double p1_long, double dt, double sigma,
              double x4_floor, Py_ssize_t n_steps, Py_ssize_t bolus_every,
              Py_ssize_t bolus_offset, double bolus_amount, z_proc):
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[::1] zp = np.ascontiguousarray(z_proc, dtype=np.float64)
    x_arr = np.empty((n_steps + 1, 6))
    cdef double[:, ::1] x = x_arr
    cdef double p1 = p[0], p3 = p[1], p4 = p[2], p5 = p[3], p6 = p[4], p7 = p[5]
    cdef double x1 = x0v[0], x2 = x0v[1], x3 = x0v[2], x4 = x0v[3]
    cdef double s1 = x0v[4], s2 = x0v[5]
    cdef double sdt = sigma * sqrt(dt)
    cdef double d1, d2, d3, d4, e1, e2
    cdef Py_ssize_t k
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
        x4 = x4 + dt * d4 + sdt * zp[k]
        if x4 < x4_floor:
            x4 = x4_floor
        s1 = s1 + dt * e1
        s2 = s2 + dt * e2
    return x_arr


cdef inline void _moment_deriv(double* xs, double* Ps, double u,
                               double p1, double p3, double p4, double p5,
                               double p6, double p7, double sig2,
                               double* A, double* f, double* dP) noexcept nogil:
    cdef double x1 = xs[0], x2 = xs[1], x3 = xs[2], x4 = xs[3]
    cdef Py_ssize_t i, j, k
    cdef double acc
    f[0] = (u - x1) / p1
    f[1] = (x1 - x2) / p1
    f[2] = p3 * (x2 + p7 * x4) - p3 * x3
    f[3] = -(p5 + p4 * x3) * x4 + p6
    A[14] = -p4 * x4
    A[15] = -(p5 + p4 * x3)
    for i in range(4):
        for j in range(4):
            acc = 0.0
            for k in range(4):
                acc += A[i * 4 + k] * Ps[k * 4 + j] + Ps[i * 4 + k] * A[j * 4 + k]
            dP[i * 4 + j] = acc
    dP[15] += sig2


cdef inline bint _chol_ok(double* P, double jit) noexcept nogil:
    cdef double M[16]
    cdef Py_ssize_t i, j, k
    cdef double s
    for i in range(16):
        M[i] = P[i]
    for i in range(4):
        M[i * 4 + i] += jit
    for i in range(4):
        for j in range(i + 1):
            s = M[i * 4 + j]
            for k in range(j):
                s -= M[i * 4 + k] * M[j * 4 + k]
            if i == j:
                if not (isfinite(s) and s > 0.0):
                    return False
                M[i * 4 + i] = sqrt(s)
            else:
                M[i * 4 + j] = s / M[j * 4 + j]
    return True


def cdekf_loglik(y, u_seq, double dt_sample, params, double sigma, double r_k,
                 x0, P0, Py_ssize_t n_sub):
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] uv = np.ascontiguousarray(u_seq, dtype=np.float64)
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[:, :] P0v = np.asarray(P0, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0]
    cdef double p1 = p[0], p3 = p[1], p4 = p[2], p5 = p[3], p6 = p[4], p7 = p[5]
    cdef double sig2 = sigma * sigma
    cdef double h = dt_sample / n_sub
    cdef double xh[4]
    cdef double P[16]
    cdef double A[16]
    cdef double K[4]
    cdef double T[16]
    cdef double P2[16]
    cdef double xs[4]
    cdef double Ps[16]
    cdef double f1[4]
    cdef double f2[4]
    cdef double f3[4]
    cdef double f4[4]
    cdef double D1[16]
    cdef double D2[16]
    cdef double D3[16]
    cdef double D4[16]
    cdef double acc = 0.0
    cdef double R_e, e, u
    cdef Py_ssize_t i, j, k, m
    for i in range(4):
        xh[i] = x0v[i]
        for j in range(4):
            P[i * 4 + j] = P0v[i, j]
            A[i * 4 + j] = 0.0
    A[0] = -1.0 / p1
    A[4] = 1.0 / p1
    A[5] = -1.0 / p1
    A[9] = p3
    A[10] = -p3
    A[11] = p3 * p7
    for k in range(n):
        R_e = P[15] + r_k
        e = yv[k] - xh[3]
        if not (isfinite(R_e) and R_e > 0.0 and isfinite(e)):
            return float("inf")
        acc += log(R_e) + e * e / R_e
        for i in range(4):
            K[i] = P[i * 4 + 3] / R_e
        for i in range(4):
            xh[i] = xh[i] + K[i] * e
        # Joseph form: (I-KC) P (I-KC)' + r KK', with C = e4' so that
        # (I-KC) M only corrects with row/column 3 terms.
        for i in range(4):
            for j in range(4):
                T[i * 4 + j] = P[i * 4 + j] - K[i] * P[12 + j]
        for i in range(4):
            for j in range(4):
                P2[i * 4 + j] = T[i * 4 + j] - T[i * 4 + 3] * K[j] + r_k * K[i] * K[j]
        for i in range(4):
            for j in range(4):
                P[i * 4 + j] = 0.5 * (P2[i * 4 + j] + P2[j * 4 + i])
        if not _chol_ok(P, PSD_JITTER):
            return float("inf")
        if k == n - 1:
            break
        u = uv[k]
        for m in range(n_sub):
            _moment_deriv(xh, P, u, p1, p3, p4, p5, p6, p7, sig2, A, f1, D1)
            for i in range(4):
                xs[i] = xh[i] + 0.5 * h * f1[i]
            for i in range(16):
                Ps[i] = P[i] + 0.5 * h * D1[i]
            _moment_deriv(xs, Ps, u, p1, p3, p4, p5, p6, p7, sig2, A, f2, D2)
            for i in range(4):
                xs[i] = xh[i] + 0.5 * h * f2[i]
            for i in range(16):
                Ps[i] = P[i] + 0.5 * h * D2[i]
            _moment_deriv(xs, Ps, u, p1, p3, p4, p5, p6, p7, sig2, A, f3, D3)
            for i in range(4):
                xs[i] = xh[i] + h * f3[i]
            for i in range(16):
                Ps[i] = P[i] + h * D3[i]
            _moment_deriv(xs, Ps, u, p1, p3, p4, p5, p6, p7, sig2, A, f4, D4)
            for i in range(4):
                xh[i] = xh[i] + (h / 6.0) * (f1[i] + 2.0 * f2[i] + 2.0 * f3[i] + f4[i])
            for i in range(16):
                P[i] = P[i] + (h / 6.0) * (D1[i] + 2.0 * D2[i] + 2.0 * D3[i] + D4[i])
        if not (isfinite(xh[0]) and isfinite(xh[1]) and isfinite(xh[2]) and isfinite(xh[3])):
            return float("inf")
    return 0.5 * n * LOG_2PI + 0.5 * acc
