# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled EM kernel for 2D Gaussian mixtures.

Hot loop of the mask-generation path: training refits one small mixture
per sample per step, so the per-fit overhead dominates. Semantics match
``_em_fallback.em_fit_kernel``.
"""

from libc.math cimport exp, fabs, hypot, log, sqrt

import numpy as np

cdef double LOG_2PI = 1.8378770664093453


cdef void _floor_covariance(double a, double b, double c, double floor,
                            double* out) noexcept nogil:
    cdef double half_tr = 0.5 * (a + c)
    cdef double rad = sqrt(0.25 * (a - c) * (a - c) + b * b)
    cdef double lo = half_tr - rad
    cdef double hi = half_tr + rad
    cdef double lo_c, hi_c, vx, vy, norm
    if lo >= floor:
        out[0] = a
        out[1] = b
        out[2] = c
        return
    lo_c = lo if lo > floor else floor
    hi_c = hi if hi > floor else floor
    if fabs(b) < 1e-300:
        out[0] = a if a > floor else floor
        out[1] = 0.0
        out[2] = c if c > floor else floor
        return
    vx = hi - c
    vy = b
    norm = hypot(vx, vy)
    vx /= norm
    vy /= norm
    out[0] = hi_c * vx * vx + lo_c * vy * vy
    out[1] = (hi_c - lo_c) * vx * vy
    out[2] = hi_c * vy * vy + lo_c * vx * vx


def em_fit_kernel(double[:, ::1] points, double[:, ::1] means,
                  double[:, :, ::1] covs, double[::1] weights,
                  int max_iters, double tol, double floor,
                  double[::1] ll_out):
    """In-place EM from the given initialization; see the fallback docstring."""
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t k = means.shape[0]
    cdef Py_ssize_t i, j, it
    cdef double ll_prev = -1e308
    cdef double ll, m, s, dx, dy, det, inv_a, inv_b, inv_c, logw, quad, r
    cdef double nk_j, mu_x, mu_y, ca, cb, cc
    cdef int iters = 0
    cdef bint converged = False

    logd_arr = np.empty((n, k), dtype=np.float64)
    resp_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] logd = logd_arr
    cdef double[:, ::1] resp = resp_arr
    cdef double cov_out[3]

    for it in range(max_iters):
        # E-step: per-point weighted log densities and row log-sum-exp
        for j in range(k):
            ca = covs[j, 0, 0]
            cb = covs[j, 0, 1]
            cc = covs[j, 1, 1]
            det = ca * cc - cb * cb
            inv_a = cc / det
            inv_b = -cb / det
            inv_c = ca / det
            logw = log(weights[j]) if weights[j] > 0.0 else -1e300
            logw = logw - LOG_2PI - 0.5 * log(det)
            for i in range(n):
                dx = points[i, 0] - means[j, 0]
                dy = points[i, 1] - means[j, 1]
                quad = inv_a * dx * dx + 2.0 * inv_b * dx * dy + inv_c * dy * dy
                logd[i, j] = logw - 0.5 * quad

        ll = 0.0
        for i in range(n):
            m = logd[i, 0]
            for j in range(1, k):
                if logd[i, j] > m:
                    m = logd[i, j]
            s = 0.0
            for j in range(k):
                s += exp(logd[i, j] - m)
            s = m + log(s)
            ll += s
            for j in range(k):
                resp[i, j] = exp(logd[i, j] - s)

        ll_out[it] = ll
        iters = it + 1
        if it > 0 and ll - ll_prev < tol:
            converged = True
            break
        ll_prev = ll

        # M-step
        for j in range(k):
            nk_j = 0.0
            for i in range(n):
                nk_j += resp[i, j]
            if nk_j < 1e-10:
                weights[j] = nk_j / n
                continue
            weights[j] = nk_j / n
            mu_x = 0.0
            mu_y = 0.0
            for i in range(n):
                mu_x += resp[i, j] * points[i, 0]
                mu_y += resp[i, j] * points[i, 1]
            mu_x /= nk_j
            mu_y /= nk_j
            means[j, 0] = mu_x
            means[j, 1] = mu_y
            ca = 0.0
            cb = 0.0
            cc = 0.0
            for i in range(n):
                dx = points[i, 0] - mu_x
                dy = points[i, 1] - mu_y
                r = resp[i, j]
                ca += r * dx * dx
                cb += r * dx * dy
                cc += r * dy * dy
            _floor_covariance(ca / nk_j, cb / nk_j, cc / nk_j, floor, cov_out)
            covs[j, 0, 0] = cov_out[0]
            covs[j, 0, 1] = cov_out[1]
            covs[j, 1, 0] = cov_out[1]
            covs[j, 1, 1] = cov_out[2]

    return iters, converged
