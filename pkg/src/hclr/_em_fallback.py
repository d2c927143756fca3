"""Pure-numpy EM kernel for 2D Gaussian mixtures.

Drop-in replacement for the compiled ``_em_core`` extension; the wrapper
in ``gmm`` picks whichever is importable. Semantics are identical, exact
float results may differ in the last bits because numpy reduces sums
pairwise while the C loop accumulates sequentially.
"""

from __future__ import annotations

import numpy as np

LOG_2PI = 1.8378770664093453


def _floor_covariance(cov: np.ndarray, floor: float) -> np.ndarray:
    """Clamp the eigenvalues of a symmetric 2x2 matrix to >= floor."""
    a = cov[0, 0]
    b = 0.5 * (cov[0, 1] + cov[1, 0])
    c = cov[1, 1]
    half_tr = 0.5 * (a + c)
    rad = np.sqrt(0.25 * (a - c) ** 2 + b * b)
    lo = half_tr - rad
    hi = half_tr + rad
    if lo >= floor:
        return np.array([[a, b], [b, c]])
    lo_c = max(lo, floor)
    hi_c = max(hi, floor)
    if abs(b) < 1e-300:
        return np.array([[max(a, floor), 0.0], [0.0, max(c, floor)]])
    # eigenvector for hi: (hi - c, b), its orthogonal complement for lo
    vx, vy = hi - c, b
    norm = np.hypot(vx, vy)
    vx, vy = vx / norm, vy / norm
    return np.array([
        [hi_c * vx * vx + lo_c * vy * vy, (hi_c - lo_c) * vx * vy],
        [(hi_c - lo_c) * vx * vy, hi_c * vy * vy + lo_c * vx * vx],
    ])


def _log_densities(points: np.ndarray, means: np.ndarray, covs: np.ndarray,
                   weights: np.ndarray) -> np.ndarray:
    """(n, k) matrix of log(w_k) + log N(p_j; mu_k, cov_k)."""
    n = points.shape[0]
    k = means.shape[0]
    out = np.empty((n, k))
    for j in range(k):
        a, b, c = covs[j, 0, 0], covs[j, 0, 1], covs[j, 1, 1]
        det = a * c - b * b
        inv_a, inv_b, inv_c = c / det, -b / det, a / det
        dx = points[:, 0] - means[j, 0]
        dy = points[:, 1] - means[j, 1]
        quad = inv_a * dx * dx + 2.0 * inv_b * dx * dy + inv_c * dy * dy
        logw = np.log(weights[j]) if weights[j] > 0.0 else -1e300
        out[:, j] = logw - LOG_2PI - 0.5 * np.log(det) - 0.5 * quad
    return out


def em_fit_kernel(points: np.ndarray, means: np.ndarray, covs: np.ndarray,
                  weights: np.ndarray, max_iters: int, tol: float, floor: float,
                  ll_out: np.ndarray) -> tuple[int, bool]:
    """Run EM in place from the given initialization.

    ``means`` (k,2), ``covs`` (k,2,2) and ``weights`` (k,) are updated in
    place; ``ll_out`` receives the per-iteration log-likelihood trace.
    Returns (iterations used, converged flag). One iteration is an E-step
    (which evaluates the log-likelihood of the current parameters)
    followed by an M-step; the loop stops once the log-likelihood
    improvement falls below ``tol``.
    """
    n = points.shape[0]
    ll_prev = -np.inf
    iters = 0
    converged = False
    for it in range(max_iters):
        logd = _log_densities(points, means, covs, weights)
        m = np.max(logd, axis=1, keepdims=True)
        lse = m + np.log(np.sum(np.exp(logd - m), axis=1, keepdims=True))
        ll = float(np.sum(lse))
        ll_out[it] = ll
        iters = it + 1
        if it > 0 and ll - ll_prev < tol:
            converged = True
            break
        ll_prev = ll

        resp = np.exp(logd - lse)
        nk = resp.sum(axis=0)
        for j in range(means.shape[0]):
            if nk[j] < 1e-10:
                # dead component: freeze its parameters, zero its weight
                weights[j] = nk[j] / n
                continue
            weights[j] = nk[j] / n
            mu = resp[:, j] @ points / nk[j]
            means[j] = mu
            diff = points - mu
            cov = (resp[:, j][:, None] * diff).T @ diff / nk[j]
            covs[j] = _floor_covariance(cov, floor)
    return iters, converged
