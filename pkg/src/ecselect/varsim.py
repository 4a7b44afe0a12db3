"""Forward simulation of vector autoregressive processes.

The time-stepping loop is the hot spot of every generator and of the
model consistency diagnostic, so it carries a numba kernel with a
numpy fallback (see :mod:`ecselect.accel`).
"""

import numpy as np

from .accel import USE_NUMBA, maybe_jit
from .errors import NumericalError


def _simulate_loops(coeffs, innov):
    # x[t] = sum_k coeffs[k] @ x[t-1-k] + innov[t]; x before t=0 is zero.
    rho, K, _ = coeffs.shape
    T = innov.shape[0]
    x = np.zeros((T, K))
    for t in range(T):
        for i in range(K):
            acc = innov[t, i]
            kmax = min(rho, t)
            for k in range(kmax):
                row = coeffs[k]
                tp = t - 1 - k
                for j in range(K):
                    acc += row[i, j] * x[tp, j]
            x[t, i] = acc
    return x


def _simulate_numpy(coeffs, innov):
    rho, K, _ = coeffs.shape
    T = innov.shape[0]
    x = np.zeros((T, K))
    for t in range(T):
        acc = innov[t].copy()
        for k in range(min(rho, t)):
            acc += coeffs[k] @ x[t - 1 - k]
        x[t] = acc
    return x


_simulate_jit = maybe_jit(_simulate_loops)


def simulate_var(coeffs, innov):
    """Drive a VAR with the given innovation sequence.

    Parameters
    ----------
    coeffs : ndarray, shape (order, K, K)
        Lag coefficient matrices, lag 1 first.
    innov : ndarray, shape (T, K)
        Innovation samples, already colored by the noise covariance.

    Returns
    -------
    ndarray, shape (T, K)
        Simulated process started from zeros.
    """
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    innov = np.ascontiguousarray(innov, dtype=np.float64)
    if USE_NUMBA:
        return _simulate_jit(coeffs, innov)
    return _simulate_numpy(coeffs, innov)


def noise_transform(sigma):
    """Matrix L with L @ L.T = sigma, for coloring unit-variance draws.

    Cholesky when positive definite, symmetric eigenvalue square root
    for the merely positive semidefinite case.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(sigma)
        if np.min(w) < -1e-8 * max(np.max(w), 1.0):
            raise NumericalError("noise covariance is not positive semidefinite")
        return v * np.sqrt(np.clip(w, 0.0, None))


def companion_matrix(coeffs):
    """Stack lag matrices into the (K*order) square companion form."""
    rho, K, _ = coeffs.shape
    F = np.zeros((K * rho, K * rho))
    F[:K, :] = np.concatenate([coeffs[k] for k in range(rho)], axis=1)
    if rho > 1:
        F[K:, :-K] = np.eye(K * (rho - 1))
    return F


def spectral_radius(coeffs):
    """Largest eigenvalue modulus of the companion matrix."""
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(coeffs)))))
