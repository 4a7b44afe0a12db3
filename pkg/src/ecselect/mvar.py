"""Multichannel autoregressive model estimation and validation.

Models are fit with the geometric-mean (Vieira-Morf) multichannel
lattice: at each stage the forward/backward prediction-error covariances
and their cross covariance are accumulated over every trial, the
normalized partial correlation matrix is formed with symmetric matrix
square roots, and the coefficient matrices are updated by the
Levinson-Whittle-Wiggins-Robinson recursion.  Because the normalized
partial correlation has singular values bounded by one on real data,
the fitted model is stable.

Order selection uses the Akaike criterion on the fitted residual
covariance; validation covers stability (companion spectral radius),
residual whiteness (multivariate portmanteau), and percent consistency
against a simulation of the fitted model.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import chi2

from .epochs import EpochSet
from .errors import ConfigError, NumericalError
from .varsim import companion_matrix, noise_transform, simulate_var


@dataclass
class VarModel:
    """Fitted VAR: lag matrices, residual covariance, and bookkeeping.

    ``coeffs[k]`` is the lag-(k+1) coefficient matrix in
    ``x(t) = sum_k coeffs[k] @ x(t-1-k) + e(t)``; ``n_obs`` is the
    number of data points the fit consumed (used by the AIC penalty).
    """

    order: int
    coeffs: np.ndarray
    noise_cov: np.ndarray
    fs: float
    n_obs: int

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        self.noise_cov = np.asarray(self.noise_cov, dtype=np.float64)
        if self.order < 1 or self.coeffs.shape[0] != self.order:
            raise ConfigError(f"bad order {self.order} for coeff stack "
                              f"{self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs)):
            raise NumericalError("non-finite model coefficients")
        if not np.all(np.isfinite(self.noise_cov)):
            raise NumericalError("non-finite residual covariance")
        asym = np.max(np.abs(self.noise_cov - self.noise_cov.T))
        if asym > 1e-10 * max(1.0, np.max(np.abs(self.noise_cov))):
            raise NumericalError(f"residual covariance asymmetry {asym:g}")

    @property
    def K(self):
        return self.coeffs.shape[1]


@dataclass
class OrderSelection:
    """AIC values per candidate order; failed candidates hold NaN."""

    candidate_orders: list
    aic_values: list
    chosen: int


@dataclass
class ValidationReport:
    stable: bool
    max_eigen_modulus: float
    whiteness_pvalue: float
    percent_consistency: float


@dataclass
class WindowedVarModels:
    """One model per sliding window; a failed window holds None and its
    error message is kept in ``errors`` keyed by window index."""

    window_length_s: float
    step_s: float
    window_length_samples: int
    step_samples: int
    window_start_samples: list
    models: list
    fs: float
    errors: dict = field(default_factory=dict)

    @property
    def n_windows(self):
        return len(self.window_start_samples)

    @property
    def valid(self):
        return [m is not None for m in self.models]


def _as_trials(epochs, fs):
    if isinstance(epochs, EpochSet):
        return epochs.data, epochs.fs
    data = np.asarray(epochs, dtype=np.float64)
    if data.ndim == 2:
        data = data[np.newaxis]
    if data.ndim != 3:
        raise ConfigError(f"expected (trials, channels, samples), got {data.shape}")
    if fs is None:
        raise ConfigError("fs required when fitting a raw array")
    return data, fs


def _sym_sqrt_pair(P):
    """(P^{1/2}, P^{-1/2}) of a symmetric PSD matrix via eigh."""
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    wmax = float(w[-1])
    if wmax <= 0.0 or w[0] < wmax * 1e-12:
        raise NumericalError(
            "numerically singular prediction-error covariance in lattice "
            f"recursion (eigenvalues {w[0]:.3e}..{wmax:.3e})"
        )
    s = np.sqrt(w)
    return (V * s) @ V.T, (V / s) @ V.T


def fit_vieira_morf(epochs, order: int, fs: Optional[float] = None) -> VarModel:
    """Fit a VAR(order) by the multichannel geometric-mean lattice.

    Accepts an :class:`EpochSet` or a raw ``(trials, channels, samples)``
    array (then ``fs`` is required).  The per-trial, per-channel mean is
    removed before the recursion.  Error covariances are aggregated
    across all trials at every stage; the returned ``noise_cov`` is the
    final forward prediction-error covariance, symmetrized.
    """
    data, fs = _as_trials(epochs, fs)
    n_trials, K, n = data.shape
    if order < 1:
        raise ConfigError(f"order must be >= 1, got {order}")
    usable = n_trials * max(n - order, 0)
    if usable < 5 * order * K:
        raise ConfigError(
            f"{usable} usable samples < identifiability floor "
            f"{5 * order * K} (= 5 * order * channels)"
        )

    x = data - data.mean(axis=2, keepdims=True)
    F = x.copy()
    B = x.copy()
    A_list, B_list = [], []
    for p in range(1, order + 1):
        Fv = F[:, :, p:]
        Bv = B[:, :, p - 1: n - 1]
        cnt = n_trials * (n - p)
        delta = np.tensordot(Fv, Bv, axes=([0, 2], [0, 2])) / cnt
        Pf = np.tensordot(Fv, Fv, axes=([0, 2], [0, 2])) / cnt
        Pb = np.tensordot(Bv, Bv, axes=([0, 2], [0, 2])) / cnt
        Pf_h, Pf_ih = _sym_sqrt_pair(Pf)
        Pb_h, Pb_ih = _sym_sqrt_pair(Pb)
        rho = Pf_ih @ delta @ Pb_ih
        Kf = Pf_h @ rho @ Pb_ih
        Kb = Pb_h @ rho.T @ Pf_ih
        A_list, B_list = (
            [A_list[k] - Kf @ B_list[p - 2 - k] for k in range(p - 1)] + [Kf],
            [B_list[k] - Kb @ A_list[p - 2 - k] for k in range(p - 1)] + [Kb],
        )
        Fn = np.zeros_like(F)
        Bn = np.zeros_like(B)
        Fn[:, :, p:] = Fv - np.matmul(Kf, Bv)
        Bn[:, :, p:] = Bv - np.matmul(Kb, Fv)
        F, B = Fn, Bn

    resid = F[:, :, order:]
    sigma = np.tensordot(resid, resid, axes=([0, 2], [0, 2]))
    sigma /= n_trials * (n - order)
    sigma = 0.5 * (sigma + sigma.T)
    return VarModel(order=order, coeffs=np.stack(A_list), noise_cov=sigma,
                    fs=fs, n_obs=n_trials * n)


def aic_value(log_det_cov: float, order: int, n_channels: int, n_obs: int) -> float:
    """Akaike criterion: residual log-determinant plus the parameter
    penalty 2 * order * K^2 / N."""
    return log_det_cov + 2.0 * order * n_channels ** 2 / n_obs


def select_order(epochs, candidate_orders, fs: Optional[float] = None) -> OrderSelection:
    """Fit every candidate order and keep the AIC minimizer.

    Candidates whose fit fails or whose residual covariance has a
    non-positive determinant are excluded; ties break toward the
    smaller order.
    """
    candidates = list(candidate_orders)
    if not candidates:
        raise ConfigError("candidate order list is empty")
    aics = []
    best = None
    for rho in candidates:
        try:
            model = fit_vieira_morf(epochs, rho, fs=fs)
            sign, logdet = np.linalg.slogdet(model.noise_cov)
            if sign <= 0:
                raise NumericalError("non-positive residual determinant")
            value = aic_value(logdet, rho, model.K, model.n_obs)
        except (ConfigError, NumericalError):
            aics.append(float("nan"))
            continue
        aics.append(value)
        if best is None or (value, rho) < best:
            best = (value, rho)
    if best is None:
        raise NumericalError(
            f"all candidate orders {candidates} failed AIC evaluation"
        )
    return OrderSelection(candidate_orders=candidates, aic_values=aics,
                          chosen=best[1])


def stability_check(model: VarModel):
    """Companion-matrix spectral radius; stable iff it is below one."""
    radius = float(np.max(np.abs(np.linalg.eigvals(companion_matrix(model.coeffs)))))
    return radius < 1.0, radius


def residuals(model: VarModel, epochs, fs: Optional[float] = None) -> np.ndarray:
    """One-step prediction errors e(t) for t >= order, per trial.

    The per-trial, per-channel mean is removed first, matching the fit.
    """
    data, _ = _as_trials(epochs, fs if fs is not None else model.fs)
    n_trials, K, n = data.shape
    rho = model.order
    if n <= rho:
        raise ConfigError(f"trials of {n} samples cannot host order {rho}")
    x = data - data.mean(axis=2, keepdims=True)
    e = x[:, :, rho:].copy()
    for k in range(rho):
        e -= np.matmul(model.coeffs[k], x[:, :, rho - 1 - k: n - 1 - k])
    return e


def _pooled_lag_covariances(series, max_lag):
    """Average e(t) e(t-l)^T over trials and time, lags 0..max_lag."""
    n_trials, K, n = series.shape
    total = n_trials * n
    out = np.empty((max_lag + 1, K, K))
    for lag in range(max_lag + 1):
        a = series[:, :, lag:]
        b = series[:, :, : n - lag]
        out[lag] = np.tensordot(a, b, axes=([0, 2], [0, 2])) / total
    return out


def whiteness_check(model: VarModel, epochs, max_lag: int = 20,
                    fs: Optional[float] = None) -> float:
    """Multivariate portmanteau test on the model residuals.

    Returns the p-value of the Ljung-Box style statistic referred to a
    chi-square with K^2 * (max_lag - order) degrees of freedom; small
    values indicate serially or cross-correlated residuals.
    """
    if max_lag <= model.order:
        raise ConfigError(
            f"max_lag must exceed the model order {model.order} "
            f"(got {max_lag}), otherwise no degrees of freedom remain"
        )
    e = residuals(model, epochs, fs=fs)
    n_trials, K, n = e.shape
    if n <= max_lag:
        raise ConfigError(f"residual length {n} too short for lag {max_lag}")
    e = e - e.mean(axis=2, keepdims=True)
    covs = _pooled_lag_covariances(e, max_lag)
    c0_inv = np.linalg.inv(covs[0])
    n_total = n_trials * n
    stat = 0.0
    for lag in range(1, max_lag + 1):
        m = covs[lag]
        stat += np.trace(m.T @ c0_inv @ m @ c0_inv) / (n_total - lag)
    stat *= n_total ** 2
    dof = K ** 2 * (max_lag - model.order)
    return float(chi2.sf(stat, dof))


def _correlation_stack(series, max_lag):
    covs = _pooled_lag_covariances(series - series.mean(axis=2, keepdims=True),
                                   max_lag)
    d = np.sqrt(np.clip(np.diag(covs[0]), 1e-300, None))
    return covs / np.outer(d, d)


def consistency_check(model: VarModel, epochs, max_lag: int = 20,
                      seed: int = 0, fs: Optional[float] = None) -> float:
    """Percent agreement between data and simulated correlation structure.

    Simulates the fitted model (seeded) with matched trial count and
    length, stacks auto/cross-correlations up to ``max_lag``, and
    returns ``100 * (1 - ||R_data - R_sim|| / ||R_data||)`` (Frobenius).
    """
    data, _ = _as_trials(epochs, fs if fs is not None else model.fs)
    n_trials, K, n = data.shape
    max_lag = min(max_lag, n - 2)
    burn = 10 * model.order
    L = noise_transform(model.noise_cov)
    sim = np.empty_like(data)
    for t, child in enumerate(np.random.SeedSequence(seed).spawn(n_trials)):
        rng = np.random.default_rng(child)
        innov = rng.standard_normal((burn + n, K)) @ L.T
        sim[t] = simulate_var(model.coeffs, innov)[burn:].T
    r_real = _correlation_stack(data, max_lag)
    r_sim = _correlation_stack(sim, max_lag)
    denom = np.linalg.norm(r_real)
    if denom == 0.0:
        return 100.0
    return float(100.0 * (1.0 - np.linalg.norm(r_real - r_sim) / denom))


def validate(model: VarModel, epochs, max_lag: int = 20, seed: int = 0,
             fs: Optional[float] = None) -> ValidationReport:
    """Bundle the three diagnostics.  These never gate a pipeline run;
    callers record the report and proceed."""
    stable, radius = stability_check(model)
    try:
        pval = whiteness_check(model, epochs, max_lag=max_lag, fs=fs)
    except ConfigError:
        pval = float("nan")
    consistency = consistency_check(model, epochs, max_lag=max_lag, seed=seed,
                                    fs=fs)
    return ValidationReport(stable=stable, max_eigen_modulus=radius,
                            whiteness_pvalue=pval,
                            percent_consistency=consistency)


def window_samples(window_length_s: float, step_s: float, fs: float):
    """Window geometry in samples: nearest-sample rounding, halves up,
    with a 1e-9 nudge so second values like 0.03 * 250 land on 8.

    Window counts depend on this rule, so it is fixed here rather than
    left to float representation.
    """
    win = int(np.floor(window_length_s * fs + 0.5 + 1e-9))
    step = max(1, int(np.floor(step_s * fs + 0.5 + 1e-9)))
    return win, step


def _worker_count():
    raw = os.environ.get("ECSELECT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def fit_windowed(epochs, order: int, window_length_s: float = 0.5,
                 step_s: float = 0.03, fs: Optional[float] = None,
                 workers: Optional[int] = None) -> WindowedVarModels:
    """Fit one model per sliding window across all trials.

    Window count is ``floor((n_samples - win) / step) + 1``.  Windows
    whose fit fails numerically are kept as None entries with the error
    recorded, so downstream averaging can skip them.  Fits are
    independent; with ``workers`` > 1 (default: the ECSELECT_THREADS
    environment variable) they run on a thread pool, results ordered by
    window index regardless of completion order.
    """
    data, fs = _as_trials(epochs, fs)
    n_trials, K, n = data.shape
    win, step = window_samples(window_length_s, step_s, fs)
    if step_s <= 0:
        raise ConfigError("step must be positive")
    if win < 2 * order:
        raise ConfigError(
            f"window of {win} samples too short for order {order} "
            f"(need at least {2 * order})"
        )
    if win > n:
        raise ConfigError(f"window of {win} samples exceeds trials of {n}")
    starts = list(range(0, n - win + 1, step))

    def fit_one(start):
        try:
            return fit_vieira_morf(data[:, :, start: start + win], order, fs=fs), None
        except (ConfigError, NumericalError) as exc:
            return None, str(exc)

    if workers is None:
        workers = _worker_count()
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fit_one, starts))
    else:
        results = [fit_one(s) for s in starts]

    models = [m for m, _ in results]
    errors = {i: msg for i, (_, msg) in enumerate(results) if msg is not None}
    return WindowedVarModels(
        window_length_s=window_length_s,
        step_s=step_s,
        window_length_samples=win,
        step_samples=step,
        window_start_samples=starts,
        models=models,
        fs=fs,
        errors=errors,
    )
