"""Frequency-domain model evaluation and directed coupling metrics.

From a fitted VAR the per-frequency system matrix ``A(f) = I - sum_k
A_k exp(-i 2 pi f k / fs)``, transfer function ``H(f) = A(f)^-1`` and
spectral density ``S(f) = H Sigma H*`` are computed on a grid.  Six
metric variants are derived from them:

``dtf``      inflow-normalized |H_ij|^2, rows sum to 1 per frequency.
``ffdtf``    the same with the denominator summed over the whole grid.
``ddtf``     ffdtf weighted by squared partial coherence, which
             suppresses indirect routes.
``pdc``      outflow-normalized |A_ij|^2, columns sum to 1.
``gpdc``     pdc with entries weighted by innovation variances.
``rpdc``     a quadratic-form statistic using the inverse stacked
             process covariance, comparable across frequencies.

All squared-magnitude metrics are invariant to the global sign of
A(f), so the ``I - sum`` convention used here is interchangeable with
the negated form some texts print.
"""

import json
import struct
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .accel import USE_NUMBA, maybe_jit
from .errors import ConfigError, FormatError, NumericalError
from .mvar import VarModel, WindowedVarModels, stability_check
from .varsim import companion_matrix

ECT_MAGIC = b"ECT1"

METRICS = ("dtf", "ffdtf", "ddtf", "pdc", "gpdc", "rpdc")
# the five headline metrics; ffdtf is additionally exposed because the
# plain and full-frequency readings of the DTF differ
DEFAULT_METRICS = ("dtf", "ddtf", "pdc", "gpdc", "rpdc")

COND_LIMIT = 1e12


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly increasing evaluation frequencies in Hz."""

    freqs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "freqs",
                           np.asarray(self.freqs, dtype=np.float64))
        f = self.freqs
        if f.size == 0:
            raise ConfigError("frequency grid is empty")
        if np.any(np.diff(f) <= 0):
            raise ConfigError("frequencies must be strictly increasing")
        if f[0] <= 0:
            raise ConfigError("frequencies must be positive")

    def validate_for(self, fs: float):
        if self.freqs[-1] >= fs / 2:
            raise ConfigError(
                f"grid reaches {self.freqs[-1]} Hz, at or beyond Nyquist "
                f"({fs / 2} Hz)"
            )


def default_grid(f_min: float = 1.0, f_max: float = 40.0,
                 step: float = 1.0) -> FrequencyGrid:
    n = int(round((f_max - f_min) / step)) + 1
    return FrequencyGrid(f_min + step * np.arange(n))


@dataclass
class SpectralMatrices:
    """A(f), H(f) and S(f) stacked over the grid, shape (n_f, K, K).

    ``freq_ok`` flags frequencies where A(f) was well-conditioned;
    entries at flagged-off frequencies are NaN.
    """

    freqs: np.ndarray
    A: np.ndarray
    H: np.ndarray
    S: np.ndarray
    noise_cov: np.ndarray
    fs: float
    freq_ok: np.ndarray


@dataclass
class ProcessCovariance:
    """Stationary covariance of the stacked state of a stable VAR."""

    R: np.ndarray


def evaluate_spectrum(model: VarModel, grid: FrequencyGrid) -> SpectralMatrices:
    """Evaluate system matrix, transfer function and spectral density.

    Frequencies where A(f) has condition number above 1e12 are flagged
    in ``freq_ok`` and carry NaN entries instead of raising.
    """
    grid.validate_for(model.fs)
    stable, radius = stability_check(model)
    if not stable:
        warnings.warn(
            f"model companion radius {radius:.4f} >= 1; spectrum is not "
            "that of a stationary process", RuntimeWarning, stacklevel=2)
    freqs = grid.freqs
    rho, K = model.order, model.K
    lags = np.arange(1, rho + 1)
    phases = np.exp(-2j * np.pi * np.outer(freqs, lags) / model.fs)
    A = np.broadcast_to(np.eye(K, dtype=np.complex128),
                        (freqs.size, K, K)).copy()
    A -= np.einsum("fk,kij->fij", phases, model.coeffs)

    svals = np.linalg.svd(A, compute_uv=False)
    with np.errstate(divide="ignore"):
        cond = svals[:, 0] / svals[:, -1]
    ok = np.isfinite(cond) & (cond < COND_LIMIT)

    H = np.full_like(A, np.nan)
    if np.any(ok):
        H[ok] = np.linalg.inv(A[ok])
    S = np.full_like(A, np.nan)
    if np.any(ok):
        S[ok] = H[ok] @ model.noise_cov @ H[ok].conj().transpose(0, 2, 1)
    return SpectralMatrices(freqs=freqs.copy(), A=A, H=H, S=S,
                            noise_cov=model.noise_cov.copy(), fs=model.fs,
                            freq_ok=ok)


def dtf(spec: SpectralMatrices) -> np.ndarray:
    """Per-frequency squared DTF; each row sums to one."""
    h2 = np.abs(spec.H) ** 2
    denom = h2.sum(axis=2, keepdims=True)
    if not np.all((denom > 0) | ~spec.freq_ok[:, None, None]):
        raise NumericalError("zero inflow row in transfer function")
    return h2 / denom


def ffdtf(spec: SpectralMatrices) -> np.ndarray:
    """Full-frequency DTF: denominator summed over the entire grid, so
    each row sums to one over (source, frequency) jointly."""
    h2 = np.abs(spec.H) ** 2
    denom = h2.sum(axis=(0, 2))
    if not np.all(denom > 0):
        raise NumericalError("zero inflow row in transfer function")
    return h2 / denom[np.newaxis, :, np.newaxis]


def partial_coherence(spec: SpectralMatrices) -> np.ndarray:
    """Squared partial coherence from the inverse spectral matrix.

    Values lie in [0, 1]; the diagonal is one by convention.  A barely
    singular S(f) is ridged by 1e-12 * trace(S)/K before inversion.
    """
    n_f, K, _ = spec.S.shape
    out = np.full((n_f, K, K), np.nan)
    eye = np.eye(K)
    for fi in range(n_f):
        if not spec.freq_ok[fi]:
            continue
        S = spec.S[fi]
        try:
            D = np.linalg.inv(S)
        except np.linalg.LinAlgError:
            eps = 1e-12 * float(np.trace(S).real) / K
            try:
                D = np.linalg.inv(S + eps * eye)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(
                    f"spectral matrix singular after regularization at "
                    f"{spec.freqs[fi]} Hz"
                ) from exc
        d = np.clip(np.abs(D.diagonal().real), 1e-300, None)
        out[fi] = np.abs(D) ** 2 / np.outer(d, d)
        np.fill_diagonal(out[fi], 1.0)
    return out


def ddtf(spec: SpectralMatrices) -> np.ndarray:
    """Direct DTF: full-frequency DTF times squared partial coherence."""
    return ffdtf(spec) * partial_coherence(spec)


def pdc(spec: SpectralMatrices) -> np.ndarray:
    """Per-frequency squared PDC; each column sums to one."""
    a2 = np.abs(spec.A) ** 2
    denom = a2.sum(axis=1, keepdims=True)
    if not np.all(denom > 0):
        raise NumericalError("zero outflow column in system matrix")
    return a2 / denom


def gpdc(spec: SpectralMatrices, noise_cov: Optional[np.ndarray] = None) -> np.ndarray:
    """Squared generalized PDC: entries weighted by innovation variances,
    which removes channel-scale dependence; columns sum to one."""
    sigma = spec.noise_cov if noise_cov is None else np.asarray(noise_cov)
    var = sigma.diagonal().astype(np.float64)
    if np.any(var <= 0):
        raise NumericalError(f"non-positive innovation variance: {var}")
    a2w = np.abs(spec.A) ** 2 / var[np.newaxis, :, np.newaxis]
    denom = a2w.sum(axis=1, keepdims=True)
    if not np.all(denom > 0):
        raise NumericalError("zero weighted outflow column")
    return a2w / denom


def process_covariance(model: VarModel, tol: float = 1e-10,
                       max_doublings: int = 200) -> ProcessCovariance:
    """Stationary stacked-state covariance by doubling iteration.

    Solves ``R = F R F' + Q`` with F the companion matrix and Q the
    noise covariance embedded in the leading block, doubling the power
    of F each step until the relative residual drops below ``tol``.
    """
    stable, radius = stability_check(model)
    if not stable:
        raise NumericalError(
            f"unstable model (radius {radius:.4f}) has no stationary covariance"
        )
    K, rho = model.K, model.order
    F = companion_matrix(model.coeffs)
    Q = np.zeros((K * rho, K * rho))
    Q[:K, :K] = model.noise_cov
    R = Q.copy()
    A = F.copy()
    qnorm = max(np.linalg.norm(Q), 1e-300)
    for _ in range(max_doublings):
        R = R + A @ R @ A.T
        R = 0.5 * (R + R.T)
        A = A @ A
        resid = np.linalg.norm(R - F @ R @ F.T - Q)
        if resid < tol * max(np.linalg.norm(R), qnorm):
            return ProcessCovariance(R=R)
    raise NumericalError(
        f"Lyapunov doubling did not reach residual {tol} within "
        f"{max_doublings} iterations"
    )


def _sym2_pinv(a, b, c, rtol):
    # Pseudo-inverse of the symmetric PSD 2x2 [[a, b], [b, c]]; singular
    # values below rtol * largest are treated as zero (the matrix is
    # rank one at omega = 0 and Nyquist).
    half_tr = 0.5 * (a + c)
    disc = np.sqrt(max(0.25 * (a - c) * (a - c) + b * b, 0.0))
    lam1 = half_tr + disc
    lam2 = half_tr - disc
    if lam1 <= 0.0:
        return 0.0, 0.0, 0.0
    if lam2 > rtol * lam1:
        det = a * c - b * b
        return c / det, -b / det, a / det
    vx = b
    vy = lam1 - a
    nrm = np.sqrt(vx * vx + vy * vy)
    if nrm == 0.0:
        if a >= c:
            vx, vy = 1.0, 0.0
        else:
            vx, vy = 0.0, 1.0
        nrm = 1.0
    vx /= nrm
    vy /= nrm
    return vx * vx / lam1, vx * vy / lam1, vy * vy / lam1


def _rpdc_loops(re_a, im_a, g_blocks, sigma_diag, omegas, rtol):
    n_f, K, _ = re_a.shape
    rho = g_blocks.shape[1]
    lam = np.zeros((n_f, K, K))
    cosw = np.empty(rho)
    sinw = np.empty(rho)
    for fi in range(n_f):
        w = omegas[fi]
        for k in range(rho):
            cosw[k] = np.cos(w * (k + 1))
            sinw[k] = np.sin(w * (k + 1))
        for j in range(K):
            a11 = 0.0
            a12 = 0.0
            a22 = 0.0
            for k in range(rho):
                gc = 0.0
                gs = 0.0
                for l in range(rho):
                    g = g_blocks[j, k, l]
                    gc += g * cosw[l]
                    gs += g * sinw[l]
                a11 += cosw[k] * gc
                a12 += cosw[k] * gs
                a22 += sinw[k] * gs
            m11, m12, m22 = _sym2_pinv(a11, a12, a22, rtol)
            for i in range(K):
                q1 = re_a[fi, i, j]
                q2 = im_a[fi, i, j]
                quad = q1 * q1 * m11 + 2.0 * q1 * q2 * m12 + q2 * q2 * m22
                lam[fi, i, j] = quad / sigma_diag[i]
    return lam


if USE_NUMBA:
    _sym2_pinv = maybe_jit(_sym2_pinv)
    _rpdc_kernel = maybe_jit(_rpdc_loops)
else:
    _rpdc_kernel = None


def _rpdc_numpy(re_a, im_a, g_blocks, sigma_diag, omegas, rtol):
    n_f, K, _ = re_a.shape
    rho = g_blocks.shape[1]
    lags = np.arange(1, rho + 1)
    U = np.stack([np.cos(np.outer(omegas, lags)),
                  np.sin(np.outer(omegas, lags))], axis=2)  # (n_f, rho, 2)
    V = np.einsum("jkl,fka,flb->fjab", g_blocks, U, U)
    lam = np.zeros((n_f, K, K))
    for fi in range(n_f):
        for j in range(K):
            a, b = V[fi, j, 0]
            c = V[fi, j, 1, 1]
            m11, m12, m22 = _sym2_pinv(a, b, c, rtol)
            q1 = re_a[fi, :, j]
            q2 = im_a[fi, :, j]
            lam[fi, :, j] = (q1 * q1 * m11 + 2.0 * q1 * q2 * m12
                             + q2 * q2 * m22) / sigma_diag
    return lam


def rpdc(spec: SpectralMatrices, model: VarModel,
         R: Optional[ProcessCovariance] = None) -> np.ndarray:
    """Renormalized coupling statistic lambda_ij(f).

    For each target i, source j and frequency, the real/imaginary pair
    of A_ij(f) is measured in the metric given by the inverse stacked
    process covariance restricted to channel j, scaled by the target's
    innovation variance.  The 2x2 weighting matrix is rank one at 0 and
    Nyquist, where a pseudo-inverse (cutoff 1e-12 of the largest
    singular value) is used.
    """
    if R is None:
        R = process_covariance(model)
    rho, K = model.order, model.K
    r_inv = np.linalg.inv(R.R)
    g_blocks = np.empty((K, rho, rho))
    for j in range(K):
        ids = j + K * np.arange(rho)
        g_blocks[j] = r_inv[np.ix_(ids, ids)]
    sigma_diag = model.noise_cov.diagonal().astype(np.float64)
    if np.any(sigma_diag <= 0):
        raise NumericalError("non-positive innovation variance")
    omegas = 2.0 * np.pi * spec.freqs / spec.fs
    re_a = np.ascontiguousarray(spec.A.real)
    im_a = np.ascontiguousarray(spec.A.imag)
    rtol = 1e-12
    if USE_NUMBA:
        lam = _rpdc_kernel(re_a, im_a, g_blocks, sigma_diag, omegas, rtol)
    else:
        lam = _rpdc_numpy(re_a, im_a, g_blocks, sigma_diag, omegas, rtol)
    bad = ~spec.freq_ok
    if np.any(bad):
        lam[bad] = np.nan
    return lam


@dataclass
class ConnectivityTensor:
    """Coupling values indexed (to, from, frequency, window).

    Windows whose model fit or spectrum failed are flagged invalid and
    hold zeros; consumers must skip them when averaging.
    """

    metric: str
    values: np.ndarray
    freqs: np.ndarray
    window_starts: list
    valid_windows: list
    errors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 4:
            raise ConfigError("tensor values must be 4-D (to, from, f, w)")
        K1, K2, n_f, n_w = self.values.shape
        if K1 != K2 or n_f != len(self.freqs) or n_w != len(self.window_starts):
            raise ConfigError(
                f"tensor dims {self.values.shape} inconsistent with metadata"
            )
        if len(self.valid_windows) != n_w:
            raise ConfigError("valid_windows length mismatch")


def _metric_values(model: VarModel, metric: str, grid: FrequencyGrid) -> np.ndarray:
    spec = evaluate_spectrum(model, grid)
    if metric == "dtf":
        vals = dtf(spec)
    elif metric == "ffdtf":
        vals = ffdtf(spec)
    elif metric == "ddtf":
        vals = ddtf(spec)
    elif metric == "pdc":
        vals = pdc(spec)
    elif metric == "gpdc":
        vals = gpdc(spec)
    elif metric == "rpdc":
        vals = rpdc(spec, model)
    else:
        raise ConfigError(f"unknown metric {metric!r}")
    if not np.all(np.isfinite(vals)):
        raise NumericalError(
            f"{metric}: non-finite values (ill-conditioned spectrum)"
        )
    return vals


def compute_connectivity(windowed: WindowedVarModels, metric: str,
                         grid: FrequencyGrid) -> ConnectivityTensor:
    """Evaluate one metric for every window into a 4-D tensor.

    Windows with failed fits, or whose spectrum/metric evaluation fails,
    are marked invalid (zeros stored) and their error recorded; the
    band/window averaging in :mod:`ecselect.icec` adjusts its
    denominator accordingly.
    """
    n_w = windowed.n_windows
    if n_w == 0:
        raise ConfigError("no windows to evaluate")
    first = next((m for m in windowed.models if m is not None), None)
    if first is None:
        raise NumericalError("every window fit failed")
    grid.validate_for(first.fs)
    K = first.K
    n_f = grid.freqs.size
    values = np.zeros((K, K, n_f, n_w))
    valid = [False] * n_w
    errors = dict(windowed.errors)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for w, model in enumerate(windowed.models):
            if model is None:
                continue
            try:
                vals = _metric_values(model, metric, grid)
            except (NumericalError, ConfigError) as exc:
                errors[w] = str(exc)
                continue
            values[:, :, :, w] = vals.transpose(1, 2, 0)
            valid[w] = True
    if not any(valid):
        raise NumericalError(f"{metric}: no window produced finite values")
    return ConnectivityTensor(
        metric=metric,
        values=values,
        freqs=grid.freqs.copy(),
        window_starts=list(windowed.window_start_samples),
        valid_windows=valid,
        errors=errors,
    )


def save_tensor(tensor: ConnectivityTensor, path) -> None:
    """Write the ECT1 binary container (float32 payload)."""
    K, _, n_f, n_w = tensor.values.shape
    header = {
        "metric": tensor.metric,
        "dims": [K, K, n_f, n_w],
        "freqs": [float(f) for f in tensor.freqs],
        "window_starts": [int(s) for s in tensor.window_starts],
        "valid_windows": [bool(v) for v in tensor.valid_windows],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ECT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(tensor.values, dtype="<f4").tobytes())


def load_tensor(path) -> ConnectivityTensor:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != ECT_MAGIC:
        raise FormatError(f"{path}: not an ECT1 file (bad magic)")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8: 8 + hlen].decode("utf-8"))
        dims = [int(d) for d in header["dims"]]
        freqs = np.asarray(header["freqs"], dtype=np.float64)
        starts = [int(s) for s in header["window_starts"]]
        valid = [bool(v) for v in header["valid_windows"]]
        metric = header["metric"]
    except (KeyError, TypeError, ValueError, UnicodeDecodeError,
            json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed ECT1 header: {exc}") from exc
    expected = int(np.prod(dims))
    payload = np.frombuffer(raw[8 + hlen:], dtype="<f4")
    if payload.size != expected:
        raise FormatError(
            f"{path}: header declares {expected} values, payload holds "
            f"{payload.size}"
        )
    values = payload.astype(np.float64).reshape(dims)
    return ConnectivityTensor(metric=metric, values=values, freqs=freqs,
                              window_starts=starts, valid_windows=valid)
