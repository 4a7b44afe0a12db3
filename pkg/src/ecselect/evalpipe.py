"""Channel-selection evaluation: CSP features, RBF SVM, accuracy sweeps.

A selection is judged the same way regardless of how it was produced:
restrict both datasets to the selected channels, band-pass 8-30 Hz
(order 3, zero phase), extract log-variance features with common
spatial patterns (binary, or one-vs-rest for three or more classes),
train a soft-margin RBF SVM with sequential minimal optimization, and
score accuracy on the held-out set.  Sweeping the selection size yields
accuracy-versus-k curves.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import eigh

from .accel import maybe_jit
from .epochs import BandSpec, EpochSet, bandpass_filter
from .errors import ConfigError, NumericalError
from .icec import IcecReport

EVAL_BAND = BandSpec(8.0, 30.0, "broad")
EVAL_FILTER_ORDER = 3


# ---------------------------------------------------------------------------
# Common spatial patterns
# ---------------------------------------------------------------------------


@dataclass
class CspModel:
    """Spatial filters from the generalized eigenproblem
    C_A w = lambda (C_A + C_B) w.

    ``filters`` holds 2m rows: the first m maximize the class-A variance
    ratio, the last m class-B.  ``eigenvalues`` (descending, in [0, 1])
    are kept for diagnostics; rows satisfy W (C_A + C_B) W' = I.
    """

    n_pairs: int
    filters: np.ndarray
    eigenvalues: np.ndarray


def _mean_normalized_cov(data):
    # per-trial covariance normalized by trace, then averaged
    x = data - data.mean(axis=2, keepdims=True)
    covs = np.matmul(x, x.transpose(0, 2, 1))
    traces = np.trace(covs, axis1=1, axis2=2)
    if np.any(traces <= 0):
        raise NumericalError("zero-variance trial in CSP covariance")
    return (covs / traces[:, None, None]).mean(axis=0)


def csp_fit(epochs_a: EpochSet, epochs_b: EpochSet, n_pairs: int) -> CspModel:
    """Fit binary CSP filters from two classes of epochs."""
    if epochs_a.n_channels != epochs_b.n_channels:
        raise ConfigError("class datasets disagree on channel count")
    if epochs_a.fs != epochs_b.fs:
        raise ConfigError("class datasets disagree on sampling rate")
    K = epochs_a.n_channels
    if epochs_a.n_trials < 2 or epochs_b.n_trials < 2:
        raise ConfigError("each class needs at least 2 trials")
    if 2 * n_pairs > K:
        raise ConfigError(f"2 * {n_pairs} filter pairs exceed {K} channels")
    c_a = _mean_normalized_cov(epochs_a.data)
    c_b = _mean_normalized_cov(epochs_b.data)
    composite = c_a + c_b
    w_comp = np.linalg.eigvalsh(composite)
    if w_comp[0] <= 1e-12 * max(w_comp[-1], 1e-300):
        composite = composite + 1e-9 * np.trace(composite) * np.eye(K)
    try:
        vals, vecs = eigh(c_a, composite)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"CSP eigenproblem failed: {exc}") from exc
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    W = vecs.T[order]
    filters = np.vstack([W[:n_pairs], W[K - n_pairs:]])
    return CspModel(n_pairs=n_pairs, filters=filters, eigenvalues=vals)


@dataclass
class FeatureMatrix:
    features: np.ndarray
    labels: Optional[np.ndarray] = None


def csp_features(model: CspModel, epochs: EpochSet) -> FeatureMatrix:
    """Log of the trace-normalized variance of each spatially filtered
    component; invariant to per-trial positive scaling.  Zero-variance
    projections are floored at log(1e-12)."""
    if epochs.n_channels != model.filters.shape[1]:
        raise ConfigError(
            f"model fit on {model.filters.shape[1]} channels, data has "
            f"{epochs.n_channels}"
        )
    z = np.matmul(model.filters, epochs.data)
    variances = z.var(axis=2)
    totals = variances.sum(axis=1, keepdims=True)
    shares = np.divide(variances, totals, out=np.zeros_like(variances),
                       where=totals > 0)
    feats = np.log(np.clip(shares, 1e-12, None))
    return FeatureMatrix(features=feats, labels=epochs.labels)


def _split_by_label(epochs, label):
    mask = epochs.labels == label
    pick = EpochSet(data=epochs.data[mask], fs=epochs.fs,
                    channels=epochs.channels, labels=epochs.labels[mask])
    rest = EpochSet(data=epochs.data[~mask], fs=epochs.fs,
                    channels=epochs.channels, labels=epochs.labels[~mask])
    return pick, rest


def csp_fit_multiclass(epochs: EpochSet, n_pairs: int) -> list:
    """One-vs-rest CSP: one binary model per class, ordered by class id."""
    if epochs.labels is None:
        raise ConfigError("multiclass CSP needs labeled epochs")
    classes = sorted(int(c) for c in np.unique(epochs.labels))
    models = []
    for c in classes:
        own, rest = _split_by_label(epochs, c)
        if own.n_trials < 2:
            raise ConfigError(f"class {c} has fewer than 2 trials")
        models.append(csp_fit(own, rest, n_pairs))
    return models


def csp_features_multiclass(models: list, epochs: EpochSet) -> FeatureMatrix:
    """Concatenate one-vs-rest feature blocks in class order."""
    blocks = [csp_features(m, epochs).features for m in models]
    return FeatureMatrix(features=np.hstack(blocks), labels=epochs.labels)


# ---------------------------------------------------------------------------
# Soft-margin RBF SVM via sequential minimal optimization
# ---------------------------------------------------------------------------


def _take_step(kmat, y, alpha, err, i, j, c_penalty, b):
    if i == j:
        return False, b
    a1 = alpha[i]
    a2 = alpha[j]
    y1 = y[i]
    y2 = y[j]
    e1 = err[i]
    e2 = err[j]
    s = y1 * y2
    if s > 0:
        lo = max(0.0, a1 + a2 - c_penalty)
        hi = min(c_penalty, a1 + a2)
    else:
        lo = max(0.0, a2 - a1)
        hi = min(c_penalty, c_penalty + a2 - a1)
    if lo >= hi:
        return False, b
    k11 = kmat[i, i]
    k12 = kmat[i, j]
    k22 = kmat[j, j]
    eta = k11 + k22 - 2.0 * k12
    if eta <= 0.0:
        return False, b
    a2_new = a2 + y2 * (e1 - e2) / eta
    if a2_new < lo:
        a2_new = lo
    elif a2_new > hi:
        a2_new = hi
    eps = 1e-12
    if abs(a2_new - a2) < eps * (a2_new + a2 + eps):
        return False, b
    a1_new = a1 + s * (a2 - a2_new)
    d1 = y1 * (a1_new - a1)
    d2 = y2 * (a2_new - a2)
    b1 = b - e1 - d1 * k11 - d2 * k12
    b2 = b - e2 - d1 * k12 - d2 * k22
    if 0.0 < a1_new < c_penalty:
        b_new = b1
    elif 0.0 < a2_new < c_penalty:
        b_new = b2
    else:
        b_new = 0.5 * (b1 + b2)
    err += d1 * kmat[:, i] + d2 * kmat[:, j] + (b_new - b)
    alpha[i] = a1_new
    alpha[j] = a2_new
    return True, b_new


def _dual_objective(kmat, y, alpha):
    ay = alpha * y
    return 0.5 * np.dot(ay, np.dot(kmat, ay)) - alpha.sum()


def _smo_sweeps(kmat, y, c_penalty, tol, max_sweeps):
    """Pairwise coordinate descent on the dual QP.

    Deterministic: the partner index maximizes |E_i - E_j| over the
    non-bound set, with an ordered fallback scan.  Returns the dual
    variables, bias, per-sweep objective trace, and whether a full pass
    found no remaining violations within ``tol``.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    err = 0.0 - y  # decision values start at zero
    b = 0.0
    trace = np.empty(max_sweeps)
    n_sweeps = 0
    examine_all = True
    converged = False
    while n_sweeps < max_sweeps:
        n_changed = 0
        for i in range(n):
            free_i = 0.0 < alpha[i] < c_penalty
            if not examine_all and not free_i:
                continue
            r = err[i] * y[i]
            if not ((r < -tol and alpha[i] < c_penalty)
                    or (r > tol and alpha[i] > 0.0)):
                continue
            gaps = np.abs(err[i] - err)
            free = (alpha > 0.0) & (alpha < c_penalty)
            free[i] = False
            j = -1
            if free.any():
                j = int(np.argmax(np.where(free, gaps, -1.0)))
            if j >= 0:
                changed, b = _take_step(kmat, y, alpha, err, i, j, c_penalty, b)
                if changed:
                    n_changed += 1
                    continue
            for off in range(1, n):
                cand = (i + off) % n
                if cand == j:
                    continue
                changed, b = _take_step(kmat, y, alpha, err, i, cand,
                                        c_penalty, b)
                if changed:
                    n_changed += 1
                    break
        trace[n_sweeps] = _dual_objective(kmat, y, alpha)
        n_sweeps += 1
        if examine_all:
            if n_changed == 0:
                converged = True
                break
            examine_all = False
        elif n_changed == 0:
            examine_all = True
    return alpha, b, trace[:n_sweeps], converged


_take_step = maybe_jit(_take_step)
_dual_objective = maybe_jit(_dual_objective)
_smo_sweeps = maybe_jit(_smo_sweeps)


def rbf_kernel(a, b, gamma):
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-gamma * np.clip(sq, 0.0, None))


@dataclass
class BinarySvm:
    """One trained two-class margin: support vectors and duals only."""

    support_vectors: np.ndarray
    dual_coefs: np.ndarray  # alpha_s * y_s
    alphas: np.ndarray
    support_labels: np.ndarray
    bias: float
    gamma: float
    c_penalty: float
    objective_trace: np.ndarray
    converged: bool

    def decision(self, x):
        if self.support_vectors.shape[0] == 0:
            return np.full(x.shape[0], self.bias)
        k = rbf_kernel(x, self.support_vectors, self.gamma)
        return k @ self.dual_coefs + self.bias


@dataclass
class SvmModel:
    """RBF-kernel SVM; one binary margin per class for 3+ classes
    (one-vs-rest), a single margin for the two-class case."""

    classes: list
    binaries: list
    gamma: float
    c_penalty: float

    @property
    def converged(self):
        return all(m.converged for m in self.binaries)

    def decision_values(self, features):
        x = np.asarray(features, dtype=np.float64)
        return np.column_stack([m.decision(x) for m in self.binaries])

    def predict(self, features):
        scores = self.decision_values(features)
        if len(self.classes) == 2:
            idx = (scores[:, 0] > 0).astype(int)
        else:
            idx = np.argmax(scores, axis=1)
        return np.asarray(self.classes)[idx]


def _train_binary(x, y, c_penalty, gamma, tol, max_sweeps):
    kmat = rbf_kernel(x, x, gamma)
    alpha, b, trace, converged = _smo_sweeps(
        np.ascontiguousarray(kmat), np.ascontiguousarray(y, dtype=np.float64),
        c_penalty, tol, max_sweeps)
    keep = alpha > 1e-12
    return BinarySvm(
        support_vectors=x[keep].copy(),
        dual_coefs=(alpha * y)[keep],
        alphas=alpha[keep],
        support_labels=y[keep],
        bias=float(b),
        gamma=gamma,
        c_penalty=c_penalty,
        objective_trace=np.asarray(trace),
        converged=bool(converged),
    )


def svm_train(features, labels, c_penalty: float = 1.0,
              gamma: Optional[float] = None, tol: float = 1e-3,
              max_sweeps: int = 500) -> SvmModel:
    """Train an RBF SVM by SMO to the given KKT tolerance.

    ``gamma`` defaults to 1 / (n_features * var(features)).  Multi-class
    problems train one-vs-rest margins; prediction takes the argmax of
    the uncalibrated decision values, ties to the lower class id.  On
    hitting ``max_sweeps`` the best iterate is returned with
    ``converged`` False.
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise ConfigError(f"feature matrix {x.shape} does not match "
                          f"{labels.shape[0]} labels")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite features")
    classes = sorted(int(c) for c in np.unique(labels))
    if len(classes) < 2:
        raise ConfigError("need at least two classes")
    if c_penalty <= 0:
        raise ConfigError("penalty must be positive")
    if gamma is None:
        spread = float(x.var())
        gamma = 1.0 / (x.shape[1] * spread) if spread > 0 else 1.0 / x.shape[1]
    if gamma <= 0:
        raise ConfigError("gamma must be positive")

    binaries = []
    if len(classes) == 2:
        y = np.where(labels == classes[1], 1.0, -1.0)
        binaries.append(_train_binary(x, y, c_penalty, gamma, tol, max_sweeps))
    else:
        for c in classes:
            y = np.where(labels == c, 1.0, -1.0)
            binaries.append(_train_binary(x, y, c_penalty, gamma, tol,
                                          max_sweeps))
    return SvmModel(classes=classes, binaries=binaries, gamma=gamma,
                    c_penalty=c_penalty)


# ---------------------------------------------------------------------------
# Selection evaluation sweep
# ---------------------------------------------------------------------------


@dataclass
class EvaluationCell:
    metric: str
    band: str
    k: int
    channels: list
    train_acc: float
    test_acc: float
    flags: list = field(default_factory=list)


@dataclass
class EvaluationReport:
    dataset_id: str
    cells: list


def _pipeline_features(train, test, n_pairs):
    n_classes = np.unique(train.labels).size
    if n_classes == 2:
        a, b_ = _split_by_label(train, int(np.min(train.labels)))
        model = csp_fit(a, b_, n_pairs)
        return (csp_features(model, train), csp_features(model, test))
    models = csp_fit_multiclass(train, n_pairs)
    return (csp_features_multiclass(models, train),
            csp_features_multiclass(models, test))


def run_csp_svm(train: EpochSet, test: EpochSet, n_pairs: int = 3,
                c_penalty: float = 1.0, gamma: Optional[float] = None,
                pre_filtered: bool = False):
    """Band-pass, CSP, SVM; returns (train_acc, test_acc, flags)."""
    if train.n_channels != test.n_channels or train.fs != test.fs:
        raise ConfigError("train/test sets disagree on channels or rate")
    if train.labels is None or test.labels is None:
        raise ConfigError("evaluation requires labeled train and test sets")
    if not pre_filtered:
        train = bandpass_filter(train, EVAL_BAND, EVAL_FILTER_ORDER)
        test = bandpass_filter(test, EVAL_BAND, EVAL_FILTER_ORDER)
    flags = []
    n_pairs_used = max(1, min(n_pairs, train.n_channels // 2))
    if train.n_channels < 2:
        raise ConfigError("spatial filtering needs at least 2 channels")
    if n_pairs_used != n_pairs:
        flags.append(f"csp_pairs_clipped_to_{n_pairs_used}")
    feat_train, feat_test = _pipeline_features(train, test, n_pairs_used)
    model = svm_train(feat_train.features, train.labels, c_penalty=c_penalty,
                      gamma=gamma)
    if not model.converged:
        flags.append("svm_not_converged")
    train_acc = float(np.mean(model.predict(feat_train.features)
                              == train.labels))
    test_acc = float(np.mean(model.predict(feat_test.features) == test.labels))
    return train_acc, test_acc, flags


def evaluate_selection(train: EpochSet, test: EpochSet, reports,
                       ks, n_pairs: int = 3, c_penalty: float = 1.0,
                       gamma: Optional[float] = None,
                       dataset_id: str = "") -> EvaluationReport:
    """Score every (ranking report, selection size) combination.

    Filtering happens once on the full channel set; each cell picks its
    channels afterwards, fits CSP on the training split only, and
    reports train/test accuracy.  Per-cell failures are recorded as NaN
    accuracies with a flag so the sweep continues.
    """
    if isinstance(reports, IcecReport):
        reports = [reports]
    ks = [int(k) for k in ks]
    K = train.n_channels
    if any(not 1 <= k <= K for k in ks):
        raise ConfigError(f"selection sizes {ks} outside [1, {K}]")
    if train.labels is None or test.labels is None:
        raise ConfigError("evaluation requires labeled train and test sets")
    ftrain = bandpass_filter(train, EVAL_BAND, EVAL_FILTER_ORDER)
    ftest = bandpass_filter(test, EVAL_BAND, EVAL_FILTER_ORDER)
    cells = []
    for report in reports:
        band_name = report.band.name if report.band is not None else ""
        for k in ks:
            channels = list(report.ranking[:k])
            try:
                tr_acc, te_acc, flags = run_csp_svm(
                    ftrain.pick_channels(channels),
                    ftest.pick_channels(channels),
                    n_pairs=n_pairs, c_penalty=c_penalty, gamma=gamma,
                    pre_filtered=True)
            except (ConfigError, NumericalError) as exc:
                tr_acc, te_acc = float("nan"), float("nan")
                flags = [f"error: {exc}"]
            cells.append(EvaluationCell(
                metric=report.metric, band=band_name, k=k, channels=channels,
                train_acc=tr_acc, test_acc=te_acc, flags=flags))
    return EvaluationReport(dataset_id=dataset_id, cells=cells)


def evaluation_to_json(report: EvaluationReport) -> str:
    doc = {
        "dataset_id": report.dataset_id,
        "cells": [
            {
                "metric": c.metric,
                "band": c.band,
                "k": c.k,
                "channels": c.channels,
                "train_acc": c.train_acc,
                "test_acc": c.test_acc,
                "flags": c.flags,
            }
            for c in report.cells
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def evaluation_from_json(text: str) -> EvaluationReport:
    doc = json.loads(text)
    cells = [EvaluationCell(metric=c["metric"], band=c["band"], k=int(c["k"]),
                            channels=list(c["channels"]),
                            train_acc=float(c["train_acc"]),
                            test_acc=float(c["test_acc"]),
                            flags=list(c.get("flags", [])))
             for c in doc["cells"]]
    return EvaluationReport(dataset_id=doc.get("dataset_id", ""), cells=cells)


def evaluation_to_csv(report: EvaluationReport) -> str:
    """Flat CSV of the sweep for plotting accuracy-versus-k curves."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["dataset_id", "metric", "band", "k", "train_acc",
                     "test_acc", "channels", "flags"])
    for c in report.cells:
        writer.writerow([
            report.dataset_id, c.metric, c.band, c.k,
            "" if math.isnan(c.train_acc) else f"{c.train_acc:.6f}",
            "" if math.isnan(c.test_acc) else f"{c.test_acc:.6f}",
            ";".join(str(ch) for ch in c.channels),
            ";".join(c.flags),
        ])
    return buf.getvalue()
