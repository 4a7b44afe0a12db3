"""Seeded synthetic data with known ground truth, plus naive oracles.

Everything here is reproducible: generators derive one independent
random stream per trial from a root seed, so regenerating with a larger
trial count leaves earlier trials bit-identical.  The oracles
(:func:`oracle_icec`, :func:`monte_carlo_process_covariance`) are
deliberately naive reimplementations used to cross-check the production
code; they must not call into it.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .epochs import EpochSet
from .errors import ConfigError, NumericalError
from .icec import IcecReport
from .varsim import noise_transform, simulate_var


@dataclass
class GroundTruthSpec:
    """A fully specified stable VAR process for simulation.

    ``edges`` lists the directed couplings (to, from) with a nonzero
    coefficient at any lag; it is derived from ``coeffs`` when omitted.
    """

    coeffs: np.ndarray
    sigma: np.ndarray
    seed: int = 0
    fs: float = 250.0
    edges: list = field(default_factory=list)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.coeffs.ndim != 3 or self.coeffs.shape[1] != self.coeffs.shape[2]:
            raise ConfigError(
                f"coefficients must have shape (order, K, K), got {self.coeffs.shape}"
            )
        if self.sigma.shape != self.coeffs.shape[1:]:
            raise ConfigError("noise covariance shape does not match coefficients")
        derived = _nonzero_edges(self.coeffs)
        if not self.edges:
            self.edges = derived
        elif sorted(self.edges) != derived:
            raise ConfigError("edge list inconsistent with coefficients")

    @property
    def K(self):
        return self.coeffs.shape[1]

    @property
    def order(self):
        return self.coeffs.shape[0]

    def spectral_radius(self):
        return _companion_radius(self.coeffs)

    @classmethod
    def random_stable(cls, K, order, spectral_radius=0.8, seed=0, fs=250.0,
                      scale=0.5):
        """Draw random coefficients and rescale to a target companion radius.

        Rescaling multiplies lag k by ``(target / r)**k``, which maps the
        companion eigenvalues z to z * target / r; plain uniform scaling
        would not control the radius for order > 1.
        """
        rng = np.random.default_rng(seed)
        coeffs = rng.normal(0.0, scale / math.sqrt(K * order), size=(order, K, K))
        r = _companion_radius(coeffs)
        if r <= 0:
            raise NumericalError("degenerate random draw with zero radius")
        for k in range(order):
            coeffs[k] *= (spectral_radius / r) ** (k + 1)
        return cls(coeffs=coeffs, sigma=np.eye(K), seed=seed, fs=fs)

    def to_json(self) -> str:
        doc = {
            "coeffs": self.coeffs.tolist(),
            "sigma": self.sigma.tolist(),
            "seed": int(self.seed),
            "fs": float(self.fs),
            "edges": [list(e) for e in self.edges],
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruthSpec":
        doc = json.loads(text)
        return cls(
            coeffs=np.asarray(doc["coeffs"], dtype=np.float64),
            sigma=np.asarray(doc["sigma"], dtype=np.float64),
            seed=int(doc.get("seed", 0)),
            fs=float(doc.get("fs", 250.0)),
            edges=[tuple(e) for e in doc.get("edges", [])],
        )


def _nonzero_edges(coeffs):
    rho, K, _ = coeffs.shape
    out = []
    for i in range(K):
        for j in range(K):
            if i != j and np.any(coeffs[:, i, j] != 0.0):
                out.append((i, j))
    return sorted(out)


def _companion_radius(coeffs):
    # Local companion eigenvalue computation: the oracles in this module
    # must stay decoupled from the estimation code they are used to check.
    rho, K, _ = coeffs.shape
    F = np.zeros((K * rho, K * rho))
    F[:K, :] = coeffs.transpose(1, 0, 2).reshape(K, K * rho)
    if rho > 1:
        F[K:, :-K] = np.eye(K * (rho - 1))
    return float(np.max(np.abs(np.linalg.eigvals(F))))


def _trial_rngs(seed, n_trials):
    return [np.random.default_rng(s)
            for s in np.random.SeedSequence(seed).spawn(n_trials)]


def gen_var_epochs(spec: GroundTruthSpec, n_trials: int, n_samples: int,
                   burn_in: Optional[int] = None) -> EpochSet:
    """Simulate the VAR forward with Gaussian innovations.

    Each trial uses its own child stream of ``spec.seed``; the first
    ``burn_in`` samples (default and minimum ``10 * order``) are
    discarded so trials start near stationarity.
    """
    if burn_in is None:
        burn_in = 10 * spec.order
    if burn_in < 10 * spec.order:
        raise ConfigError(f"burn_in must be at least {10 * spec.order}")
    if spec.spectral_radius() >= 1.0:
        raise NumericalError(
            f"unstable process (companion radius {spec.spectral_radius():.4f})"
        )
    L = noise_transform(spec.sigma)
    K = spec.K
    data = np.empty((n_trials, K, n_samples))
    for t, rng in enumerate(_trial_rngs(spec.seed, n_trials)):
        innov = rng.standard_normal((burn_in + n_samples, K)) @ L.T
        x = simulate_var(spec.coeffs, innov)
        data[t] = x[burn_in:].T
    return EpochSet(data=data, fs=spec.fs)


def gen_labeled_csp_dataset(K: int, informative_channels: Sequence[int],
                            variance_ratio: float, n_trials_per_class: int,
                            seed: int, n_samples: int = 400, fs: float = 250.0,
                            n_classes: int = 2, coupling: float = 0.0,
                            burn_in: int = 100) -> EpochSet:
    """Labeled dataset whose class information is channel variance.

    Informative channels carry class-dependent innovation variance:
    class c raises the variance of its own subset of the informative
    channels (position p in the sorted set belongs to class p mod
    n_classes) by ``variance_ratio``, so the variance pattern across
    channels, not the overall scale, separates the classes.  All other
    channels are unit-variance white noise.  With ``coupling`` > 0 the
    informative channels are additionally routed through a stable VAR
    ring, so an unsupervised connectivity ranking can single them out.
    """
    informative = sorted(set(int(c) for c in informative_channels))
    if not informative or informative[0] < 0 or informative[-1] >= K:
        raise ConfigError(f"informative channels {informative} outside [0, {K})")
    if variance_ratio < 1.0:
        raise ConfigError("variance_ratio must be >= 1")
    if n_classes < 2:
        raise ConfigError("need at least 2 classes")

    coeffs = np.zeros((2, K, K))
    if coupling > 0.0:
        ring = informative
        for pos, ch in enumerate(ring):
            coeffs[0, ch, ch] = 0.45
            coeffs[1, ch, ch] = -0.2
            coeffs[0, ch, ring[pos - 1]] = coupling
        if _companion_radius(coeffs) >= 1.0:
            raise NumericalError("coupling too strong for a stable ring")

    n_trials = n_trials_per_class * n_classes
    labels = np.repeat(np.arange(n_classes), n_trials_per_class)
    scales = np.ones(K)
    data = np.empty((n_trials, K, n_samples))
    for t, rng in enumerate(_trial_rngs(seed, n_trials)):
        cls = labels[t]
        scales[:] = 1.0
        for pos, ch in enumerate(informative):
            if pos % n_classes == cls:
                scales[ch] = variance_ratio ** 0.5
        innov = rng.standard_normal((burn_in + n_samples, K)) * scales
        if coupling > 0.0:
            x = simulate_var(coeffs, innov)
        else:
            x = innov
        data[t] = x[burn_in:].T
    return EpochSet(data=data, fs=fs, labels=labels)


def oracle_icec(C, top_fraction: float = 0.3, direction: str = "to") -> IcecReport:
    """Brute-force channel importance from a collapsed coupling matrix.

    Same contract as :func:`ecselect.icec.icec`, written as explicit
    loops over plain Python lists so the two implementations share no
    computation.
    """
    C = np.asarray(C, dtype=np.float64)
    K = C.shape[0]
    if K < 2:
        raise ConfigError("need at least 2 channels")
    if not 0.0 < top_fraction <= 1.0:
        raise ConfigError("top_fraction must be in (0, 1]")
    n_top = math.ceil(top_fraction * (K - 1))
    if n_top < 1:
        n_top = 1
    raw = []
    for j in range(K):
        incident = []
        for i in range(K):
            if i == j:
                continue
            if direction == "to":
                incident.append(float(C[i][j]))
            elif direction == "from":
                incident.append(float(C[j][i]))
            elif direction == "both":
                incident.append(float(C[i][j]) + float(C[j][i]))
            else:
                raise ConfigError(f"unknown direction {direction!r}")
        incident.sort(reverse=True)
        total = 0.0
        for v in incident[:n_top]:
            total += v
        raw.append(total)
    peak = max(raw)
    if peak > 0.0:
        normalized = [v / peak for v in raw]
    else:
        normalized = [0.0 for _ in raw]
    ranking = sorted(range(K), key=lambda j: (-normalized[j], j))
    return IcecReport(
        raw=np.asarray(raw),
        normalized=np.asarray(normalized),
        ranking=list(ranking),
        band=None,
        metric="oracle",
        top_fraction=top_fraction,
        direction=direction,
    )


def monte_carlo_process_covariance(spec: GroundTruthSpec, n_samples: int,
                                   burn_in: Optional[int] = None) -> np.ndarray:
    """Empirical covariance of the stacked state from one long simulation.

    Stacks ``[x(t); x(t-1); ...; x(t-order+1)]`` and averages the outer
    products (the process is zero-mean by construction).
    """
    if burn_in is None:
        burn_in = max(10 * spec.order, 100)
    if spec.spectral_radius() >= 1.0:
        raise NumericalError("unstable process has no stationary covariance")
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    L = noise_transform(spec.sigma)
    innov = rng.standard_normal((burn_in + n_samples + spec.order, spec.K)) @ L.T
    x = simulate_var(spec.coeffs, innov)[burn_in:]
    rho = spec.order
    T = x.shape[0]
    stacked = np.concatenate([x[rho - 1 - b: T - b] for b in range(rho)], axis=1)
    return stacked.T @ stacked / stacked.shape[0]
