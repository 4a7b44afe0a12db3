"""Channel importance from collapsed coupling tensors.

A 4-D coupling tensor (to, from, frequency, window) is averaged over a
frequency band and a window range into a K-by-K matrix; each channel is
then scored by the sum of its strongest incident couplings and channels
are ranked by the normalized score.
"""

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .epochs import BandSpec
from .errors import ConfigError

DIRECTIONS = ("to", "from", "both")


def band_presets():
    """The seven analysis bands, theta through the full 1-40 Hz range."""
    return [
        BandSpec(4.0, 7.0, "theta"),
        BandSpec(8.0, 12.0, "mu"),
        BandSpec(13.0, 15.0, "low-beta"),
        BandSpec(18.0, 30.0, "high-beta"),
        BandSpec(29.0, 40.0, "gamma"),
        BandSpec(8.0, 30.0, "broad"),
        BandSpec(1.0, 40.0, "full"),
    ]


def preset_band(name: str) -> BandSpec:
    for band in band_presets():
        if band.name == name:
            return band
    known = ", ".join(b.name for b in band_presets())
    raise ConfigError(f"unknown band preset {name!r} (known: {known})")


@dataclass(frozen=True)
class BandWindow:
    """Inclusive frequency (Hz) and window-index bounds for collapsing."""

    f_min: float
    f_max: float
    w_min: int
    w_max: int
    name: str = ""

    def __post_init__(self):
        if self.f_min > self.f_max:
            raise ConfigError(f"f_min {self.f_min} > f_max {self.f_max}")
        if self.w_min > self.w_max:
            raise ConfigError(f"w_min {self.w_min} > w_max {self.w_max}")


@dataclass
class CollapsedMatrix:
    """Band/window mean of a coupling tensor; diagonal is zero by
    construction and carries no meaning."""

    C: np.ndarray
    band: Optional[BandWindow] = None
    metric: str = ""


@dataclass
class IcecReport:
    """Per-channel importance scores and the resulting ranking."""

    raw: np.ndarray
    normalized: np.ndarray
    ranking: list
    band: Optional[BandWindow]
    metric: str
    top_fraction: float
    direction: str = "to"


@dataclass
class SelectionResult:
    """The first k entries of a report's ranking."""

    k: int
    selected: list


def band_window(tensor, band: Optional[BandSpec] = None,
                w_min: Optional[int] = None,
                w_max: Optional[int] = None) -> BandWindow:
    """Resolve a named band and optional window range against a tensor.

    Defaults to the tensor's full frequency grid and full window range.
    """
    freqs = np.asarray(tensor.freqs)
    n_w = tensor.values.shape[3]
    f_lo = float(band.f_low) if band is not None else float(freqs[0])
    f_hi = float(band.f_high) if band is not None else float(freqs[-1])
    return BandWindow(
        f_min=f_lo,
        f_max=f_hi,
        w_min=0 if w_min is None else int(w_min),
        w_max=n_w - 1 if w_max is None else int(w_max),
        name=band.name if band is not None else "",
    )


def collapse(tensor, bw: BandWindow) -> CollapsedMatrix:
    """Mean coupling over an inclusive band and window range.

    Only windows flagged valid contribute; the denominator is the actual
    number of summed terms, so partially invalid ranges stay unbiased.
    The diagonal is forced to zero.
    """
    freqs = np.asarray(tensor.freqs, dtype=np.float64)
    n_w = tensor.values.shape[3]
    fmask = (freqs >= bw.f_min) & (freqs <= bw.f_max)
    if not np.any(fmask):
        raise ConfigError(
            f"band [{bw.f_min}, {bw.f_max}] Hz misses the tensor grid "
            f"({freqs[0]}..{freqs[-1]} Hz)"
        )
    if not (0 <= bw.w_min <= bw.w_max < n_w):
        raise ConfigError(
            f"window range [{bw.w_min}, {bw.w_max}] outside 0..{n_w - 1}"
        )
    wmask = np.zeros(n_w, dtype=bool)
    wmask[bw.w_min: bw.w_max + 1] = True
    wmask &= np.asarray(tensor.valid_windows, dtype=bool)
    if not np.any(wmask):
        raise ConfigError("no valid windows in the requested range")
    sub = tensor.values[:, :, fmask, :][:, :, :, wmask]
    C = sub.mean(axis=(2, 3))
    np.fill_diagonal(C, 0.0)
    return CollapsedMatrix(C=C, band=bw, metric=tensor.metric)


def _as_matrix(C):
    if isinstance(C, CollapsedMatrix):
        return C
    arr = np.asarray(C, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {arr.shape}")
    return CollapsedMatrix(C=arr)


def icec(C, top_fraction: float = 0.3, direction: str = "to") -> IcecReport:
    """Score each channel by the sum of its strongest incident couplings.

    For channel j the incident values are the off-diagonal column
    C[:, j] (direction ``"to"``: couplings j exerts on the others), the
    row C[j, :] (``"from"``), or their elementwise sum (``"both"``).
    The strongest ``ceil(top_fraction * (K - 1))`` values are summed
    (at least one), scores are normalized by the maximum, and the
    ranking sorts by normalized score, ties broken by lower index.
    """
    cm = _as_matrix(C)
    mat = cm.C
    K = mat.shape[0]
    if K < 2:
        raise ConfigError("need at least 2 channels")
    if not 0.0 < top_fraction <= 1.0:
        raise ConfigError(f"top_fraction must be in (0, 1], got {top_fraction}")
    if direction not in DIRECTIONS:
        raise ConfigError(f"direction must be one of {DIRECTIONS}")

    if direction == "to":
        incident = mat.T
    elif direction == "from":
        incident = mat
    else:
        incident = (mat + mat.T).T
    off = ~np.eye(K, dtype=bool)
    per_channel = incident[off].reshape(K, K - 1)

    n_top = max(1, math.ceil(top_fraction * (K - 1)))
    top = -np.sort(-per_channel, axis=1)[:, :n_top]
    raw = top.sum(axis=1)
    peak = raw.max()
    normalized = raw / peak if peak > 0 else np.zeros(K)
    ranking = sorted(range(K), key=lambda j: (-normalized[j], j))
    return IcecReport(
        raw=raw,
        normalized=normalized,
        ranking=ranking,
        band=cm.band,
        metric=cm.metric,
        top_fraction=top_fraction,
        direction=direction,
    )


def select_channels(report: IcecReport, k: int) -> SelectionResult:
    """Take the top-k channels of a report's ranking."""
    K = len(report.ranking)
    if not 1 <= k <= K:
        raise ConfigError(f"k must be in [1, {K}], got {k}")
    return SelectionResult(k=k, selected=list(report.ranking[:k]))


def report_to_json(report: IcecReport, channel_names=None) -> str:
    """Serialize a report; channels are listed in index order with their
    1-based rank."""
    K = len(report.ranking)
    if channel_names is None:
        channel_names = [f"ch{i:02d}" for i in range(K)]
    rank_of = {ch: pos + 1 for pos, ch in enumerate(report.ranking)}
    band = None
    if report.band is not None:
        band = {
            "name": report.band.name,
            "f_min": report.band.f_min,
            "f_max": report.band.f_max,
            "w_min": report.band.w_min,
            "w_max": report.band.w_max,
        }
    doc = {
        "metric": report.metric,
        "band": band,
        "top_fraction": report.top_fraction,
        "direction": report.direction,
        "channels": [
            {
                "index": i,
                "name": channel_names[i],
                "raw": float(report.raw[i]),
                "normalized": float(report.normalized[i]),
                "rank": rank_of[i],
            }
            for i in range(K)
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def report_from_json(text: str) -> IcecReport:
    doc = json.loads(text)
    chans = sorted(doc["channels"], key=lambda c: c["index"])
    K = len(chans)
    ranking = [c["index"] for c in sorted(chans, key=lambda c: c["rank"])]
    band = None
    if doc.get("band") is not None:
        b = doc["band"]
        band = BandWindow(b["f_min"], b["f_max"], b.get("w_min", 0),
                          b.get("w_max", 0), b.get("name", ""))
    return IcecReport(
        raw=np.asarray([c["raw"] for c in chans]),
        normalized=np.asarray([c["normalized"] for c in chans]),
        ranking=ranking,
        band=band,
        metric=doc.get("metric", ""),
        top_fraction=float(doc.get("top_fraction", 0.3)),
        direction=doc.get("direction", "to"),
    )
