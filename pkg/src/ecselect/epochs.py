"""Epoched multichannel signal container, file I/O, and preprocessing.

The central type is :class:`EpochSet`, a ``(n_trials, n_channels,
n_samples)`` float array plus sampling rate and channel metadata.  Two
file formats are supported: the EEGB binary container (bit-exact,
multi-trial, see :func:`save_epochs`) and a plain CSV holding a single
trial.
"""

import csv
import json
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .errors import ConfigError, FormatError

EEGB_MAGIC = b"EEGB"
EEGB_VERSION = 1


@dataclass(frozen=True)
class ChannelMeta:
    """One recording channel: zero-based index, unique name, optional
    2-D scalp position in unit-disc coordinates for plotting."""

    index: int
    name: str
    pos: Optional[tuple] = None


@dataclass(frozen=True)
class BandSpec:
    """A named frequency band, ``f_low < f_high`` in Hz."""

    f_low: float
    f_high: float
    name: str = ""

    def __post_init__(self):
        if not (0 < self.f_low < self.f_high):
            raise ConfigError(
                f"invalid band {self.name!r}: need 0 < f_low < f_high, "
                f"got ({self.f_low}, {self.f_high})"
            )


@dataclass
class EpochSet:
    """Trials of equal-length multichannel data at a fixed sampling rate.

    Parameters
    ----------
    data : ndarray, shape (n_trials, n_channels, n_samples)
        Signal values; must be finite.
    fs : float
        Sampling rate in Hz, > 0.
    channels : list of ChannelMeta
        One entry per channel; indices contiguous from 0, names unique.
    labels : ndarray of int, optional
        Per-trial class ids, length n_trials.
    """

    data: np.ndarray
    fs: float
    channels: list = field(default_factory=list)
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ConfigError(
                f"epoch data must be 3-D (trials, channels, samples), "
                f"got shape {self.data.shape}"
            )
        if self.fs <= 0:
            raise ConfigError(f"sampling rate must be positive, got {self.fs}")
        if not self.channels:
            self.channels = default_channels(self.data.shape[1])
        if len(self.channels) != self.data.shape[1]:
            raise ConfigError(
                f"{len(self.channels)} channel entries for "
                f"{self.data.shape[1]} data channels"
            )
        indices = [c.index for c in self.channels]
        names = [c.name for c in self.channels]
        if indices != list(range(len(indices))):
            raise ConfigError("channel indices must be contiguous from 0")
        if len(set(names)) != len(names):
            raise ConfigError("channel names must be unique")
        if not np.all(np.isfinite(self.data)):
            raise FormatError("epoch data contains non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.data.shape[0],):
                raise ConfigError(
                    f"{self.labels.size} labels for {self.data.shape[0]} trials"
                )

    @property
    def n_trials(self):
        return self.data.shape[0]

    @property
    def n_channels(self):
        return self.data.shape[1]

    @property
    def n_samples(self):
        return self.data.shape[2]

    @property
    def channel_names(self):
        return [c.name for c in self.channels]

    def pick_channels(self, indices: Sequence[int]) -> "EpochSet":
        """Return a copy restricted to ``indices``, reindexed from 0."""
        indices = list(indices)
        if len(set(indices)) != len(indices):
            raise ConfigError("duplicate channel indices in selection")
        for i in indices:
            if not 0 <= i < self.n_channels:
                raise ConfigError(f"channel index {i} out of range")
        chans = [
            replace(self.channels[i], index=new) for new, i in enumerate(indices)
        ]
        return EpochSet(
            data=np.ascontiguousarray(self.data[:, indices, :]),
            fs=self.fs,
            channels=chans,
            labels=None if self.labels is None else self.labels.copy(),
        )


def default_channels(n: int) -> list:
    """Placeholder metadata ``ch00..`` for data without channel names."""
    width = max(2, len(str(max(n - 1, 0))))
    return [ChannelMeta(i, f"ch{i:0{width}d}") for i in range(n)]


# ---------------------------------------------------------------------------
# EEGB binary container
#
# Layout: magic b"EEGB" | u32 LE version (=1) | u32 LE header length |
# UTF-8 JSON header {fs, channels:[str], n_trials, n_samples, labels?} |
# float32 LE payload in (trial, channel, sample) order.
# ---------------------------------------------------------------------------


def save_epochs(epochs: EpochSet, path) -> None:
    """Write ``epochs`` as an EEGB file.  Payload is float32."""
    header = {
        "fs": float(epochs.fs),
        "channels": epochs.channel_names,
        "n_trials": int(epochs.n_trials),
        "n_samples": int(epochs.n_samples),
    }
    if epochs.labels is not None:
        header["labels"] = [int(x) for x in epochs.labels]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(epochs.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(EEGB_MAGIC)
        fh.write(struct.pack("<I", EEGB_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload.tobytes())


def _load_eegb(path) -> EpochSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != EEGB_MAGIC:
        raise FormatError(f"{path}: not an EEGB file (bad magic)")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != EEGB_VERSION:
        raise FormatError(f"{path}: unsupported EEGB version {version}")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed EEGB header: {exc}") from exc
    try:
        fs = float(header["fs"])
        names = list(header["channels"])
        n_trials = int(header["n_trials"])
        n_samples = int(header["n_samples"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete EEGB header: {exc}") from exc
    n_channels = len(names)
    expected = n_trials * n_channels * n_samples
    payload = np.frombuffer(raw[12 + hlen :], dtype="<f4")
    if payload.size != expected:
        raise FormatError(
            f"{path}: header declares {expected} samples, payload holds "
            f"{payload.size}"
        )
    data = payload.astype(np.float64).reshape(n_trials, n_channels, n_samples)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: payload contains non-finite values")
    labels = header.get("labels")
    if labels is not None:
        if len(labels) != n_trials:
            raise FormatError(
                f"{path}: {len(labels)} labels for {n_trials} trials"
            )
        labels = np.asarray(labels, dtype=np.int64)
    channels = [ChannelMeta(i, str(nm)) for i, nm in enumerate(names)]
    return EpochSet(data=data, fs=fs, channels=channels, labels=labels)


def _load_csv(path, fs: Optional[float]) -> EpochSet:
    """Single-trial CSV: header row ``t,<ch1>,...``, one sample per row.

    The time column is used only to infer the sampling rate when ``fs``
    is not given.
    """
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        if len(header) < 2 or header[0].strip().lower() != "t":
            raise FormatError(
                f"{path}: CSV header must be 't,<ch1>,<ch2>,...', got {header!r}"
            )
        names = [h.strip() for h in header[1:]]
        times, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(
                    f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}"
                )
            try:
                times.append(float(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: CSV holds no samples")
    if fs is None:
        if len(times) < 2:
            raise FormatError(
                f"{path}: cannot infer sampling rate from a single sample"
            )
        dt = np.diff(times)
        if np.any(dt <= 0):
            raise FormatError(f"{path}: time column is not strictly increasing")
        fs = 1.0 / float(np.mean(dt))
    data = np.asarray(rows, dtype=np.float64).T[np.newaxis, :, :]
    channels = [ChannelMeta(i, nm) for i, nm in enumerate(names)]
    return EpochSet(data=data, fs=fs, channels=channels)


def load_epochs(path, format: Optional[str] = None, fs: Optional[float] = None) -> EpochSet:
    """Load an :class:`EpochSet` from an EEGB or CSV file.

    ``format`` is ``"eegb"`` or ``"csv"``; when omitted it is inferred
    from the file extension.  ``fs`` overrides (CSV) the rate inferred
    from the time column.
    """
    if format is None:
        format = "csv" if str(path).lower().endswith(".csv") else "eegb"
    if format == "eegb":
        return _load_eegb(path)
    if format == "csv":
        return _load_csv(path, fs)
    raise ConfigError(f"unknown epoch file format {format!r}")


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def bandpass_filter(epochs: EpochSet, band: BandSpec, order: int) -> EpochSet:
    """Zero-phase Butterworth band-pass, applied per trial and channel.

    The filter is designed as second-order sections from the analog
    prototype (bilinear transform with frequency pre-warping) and run
    forward-backward, so the net phase is zero and the effective
    attenuation order is twice ``order``.  Edges are handled by
    reflecting ``3 * order * 2`` samples at both ends.
    """
    if not 1 <= order <= 10:
        raise ConfigError(f"filter order must be in [1, 10], got {order}")
    nyq = epochs.fs / 2.0
    if band.f_high >= nyq:
        raise ConfigError(
            f"band edge {band.f_high} Hz at or beyond Nyquist ({nyq} Hz)"
        )
    padlen = 3 * order * 2
    if epochs.n_samples <= padlen:
        raise ConfigError(
            f"trials of {epochs.n_samples} samples are too short for "
            f"edge padding of {padlen}"
        )
    sos = butter(order, [band.f_low, band.f_high], btype="bandpass",
                 fs=epochs.fs, output="sos")
    out = sosfiltfilt(sos, epochs.data, axis=-1, padtype="odd", padlen=padlen)
    return EpochSet(data=np.ascontiguousarray(out), fs=epochs.fs,
                    channels=epochs.channels,
                    labels=None if epochs.labels is None else epochs.labels.copy())


def segment(epochs: EpochSet, start_sample: int, end_sample: int) -> EpochSet:
    """Return the sample range ``[start_sample, end_sample)`` of every trial."""
    n = epochs.n_samples
    if not (0 <= start_sample < end_sample <= n):
        raise ConfigError(
            f"segment [{start_sample}, {end_sample}) invalid for trials "
            f"of {n} samples"
        )
    return EpochSet(
        data=np.ascontiguousarray(epochs.data[:, :, start_sample:end_sample]),
        fs=epochs.fs,
        channels=epochs.channels,
        labels=None if epochs.labels is None else epochs.labels.copy(),
    )


def ensemble_normalize(epochs: EpochSet, degenerate_std: float = 1e-12) -> EpochSet:
    """Z-score every (channel, sample) index across trials.

    Uses the unbiased (n-1) standard deviation.  Where the across-trial
    std falls below ``degenerate_std`` (e.g. a constant reference
    channel) the output is 0 at that index instead of raising.
    """
    if epochs.n_trials < 2:
        raise ConfigError(
            "ensemble normalization needs at least 2 trials, got "
            f"{epochs.n_trials}"
        )
    mean = epochs.data.mean(axis=0, keepdims=True)
    std = epochs.data.std(axis=0, ddof=1, keepdims=True)
    ok = std >= degenerate_std
    out = np.where(ok, (epochs.data - mean) / np.where(ok, std, 1.0), 0.0)
    return EpochSet(data=out, fs=epochs.fs, channels=epochs.channels,
                    labels=None if epochs.labels is None else epochs.labels.copy())
