"""Run configuration: one JSON document, overridable by CLI flags."""

import json
from dataclasses import asdict, dataclass, field

from .epochs import BandSpec
from .errors import ConfigError
from .icec import DIRECTIONS, band_presets, preset_band
from .spectral import DEFAULT_METRICS, METRICS


@dataclass
class RunConfig:
    metrics: list = field(default_factory=lambda: list(DEFAULT_METRICS))
    bands: list = field(default_factory=lambda: [b.name for b in band_presets()])
    order_candidates: list = field(default_factory=lambda: list(range(2, 11)))
    window_length_s: float = 0.5
    step_s: float = 0.03
    top_fraction: float = 0.3
    direction: str = "to"
    ks: list = None
    csp_pairs: int = 3
    svm_c: float = 1.0
    svm_gamma: float = None
    seed: int = 0
    output_dir: str = "."
    grid_f_min: float = 1.0
    grid_f_max: float = 40.0
    grid_step: float = 1.0
    filter_f_low: float = 1.0
    filter_f_high: float = 40.0
    filter_order: int = 5

    def validate(self):
        for m in self.metrics:
            if m not in METRICS:
                raise ConfigError(f"unknown metric {m!r} (known: {METRICS})")
        if not self.metrics:
            raise ConfigError("metric list is empty")
        for b in self.bands:
            self.band_spec(b)
        if not self.bands:
            raise ConfigError("band list is empty")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}")
        if not 0 < self.top_fraction <= 1:
            raise ConfigError("top_fraction must be in (0, 1]")
        if not self.order_candidates:
            raise ConfigError("order candidate list is empty")
        if any(int(r) < 1 for r in self.order_candidates):
            raise ConfigError("order candidates must be >= 1")
        if self.csp_pairs < 1:
            raise ConfigError("csp_pairs must be >= 1")
        if self.svm_c <= 0:
            raise ConfigError("svm_c must be positive")
        return self

    @staticmethod
    def band_spec(entry) -> BandSpec:
        """A band entry is a preset name or an explicit [low, high] pair."""
        if isinstance(entry, str):
            return preset_band(entry)
        if isinstance(entry, (list, tuple)) and len(entry) == 2:
            lo, hi = float(entry[0]), float(entry[1])
            return BandSpec(lo, hi, f"{lo:g}-{hi:g}Hz")
        raise ConfigError(f"band entry {entry!r} is neither a preset name "
                          "nor a [low, high] pair")

    def band_specs(self):
        return [self.band_spec(b) for b in self.bands]

    def resolve_ks(self, n_channels: int):
        if self.ks is not None:
            ks = [int(k) for k in self.ks]
            if any(not 1 <= k <= n_channels for k in ks):
                raise ConfigError(f"ks {ks} outside [1, {n_channels}]")
            return ks
        if n_channels <= 12:
            return list(range(1, n_channels + 1))
        ks = list(range(5, n_channels, 5))
        if not ks or ks[-1] != n_channels:
            ks.append(n_channels)
        return ks

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def load_config(path=None, overrides=None) -> RunConfig:
    """Build a config from an optional JSON file plus flag overrides."""
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if overrides:
        doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()
