"""Pipeline configuration: flat TOML key/value file with validation and defaults."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields, replace

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .descriptor import DescriptorOptions, WINDOW_MODES
from .geodesic import bin_directions
from .keypoints import EXTREMA_MODES
from .scale_space import DEFAULT_BASE_DELTA, DEFAULT_K_VALUES, DOG_MODES

NORMALIZATIONS = ("L1", "raw")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    resolution: int = 64
    padding: int = 4
    base_delta: float = DEFAULT_BASE_DELTA
    k_values: tuple[float, ...] = DEFAULT_K_VALUES
    dog_mode: str = "vs-base"
    extrema_threshold: float = 0.01
    extrema_mode: str = "spatial"
    n_bins: int = 66
    window: str = "canonical"
    azimuth_alignment: bool = True
    soft_binning: bool = False
    spatial_weighting: bool = False
    clamp: float = 0.2
    codebook_k: int = 3000
    codebook_iterations: int = 20
    seed: int = 0
    normalization: str = "L1"
    ratio: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(float(k) for k in self.k_values))
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.resolution, int) and 8 <= self.resolution <= 512, "resolution must be an integer in [8, 512]")
        need(isinstance(self.padding, int) and self.padding >= 1, "padding must be an integer >= 1")
        need(2 * self.padding < self.resolution, "2*padding must be smaller than resolution")
        need(self.base_delta > 0, "base_delta must be positive")
        ks = self.k_values
        need(len(ks) >= 1 and all(k > 0 for k in ks), "k_values must be positive")
        need(all(b > a for a, b in zip(ks, ks[1:])), "k_values must be strictly increasing")
        need(self.dog_mode in DOG_MODES, f"dog_mode must be one of {DOG_MODES}")
        n_dog = len(ks) - (1 if self.dog_mode == "adjacent" else 0)
        need(n_dog >= 3, "the k schedule must give at least 3 DoG levels")
        need(self.extrema_threshold >= 0, "extrema_threshold must be nonnegative")
        need(self.extrema_mode in EXTREMA_MODES, f"extrema_mode must be one of {EXTREMA_MODES}")
        try:
            bin_directions(self.n_bins)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        need(self.window in WINDOW_MODES, f"window must be one of {WINDOW_MODES}")
        need(0 < self.clamp <= 1, "clamp must be in (0, 1]")
        need(isinstance(self.codebook_k, int) and self.codebook_k >= 1, "codebook_k must be a positive integer")
        need(isinstance(self.codebook_iterations, int) and self.codebook_iterations >= 1, "codebook_iterations must be a positive integer")
        need(isinstance(self.seed, int), "seed must be an integer")
        need(self.normalization in NORMALIZATIONS, f"normalization must be one of {NORMALIZATIONS}")
        need(0 < self.ratio <= 1, "ratio must be in (0, 1]")
        try:
            self.descriptor_options()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def descriptor_options(self) -> DescriptorOptions:
        return DescriptorOptions(
            n_bins=self.n_bins,
            window=self.window,
            azimuth_alignment=self.azimuth_alignment,
            soft_binning=self.soft_binning,
            spatial_weighting=self.spatial_weighting,
            clamp=self.clamp,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_values"] = list(self.k_values)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, value):
    default = getattr(PipelineConfig, key, None)
    if key == "k_values":
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
            raise ConfigError("k_values must be a list of numbers")
        return tuple(float(v) for v in value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value


def config_from_mapping(data: dict) -> PipelineConfig:
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return PipelineConfig(**{k: _coerce(k, v) for k, v in data.items()})


def load_config(path=None) -> PipelineConfig:
    """Defaults when ``path`` is None, otherwise a validated flat TOML file."""
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(data)
