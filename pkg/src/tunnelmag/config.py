"""Pipeline configuration: typed dataclasses loaded from a YAML (or JSON) file.

Unknown keys are rejected at every level, and every numeric constraint of the
owning stage is checked when the config is built, before any compute starts.
Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import yaml

from .errors import ConfigError, ValidationError
from .flow import FlowParams
from .ingest import IlluminationParams
from .magnify import SECONDS_PER_HOUR, TemporalBand

DEFAULT_CUTOFF_HOURS = 12.0


# -- generic dict -> dataclass builder --------------------------------------------


def _is_union(tp) -> bool:
    return typing.get_origin(tp) is typing.Union or isinstance(tp, types.UnionType)


def _convert(tp, value, ctx: str):
    if tp is Any:
        return value
    if _is_union(tp):
        args = typing.get_args(tp)
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"{ctx}: may not be null")
        rest = [a for a in args if a is not type(None)]
        errors = []
        for a in rest:
            try:
                return _convert(a, value, ctx)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[0] if len(errors) == 1 else f"{ctx}: no matching type for {value!r}")
    origin = typing.get_origin(tp)
    if origin is Literal:
        if value not in typing.get_args(tp):
            raise ConfigError(f"{ctx}: must be one of {list(typing.get_args(tp))}, got {value!r}")
        return value
    if dataclasses.is_dataclass(tp):
        return build_dataclass(tp, value, ctx)
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{ctx}: expected a list")
        (item,) = typing.get_args(tp)
        return [_convert(item, v, f"{ctx}[{i}]") for i, v in enumerate(value)]
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{ctx}: expected a list of {len(args)} values")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{ctx}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{ctx}: expected {len(args)} values, got {len(value)}")
        return tuple(_convert(a, v, f"{ctx}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{ctx}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{ctx}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{ctx}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{ctx}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{ctx}: unsupported field type {tp!r}")


def build_dataclass(cls, data, ctx: str):
    """Build ``cls`` from a plain mapping, recursively, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{ctx}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{ctx}: unknown key(s) {', '.join(map(str, unknown))}")
    missing = [
        f.name
        for f in dataclasses.fields(cls)
        if f.init
        and f.name not in data
        and f.default is dataclasses.MISSING
        and f.default_factory is dataclasses.MISSING
    ]
    if missing:
        raise ConfigError(f"{ctx}: missing required key(s) {', '.join(missing)}")
    kwargs = {k: _convert(hints[k], v, f"{ctx}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValidationError, TypeError, ValueError) as exc:
        raise ConfigError(f"{ctx}: {exc}") from exc


def to_plain(obj):
    """Dataclass tree to YAML-safe builtins (tuples become lists)."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    return obj


# -- pipeline schema ----------------------------------------------------------------


@dataclass(frozen=True)
class InputConfig:
    manifest_path: str | None = None


@dataclass(frozen=True)
class PreprocessConfig:
    downsample_factor: int = 1
    illumination: IlluminationParams | None = field(default_factory=IlluminationParams)  # null disables

    def __post_init__(self):
        if self.downsample_factor < 1:
            raise ValidationError(f"downsample_factor must be >= 1, got {self.downsample_factor}")


@dataclass(frozen=True)
class PyramidConfig:
    n_scales: int | None = None  # None: largest that fits
    n_orientations: int = 4

    def __post_init__(self):
        if self.n_scales is not None and self.n_scales < 1:
            raise ValidationError("n_scales must be >= 1")
        if self.n_orientations < 2:
            raise ValidationError("n_orientations must be >= 2")


@dataclass(frozen=True)
class BandConfig:
    """Either ``cutoff_period_hours`` or ``low_hz``/``high_hz``; 12 h when neither is set."""

    cutoff_period_hours: float | None = None
    low_hz: float | None = None
    high_hz: float | None = None
    detrend: bool = True

    def __post_init__(self):
        explicit = self.low_hz is not None or self.high_hz is not None
        if explicit and self.cutoff_period_hours is not None:
            raise ValidationError("give either cutoff_period_hours or low_hz/high_hz, not both")
        if explicit and self.high_hz is None:
            raise ValidationError("low_hz needs high_hz")
        if self.cutoff_period_hours is not None and not self.cutoff_period_hours > 0:
            raise ValidationError(f"cutoff_period_hours must be > 0, got {self.cutoff_period_hours}")
        if explicit:
            TemporalBand(self.low_hz or 0.0, self.high_hz, self.detrend)

    def resolve(self, frame_interval_s: float) -> tuple[TemporalBand, list[str]]:
        """Band in Hz for the sequence's frame interval, plus any warnings.

        A period cutoff above Nyquist is clamped (every resolvable frequency
        belongs to the deformation mode); explicit Hz limits must fit.
        """
        if self.high_hz is not None:
            band = TemporalBand(self.low_hz or 0.0, self.high_hz, self.detrend)
            band.check_nyquist(frame_interval_s)
            return band, []
        hours = self.cutoff_period_hours if self.cutoff_period_hours is not None else DEFAULT_CUTOFF_HOURS
        band = TemporalBand.from_period_hours(hours, self.detrend)
        clamped = band.clamped(frame_interval_s)
        warnings = []
        if clamped is not band:
            warnings.append(
                f"cutoff period {hours:g} h is shorter than two frame intervals "
                f"({2 * frame_interval_s / SECONDS_PER_HOUR:g} h); band clamped to Nyquist"
            )
        return clamped, warnings


@dataclass(frozen=True)
class MagnifyConfig:
    alpha: float = 15.0
    band: BandConfig = field(default_factory=BandConfig)
    wiener_window: int | None = 5  # null disables the Wiener pass
    wiener_noise_variance: float | None = None  # None: self-estimated per frame
    reference_index: int = 0
    amplitude_floor: float | None = None

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        w = self.wiener_window
        if w is not None and (w < 3 or w % 2 == 0):
            raise ValidationError(f"wiener_window must be odd and >= 3, got {w}")
        if self.wiener_noise_variance is not None and self.wiener_noise_variance < 0:
            raise ValidationError("wiener_noise_variance must be >= 0")
        if self.amplitude_floor is not None and self.amplitude_floor < 0:
            raise ValidationError("amplitude_floor must be >= 0")


@dataclass(frozen=True)
class MedianConfig:
    spatial_window: int = 5
    temporal_window: int = 3

    def __post_init__(self):
        for name in ("spatial_window", "temporal_window"):
            w = getattr(self, name)
            if w < 1 or w % 2 == 0:
                raise ValidationError(f"{name} must be odd and >= 1, got {w}")


@dataclass(frozen=True)
class ProfileConfig:
    """Ring sample points: explicit, or ``n_points`` on an ellipse.

    ``center_px`` defaults to the prism midpoint and ``semi_axes_px`` to a
    circle through the prisms.
    """

    center_px: tuple[float, float] | None = None
    sample_points: list[tuple[float, float]] | None = None
    n_points: int = 6
    semi_axes_px: tuple[float, float] | None = None
    start_angle_deg: float = 0.0

    def __post_init__(self):
        if self.sample_points is not None and len(self.sample_points) < 2:
            raise ValidationError("sample_points needs at least 2 points")
        if self.n_points < 2:
            raise ValidationError("n_points must be >= 2")


@dataclass(frozen=True)
class RingConfig:
    ring_id: str
    prism_a_px: tuple[float, float]  # (x, y) in input-image pixels
    prism_b_px: tuple[float, float]
    prism_separation_mm: float
    profile: ProfileConfig = field(default_factory=ProfileConfig)

    def __post_init__(self):
        if not self.prism_separation_mm > 0:
            raise ValidationError(f"ring {self.ring_id}: prism_separation_mm must be > 0")
        if tuple(self.prism_a_px) == tuple(self.prism_b_px):
            raise ValidationError(f"ring {self.ring_id}: prism positions coincide")


@dataclass(frozen=True)
class DumpsConfig:
    pyramid: bool = False  # per-band PGM of the reference frame
    ring_png: bool = False  # per-frame rendered ring map


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    dumps: DumpsConfig = field(default_factory=DumpsConfig)


@dataclass(frozen=True)
class PipelineConfig:
    input: InputConfig = field(default_factory=InputConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    magnify: MagnifyConfig = field(default_factory=MagnifyConfig)
    flow: FlowParams = field(default_factory=FlowParams)
    median: MedianConfig = field(default_factory=MedianConfig)
    rings: list[RingConfig] = field(default_factory=list)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        ids = [r.ring_id for r in self.rings]
        if len(set(ids)) != len(ids):
            raise ValidationError("ring_id values must be unique")

    @classmethod
    def from_dict(cls, d: dict | None, base_dir=None) -> "PipelineConfig":
        cfg = build_dataclass(cls, d, "config")
        return cfg.resolved(base_dir) if base_dir is not None else cfg

    def to_dict(self) -> dict:
        return to_plain(self)

    def resolved(self, base_dir) -> "PipelineConfig":
        """Relative input and output paths made absolute against ``base_dir``."""
        base = Path(base_dir)
        inp = self.input
        if inp.manifest_path is not None:
            inp = InputConfig(str((base / inp.manifest_path).resolve()))
        out = dataclasses.replace(self.output, dir=str((base / self.output.dir).resolve()))
        return dataclasses.replace(self, input=inp, output=out)

    def with_output(self, directory) -> "PipelineConfig":
        return dataclasses.replace(self, output=dataclasses.replace(self.output, dir=str(Path(directory).resolve())))


def read_mapping(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_config(path) -> PipelineConfig:
    path = Path(path)
    return PipelineConfig.from_dict(read_mapping(path), base_dir=path.resolve().parent)


def dump_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
