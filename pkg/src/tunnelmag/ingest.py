"""Frame loading, grayscale conversion, downsampling and illumination correction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import (
    DimensionMismatch,
    MissingFile,
    NonFiniteInput,
    NonMonotoneTimestamps,
    TooFewFrames,
    ValidationError,
    ZeroFactor,
)

log = logging.getLogger(__name__)

LUMA_601 = (0.299, 0.587, 0.114)
MANIFEST_NAME = "manifest.csv"


@dataclass(frozen=True)
class FrameSequence:
    """Immutable stack of grayscale frames in [0, 1] with timestamps in seconds.

    ``frames`` has shape ``(n_frames, height, width)``.
    """

    frames: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        ts = np.array(self.timestamps, dtype=np.float64).reshape(-1)
        if frames.ndim != 3:
            raise DimensionMismatch(f"frames must be a (T, H, W) stack, got shape {frames.shape}")
        if frames.shape[0] < 2:
            raise TooFewFrames(f"need at least 2 frames, got {frames.shape[0]}")
        if ts.shape[0] != frames.shape[0]:
            raise DimensionMismatch(f"{frames.shape[0]} frames but {ts.shape[0]} timestamps")
        if not np.all(np.isfinite(frames)):
            raise NonFiniteInput("frames contain non-finite values")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise ValidationError("frame intensities must lie in [0, 1]")
        if not np.all(np.diff(ts) > 0):
            raise NonMonotoneTimestamps("timestamps must be strictly increasing")
        frames.setflags(write=False)
        ts.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", ts)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def frame_interval_s(self) -> float:
        return float(np.median(np.diff(self.timestamps)))

    def replace_frames(self, frames) -> "FrameSequence":
        return FrameSequence(frames, self.timestamps)


@dataclass(frozen=True)
class IlluminationParams:
    sigma_px: float | None = None  # None: min(width, height) / 8
    mode: Literal["divide", "subtract"] = "divide"
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.sigma_px is not None and not self.sigma_px > 0:
            raise ValidationError("illumination sigma_px must be > 0")
        if not self.epsilon > 0:
            raise ValidationError("illumination epsilon must be > 0")
        if self.mode not in ("divide", "subtract"):
            raise ValidationError(f"unknown illumination mode {self.mode!r}")


def to_grayscale(rgb_frame) -> np.ndarray:
    """Rec.601 luma of an ``(H, W, 3)`` frame."""
    rgb = np.asarray(rgb_frame, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DimensionMismatch(f"expected (H, W, 3) frame, got {rgb.shape}")
    if not np.all(np.isfinite(rgb)):
        raise NonFiniteInput("RGB frame contains non-finite values")
    r, g, b = LUMA_601
    return r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]


def read_image(path) -> np.ndarray:
    """Read a PNG/PGM file (8/16-bit, gray or RGB) into a float grid in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"image not found: {path}")
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif mode == "L":
            arr = np.asarray(im, dtype=np.float64) / 255.0
        elif mode in ("RGB", "RGBA", "P", "LA"):
            arr = to_grayscale(np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0)
        else:
            raise ValidationError(f"unsupported image mode {mode!r} in {path}")
    return np.clip(arr, 0.0, 1.0)


def write_image(path, frame) -> None:
    """Write a [0, 1] grid as 16-bit grayscale PNG or PGM (chosen by suffix)."""
    path = Path(path)
    q = np.round(np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0) * 65535.0).astype(np.uint16)
    fmt = "PPM" if path.suffix.lower() == ".pgm" else "PNG"
    Image.fromarray(q).save(path, format=fmt)


def quantize16(frames) -> np.ndarray:
    return np.round(np.clip(frames, 0.0, 1.0) * 65535.0) / 65535.0


def read_manifest(manifest_path) -> list[tuple[Path, float]]:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(f"manifest not found: {manifest_path}")
    entries = []
    for lineno, line in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rel, ts = line.rsplit(",", 1)
            entries.append((manifest_path.parent / rel.strip(), float(ts)))
        except ValueError as exc:
            raise ValidationError(f"{manifest_path}:{lineno}: expected '<path>,<seconds>'") from exc
    return entries


def load_sequence(manifest_path) -> FrameSequence:
    entries = read_manifest(manifest_path)
    if len(entries) < 2:
        raise TooFewFrames(f"manifest lists {len(entries)} frame(s); need at least 2")
    ts = np.array([t for _, t in entries])
    if not np.all(np.diff(ts) > 0):
        raise NonMonotoneTimestamps(f"timestamps in {manifest_path} are not strictly increasing")
    frames = []
    for path, _ in entries:
        img = read_image(path)
        if frames and img.shape != frames[0].shape:
            raise DimensionMismatch(f"{path} is {img.shape}, expected {frames[0].shape}")
        frames.append(img)
    return FrameSequence(np.stack(frames), ts)


def save_sequence(seq: FrameSequence, directory, prefix: str = "frame", suffix: str = ".png") -> Path:
    """Write 16-bit frames plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (frame, t) in enumerate(zip(seq.frames, seq.timestamps)):
        name = f"{prefix}_{i:05d}{suffix}"
        write_image(directory / name, frame)
        lines.append(f"{name},{float(t)!r}\n")
    manifest = directory / MANIFEST_NAME
    manifest.write_text("".join(lines), encoding="utf-8")
    return manifest


def downsample(seq: FrameSequence, factor: int) -> FrameSequence:
    """Area-average ``factor x factor`` blocks; incomplete trailing blocks are dropped."""
    if int(factor) != factor or factor < 1:
        raise ZeroFactor(f"downsample factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return seq
    t, h, w = seq.frames.shape
    hh, ww = h // factor, w // factor
    if hh < 1 or ww < 1:
        raise DimensionMismatch(f"factor {factor} exceeds frame size {h}x{w}")
    blocks = seq.frames[:, : hh * factor, : ww * factor].reshape(t, hh, factor, ww, factor)
    return seq.replace_frames(blocks.mean(axis=(2, 4)))


def crop_even(seq: FrameSequence) -> FrameSequence:
    h, w = seq.height, seq.width
    if h % 2 == 0 and w % 2 == 0:
        return seq
    return seq.replace_frames(seq.frames[:, : h - h % 2, : w - w % 2])


def correct_frame(frame: np.ndarray, p: IlluminationParams) -> np.ndarray:
    sigma = p.sigma_px if p.sigma_px is not None else min(frame.shape) / 8.0
    background = gaussian_filter(frame, sigma, mode="reflect")
    if p.mode == "divide":
        out = frame * background.mean() / np.maximum(background, p.epsilon)
    else:
        # mean(background) rather than mean(frame) keeps the frame mean exact
        # under reflective padding
        out = frame - background + background.mean()
    return np.clip(out, 0.0, 1.0)


def correct_illumination(seq: FrameSequence, p: IlluminationParams | None = None) -> FrameSequence:
    p = p or IlluminationParams()
    return seq.replace_frames(np.stack([correct_frame(f, p) for f in seq.frames]))


def preprocess(
    seq: FrameSequence,
    downsample_factor: int = 1,
    illumination: IlluminationParams | None = None,
) -> FrameSequence:
    """Ingest chain: area downsample, crop to even size, illumination correction."""
    seq = crop_even(downsample(seq, downsample_factor))
    if illumination is not None:
        seq = correct_illumination(seq, illumination)
    return seq


def sequence_from_frames(frames: Sequence[np.ndarray], timestamps=None) -> FrameSequence:
    frames = np.asarray(frames, dtype=np.float64)
    if timestamps is None:
        timestamps = np.arange(frames.shape[0], dtype=np.float64)
    return FrameSequence(frames, timestamps)
