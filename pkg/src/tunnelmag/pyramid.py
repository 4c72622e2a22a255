"""Undecimated complex steerable pyramid built in the frequency domain.

Radial windows are octave-spaced raised cosines in log2(radius); angular
windows are ``cos^(K-1)`` lobes restricted to one half-plane, so every band is
analytic and its coefficients expose a local phase.

Frequencies are normalised so that radius 1 is the Nyquist frequency along an
axis (pi rad/px).  Forward DFTs are unnormalised and inverse DFTs are scaled by
1/N (the numpy/scipy convention).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial, floor, log2
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .ingest import write_image
from .errors import (
    DegenerateDimensions,
    DimensionMismatch,
    ProvenanceMismatch,
    TooManyScales,
    ValidationError,
)

MIN_SIDE = 16


def max_scales(width: int, height: int) -> int:
    return int(floor(log2(min(width, height)))) - 2


def _radial_split(log_r: np.ndarray, boundary: float) -> tuple[np.ndarray, np.ndarray]:
    """Raised-cosine lo/hi pair over one octave below ``boundary``; lo**2 + hi**2 == 1."""
    t = np.clip(log_r - log2(boundary), -1.0, 0.0)
    hi = np.cos(0.5 * np.pi * t)
    hi[t <= -1.0] = 0.0
    hi[t >= 0.0] = 1.0
    lo = np.sqrt(1.0 - hi**2)
    return lo, hi


def _negated(a: np.ndarray) -> np.ndarray:
    """Sample a frequency-plane array at the negated frequency (index -k mod N)."""
    return np.roll(a[..., ::-1, ::-1], shift=(1, 1), axis=(-2, -1))


@dataclass(frozen=True, eq=False)
class FilterBank:
    width: int
    height: int
    n_scales: int
    n_orientations: int
    band_masks: np.ndarray  # (n_scales, n_orientations, H, W)
    lowpass_mask: np.ndarray
    highpass_mask: np.ndarray
    center_frequencies: np.ndarray  # rad/px, per scale
    orientations: np.ndarray  # radians, per orientation

    @property
    def provenance(self) -> tuple[int, int, int, int]:
        return (self.width, self.height, self.n_scales, self.n_orientations)

    def tiling(self) -> np.ndarray:
        """Energy partition at every frequency sample; identically 1 for a tight frame.

        Each analytic band is counted at the sample and at its mirrored sample,
        which is where the discarded conjugate half of the band lives.
        """
        b2 = self.band_masks**2
        bands = (b2 + _negated(b2)).sum(axis=(0, 1))
        return self.highpass_mask**2 + self.lowpass_mask**2 + bands


def make_filter_bank(width: int, height: int, n_scales: int | None = None, n_orientations: int = 4) -> FilterBank:
    if min(width, height) < MIN_SIDE:
        raise DegenerateDimensions(f"frame {width}x{height} is smaller than {MIN_SIDE} px")
    if width % 2 or height % 2:
        raise DimensionMismatch(f"pyramid requires even dimensions, got {width}x{height}")
    limit = max_scales(width, height)
    if n_scales is None:
        n_scales = limit
    if n_scales < 1:
        raise ValidationError("n_scales must be >= 1")
    if n_scales > limit:
        raise TooManyScales(f"{n_scales} scales requested, at most {limit} fit {width}x{height}")
    if n_orientations < 2:
        raise ValidationError("n_orientations must be >= 2")

    fy = sfft.fftfreq(height)[:, None]
    fx = sfft.fftfreq(width)[None, :]
    radius = np.sqrt(fx**2 + fy**2) / 0.5
    radius[0, 0] = 2.0 ** -(n_scales + 4)  # finite log at DC; DC falls in the lowpass
    log_r = np.log2(radius)
    theta = np.arctan2(fy, fx) * np.ones_like(radius)

    order = n_orientations - 1
    norm = np.sqrt(
        2.0 ** (2 * order) * factorial(order) ** 2 / (n_orientations * factorial(2 * order))
    )
    angle_masks = np.empty((n_orientations, height, width))
    orientations = np.pi * np.arange(n_orientations) / n_orientations
    for k, theta_k in enumerate(orientations):
        c = np.cos(theta - theta_k)
        angle_masks[k] = np.where(c > 0, norm * c**order, 0.0)

    lo_prev, highpass = _radial_split(log_r, 1.0)
    bands = np.empty((n_scales, n_orientations, height, width))
    centers = np.empty(n_scales)
    for s in range(n_scales):
        boundary = 2.0 ** -(s + 1)
        lo, hi = _radial_split(log_r, boundary)
        bands[s] = (hi * lo_prev)[None] * angle_masks
        centers[s] = np.pi * boundary
        lo_prev = lo

    for a in (bands, lo_prev, highpass, centers, orientations):
        a.setflags(write=False)
    return FilterBank(
        width=width,
        height=height,
        n_scales=n_scales,
        n_orientations=n_orientations,
        band_masks=bands,
        lowpass_mask=lo_prev,
        highpass_mask=highpass,
        center_frequencies=centers,
        orientations=orientations,
    )


@dataclass(frozen=True, eq=False)
class ComplexPyramid:
    bands: np.ndarray  # complex, (n_scales, n_orientations, H, W)
    low_residual: np.ndarray
    high_residual: np.ndarray
    provenance: tuple[int, int, int, int]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.bands)

    def phase(self) -> np.ndarray:
        return np.angle(self.bands)

    def with_bands(self, bands: np.ndarray) -> "ComplexPyramid":
        return ComplexPyramid(bands, self.low_residual, self.high_residual, self.provenance)


def _check_frame(frame: np.ndarray, bank: FilterBank) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (bank.height, bank.width):
        raise DimensionMismatch(f"frame {frame.shape} does not match bank {(bank.height, bank.width)}")
    return frame


def decompose(frame, bank: FilterBank) -> ComplexPyramid:
    frame = _check_frame(frame, bank)
    spectrum = sfft.fft2(frame)
    bands = sfft.ifft2(spectrum * bank.band_masks)
    low = sfft.ifft2(spectrum * bank.lowpass_mask).real
    high = sfft.ifft2(spectrum * bank.highpass_mask).real
    return ComplexPyramid(bands, low, high, bank.provenance)


def reconstruct(pyr: ComplexPyramid, bank: FilterBank) -> np.ndarray:
    if tuple(pyr.provenance) != bank.provenance:
        raise ProvenanceMismatch(f"pyramid {pyr.provenance} vs bank {bank.provenance}")
    acc = (sfft.fft2(pyr.bands) * bank.band_masks).sum(axis=(0, 1))
    out = 2.0 * sfft.ifft2(acc).real
    residual = sfft.fft2(pyr.high_residual) * bank.highpass_mask + sfft.fft2(pyr.low_residual) * bank.lowpass_mask
    return out + sfft.ifft2(residual).real


def residual_transfer(bank: FilterBank) -> np.ndarray:
    """Combined frequency response of both residuals after analysis and synthesis."""
    return bank.highpass_mask**2 + bank.lowpass_mask**2


def dump_pyramid(pyr: ComplexPyramid, bank: FilterBank, directory, prefix: str = "band") -> list[Path]:
    """Write per-band magnitude and phase as 16-bit PGM, each with a text sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for s in range(bank.n_scales):
        for k in range(bank.n_orientations):
            c = pyr.bands[s, k]
            mag = np.abs(c)
            peak = float(mag.max())
            planes = {
                "mag": mag / peak if peak > 0 else mag,
                "phase": (np.angle(c) + np.pi) / (2 * np.pi),
            }
            for kind, plane in planes.items():
                stem = f"{prefix}_s{s}_o{k}_{kind}"
                path = directory / f"{stem}.pgm"
                write_image(path, plane)
                header = (
                    f"scale={s}\norientation={k}\n"
                    f"orientation_rad={bank.orientations[k]!r}\n"
                    f"center_frequency_rad_per_px={bank.center_frequencies[s]!r}\n"
                    f"kind={kind}\n"
                )
                header += f"magnitude_max={peak!r}\n" if kind == "mag" else "phase_range=-pi..pi\n"
                (directory / f"{stem}.txt").write_text(header, encoding="utf-8")
                written += [path, directory / f"{stem}.txt"]
    return written

