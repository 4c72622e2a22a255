"""Phase-based magnification of a temporal band of motion.

Local phase differences against a reference frame are filtered in time with an
ideal DFT mask, scaled by ``alpha`` and added back, so motion inside the band
appears ``1 + alpha`` times larger.  Reconstructed frames are then smoothed with
an adaptive local-statistics Wiener filter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import uniform_filter

from .errors import (
    EvenWindow,
    NonUniformSampling,
    ProvenanceMismatch,
    ShapeMismatch,
    TooFewFrames,
    ValidationError,
)
from .ingest import FrameSequence
from .pyramid import ComplexPyramid, FilterBank, make_filter_bank, reconstruct, residual_transfer

log = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600.0
RELATIVE_AMPLITUDE_FLOOR = 1e-4
# coefficients weaker than this fraction of the strongest reference coefficient
# are ignored by the phase-step diagnostic; their phase is dominated by noise
DIAGNOSTIC_AMPLITUDE = 0.1
EDGE_RTOL = 1e-9


@dataclass(frozen=True)
class TemporalBand:
    """Temporal passband in Hz.  ``low_cutoff_hz == 0`` keeps the DC bin.

    With ``detrend`` the least-squares linear trend is removed before the DFT
    and restored afterwards when DC is in the band, so a steady drift does not
    wrap around the periodic DFT boundary.
    """

    low_cutoff_hz: float = 0.0
    high_cutoff_hz: float = 1.0 / (12 * SECONDS_PER_HOUR)
    detrend: bool = False

    def __post_init__(self):
        if not (0.0 <= self.low_cutoff_hz < self.high_cutoff_hz):
            raise ValidationError(
                f"band requires 0 <= low < high, got low={self.low_cutoff_hz} high={self.high_cutoff_hz}"
            )

    @classmethod
    def from_period_hours(cls, hours: float, detrend: bool = False) -> "TemporalBand":
        """Deformation band: every period longer than ``hours``."""
        if not hours > 0:
            raise ValidationError("cutoff_period_hours must be > 0")
        return cls(0.0, 1.0 / (hours * SECONDS_PER_HOUR), detrend)

    def check_nyquist(self, frame_interval_s: float) -> None:
        nyquist = 0.5 / frame_interval_s
        if self.high_cutoff_hz > nyquist * (1 + EDGE_RTOL):
            raise ValidationError(
                f"high cutoff {self.high_cutoff_hz:g} Hz exceeds Nyquist {nyquist:g} Hz "
                f"for a {frame_interval_s:g} s frame interval"
            )

    def clamped(self, frame_interval_s: float) -> "TemporalBand":
        nyquist = 0.5 / frame_interval_s
        if self.high_cutoff_hz <= nyquist:
            return self
        return TemporalBand(self.low_cutoff_hz, nyquist, self.detrend)


@dataclass(frozen=True)
class MagnificationParams:
    alpha: float = 15.0
    band: TemporalBand = field(default_factory=TemporalBand)
    reference_index: int = 0
    amplitude_floor: float | None = None  # None: 1e-4 x peak band magnitude

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        if self.amplitude_floor is not None and not self.amplitude_floor >= 0:
            raise ValidationError("amplitude_floor must be >= 0")


@dataclass(frozen=True, eq=False)
class PhaseSeries:
    """Wrapped phase differences, shape ``(n_frames, n_scales, n_orientations, H, W)``."""

    values: np.ndarray
    reference_index: int


# -- per-band kernels shared by the list API and the streaming driver --------


def _band_floor(ref_coeffs: np.ndarray, amplitude_floor: float | None) -> float:
    if amplitude_floor is not None:
        return amplitude_floor
    return RELATIVE_AMPLITUDE_FLOOR * float(np.abs(ref_coeffs).max())


def band_phase_differences(coeffs: np.ndarray, reference_index: int, floor: float, mag=None) -> np.ndarray:
    """arg(c_t conj(c_ref)) along axis 0, zeroed where either magnitude is below ``floor``.

    ``mag`` may pass in a precomputed ``abs(coeffs)``.
    """
    ref = coeffs[reference_index][None]
    # explicit products so identical coefficients give exactly zero
    im = coeffs.imag * ref.real - coeffs.real * ref.imag
    re = coeffs.real * ref.real + coeffs.imag * ref.imag
    dphi = np.arctan2(im, re)
    del im, re
    dphi[dphi == -np.pi] = np.pi
    if floor > 0:
        mag = np.abs(coeffs) if mag is None else mag
        weak = (mag < floor) | (mag[reference_index] < floor)[None]
        dphi[weak] = 0.0
    dphi[reference_index] = 0.0
    return dphi


def max_phase_step(dphi: np.ndarray, mag: np.ndarray, threshold: float) -> float:
    """Largest wrapped frame-to-frame phase step where ``mag`` stays >= ``threshold``."""
    if dphi.shape[0] < 2:
        return 0.0
    strong = mag.min(axis=0) >= threshold
    if not strong.any():
        return 0.0
    step = np.abs(np.diff(dphi[:, strong], axis=0))
    return float(np.minimum(step, 2 * np.pi - step).max())


def check_uniform(timestamps) -> float:
    ts = np.asarray(timestamps, dtype=np.float64)
    if ts.shape[0] < 4:
        raise TooFewFrames(f"temporal filtering needs >= 4 frames, got {ts.shape[0]}")
    dt = np.diff(ts)
    nominal = float(np.median(dt))
    if not nominal > 0 or np.max(np.abs(dt - nominal)) > 0.01 * nominal:
        raise NonUniformSampling("timestamps deviate from uniform sampling by more than 1%")
    return nominal


def passband_bins(n: int, frame_interval_s: float, band: TemporalBand) -> np.ndarray:
    f = sfft.rfftfreq(n, d=frame_interval_s)
    lo = band.low_cutoff_hz * (1 - EDGE_RTOL)
    hi = band.high_cutoff_hz * (1 + EDGE_RTOL)
    keep = (f >= lo) & (f <= hi)
    if band.low_cutoff_hz == 0:
        keep[0] = True
    return keep


def linear_trend(values: np.ndarray) -> np.ndarray:
    """Least-squares straight line through ``values`` along axis 0."""
    n = values.shape[0]
    t = np.arange(n, dtype=values.dtype) - values.dtype.type((n - 1) / 2)
    mean = values.mean(axis=0)
    slope = np.tensordot(t, values, axes=1) / values.dtype.type(np.dot(t, t))
    return mean[None] + t.reshape((n,) + (1,) * (values.ndim - 1)) * slope[None]


def filter_array(values: np.ndarray, band: TemporalBand, timestamps, axis: int = 0) -> np.ndarray:
    """Ideal DFT band filter of real ``values`` along ``axis``; float32 input stays float32."""
    dt = check_uniform(timestamps)
    values = np.asarray(values)
    if values.dtype != np.float32:
        values = values.astype(np.float64)
    values = np.moveaxis(values, axis, 0)
    n = values.shape[0]
    if values.shape[0] != len(timestamps):
        raise ShapeMismatch(f"{n} samples but {len(timestamps)} timestamps")
    keep = passband_bins(n, dt, band)
    trend = None
    if band.detrend:
        trend = linear_trend(values)
        values = values - trend
    if keep.all():
        out = values.copy()
    elif not keep.any():
        out = np.zeros_like(values)
    else:
        spec = sfft.rfft(values, axis=0)
        spec[~keep] = 0
        out = sfft.irfft(spec, n=n, axis=0)
    if trend is not None and band.low_cutoff_hz == 0:
        out += trend
    return np.moveaxis(out, 0, axis)


# -- list-of-pyramids API -------------------------------------------------------


def _stack_bands(pyramids: Sequence[ComplexPyramid]) -> np.ndarray:
    if not pyramids:
        raise ShapeMismatch("empty pyramid list")
    prov = tuple(pyramids[0].provenance)
    for p in pyramids[1:]:
        if tuple(p.provenance) != prov:
            raise ProvenanceMismatch(f"pyramid provenance {p.provenance} differs from {prov}")
    return np.stack([p.bands for p in pyramids])


def phase_differences(
    pyramids: Sequence[ComplexPyramid], reference_index: int = 0, amplitude_floor: float | None = None
) -> PhaseSeries:
    bands = _stack_bands(pyramids)
    n = bands.shape[0]
    if not -n <= reference_index < n:
        raise ValidationError(f"reference_index {reference_index} outside {n} frames")
    reference_index %= n
    out = np.empty(bands.shape, dtype=np.float64)
    n_s, n_k = bands.shape[1:3]
    for s in range(n_s):
        for k in range(n_k):
            c = bands[:, s, k]
            out[:, s, k] = band_phase_differences(c, reference_index, _band_floor(c[reference_index], amplitude_floor))
    return PhaseSeries(out, reference_index)


def temporal_filter(series: PhaseSeries, band: TemporalBand, timestamps) -> PhaseSeries:
    return PhaseSeries(filter_array(series.values, band, timestamps, axis=0), series.reference_index)


def amplify_and_reconstruct(
    pyramids: Sequence[ComplexPyramid],
    filtered: PhaseSeries,
    p: MagnificationParams,
    bank: FilterBank,
    timestamps=None,
) -> FrameSequence:
    bands = _stack_bands(pyramids)
    if filtered.values.shape != bands.shape:
        raise ShapeMismatch(f"phase series {filtered.values.shape} vs pyramids {bands.shape}")
    frames = []
    for pyr, phi in zip(pyramids, filtered.values):
        modified = pyr.with_bands(pyr.bands * np.exp(1j * p.alpha * phi))
        frames.append(reconstruct(modified, bank))
    if timestamps is None:
        timestamps = np.arange(len(frames), dtype=np.float64)
    return FrameSequence(np.clip(np.stack(frames), 0.0, 1.0), timestamps)


# -- Wiener smoothing -------------------------------------------------------


def wiener_smooth(frame, window: int = 5, noise_variance: float | None = None) -> np.ndarray:
    """Adaptive local-statistics Wiener filter.

    ``noise_variance=None`` estimates the noise as the mean local variance.
    """
    if window % 2 == 0 or window < 3:
        raise EvenWindow(f"Wiener window must be odd and >= 3, got {window}")
    x = np.asarray(frame, dtype=np.float64)
    if noise_variance == 0:
        return x.copy()
    # offset by one sample so constant frames come back bit-exact
    offset = x.flat[0]
    y = x - offset
    mu = uniform_filter(y, window, mode="reflect")
    var = np.maximum(uniform_filter(y * y, window, mode="reflect") - mu * mu, 0.0)
    nu2 = float(var.mean()) if noise_variance is None else float(noise_variance)
    denom = np.maximum(var, nu2)
    gain = np.divide(np.maximum(var - nu2, 0.0), denom, out=np.zeros_like(var), where=denom > 0)
    return mu + gain * (y - mu) + offset


# -- streaming driver ---------------------------------------------------------


@dataclass
class MagnifyResult:
    sequence: FrameSequence
    warnings: list[str]
    max_phase_step: float


def magnify_sequence(
    seq: FrameSequence,
    params: MagnificationParams,
    bank: FilterBank | None = None,
    wiener_window: int | None = 5,
    wiener_noise_variance: float | None = None,
) -> MagnifyResult:
    """Magnify ``params.band`` motion in ``seq``, one band at a time to bound memory."""
    if bank is None:
        bank = make_filter_bank(seq.width, seq.height)
    if (bank.height, bank.width) != (seq.height, seq.width):
        raise ShapeMismatch(f"bank {bank.height}x{bank.width} vs frames {seq.height}x{seq.width}")
    n = seq.n_frames
    ref = params.reference_index
    if not -n <= ref < n:
        raise ValidationError(f"reference_index {ref} outside {n} frames")
    ref %= n
    dt = check_uniform(seq.timestamps)
    params.band.check_nyquist(dt)

    # single precision halves the cost; the output is stored at 16 bits anyway
    spectra = sfft.fft2(seq.frames.astype(np.float32))
    masks = bank.band_masks.astype(np.float32)
    # the phase-step diagnostic ignores coefficients weaker than a fraction of
    # the strongest reference coefficient in any band (noise-only bands)
    ref_peak = float(np.abs(sfft.ifft2(spectra[ref] * masks)).max())
    acc = np.zeros_like(spectra)
    worst = 0.0
    for s in range(bank.n_scales):
        for k in range(bank.n_orientations):
            mask = masks[s, k]
            coeffs = sfft.ifft2(spectra * mask)
            mag = np.abs(coeffs)
            dphi = band_phase_differences(coeffs, ref, _band_floor(coeffs[ref], params.amplitude_floor), mag)
            worst = max(worst, max_phase_step(dphi, mag, DIAGNOSTIC_AMPLITUDE * ref_peak))
            del mag
            if params.alpha != 0:
                shift = params.alpha * filter_array(dphi, params.band, seq.timestamps)
                coeffs *= np.cos(shift) + 1j * np.sin(shift)
            acc += sfft.fft2(coeffs) * mask
            log.debug("band s=%d o=%d done", s, k)
    frames = 2.0 * sfft.ifft2(acc).real.astype(np.float64)
    frames += sfft.ifft2(sfft.fft2(seq.frames) * residual_transfer(bank)).real
    del acc, spectra
    frames = np.clip(frames, 0.0, 1.0)
    if wiener_window:
        frames = np.stack([np.clip(wiener_smooth(f, wiener_window, wiener_noise_variance), 0.0, 1.0) for f in frames])

    warnings = []
    if worst > np.pi / 2:
        warnings.append(
            f"phase step of {worst:.3f} rad between consecutive frames exceeds pi/2; "
            "motion may be too large for unwrapped phase differences"
        )
        log.warning(warnings[-1])
    return MagnifyResult(FrameSequence(frames, seq.timestamps), warnings, worst)
