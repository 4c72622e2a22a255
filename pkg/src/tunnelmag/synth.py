"""Synthetic textured scenes with analytic ground-truth motion.

Ring geometry uses angles measured clockwise from the crown (top of the image):
a ring point at angle ``theta`` sits at ``center + R * (sin theta, -cos theta)``
in ``(x, y)`` pixel coordinates, and that vector is also its outward normal.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import map_coordinates

from .errors import IoError, SpecInvalid
from .ingest import FrameSequence, quantize16, read_image, save_sequence

TRUTH_NAME = "truth.json"
TRUTH_SCHEMA = "tunnelmag-truth/1"


@dataclass
class TextureSpec:
    kind: Literal["noise", "image"] = "noise"
    min_wavelength_px: float = 8.0
    max_wavelength_px: float = 48.0
    contrast: float = 0.3  # peak deviation from mid-grey
    path: str | None = None


@dataclass
class MotionComponent:
    """One motion term.

    ``translation``/``sinusoid``: uniform motion along ``direction_deg``
    (0 = +x, 90 = +y).  With ``frequency_hz == 0`` a translation is a linear
    drift of ``amplitude_px`` per frame.

    ``ring_squeeze``: elliptical ovalisation of the scene ring, crown and
    invert inward, springlines outward.  With ``frequency_hz == 0`` the squeeze
    ramps linearly to its amplitude at the last frame.  The amplitude may be
    given in mm (``amplitude_mm``), converted with the ring's scale.
    """

    kind: Literal["translation", "sinusoid", "ring_squeeze"] = "translation"
    amplitude_px: float = 0.0
    amplitude_mm: float | None = None
    frequency_hz: float = 0.0
    direction_deg: float = 0.0
    phase_deg: float = 0.0


@dataclass
class RingSpec:
    radius_px: float
    center_px: tuple[float, float] | None = None  # (x, y); None = frame centre
    falloff_px: float | None = None  # None = radius / 2
    scale_mm_per_px: float = 10.0
    prism_angles_deg: tuple[float, float] = (0.0, 180.0)
    n_samples: int = 6
    start_angle_deg: float = 0.0


@dataclass
class IlluminationSpec:
    ramp_strength: float = 0.0  # gain falls linearly from 1 (right edge) to 1 - ramp (left edge)
    drift_per_frame: float = 0.0  # relative global gain change per frame


@dataclass
class SceneSpec:
    width: int = 128
    height: int = 128
    n_frames: int = 16
    frame_interval_s: float = 1.0
    texture: TextureSpec = field(default_factory=TextureSpec)
    motion_components: list[MotionComponent] = field(default_factory=list)
    ring: RingSpec | None = None
    illumination: IlluminationSpec = field(default_factory=IlluminationSpec)
    noise_sigma: float = 0.0
    rng_seed: int = 0
    bit_depth: int | None = 16  # None keeps float frames

    def validate(self) -> None:
        if self.width < 16 or self.height < 16:
            raise SpecInvalid("scene must be at least 16x16")
        if self.n_frames < 2:
            raise SpecInvalid("scene needs at least 2 frames")
        if not self.frame_interval_s > 0:
            raise SpecInvalid("frame_interval_s must be > 0")
        if self.noise_sigma < 0:
            raise SpecInvalid("noise_sigma must be >= 0")
        if self.bit_depth not in (None, 16):
            raise SpecInvalid("bit_depth must be 16 or null")
        nyquist = 0.5 / self.frame_interval_s
        for m in self.motion_components:
            if m.kind not in ("translation", "sinusoid", "ring_squeeze"):
                raise SpecInvalid(f"unknown motion kind {m.kind!r}")
            if m.amplitude_px < 0 or (m.amplitude_mm is not None and m.amplitude_mm < 0):
                raise SpecInvalid("motion amplitudes must be >= 0")
            if not 0 <= m.frequency_hz <= nyquist:
                raise SpecInvalid(f"motion frequency {m.frequency_hz} Hz outside [0, Nyquist={nyquist}]")
            if m.kind == "sinusoid" and m.frequency_hz == 0:
                raise SpecInvalid("sinusoid motion needs frequency_hz > 0")
            if m.kind == "ring_squeeze" and self.ring is None:
                raise SpecInvalid("ring_squeeze motion needs a ring block")
            if m.amplitude_mm is not None and self.ring is None:
                raise SpecInvalid("amplitude_mm needs a ring block for its scale")
        if self.ring is not None:
            r = self.ring
            if not r.radius_px > 0 or not r.scale_mm_per_px > 0:
                raise SpecInvalid("ring radius and scale must be > 0")
            if r.n_samples < 2:
                raise SpecInvalid("ring needs at least 2 samples")
            if r.prism_angles_deg[0] % 360 == r.prism_angles_deg[1] % 360:
                raise SpecInvalid("ring prisms must be distinct")
        if self.texture.kind == "image" and not self.texture.path:
            raise SpecInvalid("image texture needs a path")
        if self.texture.kind == "noise" and not (
            2 <= self.texture.min_wavelength_px < self.texture.max_wavelength_px
        ):
            raise SpecInvalid("texture wavelengths need 2 <= min < max")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        from .config import build_dataclass

        return build_dataclass(cls, d, "scene")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RingGeometry:
    center: np.ndarray  # (x, y)
    radius: float
    falloff: float
    scale_mm_per_px: float
    prism_angles_deg: np.ndarray
    sample_angles_deg: np.ndarray

    def points(self, angles_deg) -> np.ndarray:
        return self.center + self.radius * self.normals(angles_deg)

    @staticmethod
    def normals(angles_deg) -> np.ndarray:
        th = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
        return np.stack([np.sin(th), -np.cos(th)], axis=-1)

    @property
    def prisms(self) -> np.ndarray:
        return self.points(self.prism_angles_deg)

    @property
    def samples(self) -> np.ndarray:
        return self.points(self.sample_angles_deg)

    def squeeze_displacement(self, pts: np.ndarray, amplitude_px: float) -> np.ndarray:
        """Ovalisation displacement ``(dx, dy)`` at ``(..., 2)`` points in (x, y)."""
        rel = pts - self.center
        rho = np.hypot(rel[..., 0], rel[..., 1])
        safe = np.where(rho > 0, rho, 1.0)
        n = rel / safe[..., None]
        # cos(2 theta) with theta measured clockwise from the crown
        cos2 = n[..., 1] ** 2 - n[..., 0] ** 2
        g = np.exp(-((rho - self.radius) ** 2) / (2 * self.falloff**2))
        radial = np.where(rho > 0, -amplitude_px * cos2 * g, 0.0)
        return radial[..., None] * n


@dataclass(eq=False)
class GroundTruth:
    width: int
    height: int
    timestamps: np.ndarray
    translation_px: np.ndarray  # (T, 2) uniform (dx, dy)
    squeeze_px: np.ndarray  # (T,) ovalisation amplitude
    ring: RingGeometry | None = None
    prism_positions_px: np.ndarray | None = None  # (T, 2, 2)
    convergence_mm: np.ndarray | None = None  # (T,)
    radial_profile_px: np.ndarray | None = None  # (T, M), rigid motion removed

    def displacement(self, t: int, pts: np.ndarray) -> np.ndarray:
        d = np.broadcast_to(self.translation_px[t], pts.shape).copy()
        if self.ring is not None and self.squeeze_px[t] != 0:
            d += self.ring.squeeze_displacement(pts, self.squeeze_px[t])
        return d

    def field(self, t: int) -> np.ndarray:
        """Exact displacement field, shape ``(H, W, 2)`` holding (dx, dy)."""
        yy, xx = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        return self.displacement(t, np.stack([xx, yy], axis=-1))

    @property
    def radial_profile_mm(self) -> np.ndarray | None:
        if self.radial_profile_px is None:
            return None
        return self.radial_profile_px * self.ring.scale_mm_per_px

    def to_dict(self) -> dict:
        d = {
            "schema": TRUTH_SCHEMA,
            "width": self.width,
            "height": self.height,
            "timestamps_s": self.timestamps.tolist(),
            "translation_px": self.translation_px.tolist(),
            "squeeze_px": self.squeeze_px.tolist(),
            "ring": None,
        }
        if self.ring is not None:
            r = self.ring
            d["ring"] = {
                "center_px": r.center.tolist(),
                "radius_px": r.radius,
                "falloff_px": r.falloff,
                "scale_mm_per_px": r.scale_mm_per_px,
                "prism_angles_deg": r.prism_angles_deg.tolist(),
                "sample_angles_deg": r.sample_angles_deg.tolist(),
            }
            d["prism_positions_px"] = self.prism_positions_px.tolist()
            d["convergence_mm"] = self.convergence_mm.tolist()
            d["radial_profile_px"] = self.radial_profile_px.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        if d.get("schema") != TRUTH_SCHEMA:
            raise SpecInvalid(f"unknown truth schema {d.get('schema')!r}")
        ring = None
        extra = {}
        if d.get("ring") is not None:
            r = d["ring"]
            ring = RingGeometry(
                center=np.array(r["center_px"], dtype=np.float64),
                radius=float(r["radius_px"]),
                falloff=float(r["falloff_px"]),
                scale_mm_per_px=float(r["scale_mm_per_px"]),
                prism_angles_deg=np.array(r["prism_angles_deg"], dtype=np.float64),
                sample_angles_deg=np.array(r["sample_angles_deg"], dtype=np.float64),
            )
            extra = {
                "prism_positions_px": np.array(d["prism_positions_px"], dtype=np.float64),
                "convergence_mm": np.array(d["convergence_mm"], dtype=np.float64),
                "radial_profile_px": np.array(d["radial_profile_px"], dtype=np.float64),
            }
        return cls(
            width=int(d["width"]),
            height=int(d["height"]),
            timestamps=np.array(d["timestamps_s"], dtype=np.float64),
            translation_px=np.array(d["translation_px"], dtype=np.float64).reshape(-1, 2),
            squeeze_px=np.array(d["squeeze_px"], dtype=np.float64),
            ring=ring,
            **extra,
        )


def noise_texture(width: int, height: int, spec: TextureSpec, rng: np.random.Generator) -> np.ndarray:
    """Periodic, band-limited multi-octave noise with equal energy per octave."""
    white = rng.standard_normal((height, width))
    f = np.hypot(sfft.fftfreq(height)[:, None], sfft.fftfreq(width)[None, :])
    lo, hi = 1.0 / spec.max_wavelength_px, 1.0 / spec.min_wavelength_px
    logf = np.log2(np.where(f > 0, f, 1e-12))
    # half-octave raised-cosine tapers at both ends of the band
    rise = np.clip((logf - np.log2(lo)) / 0.5 + 1.0, 0.0, 1.0)
    fall = np.clip((np.log2(hi) - logf) / 0.5 + 1.0, 0.0, 1.0)
    window = np.sin(0.5 * np.pi * rise) ** 2 * np.sin(0.5 * np.pi * fall) ** 2
    amp = np.where(f > 0, window / np.where(f > 0, f, 1.0), 0.0)
    tex = sfft.ifft2(sfft.fft2(white) * amp).real
    tex *= spec.contrast / np.abs(tex).max()
    return 0.5 + tex


def _fourier_shift(spectrum: np.ndarray, dx: float, dy: float) -> np.ndarray:
    h, w = spectrum.shape
    ramp = np.exp(-2j * np.pi * (sfft.fftfreq(h)[:, None] * dy + sfft.fftfreq(w)[None, :] * dx))
    return sfft.ifft2(spectrum * ramp).real


def _ring_geometry(spec: SceneSpec) -> RingGeometry | None:
    r = spec.ring
    if r is None:
        return None
    center = r.center_px if r.center_px is not None else ((spec.width - 1) / 2.0, (spec.height - 1) / 2.0)
    samples = r.start_angle_deg + 360.0 * np.arange(r.n_samples) / r.n_samples
    return RingGeometry(
        center=np.array(center, dtype=np.float64),
        radius=float(r.radius_px),
        falloff=float(r.falloff_px if r.falloff_px is not None else r.radius_px / 2.0),
        scale_mm_per_px=float(r.scale_mm_per_px),
        prism_angles_deg=np.array(r.prism_angles_deg, dtype=np.float64),
        sample_angles_deg=samples,
    )


def _time_profile(m: MotionComponent, idx: np.ndarray, ts: np.ndarray, ramp_to_end: bool) -> np.ndarray:
    if m.frequency_hz == 0:
        if ramp_to_end:
            return idx / max(idx[-1], 1)
        return idx.astype(np.float64)
    return np.sin(2 * np.pi * m.frequency_hz * ts + np.deg2rad(m.phase_deg))


def ground_truth(spec: SceneSpec) -> GroundTruth:
    spec.validate()
    n = spec.n_frames
    idx = np.arange(n)
    ts = idx * spec.frame_interval_s
    ring = _ring_geometry(spec)
    translation = np.zeros((n, 2))
    squeeze = np.zeros(n)
    for m in spec.motion_components:
        amp = m.amplitude_px
        if m.amplitude_mm is not None:
            amp = m.amplitude_mm / spec.ring.scale_mm_per_px
        if m.kind == "ring_squeeze":
            squeeze += amp * _time_profile(m, idx, ts, ramp_to_end=True)
        else:
            th = np.deg2rad(m.direction_deg)
            translation += np.outer(amp * _time_profile(m, idx, ts, ramp_to_end=False), [np.cos(th), np.sin(th)])
    truth = GroundTruth(spec.width, spec.height, ts, translation, squeeze, ring)
    if ring is not None:
        prisms = ring.prisms
        samples = ring.samples
        normals = ring.normals(ring.sample_angles_deg)
        rest = np.linalg.norm(prisms[0] - prisms[1])
        pos = np.empty((n, 2, 2))
        conv = np.empty(n)
        radial = np.empty((n, ring.sample_angles_deg.size))
        for t in range(n):
            pos[t] = prisms + truth.displacement(t, prisms)
            conv[t] = (np.linalg.norm(pos[t, 0] - pos[t, 1]) - rest) * ring.scale_mm_per_px
            d = truth.displacement(t, samples)
            rel = d - np.median(d, axis=0)
            radial[t] = np.sum(rel * normals, axis=1)
        truth.prism_positions_px = pos
        truth.convergence_mm = conv
        truth.radial_profile_px = radial
    return truth


def _inverse_warp_coords(truth: GroundTruth, t: int, iterations: int = 4) -> np.ndarray:
    """Source coordinates X with X + D(X) = pixel grid, by fixed-point iteration."""
    yy, xx = np.mgrid[0 : truth.height, 0 : truth.width].astype(np.float64)
    grid = np.stack([xx, yy], axis=-1)
    src = grid - truth.displacement(t, grid)
    for _ in range(iterations - 1):
        src = grid - truth.displacement(t, src)
    return src


def generate(spec: SceneSpec) -> tuple[FrameSequence, GroundTruth]:
    truth = ground_truth(spec)
    h, w = spec.height, spec.width
    if spec.texture.kind == "noise":
        texture = noise_texture(w, h, spec.texture, np.random.default_rng([spec.rng_seed, 0xFFFFFFFF]))
        periodic = True
    else:
        texture = read_image(spec.texture.path)
        if texture.shape != (h, w):
            raise SpecInvalid(f"texture image is {texture.shape}, scene is {(h, w)}")
        periodic = False
    tex_spectrum = sfft.fft2(texture)
    uniform = truth.ring is None or not np.any(truth.squeeze_px)

    xs = np.arange(w) / max(w - 1, 1)
    ramp = 1.0 - spec.illumination.ramp_strength * (1.0 - xs)[None, :]
    frames = np.empty((spec.n_frames, h, w))
    for t in range(spec.n_frames):
        dx, dy = truth.translation_px[t]
        if uniform and periodic:
            img = _fourier_shift(tex_spectrum, dx, dy) if (dx or dy) else texture.copy()
        else:
            src = _inverse_warp_coords(truth, t)
            mode = "grid-wrap" if periodic else "reflect"
            img = map_coordinates(texture, [src[..., 1], src[..., 0]], order=3, mode=mode)
        img = img * ramp * (1.0 + spec.illumination.drift_per_frame * t)
        if spec.noise_sigma > 0:
            # per-frame substream: depends only on (seed, frame index)
            img = img + np.random.default_rng([spec.rng_seed, t]).normal(0.0, spec.noise_sigma, img.shape)
        frames[t] = np.clip(img, 0.0, 1.0)
    if spec.bit_depth == 16:
        frames = quantize16(frames)
    return FrameSequence(frames, truth.timestamps), truth


def write_scene(seq: FrameSequence, truth: GroundTruth, directory) -> tuple[Path, Path]:
    """Write frames with a manifest plus ``truth.json``; returns both paths."""
    directory = Path(directory)
    try:
        manifest = save_sequence(seq, directory)
        truth_path = directory / TRUTH_NAME
        truth_path.write_text(json.dumps(truth.to_dict(), indent=1), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write scene to {directory}: {exc}") from exc
    return manifest, truth_path


def read_truth(path) -> GroundTruth:
    return GroundTruth.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
