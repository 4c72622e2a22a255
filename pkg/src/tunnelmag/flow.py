"""Dense coarse-to-fine iterative Lucas-Kanade optical flow.

Stands in for a learned dense-flow network; ``compute_flow`` is the pluggable
boundary.  Displacements are in pixels, positive right (u) and down (v), and
map reference pixels onto the target: ``target(x + u, y + v) ~ reference(x, y)``.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d, map_coordinates, minimum_filter, uniform_filter

from .errors import DimensionMismatch, FrameTooSmallForLevels, ValidationError
from .ingest import FrameSequence

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
FLOW_MAGIC = b"PFLO"


@dataclass(frozen=True)
class FlowParams:
    n_levels: int = 3
    window: int = 15
    iterations: int = 10
    min_eig: float = 1e-4
    gain_compensation: bool = True  # rescale the target to the reference's mean intensity

    def __post_init__(self):
        if self.n_levels < 1:
            raise ValidationError("flow n_levels must be >= 1")
        if self.window < 5 or self.window % 2 == 0:
            raise ValidationError(f"flow window must be odd and >= 5, got {self.window}")
        if self.iterations < 1:
            raise ValidationError("flow iterations must be >= 1")
        if not self.min_eig > 0:
            raise ValidationError("flow min_eig must be > 0")


@dataclass(frozen=True, eq=False)
class DisplacementField:
    u: np.ndarray
    v: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        if not (self.u.shape == self.v.shape == self.valid_mask.shape):
            raise DimensionMismatch("u, v and valid_mask must share a shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @classmethod
    def zeros(cls, shape, valid=None) -> "DisplacementField":
        valid = np.ones(shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        return cls(np.zeros(shape), np.zeros(shape), valid)

    def mean(self) -> tuple[float, float]:
        m = self.valid_mask
        if not m.any():
            return (float("nan"), float("nan"))
        return float(self.u[m].mean()), float(self.v[m].mean())


def _reduce(img: np.ndarray) -> np.ndarray:
    smooth = correlate1d(correlate1d(img, BINOMIAL5, axis=0, mode="reflect"), BINOMIAL5, axis=1, mode="reflect")
    return smooth[::2, ::2]


def gaussian_pyramid(img: np.ndarray, n_levels: int) -> list[np.ndarray]:
    levels = [img]
    for _ in range(n_levels - 1):
        levels.append(_reduce(levels[-1]))
    return levels


def _upsample_flow(flow: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(shape[0]) / 2.0, np.arange(shape[1]) / 2.0, indexing="ij")
    return 2.0 * map_coordinates(flow, [yy, xx], order=1, mode="nearest")


def structure_tensor(img: np.ndarray, window: int):
    """Window-averaged gradient products and the smaller eigenvalue."""
    iy, ix = np.gradient(img)
    sxx = uniform_filter(ix * ix, window, mode="reflect")
    syy = uniform_filter(iy * iy, window, mode="reflect")
    sxy = uniform_filter(ix * iy, window, mode="reflect")
    half_trace = 0.5 * (sxx + syy)
    min_eig = half_trace - np.sqrt((0.5 * (sxx - syy)) ** 2 + sxy**2)
    return ix, iy, sxx, syy, sxy, min_eig


def _refine(ref, tgt, u, v, window, iterations, min_eig):
    h, w = ref.shape
    ix, iy, sxx, syy, sxy, lam = structure_tensor(ref, window)
    solvable = lam >= min_eig
    det = np.where(solvable, sxx * syy - sxy * sxy, 1.0)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(iterations):
        warped = map_coordinates(tgt, [yy + v, xx + u], order=1, mode="nearest")
        # each window is re-linearised around its pixels' own current flow, so
        # the solve is a full update rather than an increment (stable when the
        # flow varies across the window)
        r = ix * u + iy * v - (warped - ref)
        bx = uniform_filter(ix * r, window, mode="reflect")
        by = uniform_filter(iy * r, window, mode="reflect")
        u = np.where(solvable, (syy * bx - sxy * by) / det, u)
        v = np.where(solvable, (sxx * by - sxy * bx) / det, v)
    inside = (xx + u >= 0) & (xx + u <= w - 1) & (yy + v >= 0) & (yy + v <= h - 1)
    # a window touching any clamped sample is unreliable as a whole
    inside = minimum_filter(inside, size=window, mode="nearest")
    return u, v, solvable & inside


def compute_flow(reference, target, p: FlowParams | None = None) -> DisplacementField:
    p = p or FlowParams()
    ref = np.asarray(reference, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if ref.shape != tgt.shape or ref.ndim != 2:
        raise DimensionMismatch(f"reference {ref.shape} and target {tgt.shape} must be equal 2D grids")
    if p.gain_compensation:
        # brightness constancy fails under a global illumination drift; the
        # per-pixel bias it causes does not average out at single points
        m = tgt.mean()
        if m > 0:
            tgt = tgt * (ref.mean() / m)
    need = 2 ** (p.n_levels - 1) * p.window
    if min(ref.shape) < need:
        raise FrameTooSmallForLevels(f"min side {min(ref.shape)} < {need} for {p.n_levels} levels, window {p.window}")
    refs = gaussian_pyramid(ref, p.n_levels)
    tgts = gaussian_pyramid(tgt, p.n_levels)
    u = np.zeros(refs[-1].shape)
    v = np.zeros(refs[-1].shape)
    valid = None
    for level in range(p.n_levels - 1, -1, -1):
        if u.shape != refs[level].shape:
            u = _upsample_flow(u, refs[level].shape)
            v = _upsample_flow(v, refs[level].shape)
        u, v, valid = _refine(refs[level], tgts[level], u, v, p.window, p.iterations, p.min_eig)
    return DisplacementField(u, v, valid)


def flow_series(
    seq: FrameSequence, reference_index: int = 0, p: FlowParams | None = None, threads: int = 1
) -> list[DisplacementField]:
    """Flow from the reference frame directly to every frame (no accumulation)."""
    p = p or FlowParams()
    n = seq.n_frames
    if not -n <= reference_index < n:
        raise ValidationError(f"reference_index {reference_index} outside {n} frames")
    reference_index %= n
    ref = seq.frames[reference_index]

    def one(i):
        if i == reference_index:
            lam = structure_tensor(ref, p.window)[-1]
            return DisplacementField.zeros(ref.shape, lam >= p.min_eig)
        return compute_flow(ref, seq.frames[i], p)

    if threads == 1:
        return [one(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads or None) as pool:
        return list(pool.map(one, range(n)))


# -- binary dump -------------------------------------------------------------
# magic "PFLO", width u32-LE, height u32-LE, u plane f32-LE, v plane f32-LE,
# validity bits packed row-major, most significant bit first, zero padded.


def write_flow(path, field: DisplacementField) -> None:
    h, w = field.shape
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC + struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(field.u, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(field.v, dtype="<f4").tobytes())
        fh.write(np.packbits(field.valid_mask.ravel(), bitorder="big").tobytes())


def read_flow(path) -> DisplacementField:
    data = Path(path).read_bytes()
    if data[:4] != FLOW_MAGIC:
        raise ValidationError(f"{path} is not a flow dump (bad magic)")
    w, h = struct.unpack("<II", data[4:12])
    n = w * h
    nbits = (n + 7) // 8
    if len(data) != 12 + 8 * n + nbits:
        raise ValidationError(f"{path} has {len(data)} bytes, expected {12 + 8 * n + nbits}")
    u = np.frombuffer(data, dtype="<f4", count=n, offset=12).reshape(h, w).astype(np.float64)
    v = np.frombuffer(data, dtype="<f4", count=n, offset=12 + 4 * n).reshape(h, w).astype(np.float64)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=12 + 8 * n), bitorder="big")[:n]
    return DisplacementField(u, v, bits.reshape(h, w).astype(bool))
