"""Displacement fields to engineering quantities.

Spatiotemporal median smoothing, metric scaling from a prism pair, removal of
the magnification gain, convergence time series and ring deformation shapes.
Ring angles are measured clockwise from the crown (top of the image), and
radial displacement is positive outward.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter

from .errors import (
    EmptySeries,
    EvenWindow,
    PointUntracked,
    PrismOutOfFrame,
    PrismUntracked,
    ShapeMismatch,
    ValidationError,
)
from .flow import DisplacementField

CONVERGENCE_HEADER = ("timestamp_s", "ring_id", "convergence_mm")
DEFORMATION_HEADER = ("frame_index", "point_index", "angle_deg", "radial_mm")


@dataclass(frozen=True)
class RingCalibration:
    ring_id: str
    prism_a_px: tuple[float, float]  # (x, y)
    prism_b_px: tuple[float, float]
    prism_separation_mm: float

    def __post_init__(self):
        if not self.prism_separation_mm > 0:
            raise ValidationError(f"ring {self.ring_id}: prism_separation_mm must be > 0")
        if not np.all(np.isfinite(self.prism_a_px + self.prism_b_px)):
            raise ValidationError(f"ring {self.ring_id}: prism coordinates must be finite")
        if self.pixel_distance == 0:
            raise ValidationError(f"ring {self.ring_id}: prism pixel positions coincide")

    @property
    def pixel_distance(self) -> float:
        return float(np.hypot(self.prism_a_px[0] - self.prism_b_px[0], self.prism_a_px[1] - self.prism_b_px[1]))

    @property
    def scale_mm_per_px(self) -> float:
        return self.prism_separation_mm / self.pixel_distance


@dataclass(frozen=True, eq=False)
class RingProfile:
    """Ordered sample points on a ring with outward unit normals, both ``(M, 2)`` in (x, y)."""

    center_px: np.ndarray
    sample_points_px: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.sample_points_px, dtype=np.float64)
        nrm = np.asarray(self.normals, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValidationError("ring profile needs at least 2 points of shape (M, 2)")
        if nrm.shape != pts.shape:
            raise ValidationError("normals must match sample points")
        if np.abs(np.hypot(nrm[:, 0], nrm[:, 1]) - 1.0).max() > 1e-9:
            raise ValidationError("ring normals must have unit length")
        if len({tuple(p) for p in pts}) != len(pts):
            raise ValidationError("ring sample points must be distinct")
        object.__setattr__(self, "center_px", np.asarray(self.center_px, dtype=np.float64))
        object.__setattr__(self, "sample_points_px", pts)
        object.__setattr__(self, "normals", nrm)

    @property
    def n_points(self) -> int:
        return self.sample_points_px.shape[0]

    @property
    def angles_deg(self) -> np.ndarray:
        rel = self.sample_points_px - self.center_px
        return np.rad2deg(np.arctan2(rel[:, 0], -rel[:, 1])) % 360.0

    @classmethod
    def from_points(cls, center_px, points_px) -> "RingProfile":
        """Points on a circle-like ring; normals point away from the centre."""
        pts = np.asarray(points_px, dtype=np.float64)
        rel = pts - np.asarray(center_px, dtype=np.float64)
        norm = np.hypot(rel[:, 0], rel[:, 1])
        if np.any(norm == 0):
            raise ValidationError("a ring sample point coincides with the centre")
        return cls(center_px, pts, rel / norm[:, None])

    @classmethod
    def from_ellipse(cls, center_px, semi_axes_px, n_points: int = 6, start_angle_deg: float = 0.0) -> "RingProfile":
        """``n_points`` equally spaced in angle on an axis-aligned ellipse.

        ``semi_axes_px`` is (horizontal, vertical).  Normals are the ellipse's
        true outward normals.
        """
        a, b = (float(s) for s in semi_axes_px)
        if not (a > 0 and b > 0):
            raise ValidationError("ellipse semi-axes must be > 0")
        if n_points < 2:
            raise ValidationError("a ring profile needs at least 2 points")
        th = np.deg2rad(start_angle_deg + 360.0 * np.arange(n_points) / n_points)
        c = np.asarray(center_px, dtype=np.float64)
        pts = c + np.stack([a * np.sin(th), -b * np.cos(th)], axis=1)
        nrm = np.stack([np.sin(th) / a, -np.cos(th) / b], axis=1)
        return cls(c, pts, nrm / np.hypot(nrm[:, 0], nrm[:, 1])[:, None])


@dataclass(frozen=True, eq=False)
class ConvergenceSeries:
    timestamps: np.ndarray
    values_mm: np.ndarray  # negative = prisms approaching
    ring_id: str
    alpha: float


@dataclass(frozen=True, eq=False)
class DeformationMap:
    """Relative radial displacement in mm, shape ``(n_frames, n_points)``."""

    ring_id: str
    angles_deg: np.ndarray
    radial_mm: np.ndarray
    frame_indices: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.frame_indices is None:
            object.__setattr__(self, "frame_indices", np.arange(self.radial_mm.shape[0]))


# -- smoothing ------------------------------------------------------------------


def _check_window(name: str, w: int) -> None:
    if int(w) != w or w < 1 or w % 2 == 0:
        raise EvenWindow(f"{name} must be an odd integer >= 1, got {w}")


def _median_frame(padded, n_ok, t, sw, tw):
    """Valid-only median for frame ``t``.

    ``padded`` holds NaN at invalid or outside voxels and ``n_ok`` counts the
    valid voxels in each neighbourhood.
    """
    h, w = n_ok.shape
    win = sliding_window_view(padded[t : t + tw], (tw, sw, sw))[0].reshape(h * w, tw * sw * sw)
    vals = np.sort(win, axis=1)  # NaNs sort last
    n_ok = n_ok.ravel()
    rows = np.arange(h * w)
    lo = vals[rows, np.maximum((n_ok - 1) // 2, 0)].astype(np.float64)
    hi = vals[rows, np.maximum(n_ok // 2, 0)].astype(np.float64)
    return (0.5 * (lo + hi)).reshape(h, w)


def st_median(fields: Sequence[DisplacementField], spatial_window: int = 5, temporal_window: int = 3) -> list[DisplacementField]:
    """Valid-only spatiotemporal median of each flow component.

    A pixel stays valid when at least half of its (boundary-truncated)
    neighbourhood is valid; other pixels keep their input values and are
    marked invalid.
    """
    _check_window("spatial_window", spatial_window)
    _check_window("temporal_window", temporal_window)
    if len(fields) == 0:
        raise EmptySeries("st_median needs at least one field")
    shape = fields[0].shape
    if any(f.shape != shape for f in fields):
        raise ShapeMismatch("all fields must share a shape")
    valid = np.stack([f.valid_mask for f in fields])
    size = (temporal_window, spatial_window, spatial_window)
    count = np.prod(size)
    n_valid = np.rint(uniform_filter(valid.astype(np.float64), size=size, mode="constant") * count).astype(int)
    n_inside = np.rint(uniform_filter(np.ones(valid.shape), size=size, mode="constant") * count).astype(int)
    enough = (2 * n_valid >= n_inside) & (n_valid > 0)
    pad = [(temporal_window // 2,) * 2, (spatial_window // 2,) * 2, (spatial_window // 2,) * 2]
    smoothed = {}
    for name in ("u", "v"):
        vol = np.stack([getattr(f, name) for f in fields]).astype(np.float64)
        masked = np.where(valid, vol, np.nan)
        # sorting float32 is markedly faster; use it when the cast is exact
        # (always the case for fields read back from flow dumps)
        narrow = masked.astype(np.float32)
        if np.array_equal(narrow, masked, equal_nan=True):
            masked = narrow
        padded = np.pad(masked, pad, constant_values=np.nan)
        med = np.stack([_median_frame(padded, n_valid[t], t, spatial_window, temporal_window) for t in range(len(fields))])
        smoothed[name] = (np.where(enough, med, vol), enough)
    (u, ok), (v, _) = smoothed["u"], smoothed["v"]
    return [DisplacementField(u[t], v[t], ok[t].copy()) for t in range(len(fields))]


# -- scaling --------------------------------------------------------------------


def _check_alpha(alpha: float) -> None:
    if not alpha >= 0:
        raise ValidationError(f"alpha must be >= 0, got {alpha}")


def _scaled(x, k: float):
    if isinstance(x, DisplacementField):
        return DisplacementField(x.u * k, x.v * k, x.valid_mask.copy())
    if np.isscalar(x):
        return x * k
    return np.asarray(x, dtype=np.float64) * k


def unmagnify(displacement_px, alpha: float):
    """Measured magnified displacement divided by ``1 + alpha``."""
    _check_alpha(alpha)
    return _scaled(displacement_px, 1.0 / (1.0 + alpha))


def metric_scale(displacement_px, cal: RingCalibration):
    return _scaled(displacement_px, cal.scale_mm_per_px)


# -- point sampling -------------------------------------------------------------


def _check_in_frame(pt, shape, what: str) -> None:
    h, w = shape
    x, y = pt
    if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
        raise PrismOutOfFrame(f"{what} at ({x:g}, {y:g}) lies outside the {w}x{h} frame")


def sample_displacement(f: DisplacementField, pt) -> np.ndarray | None:
    """(u, v) at the pixel nearest ``pt``; the 3x3 valid mean if that pixel is invalid.

    Returns None when the whole 3x3 neighbourhood is invalid.
    """
    h, w = f.shape
    x = int(np.clip(np.rint(pt[0]), 0, w - 1))
    y = int(np.clip(np.rint(pt[1]), 0, h - 1))
    if f.valid_mask[y, x]:
        return np.array([f.u[y, x], f.v[y, x]])
    ys, xs = slice(max(y - 1, 0), y + 2), slice(max(x - 1, 0), x + 2)
    m = f.valid_mask[ys, xs]
    if not m.any():
        return None
    return np.array([f.u[ys, xs][m].mean(), f.v[ys, xs][m].mean()])


def convergence(
    fields_smoothed: Sequence[DisplacementField],
    cal: RingCalibration,
    alpha: float,
    timestamps,
) -> ConvergenceSeries:
    """Change of the prism-pair distance in mm, after removing the magnification."""
    _check_alpha(alpha)
    ts = np.asarray(timestamps, dtype=np.float64)
    if len(fields_smoothed) == 0:
        raise EmptySeries("no displacement fields")
    if len(ts) != len(fields_smoothed):
        raise ShapeMismatch(f"{len(fields_smoothed)} fields but {len(ts)} timestamps")
    pa = np.asarray(cal.prism_a_px, dtype=np.float64)
    pb = np.asarray(cal.prism_b_px, dtype=np.float64)
    shape = fields_smoothed[0].shape
    _check_in_frame(pa, shape, f"ring {cal.ring_id} prism A")
    _check_in_frame(pb, shape, f"ring {cal.ring_id} prism B")
    rest = float(np.hypot(*(pa - pb)))
    k = cal.scale_mm_per_px / (1.0 + alpha)
    values = np.empty(len(ts))
    for t, f in enumerate(fields_smoothed):
        da = sample_displacement(f, pa)
        db = sample_displacement(f, pb)
        if da is None or db is None:
            which = "A" if da is None else "B"
            raise PrismUntracked(f"ring {cal.ring_id} prism {which} has no valid flow near it at frame {t}")
        qa, qb = pa + da, pb + db
        values[t] = (float(np.hypot(*(qa - qb))) - rest) * k
    return ConvergenceSeries(ts, values, cal.ring_id, float(alpha))


def ring_shape(
    fields_smoothed: Sequence[DisplacementField],
    profile: RingProfile,
    cal: RingCalibration,
    alpha: float,
    frame_index: int,
) -> np.ndarray:
    """Relative outward radial displacement (mm) at each profile point for one frame."""
    _check_alpha(alpha)
    f = fields_smoothed[frame_index]
    d = np.empty((profile.n_points, 2))
    for i, pt in enumerate(profile.sample_points_px):
        _check_in_frame(pt, f.shape, f"ring {cal.ring_id} point {i}")
        s = sample_displacement(f, pt)
        if s is None:
            raise PointUntracked(f"ring {cal.ring_id} point {i} has no valid flow near it at frame {frame_index}")
        d[i] = s
    rel = d - np.median(d, axis=0)
    radial = np.sum(rel * profile.normals, axis=1)
    return radial * cal.scale_mm_per_px / (1.0 + alpha)


def deformation_map(
    fields_smoothed: Sequence[DisplacementField], profile: RingProfile, cal: RingCalibration, alpha: float
) -> DeformationMap:
    rows = [ring_shape(fields_smoothed, profile, cal, alpha, t) for t in range(len(fields_smoothed))]
    return DeformationMap(cal.ring_id, profile.angles_deg, np.array(rows))


# -- export ---------------------------------------------------------------------


def write_convergence_csv(path, series: Sequence[ConvergenceSeries]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONVERGENCE_HEADER)
        for s in series:
            for t, v in zip(s.timestamps, s.values_mm):
                w.writerow((repr(float(t)), s.ring_id, repr(float(v))))
    return path


def write_deformation_csv(path, dmap: DeformationMap) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DEFORMATION_HEADER)
        for t, row in zip(dmap.frame_indices, dmap.radial_mm):
            for i, (ang, r) in enumerate(zip(dmap.angles_deg, row)):
                w.writerow((int(t), i, repr(float(ang)), repr(float(r))))
    return path


def read_convergence_csv(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    out: dict[str, tuple[list, list]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ts, vs = out.setdefault(row["ring_id"], ([], []))
            ts.append(float(row["timestamp_s"]))
            vs.append(float(row["convergence_mm"]))
    return {k: (np.array(t), np.array(v)) for k, (t, v) in out.items()}


def render_ring_maps(directory, profile: RingProfile, dmap: DeformationMap, exaggeration: float | None = None) -> list[Path]:
    """One PNG per frame: ring polyline coloured by radial mm on a fixed symmetric scale.

    The scale and colormap are written to ``colour_scale.txt`` next to the images.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.collections import LineCollection

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    vmax = float(np.abs(dmap.radial_mm).max()) or 1.0
    cmap = "coolwarm"
    pts = profile.sample_points_px
    closed = np.vstack([pts, pts[:1]])
    span = float(np.ptp(pts, axis=0).max())
    gain = exaggeration if exaggeration is not None else 0.1 * span / vmax
    written = []
    for t, row in zip(dmap.frame_indices, dmap.radial_mm):
        moved = pts + gain * row[:, None] * profile.normals
        loop = np.vstack([moved, moved[:1]])
        segs = np.stack([loop[:-1], loop[1:]], axis=1)
        vals = 0.5 * (row + np.roll(row, -1))
        fig, ax = plt.subplots(figsize=(4, 4), dpi=80)
        ax.plot(closed[:, 0], closed[:, 1], color="0.7", lw=1, ls="--")
        lc = LineCollection(segs, cmap=cmap, norm=plt.Normalize(-vmax, vmax), linewidths=3)
        lc.set_array(vals)
        ax.add_collection(lc)
        ax.scatter(moved[:, 0], moved[:, 1], c=row, cmap=cmap, vmin=-vmax, vmax=vmax, zorder=3)
        ax.set_aspect("equal")
        ax.invert_yaxis()
        ax.set_title(f"{dmap.ring_id} frame {int(t)}")
        fig.colorbar(lc, ax=ax, label="radial mm")
        path = directory / f"ring_{dmap.ring_id}_{int(t):05d}.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    side = directory / f"ring_{dmap.ring_id}_colour_scale.txt"
    side.write_text(
        f"colormap={cmap}\nvmin_mm={-vmax!r}\nvmax_mm={vmax!r}\ndisplacement_exaggeration={gain!r}\n",
        encoding="utf-8",
    )
    written.append(side)
    return written
