"""Stage orchestration over documented intermediate files.

Output directory layout::

    ingest/manifest.csv, ingest/frame_*.png       preprocessed frames
    magnified/manifest.csv, magnified/frame_*.png magnified, Wiener-smoothed frames
    flow/index.csv, flow/flow_*.pflo              reference-to-frame flow dumps
    convergence.csv, deformation_<ring>.csv       analysis tables
    pyramid/, rings/                              optional dumps
    report.json                                   run report

A full run keeps data in memory between stages but rounds it exactly as the
files store it (16-bit frames, float32 flow), so a full run and a chain of
single-stage runs produce identical outputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, flow, ingest, magnify, pyramid, synth
from .config import PipelineConfig, RingConfig, read_mapping
from .errors import ConfigError, IoError, MissingIntermediate, TunnelmagError, UnknownStage, ValidationError

log = logging.getLogger(__name__)

STAGES = ("ingest", "magnify", "flow", "analyze", "synth")
REPORT_NAME = "report.json"
LOCK_NAME = ".tunnelmag.lock"
CONVERGENCE_NAME = "convergence.csv"
FLOW_INDEX = "index.csv"


class StageFailure(TunnelmagError):
    """A stage raised; the original error is ``__cause__`` and the report is attached."""

    def __init__(self, stage: str, report: "RunReport"):
        super().__init__(f"stage {stage!r} failed: {report.error}")
        self.stage = stage
        self.report = report


@dataclass
class RunReport:
    config: dict
    stages: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    outputs: list[dict] = field(default_factory=list)
    status: str = "running"
    failed_stage: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "config": self.config,
            "stages": self.stages,
            "warnings": self.warnings,
            "outputs": self.outputs,
        }


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def inventory(directory) -> list[dict]:
    directory = Path(directory)
    out = []
    for p in sorted(directory.rglob("*")):
        if p.is_file() and p.name not in (REPORT_NAME, LOCK_NAME):
            out.append({"path": p.relative_to(directory).as_posix(), "bytes": p.stat().st_size, "sha256": sha256(p)})
    return out


class _Lock:
    """Exclusive ownership of an output directory for one run."""

    def __init__(self, directory: Path):
        self.path = directory / LOCK_NAME

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            raise IoError(f"{self.path.parent} is in use by another run (remove {self.path} if stale)") from exc
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


# -- coordinate mapping ----------------------------------------------------------


def _map_point(pt, factor: int) -> tuple[float, float]:
    """Input-image pixel coordinates to downsampled-grid coordinates (block centres)."""
    return tuple((float(c) + 0.5) / factor - 0.5 for c in pt)


def ring_geometry(rc: RingConfig, factor: int = 1) -> tuple[analysis.RingCalibration, analysis.RingProfile]:
    pa, pb = _map_point(rc.prism_a_px, factor), _map_point(rc.prism_b_px, factor)
    cal = analysis.RingCalibration(rc.ring_id, pa, pb, rc.prism_separation_mm)
    prof = rc.profile
    center = _map_point(prof.center_px, factor) if prof.center_px is not None else tuple(0.5 * (np.add(pa, pb)))
    if prof.sample_points is not None:
        profile = analysis.RingProfile.from_points(center, [_map_point(p, factor) for p in prof.sample_points])
    else:
        if prof.semi_axes_px is not None:
            axes = tuple(a / factor for a in prof.semi_axes_px)
        else:
            r = 0.5 * cal.pixel_distance
            axes = (r, r)
        profile = analysis.RingProfile.from_ellipse(center, axes, prof.n_points, prof.start_angle_deg)
    return cal, profile


# -- stage bodies -------------------------------------------------------------------


def _quantized(seq: ingest.FrameSequence) -> ingest.FrameSequence:
    return seq.replace_frames(ingest.quantize16(seq.frames))


def _as_stored(fields: list[flow.DisplacementField]) -> list[flow.DisplacementField]:
    return [
        flow.DisplacementField(
            f.u.astype(np.float32).astype(np.float64), f.v.astype(np.float32).astype(np.float64), f.valid_mask.copy()
        )
        for f in fields
    ]


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise MissingIntermediate(f"{what} not found at {path}; run the producing stage first")
    return path


def stage_ingest(cfg: PipelineConfig, out: Path, report: RunReport) -> ingest.FrameSequence:
    if cfg.input.manifest_path is None:
        raise ConfigError("config.input.manifest_path is required for the ingest stage")
    seq = ingest.load_sequence(cfg.input.manifest_path)
    seq = _quantized(ingest.preprocess(seq, cfg.preprocess.downsample_factor, cfg.preprocess.illumination))
    ingest.save_sequence(seq, out / "ingest")
    return seq


def stage_magnify(cfg: PipelineConfig, out: Path, report: RunReport, seq=None) -> ingest.FrameSequence:
    if seq is None:
        seq = ingest.load_sequence(_require(out / "ingest" / ingest.MANIFEST_NAME, "ingest manifest"))
    m = cfg.magnify
    band, warns = m.band.resolve(magnify.check_uniform(seq.timestamps))
    report.warnings += warns
    bank = pyramid.make_filter_bank(seq.width, seq.height, cfg.pyramid.n_scales, cfg.pyramid.n_orientations)
    if cfg.output.dumps.pyramid:
        ref = seq.frames[m.reference_index]
        pyramid.dump_pyramid(pyramid.decompose(ref, bank), bank, out / "pyramid")
    params = magnify.MagnificationParams(m.alpha, band, m.reference_index, m.amplitude_floor)
    res = magnify.magnify_sequence(
        seq,
        params,
        bank,
        wiener_window=m.wiener_window,
        wiener_noise_variance=m.wiener_noise_variance,
    )
    report.warnings += res.warnings
    mag = _quantized(res.sequence)
    ingest.save_sequence(mag, out / "magnified")
    return mag


def write_flow_dir(fields, timestamps, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (f, t) in enumerate(zip(fields, timestamps)):
        name = f"flow_{i:05d}.pflo"
        flow.write_flow(directory / name, f)
        lines.append(f"{name},{float(t)!r}\n")
    index = directory / FLOW_INDEX
    index.write_text("".join(lines), encoding="utf-8")
    return index


def read_flow_dir(directory: Path):
    entries = ingest.read_manifest(_require(directory / FLOW_INDEX, "flow index"))
    fields = [flow.read_flow(_require(p, "flow dump")) for p, _ in entries]
    return fields, np.array([t for _, t in entries])


def stage_flow(cfg: PipelineConfig, out: Path, report: RunReport, seq=None, threads: int = 1):
    if seq is None:
        seq = ingest.load_sequence(_require(out / "magnified" / ingest.MANIFEST_NAME, "magnified manifest"))
    fields = flow.flow_series(seq, cfg.magnify.reference_index, cfg.flow, threads=threads)
    write_flow_dir(fields, seq.timestamps, out / "flow")
    return _as_stored(fields), seq.timestamps


def stage_analyze(cfg: PipelineConfig, out: Path, report: RunReport, fields=None, timestamps=None):
    if fields is None:
        fields, timestamps = read_flow_dir(out / "flow")
    smoothed = analysis.st_median(fields, cfg.median.spatial_window, cfg.median.temporal_window)
    # the reference frame's displacement is zero by definition; the temporal
    # window must not pull its neighbours into it
    ref = cfg.magnify.reference_index % len(smoothed)
    smoothed[ref] = flow.DisplacementField.zeros(smoothed[ref].shape, smoothed[ref].valid_mask)
    alpha = cfg.magnify.alpha
    series = []
    factor = cfg.preprocess.downsample_factor
    for rc in cfg.rings:
        cal, profile = ring_geometry(rc, factor)
        series.append(analysis.convergence(smoothed, cal, alpha, timestamps))
        dmap = analysis.deformation_map(smoothed, profile, cal, alpha)
        analysis.write_deformation_csv(out / f"deformation_{rc.ring_id}.csv", dmap)
        if cfg.output.dumps.ring_png:
            analysis.render_ring_maps(out / "rings", profile, dmap)
    analysis.write_convergence_csv(out / CONVERGENCE_NAME, series)
    return series


def stage_synth(scene_path, out: Path, report: RunReport):
    spec = synth.SceneSpec.from_dict(read_mapping(scene_path))
    seq, truth = synth.generate(spec)
    synth.write_scene(seq, truth, out)
    return seq, truth


# -- drivers --------------------------------------------------------------------------


def _frame_count(result) -> int | None:
    head = result[0] if isinstance(result, tuple) and result else result
    if isinstance(head, ingest.FrameSequence):
        return head.n_frames
    if isinstance(result, tuple) and isinstance(head, list):  # (fields, timestamps)
        return len(head)
    return None


class _Runner:
    def __init__(self, cfg_dict: dict, out: Path):
        self.out = out
        self.report = RunReport(config=cfg_dict)

    def run(self, name: str, fn, *args, **kwargs):
        t0 = time.perf_counter()
        log.info("stage %s started", name)
        try:
            result = fn(*args, **kwargs)
        except Exception as exc:
            self.report.status = "failed"
            self.report.failed_stage = name
            self.report.error = f"{type(exc).__name__}: {exc}"
            log.debug("%s", traceback.format_exc())
            self.finish()
            raise StageFailure(name, self.report) from exc
        entry = {"name": name, "seconds": round(time.perf_counter() - t0, 3)}
        frames = _frame_count(result)
        if frames is not None:
            entry["frames"] = int(frames)
        self.report.stages.append(entry)
        log.info("stage %s done in %.2f s", name, entry["seconds"])
        return result

    def finish(self) -> RunReport:
        if self.report.status == "running":
            self.report.status = "ok"
        self.report.outputs = inventory(self.out)
        (self.out / REPORT_NAME).write_text(json.dumps(self.report.to_dict(), indent=1) + "\n", encoding="utf-8")
        return self.report


def _check_inputs(cfg: PipelineConfig, needs_manifest: bool) -> None:
    if needs_manifest:
        if cfg.input.manifest_path is None:
            raise ConfigError("config.input.manifest_path is required")
        if not Path(cfg.input.manifest_path).is_file():
            raise ConfigError(f"config.input.manifest_path: file not found: {cfg.input.manifest_path}")


def run_full(cfg: PipelineConfig, threads: int = 1) -> RunReport:
    """ingest -> magnify -> flow -> analyze, writing every intermediate and the report."""
    _check_inputs(cfg, needs_manifest=True)
    out = Path(cfg.output.dir)
    with _Lock(out):
        r = _Runner(cfg.to_dict(), out)
        seq = r.run("ingest", stage_ingest, cfg, out, r.report)
        mag = r.run("magnify", stage_magnify, cfg, out, r.report, seq)
        del seq
        fields, ts = r.run("flow", stage_flow, cfg, out, r.report, mag, threads)
        del mag
        r.run("analyze", stage_analyze, cfg, out, r.report, fields, ts)
        return r.finish()


def run_stage(stage: str, cfg: PipelineConfig | None = None, scene_path=None, output=None, threads: int = 1) -> RunReport:
    """Run one stage from its documented input files.

    ``synth`` takes a scene spec file (``scene_path``) and ``output``; other
    stages read and write under ``cfg.output.dir``.
    """
    if stage not in STAGES:
        raise UnknownStage(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    if stage == "synth":
        if scene_path is None or output is None:
            raise ValidationError("synth needs a scene spec path and an output directory")
        out = Path(output)
        with _Lock(out):
            r = _Runner({"scene": read_mapping(scene_path)}, out)
            r.run("synth", stage_synth, scene_path, out, r.report)
            return r.finish()
    _check_inputs(cfg, needs_manifest=stage == "ingest")
    out = Path(cfg.output.dir)
    with _Lock(out):
        r = _Runner(cfg.to_dict(), out)
        if stage == "ingest":
            r.run(stage, stage_ingest, cfg, out, r.report)
        elif stage == "magnify":
            r.run(stage, stage_magnify, cfg, out, r.report)
        elif stage == "flow":
            r.run(stage, stage_flow, cfg, out, r.report, None, threads)
        else:
            r.run(stage, stage_analyze, cfg, out, r.report)
        return r.finish()
