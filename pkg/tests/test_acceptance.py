"""Acceptance criteria 1-8, one PASS/FAIL line each (printed in the terminal summary).

Run on its own with ``pytest tests/test_acceptance.py -v``.  Criteria 5 and 7
share one run of the ring-squeeze scene; expect a few minutes in total.
"""

import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from tunnelmag.analysis import read_convergence_csv
from tunnelmag.config import load_config
from tunnelmag.flow import FlowParams, compute_flow, flow_series
from tunnelmag.magnify import MagnificationParams, TemporalBand, magnify_sequence, wiener_smooth
from tunnelmag.pipeline import run_full
from tunnelmag.pyramid import decompose, make_filter_bank, reconstruct
from tunnelmag.synth import MotionComponent, SceneSpec, TextureSpec, generate, read_truth, write_scene

from conftest import fourier_shift, record_criterion, texture

CONFIGS = Path(__file__).resolve().parents[1] / "scripts" / "configs"


def fit_sinusoid(y, ts, f):
    """Amplitude of the best-fit sinusoid at frequency ``f`` (plus offset)."""
    a = np.stack([np.sin(2 * np.pi * f * ts), np.cos(2 * np.pi * f * ts), np.ones_like(ts)], axis=1)
    c = np.linalg.lstsq(a, y, rcond=None)[0]
    return float(np.hypot(c[0], c[1]))


def mean_u(fields):
    return np.array([f.u[f.valid_mask].mean() for f in fields])


def render_and_run(tmp, scene_name, config_name, threads=1, output="out"):
    """Render a scene from scripts/configs into ``tmp/scene`` (once) and run the pipeline."""
    if not (tmp / "scene" / "manifest.csv").is_file():
        spec = SceneSpec.from_dict(yaml.safe_load((CONFIGS / scene_name).read_text()))
        write_scene(*generate(spec), tmp / "scene")
    cfg = load_config(CONFIGS / config_name)
    cfg = cfg.resolved(tmp)
    cfg = type(cfg).from_dict({**cfg.to_dict(), "input": {"manifest_path": str(tmp / "scene" / "manifest.csv")}})
    cfg = cfg.with_output(tmp / output)
    t0 = time.perf_counter()
    report = run_full(cfg, threads=threads)
    return report, time.perf_counter() - t0, read_truth(tmp / "scene" / "truth.json"), tmp / output


def final_profile(out, ring_id):
    import csv

    rows = list(csv.DictReader(open(out / f"deformation_{ring_id}.csv")))
    last = max(int(r["frame_index"]) for r in rows)
    return np.array([float(r["radial_mm"]) for r in rows if int(r["frame_index"]) == last])


# -- 1 ----------------------------------------------------------------------------


def test_criterion_1_tight_frame():
    t0 = time.perf_counter()
    bank = make_filter_bank(128, 128)
    tiling_err = float(np.abs(bank.tiling() - 1.0).max())
    worst = 0.0
    for seed in range(20):
        f = np.random.default_rng(seed).random((128, 128))
        worst = max(worst, float(np.sqrt(np.mean((reconstruct(decompose(f, bank), bank) - f) ** 2))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and tiling_err < 1e-6 and elapsed < 10
    record_criterion(1, ok, f"max round-trip RMS {worst:.2e} (<1e-6), tiling error {tiling_err:.2e} (<1e-6), {elapsed:.1f} s (<10 s)")
    assert ok


# -- 2 ----------------------------------------------------------------------------


def test_criterion_2_magnification_gain():
    n, f, amp = 64, 2 / 64, 0.03
    spec = SceneSpec(width=128, height=128, n_frames=n, rng_seed=1,
                     motion_components=[MotionComponent("sinusoid", amplitude_px=amp, frequency_hz=f)])
    seq, _ = generate(spec)
    ratios = {}
    for alpha in (1.0, 5.0, 15.0):
        res = magnify_sequence(seq, MagnificationParams(alpha, TemporalBand(0.0, 8 / 64, detrend=True)))
        measured = fit_sinusoid(mean_u(flow_series(res.sequence, 0)), seq.timestamps, f)
        ratios[alpha] = measured / ((1 + alpha) * amp)
    ok = all(0.85 <= r <= 1.15 for r in ratios.values())
    detail = ", ".join(f"alpha={a:g}: {r:.3f}" for a, r in ratios.items())
    record_criterion(2, ok, f"measured / (1+alpha)*0.03 px: {detail} (each in [0.85, 1.15])")
    assert ok


# -- 3 ----------------------------------------------------------------------------


def test_criterion_3_mode_separation():
    # reference in the middle keeps the magnified drift within +-2.5 px
    n = 32
    fv = 15 / 32  # stopband bin, well above the 0.25 Hz passband edge
    spec = SceneSpec(width=128, height=128, n_frames=n, rng_seed=3,
                     texture=TextureSpec(min_wavelength_px=8, max_wavelength_px=48),
                     motion_components=[MotionComponent("translation", amplitude_px=0.01),
                                        MotionComponent("sinusoid", amplitude_px=0.2, frequency_hz=fv)])
    seq, _ = generate(spec)
    ref = n // 2
    res = magnify_sequence(seq, MagnificationParams(15.0, TemporalBand(0.0, 0.25, detrend=True), reference_index=ref))
    m = mean_u(flow_series(res.sequence, ref))
    ts = seq.timestamps
    a = np.stack([ts, np.sin(2 * np.pi * fv * ts), np.cos(2 * np.pi * fv * ts), np.ones_like(ts)], axis=1)
    c = np.linalg.lstsq(a, m, rcond=None)[0]
    drift_gain = c[0] / 0.01
    vib_gain = np.hypot(c[1], c[2]) / 0.2
    ok = 13.6 <= drift_gain <= 18.4 and 0.8 <= vib_gain <= 1.2
    record_criterion(3, ok, f"drift gain {drift_gain:.2f} (in [13.6, 18.4]), vibration gain {vib_gain:.3f} (in [0.8, 1.2])")
    assert ok


# -- 4 ----------------------------------------------------------------------------


def test_criterion_4_flow_accuracy():
    epes = []
    for seed in range(10):
        t = texture(128, seed=100 + seed)
        f = compute_flow(t, fourier_shift(t, 0.5, -0.25))
        m = f.valid_mask
        epes.append(float(np.hypot(f.u[m] - 0.5, f.v[m] + 0.25).mean()))
    epe = float(np.mean(epes))
    t = texture(128, seed=99)
    g = compute_flow(t, np.roll(t, 3, axis=1))
    iu, iv = g.u[g.valid_mask].mean(), g.v[g.valid_mask].mean()
    ok = epe < 0.05 and abs(iu - 3) < 0.1 and abs(iv) < 0.1
    record_criterion(4, ok, f"mean EPE {epe:.4f} px (<0.05), integer shift ({iu:.3f}, {iv:.3f}) vs (3, 0) (+-0.1)")
    assert ok


# -- 5 and 7 ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def squeeze_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("squeeze")
    return render_and_run(tmp, "ring_squeeze_scene.yaml", "ring_squeeze_config.yaml"), tmp


def test_criterion_5_end_to_end_convergence(squeeze_run):
    (report, _, truth, out), _ = squeeze_run
    conv = read_convergence_csv(out / "convergence.csv")["R27"][1]
    conv_err = abs(conv[-1] / truth.convergence_mm[-1] - 1)
    prof = final_profile(out, "R27")
    prof_err = np.abs(prof / truth.radial_profile_mm[-1] - 1)
    ok = conv_err <= 0.10 and bool(np.all(prof_err <= 0.15))
    record_criterion(
        5, ok,
        f"convergence {conv[-1]:.4f} mm vs {truth.convergence_mm[-1]:.4f} mm, error {100 * conv_err:.1f}% (<=10%); "
        f"profile errors {np.round(100 * prof_err, 1).tolist()}% (each <=15%)",
    )
    assert conv_err <= 0.10, "convergence outside 10%"
    assert np.all(prof_err <= 0.15), "ring profile outside 15%"


def test_criterion_7_determinism_and_performance(squeeze_run):
    (report, elapsed, _, out), tmp = squeeze_run
    report2, _, _, out2 = render_and_run(tmp, "ring_squeeze_scene.yaml", "ring_squeeze_config.yaml", output="out2")
    csvs = ["convergence.csv", "deformation_R27.csv"]
    identical = all((out / c).read_bytes() == (out2 / c).read_bytes() for c in csvs)
    sums = lambda r: {o["path"]: o["sha256"] for o in r.outputs}
    same_sums = sums(report) == sums(report2)
    _, _, _, out3 = render_and_run(tmp, "ring_squeeze_scene.yaml", "ring_squeeze_config.yaml", threads=4, output="out3")
    a = read_convergence_csv(out / "convergence.csv")["R27"][1]
    b = read_convergence_csv(out3 / "convergence.csv")["R27"][1]
    thread_diff = float(np.abs(a - b).max())
    ok = elapsed < 60 and identical and same_sums and thread_diff <= 1e-9
    record_criterion(
        7, ok,
        f"single-threaded run {elapsed:.1f} s (<60 s); repeat CSVs bit-identical: {identical}; "
        f"report checksums identical: {same_sums}; 4-thread max |diff| {thread_diff:.1e} mm (<=1e-9)",
    )
    assert ok


# -- 6 ----------------------------------------------------------------------------


def test_criterion_6_rigid_motion_invariance(tmp_path):
    _, _, truth, out = render_and_run(tmp_path, "rigid_translation_scene.yaml", "rigid_translation_config.yaml")
    conv = read_convergence_csv(out / "convergence.csv")["R1"][1]
    import csv

    radial = np.array([float(r["radial_mm"]) for r in csv.DictReader(open(out / "deformation_R1.csv"))])
    c_max, r_max = float(np.abs(conv).max()), float(np.abs(radial).max())
    ok = c_max < 0.01 and r_max < 0.02
    record_criterion(6, ok, f"max |convergence| {c_max:.4f} mm (<0.01), max |relative radial| {r_max:.4f} mm (<0.02), "
                            f"true drift {np.hypot(*truth.translation_px[-1]):.3f} px")
    assert ok


# -- 8 ----------------------------------------------------------------------------


def test_criterion_8_wiener():
    clean = np.zeros((64, 64))
    clean[:, 32:] = 1.0
    noisy = clean + np.random.default_rng(8).normal(0.0, 0.05, clean.shape)
    mse_in = float(np.mean((noisy - clean) ** 2))
    mse_out = float(np.mean((wiener_smooth(noisy, 5) - clean) ** 2))
    const = np.full((32, 32), 0.25)
    const_exact = np.array_equal(wiener_smooth(const, 5), const)
    zero_exact = np.array_equal(wiener_smooth(noisy, 5, noise_variance=0.0), noisy)
    ok = mse_out < mse_in and const_exact and zero_exact
    record_criterion(8, ok, f"step MSE {mse_in:.2e} -> {mse_out:.2e} (strictly lower); constant frame exact: {const_exact}; "
                            f"zero noise variance exact: {zero_exact}")
    assert ok
