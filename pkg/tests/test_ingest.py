import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from tunnelmag.errors import (
    DimensionMismatch,
    MissingFile,
    NonFiniteInput,
    NonMonotoneTimestamps,
    TooFewFrames,
    ZeroFactor,
)
from tunnelmag.ingest import (
    FrameSequence,
    IlluminationParams,
    correct_illumination,
    crop_even,
    downsample,
    load_sequence,
    preprocess,
    quantize16,
    read_image,
    save_sequence,
    to_grayscale,
)

from conftest import texture


def seq_of(frames, ts=None):
    frames = np.asarray(frames, dtype=np.float64)
    return FrameSequence(frames, np.arange(len(frames), dtype=float) if ts is None else np.asarray(ts, float))


# -- FrameSequence ------------------------------------------------------------


def test_sequence_rejects_bad_input():
    with pytest.raises(TooFewFrames):
        seq_of(np.zeros((1, 4, 4)))
    with pytest.raises(NonMonotoneTimestamps):
        seq_of(np.zeros((3, 4, 4)), [0.0, 2.0, 1.0])
    bad = np.zeros((2, 4, 4))
    bad[1, 0, 0] = np.nan
    with pytest.raises(NonFiniteInput):
        seq_of(bad)


def test_sequence_is_read_only():
    s = seq_of(np.zeros((2, 4, 4)))
    with pytest.raises(ValueError):
        s.frames[0, 0, 0] = 1.0


# -- grayscale ----------------------------------------------------------------


def test_grayscale_weights():
    red = np.zeros((3, 3, 3))
    red[..., 0] = 1.0
    np.testing.assert_allclose(to_grayscale(red), 0.299)
    assert np.all(to_grayscale(np.zeros((3, 3, 3))) == 0.0)
    white = np.ones((2, 2, 3))
    np.testing.assert_allclose(to_grayscale(white), 1.0, atol=1e-12)


def test_grayscale_rejects_wrong_shape():
    with pytest.raises(DimensionMismatch):
        to_grayscale(np.zeros((3, 3)))


# -- downsample ---------------------------------------------------------------


def test_downsample_examples():
    s = seq_of([np.eye(4), np.eye(4)])
    assert downsample(s, 1) is s
    tiny = seq_of([[[0, 1], [1, 0]]] * 2)
    np.testing.assert_array_equal(downsample(tiny, 2).frames, [[[0.5]], [[0.5]]])
    yy, xx = np.mgrid[0:256, 0:256]
    checker = seq_of([(xx + yy) % 2] * 2)
    np.testing.assert_array_equal(downsample(checker, 2).frames, 0.5)
    with pytest.raises(ZeroFactor):
        downsample(s, 0)


def test_downsample_drops_trailing_pixels():
    s = seq_of(np.ones((2, 5, 7)))
    assert downsample(s, 2).frames.shape == (2, 2, 3)


@settings(max_examples=30, deadline=None)
@given(a=st.integers(1, 4), b=st.integers(1, 4), seed=st.integers(0, 2**16))
def test_downsample_composes(a, b, seed):
    n = a * b * 3
    frames = np.random.default_rng(seed).random((2, n, n))
    s = seq_of(frames)
    np.testing.assert_allclose(downsample(downsample(s, a), b).frames, downsample(s, a * b).frames, atol=1e-12)


# -- illumination -------------------------------------------------------------


def test_uniform_and_zero_frames_unchanged():
    s = seq_of(np.full((2, 32, 32), 0.37))
    np.testing.assert_allclose(correct_illumination(s).frames, 0.37, atol=1e-12)
    z = seq_of(np.zeros((2, 32, 32)))
    assert np.all(correct_illumination(z).frames == 0.0)


def test_divide_mode_removes_ramp():
    # sigma well above the 2-4 px texture period
    t = texture(128, seed=1, min_wl=2, max_wl=4, contrast=0.2)
    ramp = np.linspace(0.5, 1.0, 128)[None, :]
    s = seq_of([t * ramp] * 2)
    out = correct_illumination(s, IlluminationParams(sigma_px=8.0)).frames[0]
    r = np.corrcoef(out.ravel(), t.ravel())[0, 1]
    assert r > 0.99
    r_before = np.corrcoef((t * ramp).ravel(), t.ravel())[0, 1]
    assert r > r_before


def test_illumination_idempotent():
    # smooth shading with zero slope at the borders, which reflective
    # padding reproduces; a linear ramp bends at the edges and needs more passes
    x = np.arange(128) + 0.5
    shading = 0.75 + 0.25 * np.cos(np.pi * x / 128)
    t = texture(128, seed=2, min_wl=2, max_wl=4, contrast=0.2) * shading[None, :]
    s = seq_of([t] * 2)
    p = IlluminationParams(sigma_px=4.0)
    once = correct_illumination(s, p)
    twice = correct_illumination(once, p)
    first = np.sqrt(np.mean((once.frames - s.frames) ** 2))
    second = np.sqrt(np.mean((twice.frames - once.frames) ** 2))
    assert second < 0.01 * first


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_subtract_mode_preserves_mean(seed):
    f = 0.3 + 0.4 * np.random.default_rng(seed).random((2, 40, 48))
    out = correct_illumination(seq_of(f), IlluminationParams(sigma_px=6.0, mode="subtract"))
    np.testing.assert_allclose(out.frames.mean(axis=(1, 2)), f.mean(axis=(1, 2)), atol=1e-6)


def test_preprocess_crops_odd_sizes():
    s = seq_of(np.full((2, 33, 35), 0.5))
    out = preprocess(s)
    assert out.frames.shape == (2, 32, 34)
    assert crop_even(out) is out


# -- file round trip ----------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    frames = np.random.default_rng(0).random((3, 20, 24))
    s = seq_of(frames, [0.0, 1800.5, 3600.25])
    manifest = save_sequence(s, tmp_path / "seq")
    back = load_sequence(manifest)
    np.testing.assert_array_equal(back.timestamps, s.timestamps)
    assert np.abs(back.frames - frames).max() <= 0.5 / 65535 + 1e-12
    np.testing.assert_array_equal(back.frames, quantize16(frames))
    again = load_sequence(save_sequence(back, tmp_path / "seq2", suffix=".pgm"))
    np.testing.assert_array_equal(again.frames, back.frames)


def test_reads_8bit_rgb(tmp_path):
    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    rgb[..., 1] = 255
    Image.fromarray(rgb).save(tmp_path / "a.png")
    np.testing.assert_allclose(read_image(tmp_path / "a.png"), 0.587, atol=1e-12)


def test_manifest_errors(tmp_path):
    with pytest.raises(MissingFile):
        load_sequence(tmp_path / "nope.csv")
    s = seq_of(np.zeros((2, 4, 4)))
    manifest = save_sequence(s, tmp_path)
    (tmp_path / "frame_00001.png").unlink()
    with pytest.raises(MissingFile):
        load_sequence(manifest)
