import numpy as np
import pytest
import scipy.fft as sfft

from tunnelmag.synth import TextureSpec, noise_texture


def texture(size=128, seed=0, min_wl=4.0, max_wl=32.0, contrast=0.3, width=None):
    """Periodic band-limited texture in [0.5 - contrast, 0.5 + contrast]."""
    w = width or size
    return noise_texture(w, size, TextureSpec(min_wavelength_px=min_wl, max_wavelength_px=max_wl, contrast=contrast),
                         np.random.default_rng(seed))


def fourier_shift(img, dx, dy):
    """Exact periodic sub-pixel shift: out(x, y) = img(x - dx, y - dy)."""
    h, w = img.shape
    ramp = np.exp(-2j * np.pi * (sfft.fftfreq(h)[:, None] * dy + sfft.fftfreq(w)[None, :] * dx))
    return sfft.ifft2(sfft.fft2(img) * ramp).real


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
