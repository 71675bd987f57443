import sys
import numpy as np
import pytest
from scipy.signal import lfilter

from zffvad.audio_io import SampleBuffer


def resonance(freq, rate, radius=0.95):
    theta = 2 * np.pi * freq / rate
    return [1.0, -2 * radius * np.cos(theta), radius ** 2]


def glottal_pulse_train(f0, rate=8000, duration_s=1.0, formant_hz=500.0):
    """Impulses at round(k * rate / f0) through a decaying two-pole resonance."""
    n = int(duration_s * rate)
    x = np.zeros(n)
    k = 0
    while True:
        idx = int(round(k * rate / f0))
        if idx >= n:
            break
        x[idx] = 1.0
        k += 1
    return SampleBuffer(lfilter([1.0], resonance(formant_hz, rate), x), rate)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(results):
        checks = results[criterion]
        ran = [ok for ok, _ in checks if ok is not None]
        overall = module.status_word(all(ran) if ran else None)
        terminalreporter.write_line(f"criterion {criterion}: {overall}")
        for ok, detail in checks:
            terminalreporter.write_line(f"    {module.status_word(ok)} {detail}")
