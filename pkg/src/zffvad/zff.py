"""Zero-frequency filtering.

The input is passed through a double integrator (two poles at z = 1), then
the slowly growing trend is removed by subtracting a centered moving
average whose length is tied to the fundamental period. Shortening the
trend-removal window lets more of the first and second formant through,
so one integrator output feeds a small bank of trend-removed channels.

``ZffConfig.cascade_depth`` adds further integrator stages per channel.
Two stages give sharper zero crossings at the excitation instants, which
is the better choice when the goal is GCI extraction rather than voicing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .audio_io import SampleBuffer


class ZffError(Exception):
    pass


class NonFiniteOutputError(ZffError):
    pass


class SignalTooShortError(ZffError):
    pass


class WindowTooLargeError(ZffError):
    pass


@dataclass(frozen=True)
class ZffConfig:
    window_divisors: tuple = (1.0, 5.0, 10.0)
    f0_search_hz: tuple = (60.0, 400.0)
    t0_fallback_ms: float = 5.0
    # normalized autocorrelation peak required to accept a T0 estimate
    min_periodicity: float = 0.1
    # H(z) stages per channel, each followed by trend removal
    cascade_depth: int = 1

    def __post_init__(self):
        divisors = tuple(float(d) for d in self.window_divisors)
        object.__setattr__(self, "window_divisors", divisors)
        object.__setattr__(self, "f0_search_hz", tuple(float(f) for f in self.f0_search_hz))
        if not divisors or any(d <= 0 for d in divisors):
            raise ValueError("window_divisors must be non-empty and positive")
        if any(b <= a for a, b in zip(divisors, divisors[1:])):
            raise ValueError("window_divisors must be strictly increasing")
        lo, hi = self.f0_search_hz
        if not 0 < lo < hi:
            raise ValueError("f0_search_hz must satisfy 0 < min < max")
        if self.t0_fallback_ms <= 0:
            raise ValueError("t0_fallback_ms must be positive")
        if not 0 <= self.min_periodicity < 1:
            raise ValueError("min_periodicity must lie in [0, 1)")
        if int(self.cascade_depth) != self.cascade_depth or self.cascade_depth < 1:
            raise ValueError("cascade_depth must be a positive integer")

    def validate_rate(self, rate: int):
        if self.f0_search_hz[1] >= rate / 2:
            raise ValueError(f"f0 max {self.f0_search_hz[1]} Hz is not below Nyquist at {rate} Hz")


@dataclass(frozen=True)
class ZffBank:
    x: np.ndarray
    y: list
    t0_samples: int
    windows: list
    gci_indices: list = field(default_factory=list)

    @property
    def channels(self) -> int:
        return len(self.y)


@numba.njit(cache=True)
def _integrate2(s):
    n = s.shape[0]
    x = np.empty(n)
    x1 = 0.0
    x2 = 0.0
    for i in range(n):
        v = s[i] + 2.0 * x1 - x2
        x[i] = v
        x2 = x1
        x1 = v
    return x


def integrate(s) -> np.ndarray:
    """``H(z) = 1 / (1 - 2 z^-1 + z^-2)`` from rest, without mean removal."""
    return _integrate2(np.ascontiguousarray(s, dtype=np.float64))


def zero_frequency_filter(signal: SampleBuffer) -> np.ndarray:
    """Mean-removed input through ``H(z) = 1 / (1 - 2 z^-1 + z^-2)``."""
    signal.require_samples()
    s = signal.samples - signal.samples.mean()
    x = _integrate2(s)
    if not np.all(np.isfinite(x)):
        raise NonFiniteOutputError("integrator output overflowed; segment the input")
    return x


def _autocorrelation(s: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased autocorrelation r[k] = sum s[n] s[n+k] / L for k <= max_lag."""
    L = s.size
    nfft = 1 << int(math.ceil(math.log2(L + max_lag + 1)))
    spec = np.fft.rfft(s, nfft)
    r = np.fft.irfft(spec * np.conj(spec), nfft)[:max_lag + 1]
    return r / L


def estimate_t0(signal: SampleBuffer, cfg: ZffConfig = ZffConfig()) -> int:
    """Fundamental period in samples from the utterance autocorrelation.

    The lag of the largest autocorrelation value inside the f0 search range
    is returned, unless that peak is not clearly periodic (normalized value
    at or below ``cfg.min_periodicity``), in which case the fallback period
    is used.
    """
    signal.require_samples()
    rate = signal.sample_rate_hz
    cfg.validate_rate(rate)
    f_lo, f_hi = cfg.f0_search_hz
    lag_min = max(1, int(math.ceil(rate / f_hi)))
    lag_max = int(math.floor(rate / f_lo))
    if len(signal) < 2 * rate / f_lo:
        raise SignalTooShortError(
            f"{len(signal)} samples; T0 search needs at least {math.ceil(2 * rate / f_lo)}")
    fallback = max(1, int(round(cfg.t0_fallback_ms * rate / 1000.0)))

    s = signal.samples - signal.samples.mean()
    r = _autocorrelation(s, lag_max)
    if r[0] <= 0:
        return fallback
    lag = lag_min + int(np.argmax(r[lag_min:lag_max + 1]))
    if r[lag] <= 0 or r[lag] / r[0] <= cfg.min_periodicity:
        return fallback
    return lag


@numba.njit(cache=True)
def _local_mean(x, half, symmetric):
    n = x.shape[0]
    out = np.empty(n)
    # Window sum is recomputed from scratch every `width` steps to bound
    # round-off drift on the large values an integrator produces.
    width = 2 * half + 1
    lo = 0
    hi = min(n - 1, half)
    acc = 0.0
    for k in range(lo, hi + 1):
        acc += x[k]
    for i in range(n):
        new_lo = max(0, i - half)
        new_hi = min(n - 1, i + half)
        if i > 0:
            if i % width == 0:
                acc = 0.0
                for k in range(new_lo, new_hi + 1):
                    acc += x[k]
            else:
                if new_hi > hi:
                    acc += x[new_hi]
                if new_lo > lo:
                    acc -= x[lo]
        lo = new_lo
        hi = new_hi
        out[i] = acc / (hi - lo + 1)
    if symmetric:
        # near the ends the window shrinks equally on both sides
        for i in range(min(half, n)):
            for j in (i, n - 1 - i):
                m = min(j, n - 1 - j)
                edge = 0.0
                for k in range(j - m, j + m + 1):
                    edge += x[k]
                out[j] = edge / (2 * m + 1)
    return out


def local_mean(x, window_samples: int, symmetric: bool = False) -> np.ndarray:
    """Centered moving average over ``window_samples``.

    Near the signal ends the window is clipped to the available samples, or
    with ``symmetric=True`` shrunk equally on both sides of the sample.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _local_mean(x, (window_samples - 1) // 2, symmetric)


def trend_remove(x, window_samples: int) -> np.ndarray:
    """Subtract the centered ``window_samples``-point local mean.

    Interior samples use the full window. Within ``N`` samples of either end
    the window shrinks symmetrically to the samples that exist on both
    sides, so a linear trend is removed everywhere, the ends included.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if window_samples < 3 or window_samples % 2 == 0:
        raise ValueError(f"window must be an odd integer >= 3, got {window_samples}")
    if x.size <= window_samples:
        raise WindowTooLargeError(f"window {window_samples} needs more than {x.size} samples")
    return x - _local_mean(x, (window_samples - 1) // 2, True)


def nearest_odd(value: float, minimum: int = 3) -> int:
    """Nearest odd integer to ``value``; exact even integers round up."""
    k = int(math.floor(value / 2.0))
    w = 2 * k + 1
    return max(minimum, w)


def gci_locations(y) -> np.ndarray:
    """Indices n with ``y[n-1] < 0 <= y[n]`` (negative-to-positive crossings)."""
    y = np.asarray(y)
    return np.flatnonzero((y[:-1] < 0) & (y[1:] >= 0)) + 1


def compute_bank(signal: SampleBuffer, cfg: ZffConfig = ZffConfig()) -> ZffBank:
    """Integrator output, T0 and one trend-removed channel per divisor.

    With ``cascade_depth`` > 1 every channel runs the stages interleaved,
    ``trend_remove(H(... trend_remove(H(s))))``. In the interior this equals
    trend-removing the full cascade output, but it never materializes the
    polynomially growing signal, so the short-window channels keep their
    precision.
    """
    x = zero_frequency_filter(signal)
    t0 = estimate_t0(signal, cfg)
    windows = [nearest_odd(t0 / d) for d in cfg.window_divisors]
    ys = []
    for w in windows:
        y = trend_remove(x, w)
        for _ in range(cfg.cascade_depth - 1):
            y = trend_remove(_integrate2(y), w)
        if not np.all(np.isfinite(y)):
            raise NonFiniteOutputError("integrator output overflowed; segment the input")
        y.flags.writeable = False
        ys.append(y)
    x.flags.writeable = False
    gcis = [gci_locations(y) for y in ys]
    return ZffBank(x=x, y=ys, t0_samples=t0, windows=windows, gci_indices=gcis)
