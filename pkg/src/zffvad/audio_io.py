"""Audio ingestion, WAV output and fixed-hop framing.

Only mono RIFF/WAVE files are handled, either 16-bit PCM or 32-bit IEEE
float. Integer PCM is scaled by 1/32768, so reading back a file written by
:func:`write_wav` reproduces the quantized samples bit for bit.
"""
from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.io import wavfile

PCM_SCALE = 32768.0


class AudioError(Exception):
    """Base class for audio ingestion failures."""


class UnsupportedFormatError(AudioError):
    pass


class MalformedHeaderError(AudioError):
    pass


class EmptyAudioError(AudioError):
    pass


@dataclass(frozen=True)
class SampleBuffer:
    """Mono samples plus their sample rate.

    The sample array is copied to float64 and made read-only, so a buffer can
    be shared freely between threads and pipeline stages.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64, copy=True).ravel()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be a positive integer, got {self.sample_rate_hz}")
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def scaled(self, gain: float) -> "SampleBuffer":
        return SampleBuffer(self.samples * gain, self.sample_rate_hz)

    def require_samples(self):
        if self.samples.size == 0:
            raise EmptyAudioError("buffer contains no samples")


@dataclass(frozen=True)
class FrameSpec:
    window_ms: float
    hop_ms: float

    def __post_init__(self):
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise ValueError("window_ms and hop_ms must be positive")
        if self.hop_ms > self.window_ms:
            raise ValueError("hop_ms must not exceed window_ms")

    def window_samples(self, rate: int) -> int:
        n = int(round(self.window_ms * rate / 1000.0))
        if n < 2:
            raise ValueError(f"{self.window_ms} ms is fewer than 2 samples at {rate} Hz")
        return n

    def hop_samples(self, rate: int) -> int:
        return max(1, int(round(self.hop_ms * rate / 1000.0)))


def ms_to_samples(ms: float, rate: int) -> int:
    return int(round(ms * rate / 1000.0))


def read_wav(path) -> SampleBuffer:
    path = os.fspath(path)
    try:
        with warnings.catch_warnings():
            # chunk warnings (e.g. LIST metadata) are not errors for us
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError) as exc:
        raise MalformedHeaderError(f"{path}: {exc}") from exc

    if data.ndim != 1:
        raise UnsupportedFormatError(f"{path}: expected 1 channel, found {data.shape[1]}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(
            f"{path}: only 16-bit PCM and 32-bit float are supported, got {data.dtype}")
    if samples.size == 0:
        raise EmptyAudioError(f"{path}: no audio samples")
    if not np.all(np.isfinite(samples)):
        raise MalformedHeaderError(f"{path}: non-finite float samples")
    return SampleBuffer(samples, rate)


def to_pcm16(samples) -> np.ndarray:
    """Clamp to [-1, 1 - 1/32768] and quantize to int16 (round to nearest)."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0 - 1.0 / PCM_SCALE)
    return np.round(x * PCM_SCALE).astype(np.int16)


def write_wav(buffer: SampleBuffer, path) -> None:
    path = os.fspath(path)
    if not np.all(np.isfinite(buffer.samples)):
        raise ValueError("cannot write non-finite samples")
    wavfile.write(path, buffer.sample_rate_hz, to_pcm16(buffer.samples))


def frames(buffer: SampleBuffer, spec: FrameSpec) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(start_index, frame)`` pairs.

    Frames start at multiples of the hop; the final frame is zero-padded to
    the window length, giving ``ceil(len / hop)`` frames in total.
    """
    rate = buffer.sample_rate_hz
    win = spec.window_samples(rate)
    hop = spec.hop_samples(rate)
    x = buffer.samples
    count = math.ceil(x.size / hop)
    for k in range(count):
        start = k * hop
        chunk = x[start:start + win]
        if chunk.size < win:
            chunk = np.concatenate([chunk, np.zeros(win - chunk.size)])
        else:
            chunk = chunk.copy()
        yield start, chunk
