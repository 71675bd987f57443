"""Decision surface, dynamic threshold and segment smoothing.

Each trend-removed channel is weighted by its own first difference and
smoothed with a running mean; the channels are summed into a composite
signal normalized to [0, 1]. Dividing by the short-time spectral entropy
favours frames with peaky (harmonic) spectra. A threshold of
``min + median / 3`` is derived for every threshold block, and the voiced
runs are finally merged and pruned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio_io import SampleBuffer, ms_to_samples, write_wav
from .zff import ZffBank, ZffConfig, compute_bank, local_mean

ENTROPY_SOURCES = ("y0", "raw_x", "input")


@dataclass(frozen=True)
class PipelineConfig:
    running_mean_ms: float = 40.0
    entropy_window_ms: float = 20.0
    threshold_block_ms: float = 300.0
    min_segment_ms: float = 50.0
    merge_gap_ms: float = 30.0
    entropy_floor: float = 1e-6
    entropy_source: str = "y0"
    # samples whose normalized composite does not exceed this are never voiced
    activity_floor: float = 0.01

    def __post_init__(self):
        for name in ("running_mean_ms", "entropy_window_ms", "threshold_block_ms",
                     "min_segment_ms", "merge_gap_ms", "entropy_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.entropy_window_ms > self.threshold_block_ms:
            raise ValueError("entropy_window_ms must not exceed threshold_block_ms")
        if self.entropy_source not in ENTROPY_SOURCES:
            raise ValueError(f"entropy_source must be one of {ENTROPY_SOURCES}")
        if not 0 <= self.activity_floor < 1:
            raise ValueError("activity_floor must lie in [0, 1)")


@dataclass(frozen=True)
class DecisionSurface:
    r_c: np.ndarray
    inv_entropy: np.ndarray
    y_ds: np.ndarray
    thresholds: np.ndarray  # one value per block
    block_starts: np.ndarray
    sample_rate_hz: int

    def __len__(self):
        return self.y_ds.size

    def threshold_per_sample(self) -> np.ndarray:
        bounds = np.append(self.block_starts, self.y_ds.size)
        return np.repeat(self.thresholds, np.diff(bounds))


@dataclass(frozen=True)
class SegmentList:
    """Voiced intervals ``[start_s, end_s)`` in seconds."""

    segments: tuple
    total_duration_s: float

    def __post_init__(self):
        segs = tuple((float(a), float(b)) for a, b in self.segments)
        object.__setattr__(self, "segments", segs)
        prev_end = None
        for a, b in segs:
            if not 0 <= a < b <= self.total_duration_s + 1e-9:
                raise ValueError(f"invalid segment ({a}, {b}) for duration {self.total_duration_s}")
            if prev_end is not None and a <= prev_end:
                raise ValueError("segments must be sorted with positive gaps")
            prev_end = b

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    @property
    def voiced_duration_s(self) -> float:
        return sum(b - a for a, b in self.segments)

    def rounded(self, decimals: int = 3) -> "SegmentList":
        """Segments as they appear in a text file with ``decimals`` places."""
        out = []
        for a, b in self.segments:
            a, b = round(a, decimals), round(b, decimals)
            if b <= a:
                continue
            if out and a <= out[-1][1]:
                out[-1] = (out[-1][0], b)
            else:
                out.append((a, b))
        return SegmentList(tuple(out), self.total_duration_s)


def gradient_weight(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    d = np.zeros_like(y)
    d[1:] = y[1:] * (y[1:] - y[:-1])
    return d


def running_mean(d, window_ms: float, rate: int) -> np.ndarray:
    """Centered moving average over ``window_ms``, edge windows clipped.

    An even sample count is widened to the next odd length so the window
    stays symmetric about each sample.
    """
    w = ms_to_samples(window_ms, rate)
    if w < 1:
        raise ValueError(f"{window_ms} ms is less than one sample at {rate} Hz")
    return local_mean(d, w | 1, symmetric=False)


def composite(r_list) -> np.ndarray:
    total = np.sum(np.vstack([np.asarray(r, dtype=np.float64) for r in r_list]), axis=0)
    lo, hi = total.min(), total.max()
    if hi == lo:
        return np.zeros_like(total)
    return (total - lo) / (hi - lo)


def magnitude_entropy(mag, floor: float = 1e-6) -> float:
    """Shannon entropy in bits of a magnitude vector treated as a distribution."""
    mag = np.asarray(mag, dtype=np.float64)
    total = mag.sum()
    if total < floor:
        return math.log2(mag.size)
    p = mag[mag > 0] / total
    return float(-np.sum(p * np.log2(p)))


def frame_entropies(x, window: int, floor: float = 1e-6) -> np.ndarray:
    """Entropy of every non-overlapping ``window``-sample frame."""
    x = np.asarray(x, dtype=np.float64)
    count = math.ceil(x.size / window)
    padded = np.zeros(count * window)
    padded[:x.size] = x
    fr = padded.reshape(count, window)
    fr = fr - fr.mean(axis=1, keepdims=True)
    mag = np.abs(np.fft.rfft(fr, axis=1))
    total = mag.sum(axis=1)
    k = mag.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        p = mag / total[:, None]
        terms = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    ent = -terms.sum(axis=1)
    ent[total < floor] = math.log2(k)
    return np.clip(ent, 0.0, math.log2(k))


def spectral_entropy(x, window_ms: float, rate: int, floor: float = 1e-6) -> np.ndarray:
    """Per-sample spectral entropy, constant across each frame."""
    window = ms_to_samples(window_ms, rate)
    if window < 4:
        raise ValueError(f"entropy window must span at least 4 samples, got {window}")
    x = np.asarray(x, dtype=np.float64)
    ent = frame_entropies(x, window, floor)
    return np.repeat(ent, window)[:x.size]


def _entropy_input(bank: ZffBank, signal, source: str) -> np.ndarray:
    if source == "y0":
        return bank.y[0]
    if source == "raw_x":
        return bank.x
    if signal is None:
        raise ValueError("entropy_source 'input' needs the input signal")
    return signal.samples


def decision_surface(bank: ZffBank, cfg: PipelineConfig = PipelineConfig(),
                     rate: int = 8000, signal: SampleBuffer | None = None) -> DecisionSurface:
    if signal is not None:
        rate = signal.sample_rate_hz
    if not bank.y:
        raise ValueError("bank has no channels")
    rs = [running_mean(gradient_weight(y), cfg.running_mean_ms, rate) for y in bank.y]
    r_c = composite(rs)
    e_h = spectral_entropy(_entropy_input(bank, signal, cfg.entropy_source),
                           cfg.entropy_window_ms, rate, cfg.entropy_floor)
    inv = 1.0 / np.maximum(e_h, cfg.entropy_floor)
    y_ds = r_c * inv
    starts, thetas = block_thresholds(y_ds, ms_to_samples(cfg.threshold_block_ms, rate))
    for arr in (r_c, inv, y_ds, thetas, starts):
        arr.flags.writeable = False
    return DecisionSurface(r_c=r_c, inv_entropy=inv, y_ds=y_ds, thresholds=thetas,
                           block_starts=starts, sample_rate_hz=rate)


def block_thresholds(y_ds, block: int) -> tuple[np.ndarray, np.ndarray]:
    """Block start indices and ``min + median / 3`` for each block."""
    y_ds = np.asarray(y_ds, dtype=np.float64)
    block = max(1, block)
    starts = np.arange(0, y_ds.size, block)
    thetas = np.array([
        y_ds[s:s + block].min() + np.median(y_ds[s:s + block]) / 3.0 for s in starts
    ])
    return starts, thetas


def runs_to_segments(mask, rate: int) -> SegmentList:
    """Maximal runs of True samples ``[i, j]`` as ``[i/rate, (j+1)/rate)``."""
    mask = np.asarray(mask, dtype=bool)
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    segs = tuple((s / rate, e / rate) for s, e in zip(starts, ends))
    return SegmentList(segs, mask.size / rate)


def voiced_mask(ds: DecisionSurface, activity_floor: float = 0.0) -> np.ndarray:
    mask = ds.y_ds >= ds.threshold_per_sample()
    if activity_floor > 0:
        mask &= ds.r_c > activity_floor
    return mask


def dynamic_threshold(ds: DecisionSurface, cfg: PipelineConfig = PipelineConfig()) -> SegmentList:
    if len(ds) == 0:
        raise ValueError("empty decision surface")
    return runs_to_segments(voiced_mask(ds, cfg.activity_floor), ds.sample_rate_hz)


def smooth(raw: SegmentList, cfg: PipelineConfig = PipelineConfig()) -> SegmentList:
    """Merge segments separated by less than the merge gap, then drop short ones."""
    gap = cfg.merge_gap_ms / 1000.0
    min_len = cfg.min_segment_ms / 1000.0
    merged = []
    for a, b in raw.segments:
        if merged and a - merged[-1][1] < gap:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    kept = tuple((a, b) for a, b in merged if b - a >= min_len)
    return SegmentList(kept, raw.total_duration_s)


def detect(signal: SampleBuffer, zcfg: ZffConfig = ZffConfig(),
           pcfg: PipelineConfig = PipelineConfig()) -> tuple[SegmentList, DecisionSurface]:
    bank = compute_bank(signal, zcfg)
    ds = decision_surface(bank, pcfg, signal=signal)
    return smooth(dynamic_threshold(ds, pcfg), pcfg), ds


def composite_signal(signal: SampleBuffer, zcfg: ZffConfig = ZffConfig(),
                     pcfg: PipelineConfig = PipelineConfig()) -> SampleBuffer:
    """The normalized composite mapped to [-1, 1] as ``2 r_c - 1``."""
    bank = compute_bank(signal, zcfg)
    rate = signal.sample_rate_hz
    rs = [running_mean(gradient_weight(y), pcfg.running_mean_ms, rate) for y in bank.y]
    return SampleBuffer(2.0 * composite(rs) - 1.0, rate)


def export_composite(signal: SampleBuffer, zcfg: ZffConfig = ZffConfig(),
                     pcfg: PipelineConfig = PipelineConfig(), path=None) -> SampleBuffer:
    out = composite_signal(signal, zcfg, pcfg)
    if path is not None:
        write_wav(out, path)
    return out
