"""Frame-level scoring, condition-grouped aggregation and a synthetic corpus.

Segments are converted to binary labels on a fixed hop (10 ms by default);
a frame counts as voiced when at least half of it is covered by a segment.
Precision, recall and F1 are micro-averaged: counts are pooled per group
before the ratios are taken.
"""
from __future__ import annotations

import csv
import math
import os
import re
import statistics
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .audio_io import SampleBuffer
from .pipeline import SegmentList

DEFAULT_HOP_MS = 10.0
NOISE_KINDS = ("white", "babble", "pink")
GROUP_PREFIX = "__group__:"
OVERALL_TAG = "__overall__"
REPORT_COLUMNS = ("file_id", "condition", "tp", "fp", "fn", "tn",
                  "precision", "recall", "f1", "note")

_EPS = 1e-9


class LabelError(Exception):
    pass


class LabelParseError(LabelError):
    pass


class UnknownLabelFormatError(LabelError):
    pass


class HopMismatchError(ValueError):
    pass


class InvalidSynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class FrameLabels:
    labels: np.ndarray
    hop_ms: float = DEFAULT_HOP_MS
    duration_s: float | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int8).ravel()
        if labels.size and not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0 or 1")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        if self.duration_s is None:
            object.__setattr__(self, "duration_s", labels.size * self.hop_ms / 1000.0)

    def __len__(self):
        return self.labels.size

    def to_segments(self) -> SegmentList:
        hop = self.hop_ms / 1000.0
        edges = np.diff(np.concatenate([[0], self.labels, [0]]))
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1)
        total = max(self.duration_s, self.labels.size * hop)
        return SegmentList(tuple((s * hop, e * hop) for s, e in zip(starts, ends)), total)


def frame_count(duration_s: float, hop_ms: float) -> int:
    return int(math.ceil(duration_s * 1000.0 / hop_ms - _EPS))


def segments_to_frames(segs, hop_ms: float = DEFAULT_HOP_MS,
                       duration_s: float | None = None) -> FrameLabels:
    if isinstance(segs, SegmentList):
        if duration_s is None:
            duration_s = segs.total_duration_s
        segs = segs.segments
    segs = list(segs)
    if duration_s is None:
        duration_s = max((b for _, b in segs), default=0.0)
    n = frame_count(duration_s, hop_ms)
    hop = hop_ms / 1000.0
    covered = np.zeros(n)
    for a, b in segs:
        f0 = max(0, int(math.floor(a / hop)))
        f1 = min(n, int(math.ceil(b / hop)))
        for f in range(f0, f1):
            lo, hi = f * hop, (f + 1) * hop
            covered[f] += max(0.0, min(b, hi) - max(a, lo))
    labels = (covered >= 0.5 * hop - _EPS).astype(np.int8)
    return FrameLabels(labels, hop_ms, duration_s)


@dataclass(frozen=True)
class Score:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        # 2PR / (P + R) rewritten over counts; one correctly rounded division
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if self.tp else 0.0

    def __add__(self, other: "Score") -> "Score":
        return Score(self.tp + other.tp, self.fp + other.fp,
                     self.fn + other.fn, self.tn + other.tn)

    def as_tuple(self):
        return (self.tp, self.fp, self.fn, self.tn, self.precision, self.recall, self.f1)


def score(hyp: FrameLabels, ref: FrameLabels) -> Score:
    if not math.isclose(hyp.hop_ms, ref.hop_ms):
        raise HopMismatchError(f"hop {hyp.hop_ms} ms vs {ref.hop_ms} ms")
    h, r = hyp.labels.astype(bool), ref.labels.astype(bool)
    if abs(h.size - r.size) > 1:
        raise ValueError(f"label lengths differ by {abs(h.size - r.size)} frames")
    n = max(h.size, r.size)
    h = np.pad(h, (0, n - h.size))
    r = np.pad(r, (0, n - r.size))
    return Score(tp=int(np.sum(h & r)), fp=int(np.sum(h & ~r)),
                 fn=int(np.sum(~h & r)), tn=int(np.sum(~h & ~r)))


@dataclass(frozen=True)
class FileResult:
    file_id: str
    condition: str
    score: Score | None
    note: str = ""


@dataclass
class EvalReport:
    per_file: list
    groups: dict  # condition tag -> pooled Score, in first-seen order
    overall: Score
    f1_std_across_conditions: float
    skipped: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for res in self.per_file + self.skipped:
                w.writerow(_row(res.file_id, res.condition, res.score, res.note))
            for tag, sc in self.groups.items():
                w.writerow(_row(GROUP_PREFIX + tag, tag, sc))
            w.writerow(_row(GROUP_PREFIX + OVERALL_TAG, OVERALL_TAG, self.overall))

    def summary_lines(self) -> list:
        lines = [f"overall f1={self.overall.f1:.4f} precision={self.overall.precision:.4f} "
                 f"recall={self.overall.recall:.4f}"]
        for tag, sc in self.groups.items():
            lines.append(f"condition {tag} f1={sc.f1:.4f}")
        lines.append(f"f1 std across conditions={self.f1_std_across_conditions:.4f}")
        if self.skipped:
            lines.append(f"skipped {len(self.skipped)} file(s)")
        return lines


def _row(file_id, condition, sc, note=""):
    if sc is None:
        return [file_id, condition, "", "", "", "", "", "", "", note]
    return [file_id, condition, sc.tp, sc.fp, sc.fn, sc.tn,
            f"{sc.precision:.6f}", f"{sc.recall:.6f}", f"{sc.f1:.6f}", note]


def aggregate(results) -> EvalReport:
    results = list(results)
    scored = [r for r in results if r.score is not None]
    skipped = [r for r in results if r.score is None]
    if not scored:
        raise ValueError("nothing to aggregate")
    groups = {}
    for res in scored:
        groups[res.condition] = groups.get(res.condition, Score(0, 0, 0, 0)) + res.score
    overall = sum((r.score for r in scored), Score(0, 0, 0, 0))
    # pstdev works in exact arithmetic, so equal F1 values give exactly 0
    std = statistics.pstdev(sc.f1 for sc in groups.values())
    return EvalReport(per_file=scored, groups=groups, overall=overall,
                      f1_std_across_conditions=std, skipped=skipped)


_FRAME_RE = re.compile(r"^[01]+$")


def read_labels(path, hop_ms: float = DEFAULT_HOP_MS,
                duration_s: float | None = None) -> FrameLabels:
    """Read a label file.

    Two layouts are accepted: a string of ``0``/``1`` characters, one per
    frame (on a single line, or one frame per line), and segment lines of
    ``start_s end_s``. Blank lines and ``#`` comments are ignored.
    """
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw)]
    lines = [(i, ln) for i, ln in lines if ln and not ln.startswith("#")]
    if lines and all(_FRAME_RE.match(ln) for _, ln in lines):
        if len(lines) == 1 or all(len(ln) == 1 for _, ln in lines):
            labels = np.array([int(c) for _, ln in lines for c in ln], dtype=np.int8)
            return FrameLabels(labels, hop_ms, duration_s)
        raise UnknownLabelFormatError(f"{path}: multiple lines of frame labels")
    segs = []
    for lineno, ln in lines:
        parts = ln.split()
        if len(parts) != 2:
            raise LabelParseError(f"{path}:{lineno}: expected 'start_s end_s', got {ln!r}")
        try:
            a, b = float(parts[0]), float(parts[1])
        except ValueError:
            raise LabelParseError(f"{path}:{lineno}: non-numeric segment {ln!r}") from None
        if not (math.isfinite(a) and math.isfinite(b)) or b < a or a < 0:
            raise LabelParseError(f"{path}:{lineno}: invalid interval {ln!r}")
        segs.append((a, b))
    segs.sort()
    return segments_to_frames(segs, hop_ms, duration_s)


def write_segments(segs: SegmentList, path, decimals: int = 3) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in segs.rounded(decimals):
            fh.write(f"{a:.{decimals}f} {b:.{decimals}f}\n")


def write_frame_labels(labels: FrameLabels, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(str(int(v)) for v in labels.labels) + "\n")


# --- synthetic corpus -------------------------------------------------------

FORMANTS_HZ = ((700.0, 130.0), (1200.0, 150.0))
# glottal pulse shaping: zero at DC, double pole near 26 Hz (-6 dB/oct above)
GLOTTAL_POLE = 0.98


@dataclass(frozen=True)
class SynthSpec:
    burst_layout: tuple
    f0_hz: float = 120.0
    snr_db: float | None = None
    noise_kind: str = "white"
    duration_s: float = 2.0
    seed: int = 0
    sample_rate_hz: int = 8000

    def __post_init__(self):
        layout = tuple(sorted((float(a), float(b)) for a, b in self.burst_layout))
        object.__setattr__(self, "burst_layout", layout)
        if self.duration_s <= 0 or self.sample_rate_hz <= 0:
            raise InvalidSynthSpecError("duration and sample rate must be positive")
        if not 0 < self.f0_hz < self.sample_rate_hz / 2:
            raise InvalidSynthSpecError(f"f0 {self.f0_hz} Hz out of range")
        if self.noise_kind not in NOISE_KINDS:
            raise InvalidSynthSpecError(f"noise kind must be one of {NOISE_KINDS}")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise InvalidSynthSpecError("snr_db must be finite")
        prev = 0.0
        for a, b in layout:
            if not (0 <= a < b <= self.duration_s + _EPS) or a < prev:
                raise InvalidSynthSpecError(f"burst ({a}, {b}) overlaps or leaves the file")
            prev = b


def _resonator(freq, bw, rate):
    r = math.exp(-math.pi * bw / rate)
    theta = 2 * math.pi * freq / rate
    return [1.0, -2 * r * math.cos(theta), r * r]


def _vocal_tract(excitation, rate, formants=FORMANTS_HZ):
    out = excitation
    for freq, bw in formants:
        a = _resonator(freq, bw, rate)
        out = lfilter([sum(a)], a, out)
    return out


def _glottal(pulses, pole=GLOTTAL_POLE):
    return lfilter([1.0, -1.0], [1.0, -2.0 * pole, pole * pole], pulses)


def _pulse_train(n, f0, rate, rng, jitter=0.01):
    x = np.zeros(n)
    t = rng.uniform(0, rate / f0)
    while t < n:
        x[int(t)] = 1.0
        t += rate / f0 * (1.0 + jitter * rng.standard_normal())
    return x


def _raised_cosine_envelope(n, ramp):
    env = np.ones(n)
    ramp = min(ramp, n // 2)
    if ramp > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = r
        env[n - ramp:] = r[::-1]
    return env


def _noise(kind, n, rate, rng):
    if kind == "white":
        return rng.standard_normal(n)
    if kind == "pink":
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.arange(spec.size, dtype=np.float64)
        f[0] = 1.0
        return np.fft.irfft(spec / np.sqrt(f), n)
    out = np.zeros(n)
    for _ in range(6):
        f0 = rng.uniform(90.0, 260.0)
        formants = ((rng.uniform(450, 900), 150.0), (rng.uniform(1000, 2200), 200.0))
        out += _vocal_tract(_glottal(_pulse_train(n, f0, rate, rng, jitter=0.03)), rate, formants)
    return out


def voiced_mask_from_layout(layout, n, rate):
    mask = np.zeros(n, dtype=bool)
    for a, b in layout:
        mask[int(round(a * rate)):int(round(b * rate))] = True
    return mask


def synthesize_parts(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Speech and noise components (already at their final gain) plus the
    per-sample voiced mask. Their sum is the signal :func:`synthesize` returns."""
    rate = spec.sample_rate_hz
    n = int(round(spec.duration_s * rate))
    rng = np.random.default_rng(spec.seed)
    # separate stream so every SNR of one layout shares the same speech
    noise_rng = np.random.default_rng([spec.seed, 1])
    speech = np.zeros(n)
    ramp = int(round(0.010 * rate))
    for a, b in spec.burst_layout:
        i0, i1 = int(round(a * rate)), int(round(b * rate))
        if i1 <= i0:
            continue
        exc = _glottal(_pulse_train(i1 - i0, spec.f0_hz, rate, rng))
        speech[i0:i1] = _vocal_tract(exc, rate) * _raised_cosine_envelope(i1 - i0, ramp)
    mask = voiced_mask_from_layout(spec.burst_layout, n, rate)
    if mask.any():
        speech /= math.sqrt(np.mean(speech[mask] ** 2))

    noise = np.zeros(n)
    if spec.snr_db is not None:
        noise = _noise(spec.noise_kind, n, rate, noise_rng)
        noise -= noise.mean()
        p_speech = np.mean(speech[mask] ** 2) if mask.any() else 1.0
        noise *= math.sqrt(p_speech / np.mean(noise ** 2) / 10.0 ** (spec.snr_db / 10.0))
    peak = np.max(np.abs(speech + noise))
    if peak > 0:
        gain = 0.5 / peak
        speech *= gain
        noise *= gain
    return speech, noise, mask


def synthesize(spec: SynthSpec, hop_ms: float = DEFAULT_HOP_MS) -> tuple[SampleBuffer, FrameLabels]:
    """Generate a noisy utterance and its reference frame labels.

    Voiced bursts are jittered impulse trains at ``f0_hz`` through two
    resonances near 700 Hz and 1200 Hz with 10 ms raised-cosine ramps.
    Noise is scaled so that mean burst power over mean noise power matches
    ``snr_db``; the mixture is then rescaled as a whole to a 0.5 peak.
    """
    speech, noise, _ = synthesize_parts(spec)
    rate = spec.sample_rate_hz
    labels = segments_to_frames(spec.burst_layout, hop_ms, speech.size / rate)
    return SampleBuffer(speech + noise, rate), labels


def random_layout(rng, duration_s=3.0, min_burst=0.3, max_burst=0.8,
                  min_gap=0.2, max_gap=0.6, lead=(0.1, 0.4)) -> tuple:
    """Bursts placed left to right with random lengths and gaps."""
    t = rng.uniform(*lead)
    layout = []
    while True:
        length = rng.uniform(min_burst, max_burst)
        if t + length > duration_s - 0.1:
            break
        layout.append((round(t, 3), round(t + length, 3)))
        t += length + rng.uniform(min_gap, max_gap)
    return tuple(layout)


def read_manifest(path) -> list:
    """Rows of ``(wav_path, label_path, condition)``; relative paths resolve
    against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise ValueError(f"{path}:{lineno}: expected wav<TAB>labels<TAB>condition")
            wav, lab, cond = (p.strip() for p in parts)
            rows.append((os.path.join(base, wav), os.path.join(base, lab), cond))
    return rows
