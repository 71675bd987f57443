import csv
import math

import numpy as np
import pytest

from zffvad.evaluation import (GROUP_PREFIX, OVERALL_TAG, REPORT_COLUMNS, FileResult,
                               FrameLabels, HopMismatchError, InvalidSynthSpecError,
                               LabelParseError, Score, SynthSpec, UnknownLabelFormatError,
                               aggregate, random_layout, read_labels, read_manifest, score,
                               segments_to_frames, synthesize, synthesize_parts,
                               write_frame_labels, write_segments)
from zffvad.pipeline import SegmentList


def _labels(bits, hop_ms=10.0):
    return FrameLabels(np.array(bits), hop_ms)


# --- segments to frames ---------------------------------------------------------------------

def test_frames_exact_alignment():
    got = segments_to_frames([(0.0, 0.05)], 10, 0.1)
    assert got.labels.tolist() == [1, 1, 1, 1, 1, 0, 0, 0, 0, 0]


def test_frames_empty():
    assert segments_to_frames([], 10, 0.1).labels.tolist() == [0] * 10


def test_frames_small_overlap_is_unvoiced():
    assert segments_to_frames([(0.004, 0.006)], 10, 0.02).labels.tolist() == [0, 0]


def test_frames_half_overlap_is_voiced():
    assert segments_to_frames([(0.005, 0.02)], 10, 0.02).labels.tolist() == [1, 1]


def test_frames_overlap_summed_across_segments():
    # 3 ms + 3 ms in one frame reaches the 50% mark
    assert segments_to_frames([(0.0, 0.003), (0.005, 0.008)], 10, 0.01).labels.tolist() == [1]


def test_frame_count_rounds_up():
    assert len(segments_to_frames([], 10, 0.105)) == 11


def test_frames_round_trip(rng):
    bits = rng.integers(0, 2, 60)
    labels = _labels(bits)
    back = segments_to_frames(labels.to_segments(), 10, labels.duration_s)
    assert np.array_equal(back.labels, labels.labels)


def test_frame_labels_reject_non_binary():
    with pytest.raises(ValueError):
        FrameLabels(np.array([0, 2]))


# --- scoring -----------------------------------------------------------------------------------

def test_score_identity():
    sc = score(_labels([1, 0, 1, 0]), _labels([1, 0, 1, 0]))
    assert (sc.tp, sc.fp, sc.fn, sc.tn) == (2, 0, 0, 2)
    assert sc.precision == sc.recall == sc.f1 == 1.0


def test_score_arithmetic():
    sc = Score(tp=8, fp=2, fn=2, tn=0)
    assert sc.precision == 0.8 and sc.recall == 0.8
    assert sc.f1 == pytest.approx(0.8, abs=1e-15)


def test_score_all_zero_hypothesis():
    sc = score(_labels([0, 0, 0]), _labels([1, 1, 0]))
    assert sc.precision == 0 and sc.recall == 0 and sc.f1 == 0


def test_score_pads_by_one_frame():
    sc = score(_labels([1, 1, 1]), _labels([1, 1]))
    assert (sc.tp, sc.fp) == (2, 1)


def test_score_rejects_large_length_gap():
    with pytest.raises(ValueError):
        score(_labels([1, 1, 1]), _labels([1]))


def test_score_rejects_hop_mismatch():
    with pytest.raises(HopMismatchError):
        score(_labels([1], 10.0), _labels([1], 20.0))


def test_counts_cover_all_frames(rng):
    a, b = rng.integers(0, 2, 50), rng.integers(0, 2, 50)
    sc = score(_labels(a), _labels(b))
    assert sc.tp + sc.fp + sc.fn + sc.tn == 50


# --- aggregation ---------------------------------------------------------------------------------

def test_aggregate_pools_counts():
    one = Score(tp=1, fp=1, fn=0, tn=0)
    rep = aggregate([FileResult("a", "c", one), FileResult("b", "c", one)])
    assert rep.groups["c"].precision == 0.5
    assert rep.overall.precision == 0.5


def test_aggregate_equal_groups_zero_std():
    sc = Score(tp=4, fp=1, fn=1, tn=0)  # f1 = 0.8
    rep = aggregate([FileResult(str(i), tag, sc) for i, tag in enumerate("abc")])
    assert rep.f1_std_across_conditions == 0.0


def test_aggregate_population_std():
    f1_06 = Score(tp=3, fp=2, fn=2, tn=0)  # 6 / 10
    f1_08 = Score(tp=4, fp=1, fn=1, tn=0)  # 8 / 10
    rep = aggregate([FileResult("a", "x", f1_06), FileResult("b", "y", f1_08)])
    assert rep.f1_std_across_conditions == pytest.approx(0.1, abs=1e-12)


def test_aggregate_single_file_matches_file():
    sc = Score(tp=5, fp=3, fn=1, tn=9)
    rep = aggregate([FileResult("a", "x", sc)])
    assert rep.overall.as_tuple() == sc.as_tuple()


def test_aggregate_keeps_skipped():
    rep = aggregate([FileResult("a", "x", Score(1, 0, 0, 0)),
                     FileResult("b", "x", None, "skipped: bad")])
    assert [r.file_id for r in rep.skipped] == ["b"]


def test_aggregate_needs_a_score():
    with pytest.raises(ValueError):
        aggregate([FileResult("b", "x", None, "skipped")])


def test_report_csv(tmp_path):
    rep = aggregate([FileResult("a", "x", Score(2, 1, 0, 3)),
                     FileResult("b", "y", Score(1, 0, 1, 4)),
                     FileResult("c", "y", None, "skipped: missing")])
    path = tmp_path / "r.csv"
    rep.write_csv(path)
    rows = list(csv.reader(open(path, encoding="utf-8")))
    assert tuple(rows[0]) == REPORT_COLUMNS
    ids = [r[0] for r in rows[1:]]
    assert ids == ["a", "b", "c", GROUP_PREFIX + "x", GROUP_PREFIX + "y",
                   GROUP_PREFIX + OVERALL_TAG]
    assert rows[3][2] == "" and rows[3][-1] == "skipped: missing"


# --- label files ---------------------------------------------------------------------------------

def test_read_frame_string(tmp_path):
    p = tmp_path / "a.lab"
    p.write_text("00110\n")
    assert read_labels(p, 10).labels.tolist() == [0, 0, 1, 1, 0]


def test_read_one_frame_per_line(tmp_path):
    p = tmp_path / "a.lab"
    p.write_text("0\n1\n1\n")
    assert read_labels(p, 10).labels.tolist() == [0, 1, 1]


def test_read_segment_lines(tmp_path):
    p = tmp_path / "a.seg"
    p.write_text("0.02 0.04\n")
    assert read_labels(p, 10, 0.05).labels.tolist() == [0, 0, 1, 1, 0]


def test_read_empty_segment_file(tmp_path):
    p = tmp_path / "a.seg"
    p.write_text("")
    assert read_labels(p, 10, 0.03).labels.tolist() == [0, 0, 0]


def test_read_malformed_line_names_line(tmp_path):
    p = tmp_path / "a.seg"
    p.write_text("0.0 0.1\nabc\n")
    with pytest.raises(LabelParseError, match=r":2:"):
        read_labels(p, 10, 1.0)


def test_read_non_numeric_pair(tmp_path):
    p = tmp_path / "a.seg"
    p.write_text("0.0 x\n")
    with pytest.raises(LabelParseError, match=r":1:"):
        read_labels(p, 10, 1.0)


def test_read_ambiguous_frame_lines(tmp_path):
    p = tmp_path / "a.lab"
    p.write_text("0011\n1100\n")
    with pytest.raises(UnknownLabelFormatError):
        read_labels(p, 10)


def test_segment_file_round_trip(tmp_path):
    segs = SegmentList(((0.1234, 0.5), (0.75, 1.0)), 1.2)
    p = tmp_path / "s.seg"
    write_segments(segs, p)
    assert p.read_text() == "0.123 0.500\n0.750 1.000\n"
    got = read_labels(p, 10, 1.2)
    assert np.array_equal(got.labels, segments_to_frames(segs.rounded(3), 10, 1.2).labels)


def test_frame_label_file_round_trip(tmp_path, rng):
    labels = _labels(rng.integers(0, 2, 40))
    p = tmp_path / "l.lab"
    write_frame_labels(labels, p)
    assert np.array_equal(read_labels(p, 10).labels, labels.labels)


def test_manifest_relative_paths(tmp_path):
    (tmp_path / "m.tsv").write_text("# comment\na b.wav\tb.lab\t5dB\n\n")
    rows = read_manifest(tmp_path / "m.tsv")
    assert rows == [(str(tmp_path / "a b.wav"), str(tmp_path / "b.lab"), "5dB")]


def test_manifest_bad_row(tmp_path):
    (tmp_path / "m.tsv").write_text("a.wav\tb.lab\n")
    with pytest.raises(ValueError, match=r":1:"):
        read_manifest(tmp_path / "m.tsv")


# --- synthesis -----------------------------------------------------------------------------------

def test_synth_no_bursts_is_noise():
    buf, labels = synthesize(SynthSpec((), 120.0, 0.0, "white", 1.0, seed=1))
    assert not np.any(labels.labels)
    assert np.std(buf.samples) > 0
    speech, noise, _ = synthesize_parts(SynthSpec((), 120.0, 0.0, "white", 1.0, seed=1))
    assert not np.any(speech)


@pytest.mark.parametrize("kind", ["white", "pink", "babble"])
@pytest.mark.parametrize("snr", [0.0, -5.0, 20.0])
def test_synth_realized_snr(kind, snr):
    spec = SynthSpec(((0.2, 0.8), (1.1, 1.6)), 150.0, snr, kind, 2.0, seed=7)
    speech, noise, mask = synthesize_parts(spec)
    realized = 10 * math.log10(np.mean(speech[mask] ** 2) / np.mean(noise ** 2))
    assert abs(realized - snr) <= 0.1


def test_synth_parts_sum_to_signal():
    spec = SynthSpec(((0.2, 0.8),), 150.0, 5.0, "white", 1.0, seed=7)
    speech, noise, _ = synthesize_parts(spec)
    buf, _ = synthesize(spec)
    assert np.array_equal(buf.samples, speech + noise)
    assert np.max(np.abs(buf.samples)) == pytest.approx(0.5)


def test_synth_deterministic():
    spec = SynthSpec(((0.2, 0.8),), 150.0, 5.0, "babble", 1.0, seed=11)
    a, la = synthesize(spec)
    b, lb = synthesize(spec)
    assert np.array_equal(a.samples, b.samples) and np.array_equal(la.labels, lb.labels)


def test_synth_labels_follow_layout():
    _, labels = synthesize(SynthSpec(((0.1, 0.3),), 120.0, None, duration_s=0.5))
    assert labels.labels.tolist() == [0] * 10 + [1] * 20 + [0] * 20


def test_synth_speech_shared_across_snrs():
    lay = ((0.2, 0.8),)
    s1, _, _ = synthesize_parts(SynthSpec(lay, 130.0, 20.0, seed=3, duration_s=1.0))
    s2, _, _ = synthesize_parts(SynthSpec(lay, 130.0, 0.0, seed=3, duration_s=1.0))
    # same waveform up to the final peak gain
    assert np.allclose(s1 / np.max(np.abs(s1)), s2 / np.max(np.abs(s2)), atol=1e-12)


@pytest.mark.parametrize("kwargs", [
    dict(burst_layout=((0.5, 0.4),)),
    dict(burst_layout=((0.1, 0.5), (0.4, 0.6))),
    dict(burst_layout=((0.1, 3.0),)),
    dict(burst_layout=(), noise_kind="brown"),
    dict(burst_layout=(), f0_hz=5000.0),
    dict(burst_layout=(), snr_db=float("inf")),
])
def test_synth_spec_validation(kwargs):
    with pytest.raises(InvalidSynthSpecError):
        SynthSpec(**kwargs)


def test_random_layout_is_valid(rng):
    for _ in range(50):
        lay = random_layout(rng, 3.0)
        SynthSpec(lay, duration_s=3.0)
        assert lay
