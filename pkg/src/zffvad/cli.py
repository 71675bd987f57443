"""Command-line entry point: ``zffvad detect|export-composite|evaluate|synth``.

Exit codes: 0 on success, 1 when some inputs failed or were skipped, 2 on
usage or configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .audio_io import AudioError, read_wav
from .config import FIELD_TYPES, ConfigError, RunConfig, load_config, parse_value
from .evaluation import (NOISE_KINDS, FileResult, LabelError, SynthSpec, aggregate,
                         random_layout, read_labels, read_manifest, score,
                         segments_to_frames, synthesize, write_frame_labels,
                         write_segments)
from .pipeline import detect, export_composite
from .zff import ZffError

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2
DEFAULT_SNRS = (20.0, 15.0, 10.0, 5.0, 0.0, -5.0)
SURFACE_COLUMNS = ("sample_index", "time_s", "r_c", "inv_entropy", "y_ds", "theta", "decision")

PROCESSING_ERRORS = (AudioError, ZffError, LabelError, OSError, ValueError)


class UsageError(Exception):
    pass


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def _map(fn, items, jobs):
    """Apply ``fn`` in order, optionally across processes."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _err(msg):
    print(f"zffvad: {msg}", file=sys.stderr)


# --- detect -------------------------------------------------------------------

def write_surface_csv(ds, mask, path):
    theta = ds.threshold_per_sample()
    rate = ds.sample_rate_hz
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SURFACE_COLUMNS)
        for i in range(len(ds)):
            w.writerow([i, f"{i / rate:.6f}", repr(float(ds.r_c[i])),
                        repr(float(ds.inv_entropy[i])), repr(float(ds.y_ds[i])),
                        repr(float(theta[i])), int(mask[i])])


def _detect_one(job):
    path, out_dir, cfg, dump = job
    from .pipeline import voiced_mask

    try:
        buf = read_wav(path)
        segs, ds = detect(buf, cfg.zff_config(), cfg.pipeline_config())
        target = out_dir or os.path.dirname(os.path.abspath(path))
        seg_path = os.path.join(target, _stem(path) + ".seg")
        write_segments(segs, seg_path)
        if dump:
            mask = voiced_mask(ds, cfg.activity_floor)
            write_surface_csv(ds, mask, os.path.join(target, _stem(path) + ".surface.csv"))
        return path, seg_path, None
    except PROCESSING_ERRORS as exc:
        return path, None, f"{type(exc).__name__}: {exc}"


def cmd_detect(args, cfg):
    _require_inputs(args.inputs)
    out_dir = args.output_dir or cfg.output_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    jobs = [(p, out_dir, cfg, args.dump_surface) for p in args.inputs]
    failures = 0
    for path, seg_path, error in _map(_detect_one, jobs, cfg.jobs):
        if error:
            failures += 1
            _err(f"{path}: {error}")
        else:
            print(seg_path)
    return _status(failures, len(jobs))


# --- export-composite --------------------------------------------------------

def _export_one(job):
    path, out_dir, cfg = job
    try:
        buf = read_wav(path)
        out = os.path.join(out_dir, os.path.basename(path))
        export_composite(buf, cfg.zff_config(), cfg.pipeline_config(), out)
        return path, out, None
    except PROCESSING_ERRORS as exc:
        return path, None, f"{type(exc).__name__}: {exc}"


def cmd_export_composite(args, cfg):
    _require_inputs(args.inputs)
    out_dir = args.output_dir or cfg.output_dir
    if not out_dir:
        raise UsageError("export-composite needs an output directory (-o)")
    os.makedirs(out_dir, exist_ok=True)
    failures = 0
    for path, out, error in _map(_export_one, [(p, out_dir, cfg) for p in args.inputs], cfg.jobs):
        if error:
            failures += 1
            _err(f"{path}: {error}")
        else:
            print(out)
    return _status(failures, len(args.inputs))


# --- evaluate ------------------------------------------------------------------

def evaluate_row(job) -> FileResult:
    """Score one manifest row, either by running detection or by reading an
    external segment file ``<external_dir>/<wav stem>.seg``."""
    (wav, lab, cond), cfg, external_dir = job
    file_id = os.path.relpath(wav) if not os.path.isabs(wav) else wav
    try:
        buf = read_wav(wav)
        duration = buf.duration_s
        if external_dir:
            hyp = read_labels(os.path.join(external_dir, _stem(wav) + ".seg"),
                              cfg.hop_ms, duration)
        else:
            segs, _ = detect(buf, cfg.zff_config(), cfg.pipeline_config())
            # same 3-decimal segments a .seg file would carry
            hyp = segments_to_frames(segs.rounded(3), cfg.hop_ms, duration)
        ref = read_labels(lab, cfg.hop_ms, duration)
        return FileResult(file_id, cond, score(hyp, ref))
    except PROCESSING_ERRORS as exc:
        return FileResult(file_id, cond, None, f"skipped: {type(exc).__name__}: {exc}")


def cmd_evaluate(args, cfg):
    try:
        rows = read_manifest(args.manifest)
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {args.manifest}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not rows:
        raise UsageError(f"manifest {args.manifest} lists no files")
    results = _map(evaluate_row, [(row, cfg, args.external_segments) for row in rows], cfg.jobs)
    for res in results:
        if res.score is None:
            _err(f"{res.file_id}: {res.note}")
    try:
        report = aggregate(results)
    except ValueError:
        _err("no file could be scored")
        return EXIT_PARTIAL
    out = args.report or os.path.join(args.output_dir or cfg.output_dir or ".", "report.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    report.write_csv(out)
    for line in report.summary_lines():
        print(line)
    return EXIT_PARTIAL if report.skipped else EXIT_OK


# --- synth -----------------------------------------------------------------------

def _snr_tag(snr):
    return "clean" if snr is None else f"{snr:g}dB"


def build_corpus_plan(n_layouts, snrs, include_clean, noise_kinds, seed,
                      duration_s=3.0, rate=8000, layouts=None, f0s=None):
    """Deterministic list of ``(file_stem, condition, SynthSpec)``."""
    rng = np.random.default_rng(seed)
    if layouts is None:
        layouts = [random_layout(rng, duration_s) for _ in range(n_layouts)]
    if f0s is None:
        f0s = [round(float(rng.uniform(90.0, 220.0)), 2) for _ in layouts]
    plan = []
    for i, (layout, f0) in enumerate(zip(layouts, f0s)):
        speech_seed = seed * 100003 + i
        if include_clean:
            spec = SynthSpec(layout, f0, None, noise_kinds[0], duration_s, speech_seed, rate)
            plan.append((f"u{i:03d}_clean", "clean", spec))
        for kind in noise_kinds:
            for snr in snrs:
                cond = _snr_tag(snr) if len(noise_kinds) == 1 else f"{kind}_{_snr_tag(snr)}"
                spec = SynthSpec(layout, f0, snr, kind, duration_s, speech_seed, rate)
                plan.append((f"u{i:03d}_{kind}_{_snr_tag(snr)}", cond, spec))
    return plan


def _load_spec_file(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    layouts = [tuple(tuple(seg) for seg in lay) for lay in data["layouts"]]
    f0s = data.get("f0_hz")
    if isinstance(f0s, (int, float)):
        f0s = [float(f0s)] * len(layouts)
    return layouts, f0s, data.get("duration_s")


def cmd_synth(args, cfg):
    from .audio_io import write_wav

    out_dir = args.output_dir or cfg.output_dir
    if not out_dir:
        raise UsageError("synth needs an output directory")
    kinds = [k.strip() for k in args.noise.split(",") if k.strip()]
    bad = [k for k in kinds if k not in NOISE_KINDS]
    if bad or not kinds:
        raise UsageError(f"unknown noise kind(s) {bad}; choose from {NOISE_KINDS}")
    if args.snr is None:
        snrs, include_clean = DEFAULT_SNRS, True
    else:
        try:
            snrs = tuple(float(v) for v in args.snr.split(",") if v.strip())
        except ValueError:
            raise UsageError(f"bad --snr list {args.snr!r}") from None
        include_clean = args.clean
    layouts = f0s = None
    duration = args.duration
    if args.spec_file:
        layouts, f0s, file_duration = _load_spec_file(args.spec_file)
        duration = file_duration or duration
    try:
        plan = build_corpus_plan(args.layouts, snrs, include_clean, kinds, args.seed,
                                 duration, args.rate, layouts, f0s)
    except ValueError as exc:
        raise UsageError(f"invalid synthesis spec: {exc}") from None

    os.makedirs(out_dir, exist_ok=True)
    manifest = os.path.join(out_dir, "manifest.tsv")
    with open(manifest, "w", encoding="utf-8", newline="\n") as mf:
        for stem, cond, spec in plan:
            buf, labels = synthesize(spec, cfg.hop_ms)
            write_wav(buf, os.path.join(out_dir, stem + ".wav"))
            write_frame_labels(labels, os.path.join(out_dir, stem + ".lab"))
            mf.write(f"{stem}.wav\t{stem}.lab\t{cond}\n")
    print(manifest)
    return EXIT_OK


# --- plumbing -------------------------------------------------------------------

def _require_inputs(paths):
    if not paths:
        raise UsageError("no input files given")
    missing = [p for p in paths if not os.path.isfile(p)]
    if missing:
        raise UsageError("input not found: " + ", ".join(missing))


def _status(failures, total):
    return EXIT_OK if failures == 0 else EXIT_PARTIAL


def _add_config_flags(parser):
    group = parser.add_argument_group("configuration (also settable via --config)")
    group.add_argument("--config", help="file of 'key = value' lines")
    for key in FIELD_TYPES:
        if key == "output_dir":  # every subcommand has its own -o
            continue
        group.add_argument("--" + key.replace("_", "-"), dest="cfg_" + key, metavar="VALUE",
                           default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="zffvad", description="Voice activity detection with zero-frequency filtering.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="write voiced segments for each input WAV")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output-dir", dest="output_dir")
    p.add_argument("--dump-surface", action="store_true",
                   help="also write <stem>.surface.csv with the per-sample decision surface")
    _add_config_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("export-composite", help="write the composite signal as WAV")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output-dir", dest="output_dir")
    _add_config_flags(p)
    p.set_defaults(func=cmd_export_composite)

    p = sub.add_parser("evaluate", help="score a manifest of wav/label/condition rows")
    p.add_argument("manifest")
    p.add_argument("-r", "--report", help="CSV report path (default <output-dir>/report.csv)")
    p.add_argument("--external-segments", metavar="DIR",
                   help="score <DIR>/<stem>.seg files instead of running detection")
    p.add_argument("-o", "--output-dir", dest="output_dir")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a labelled synthetic noisy corpus")
    p.add_argument("output_dir", nargs="?")
    p.add_argument("--layouts", type=int, default=10)
    p.add_argument("--snr", help="comma-separated SNRs in dB (default 20,15,10,5,0,-5 plus clean)")
    p.add_argument("--clean", action="store_true", help="include clean files with --snr")
    p.add_argument("--noise", default="white", help=f"comma-separated kinds from {NOISE_KINDS}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=3.0)
    p.add_argument("--rate", type=int, default=8000)
    p.add_argument("--spec-file", help="JSON with 'layouts' and optional 'f0_hz', 'duration_s'")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            cfg = load_config(args.config, cfg)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
    overrides = {}
    for key in FIELD_TYPES:
        raw = getattr(args, "cfg_" + key, None)
        if raw is not None:
            overrides[key] = parse_value(key, raw)
    return cfg.updated(**overrides)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
