"""Voice activity detection from zero-frequency filtered speech."""

__version__ = "0.1.0"

from .audio_io import FrameSpec, SampleBuffer, frames, read_wav, write_wav
from .evaluation import (EvalReport, FrameLabels, SynthSpec, aggregate, read_labels,
                         score, segments_to_frames, synthesize)
from .pipeline import (DecisionSurface, PipelineConfig, SegmentList, composite,
                       decision_surface, detect, dynamic_threshold, export_composite,
                       gradient_weight, running_mean, smooth, spectral_entropy)
from .zff import (ZffBank, ZffConfig, compute_bank, estimate_t0, integrate, trend_remove,
                  zero_frequency_filter)
