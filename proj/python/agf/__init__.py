"""Artist-group-factor feature learning for genre classification.

Thin wrapper over the C++ core; see ``run_stage`` for the pipeline and the
individual functions for the building blocks.
"""

from ._agf import (
    MEL_BINS,
    SAMPLE_RATE,
    SEGMENT_FRAMES,
    ConfigError,
    FormatError,
    IoError,
    NumericError,
    aggregate_segments,
    default_config,
    delta,
    enumerate_cases,
    enumerate_subsets,
    f1_score,
    kmeans_assign,
    kmeans_fit,
    lda_fit,
    log_loss,
    mel_spectrogram,
    mfcc,
    param_count,
    quantile_normalize,
    read_results,
    run_stage,
    shape_trace,
    synth,
)

__all__ = [name for name in dir() if not name.startswith("_")]
