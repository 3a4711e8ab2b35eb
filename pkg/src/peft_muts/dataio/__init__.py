"""Dataset ingestion, labelling, windowing and few-shot sampling."""

from .labels import detect_onset_rms3sigma, label_from_onset, label_piecewise_linear, window_rms
from .prepared import Prepared, load_prepared, prepare, save_prepared
from .units import DEFAULT_SENSORS, RunToFailureUnit, gen_synthetic, parse_cmapss, parse_xjtu, synthetic_pool
from .windows import (
    FewShotConfig, NormStats, WindowSet, fewshot_sample, minmax_apply, minmax_fit, stage_counts, window_count,
    window_slide,
)

__all__ = [
    "DEFAULT_SENSORS", "FewShotConfig", "NormStats", "Prepared", "RunToFailureUnit", "WindowSet",
    "detect_onset_rms3sigma", "fewshot_sample", "gen_synthetic", "label_from_onset", "label_piecewise_linear",
    "load_prepared", "minmax_apply", "minmax_fit", "parse_cmapss", "parse_xjtu", "prepare", "save_prepared",
    "stage_counts", "synthetic_pool", "window_count", "window_rms", "window_slide",
]
