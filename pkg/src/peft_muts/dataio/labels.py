"""RUL labels and RMS-based degradation onset detection."""

from __future__ import annotations

import warnings

import numpy as np

from ..errors import ContractError, DataError


def label_piecewise_linear(unit, knee=120):
    """``y(t) = min(1, remaining(t) / knee)`` with ``remaining = L - 1 - t``."""
    if knee <= 0:
        raise ContractError(f"knee must be positive, got {knee}")
    L = unit.length
    if knee >= L:
        warnings.warn(f"unit {unit.unit_id}: knee {knee} >= length {L}, every step is degrading", stacklevel=2)
    remaining = (L - 1 - np.arange(L)).astype(np.float64)
    return np.minimum(remaining / knee, 1.0)


def label_from_onset(unit, onset=None):
    """Linear decay from the onset (label 1) to failure (label 0)."""
    onset = unit.onset_index if onset is None else int(onset)
    L = unit.length
    if onset >= L - 1:
        y = np.ones(L)
        y[-1] = 0.0
        return y
    remaining = (L - 1 - np.arange(L)).astype(np.float64)
    return np.minimum(remaining / (L - 1 - onset), 1.0)


def window_rms(series, window):
    series = np.atleast_2d(np.asarray(series, dtype=np.float64))
    n = series.shape[1] // window
    blocks = series[:, : n * window].reshape(series.shape[0], n, window)
    return np.sqrt(np.mean(blocks**2, axis=(0, 2)))


def detect_onset_rms3sigma(unit, window=32, baseline_frac=0.1, consecutive=2, channels=None, sigma_floor=1e-12):
    """First timestep of ``consecutive`` windows whose RMS exceeds mean + 3 std of the baseline.

    The baseline is the earliest ``baseline_frac`` of non-overlapping windows;
    RMS pools the selected channels.  Returns ``L`` when no onset is found.
    """
    series = unit.series if channels is None else unit.series[list(channels)]
    rms = window_rms(series, window)
    n_base = int(baseline_frac * len(rms))
    if n_base < 3:
        raise DataError(f"unit {unit.unit_id}: only {n_base} baseline windows (need 3); "
                        f"{len(rms)} windows of {window} steps")
    base = rms[:n_base]
    thr = base.mean() + 3.0 * max(base.std(), sigma_floor)
    run = 0
    for w in range(n_base, len(rms)):
        run = run + 1 if rms[w] > thr else 0
        if run == consecutive:
            return (w - consecutive + 1) * window
    return unit.length
