"""Run-to-failure units: parsers for turbofan text and bearing CSVs, plus a synthetic generator."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autodiff import Rng
from ..errors import DataError, ParseError

# 0-based indices into the 21 sensor columns (sensors 2,3,4,7,8,9,11,12,13,14,15,17,20,21)
DEFAULT_SENSORS = (1, 2, 3, 6, 7, 8, 10, 11, 12, 13, 14, 16, 19, 20)
CMAPSS_COLUMNS = 26


@dataclass
class RunToFailureUnit:
    unit_id: int
    series: np.ndarray  # (N, L)
    onset_index: int = 0
    condition: str = ""

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.float64)
        if self.series.ndim != 2 or self.series.shape[0] < 1:
            raise DataError(f"unit {self.unit_id}: series must be (N >= 1, L), got {self.series.shape}")
        if not 0 <= self.onset_index <= self.length:
            raise DataError(f"unit {self.unit_id}: onset {self.onset_index} outside [0, {self.length}]")

    @property
    def n_vars(self):
        return self.series.shape[0]

    @property
    def length(self):
        return self.series.shape[1]


def parse_cmapss(path, sensors=DEFAULT_SENSORS, condition=""):
    """Units from a whitespace-separated 26-column file, ordered by unit id."""
    path = Path(path)
    sensors = [int(s) for s in sensors]
    if not sensors or min(sensors) < 0 or max(sensors) > 20:
        raise DataError(f"sensor indices must lie in 0..20, got {sensors}")
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = {}
    last_cycle = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != CMAPSS_COLUMNS:
            raise ParseError(f"expected {CMAPSS_COLUMNS} columns, found {len(parts)}", path, lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", path, lineno) from None
        unit, cycle = int(vals[0]), vals[1]
        if unit in last_cycle and cycle <= last_cycle[unit]:
            raise ParseError(f"unit {unit}: cycle {cycle:g} does not follow {last_cycle[unit]:g}", path, lineno)
        last_cycle[unit] = cycle
        rows.setdefault(unit, []).append([vals[5 + s] for s in sensors])
    if not rows:
        raise ParseError("no data rows", path)
    return [RunToFailureUnit(u, np.array(rows[u]).T, 0, condition) for u in sorted(rows)]


def _numeric_key(p):
    nums = re.findall(r"\d+", p.stem)
    return (int(nums[-1]) if nums else float("inf"), p.name)


def parse_xjtu(directory, unit_id=0, min_rows=1, condition=""):
    """One bearing from per-minute two-column CSVs, concatenated in numeric file order."""
    directory = Path(directory)
    files = sorted(directory.glob("*.csv"), key=_numeric_key)
    if not files:
        raise DataError(f"no CSV files in {directory}")
    chunks = []
    for f in files:
        block = []
        for lineno, line in enumerate(f.read_text().splitlines(), 1):
            if not line.strip():
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                if lineno == 1 and not block:
                    continue  # header row
                raise ParseError("non-numeric field", f, lineno) from None
            if len(vals) != 2:
                raise ParseError(f"expected 2 columns, found {len(vals)}", f, lineno)
            block.append(vals)
        if len(block) < min_rows:
            raise ParseError(f"file has {len(block)} data rows, need at least {min_rows}", f)
        chunks.append(np.array(block))
    series = np.concatenate(chunks, axis=0).T
    return RunToFailureUnit(unit_id, series, 0, condition)


def gen_synthetic(units=10, n_vars=3, length=(150, 250), onset_range=(0.3, 0.7), noise=0.02,
                  seed=0, slope=None):
    """Synthetic run-to-failure units.

    Each channel is a constant level plus a slow sinusoid (the baseline), a
    monotone power-law trend switched on at the onset, and Gaussian noise.
    ``length`` is an int or an inclusive ``(lo, hi)`` range; ``onset_range``
    is a fraction of the length.  ``slope`` fixes every trend amplitude
    (0 gives a stationary series); by default amplitudes are drawn per channel.
    Trend directions are a property of the channel and shared by every unit,
    as for a fleet of identical machines.
    """
    rng = Rng(seed).child("synthetic")
    sign = Rng(seed).child("fleet").choice([-1.0, 1.0], size=(n_vars, 1))
    out = []
    for u in range(units):
        L = int(length) if np.isscalar(length) else int(rng.integers(length[0], length[1] + 1))
        onset = int(np.floor(rng.uniform(*onset_range) * L))
        onset = min(max(onset, 0), L - 1)
        t = np.arange(L)
        level = rng.uniform(-0.25, 0.25, size=(n_vars, 1))
        period = rng.uniform(40.0, 80.0, size=(n_vars, 1))
        phase = rng.uniform(0.0, 2 * np.pi, size=(n_vars, 1))
        base = level + 0.05 * np.sin(2 * np.pi * t / period + phase)
        amp = rng.uniform(0.5, 2.0, size=(n_vars, 1))
        if slope is not None:
            amp = np.full((n_vars, 1), float(slope))
        expo = rng.uniform(1.0, 2.5, size=(n_vars, 1))
        prog = np.clip((t - onset) / max(L - 1 - onset, 1), 0.0, None)
        trend = sign * amp * prog**expo
        eps = rng.normal(0.0, 1.0, size=(n_vars, L)) * noise
        out.append(RunToFailureUnit(u, base + trend + eps, onset, "synthetic"))
    return out


def synthetic_pool(n, length, seed=0, noise=0.02):
    """Univariate series for pre-training: random degradation fragments of length ``length``."""
    units = gen_synthetic(units=n, n_vars=1, length=(length * 2, length * 4), noise=noise, seed=seed)
    rng = Rng(seed).child("pool")
    out = np.empty((n, length))
    for i, u in enumerate(units):
        s = int(rng.integers(0, u.length - length + 1))
        seg = u.series[0, s : s + length]
        lo, hi = seg.min(), seg.max()
        out[i] = (seg - lo) / (hi - lo) if hi > lo else 0.0
    return out
