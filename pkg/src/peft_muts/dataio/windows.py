"""Sliding windows, three-stage few-shot sampling and min-max scaling."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..autodiff import Rng
from ..errors import ContractError, SpecError

STAGES = (("Late", 0.0, 0.3), ("Middle", 0.3, 0.7), ("Early", 0.7, 1.0))


@dataclass
class WindowSet:
    x: np.ndarray  # (n, N, T)
    y: np.ndarray  # (n,)
    unit: np.ndarray  # (n,) source unit ids
    end: np.ndarray  # (n,) index of each window's last step

    def __len__(self):
        return len(self.y)

    def subset(self, mask_or_idx):
        return WindowSet(self.x[mask_or_idx], self.y[mask_or_idx], self.unit[mask_or_idx], self.end[mask_or_idx])

    @classmethod
    def empty(cls, n_vars, T):
        return cls(np.zeros((0, n_vars, T)), np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    @classmethod
    def concat(cls, sets):
        sets = list(sets)
        return cls(np.concatenate([s.x for s in sets]), np.concatenate([s.y for s in sets]),
                   np.concatenate([s.unit for s in sets]), np.concatenate([s.end for s in sets]))


def window_count(L, T, step):
    return (L - T) // step + 1 if L >= T else 0


def window_slide(unit, labels, T, step):
    """Windows starting at 0, step, 2*step, ... that fit entirely; label taken at the last step."""
    if T < 1 or step < 1:
        raise ContractError(f"window and step must be >= 1, got T={T}, step={step}")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (unit.length,):
        raise ContractError(f"{labels.shape[0]} labels for a unit of length {unit.length}")
    n = window_count(unit.length, T, step)
    if n == 0:
        return WindowSet.empty(unit.n_vars, T)
    starts = np.arange(n) * step
    idx = starts[:, None] + np.arange(T)[None, :]
    x = np.transpose(unit.series[:, idx], (1, 0, 2))
    end = starts + T - 1
    return WindowSet(x, labels[end], np.full(n, unit.unit_id, dtype=np.int64), end.astype(np.int64))


@dataclass
class FewShotConfig:
    p1: float = 1.0
    p2: float = 1.0
    p3: float = 1.0
    seed: int = 0
    keep_health: bool = True  # health samples bypass the third stage

    def __post_init__(self):
        for k in ("p1", "p2", "p3"):
            v = getattr(self, k)
            if not 0.0 < v <= 1.0:
                raise SpecError(f"{k} must lie in (0, 1], got {v}")


def fewshot_sample(ws, cfg, return_stages=False):
    """Three-stage subset; returns ``(subset, keep_mask)``.

    1. each unit survives with probability ``p1`` (draws in ascending unit order);
    2. each distinct label value below 1 among survivors survives with ``p2``,
       taking every sample that carries it; health samples (label 1) all stay;
    3. each surviving non-health sample stays with ``p3``; health samples
       also face this draw when ``keep_health`` is off.

    ``return_stages`` adds a dict with the per-stage populations and survivors.
    """
    rng = Rng(cfg.seed)
    units = np.unique(ws.unit)
    unit_keep = units[rng.child("units").random(len(units)) < cfg.p1]
    keep = np.isin(ws.unit, unit_keep)
    health = ws.y == 1.0
    values = np.unique(ws.y[keep & ~health])
    chosen = values[rng.child("values").random(len(values)) < cfg.p2]
    keep &= health | np.isin(ws.y, chosen)
    draw = rng.child("samples").random(len(ws)) < cfg.p3
    exempt = health if cfg.keep_health else np.zeros_like(health)
    stage3_in = keep & ~exempt
    keep &= draw | exempt
    if not keep.any():
        warnings.warn("few-shot sampling kept no samples", stacklevel=2)
    if return_stages:
        stages = {"units": units, "units_kept": unit_keep, "values": values, "values_kept": chosen,
                  "stage3_trials": int(stage3_in.sum()), "stage3_kept": int((stage3_in & keep).sum())}
        return ws.subset(keep), keep, stages
    return ws.subset(keep), keep


def stage_counts(y):
    """Counts per RUL stage: Late [0,0.3), Middle [0.3,0.7), Early [0.7,1), Health == 1."""
    y = np.asarray(y)
    out = {name: int(np.sum((y >= lo) & (y < hi))) for name, lo, hi in STAGES}
    out["Health"] = int(np.sum(y == 1.0))
    out["Total"] = int(y.size)
    return out


@dataclass
class NormStats:
    min: np.ndarray  # (N,)
    max: np.ndarray  # (N,)


def minmax_fit(x):
    """Per-channel min and max over samples and time of an ``(n, N, T)`` array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] == 0:
        raise ContractError(f"cannot fit normalisation on shape {x.shape}")
    return NormStats(x.min(axis=(0, 2)), x.max(axis=(0, 2)))


def minmax_apply(stats, x):
    """``(x - min) / (max - min)``; constant channels map to 0; no clipping."""
    x = np.asarray(x, dtype=np.float64)
    span = stats.max - stats.min
    const = span == 0
    scale = np.where(const, 1.0, span)[None, :, None]
    out = (x - stats.min[None, :, None]) / scale
    out[:, const, :] = 0.0
    return out
