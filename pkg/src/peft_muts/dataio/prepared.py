"""End-to-end dataset preparation and the prepared-dataset file pair (PMTS + JSON)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import checkpoint
from ..errors import DataError
from .labels import label_from_onset, label_piecewise_linear
from .windows import FewShotConfig, NormStats, WindowSet, fewshot_sample, minmax_apply, minmax_fit, stage_counts, window_slide


@dataclass
class Prepared:
    train: WindowSet
    test: WindowSet
    stats: NormStats
    provenance: dict = field(default_factory=dict)


def label_units(units, knee=None):
    """Knee-based labels when ``knee`` is given, onset-based otherwise."""
    return [label_piecewise_linear(u, knee) if knee is not None else label_from_onset(u) for u in units]


def prepare(units, window, step, fewshot, knee=None, test_units=None, source=None):
    """Label, window, sample and normalise.

    The few-shot subset is the training set.  The test set is ``test_units``
    when given, else every window of units dropped by the unit-level draw (or
    of all units if every unit survived).  Normalisation is fitted on the
    training subset only.
    """
    if not units:
        raise DataError("no units to prepare")
    labels = label_units(units, knee)
    full = WindowSet.concat([window_slide(u, y, window, step) for u, y in zip(units, labels)])
    if len(full) == 0:
        raise DataError(f"no unit is long enough for window {window}")
    train, keep = fewshot_sample(full, fewshot)
    if len(train) == 0:
        raise DataError("few-shot sampling left an empty training set")
    if test_units is not None:
        tl = label_units(test_units, knee)
        test = WindowSet.concat([window_slide(u, y, window, step) for u, y in zip(test_units, tl)])
    else:
        held = ~np.isin(full.unit, np.unique(train.unit))
        test = full.subset(held) if held.any() else full
    stats = minmax_fit(train.x)
    train = WindowSet(minmax_apply(stats, train.x), train.y, train.unit, train.end)
    test = WindowSet(minmax_apply(stats, test.x), test.y, test.unit, test.end)
    src_nh = int(np.sum(full.y < 1.0))
    kept_nh = int(np.sum(train.y < 1.0))
    prov = {
        "source": source,
        "window": window,
        "step": step,
        "knee": knee,
        "fewshot": asdict(fewshot),
        "units": len(units),
        "units_kept": int(len(np.unique(train.unit))),
        "source_counts": stage_counts(full.y),
        "train_counts": stage_counts(train.y),
        "test_counts": stage_counts(test.y),
        "nonhealth_retention_pct": 100.0 * kept_nh / src_nh if src_nh else float("nan"),
        "expected_retention_pct": 100.0 * fewshot.p1 * fewshot.p2 * fewshot.p3,
    }
    return Prepared(train, test, stats, prov)


def save_prepared(path, prep):
    """Write ``path`` (PMTS tensors) and ``path + '.json'`` (provenance)."""
    path = Path(path)
    tensors = {}
    for split, ws in (("train", prep.train), ("test", prep.test)):
        tensors[f"{split}.x"] = ws.x
        tensors[f"{split}.y"] = ws.y
        tensors[f"{split}.unit"] = ws.unit.astype(np.float64)
        tensors[f"{split}.end"] = ws.end.astype(np.float64)
    tensors["norm.min"] = prep.stats.min
    tensors["norm.max"] = prep.stats.max
    checkpoint.save(path, tensors)
    Path(str(path) + ".json").write_text(json.dumps(prep.provenance, indent=2, sort_keys=True) + "\n")


def load_prepared(path):
    path = Path(path)
    t = checkpoint.load(path)
    need = [f"{s}.{k}" for s in ("train", "test") for k in ("x", "y", "unit", "end")] + ["norm.min", "norm.max"]
    missing = [k for k in need if k not in t]
    if missing:
        raise DataError(f"{path}: not a prepared dataset (missing {', '.join(missing)})")
    sets = {s: WindowSet(t[f"{s}.x"], t[f"{s}.y"], t[f"{s}.unit"].astype(np.int64), t[f"{s}.end"].astype(np.int64))
            for s in ("train", "test")}
    side = Path(str(path) + ".json")
    prov = json.loads(side.read_text()) if side.exists() else {}
    return Prepared(sets["train"], sets["test"], NormStats(t["norm.min"], t["norm.max"]), prov)
