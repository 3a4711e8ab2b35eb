"""Regression error metrics for normalised RUL predictions."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ContractError


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    mape: float  # percent, over non-zero targets only
    smape: float  # percent
    n: int
    mape_skipped: int = 0

    def to_dict(self):
        return asdict(self)


def compute_metrics(y_true, y_pred):
    """MAE, RMSE, MAPE and SMAPE.

    Zero targets are left out of MAPE and counted in ``mape_skipped``; an SMAPE
    term whose target and prediction are both zero contributes 0.
    """
    y = np.asarray(y_true, dtype=np.float64).reshape(-1)
    p = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if y.shape != p.shape:
        raise ContractError(f"{y.size} targets but {p.size} predictions")
    if y.size == 0:
        raise ContractError("cannot evaluate an empty test set")
    err = np.abs(y - p)
    nz = y != 0
    mape = float(100.0 * np.mean(err[nz] / np.abs(y[nz]))) if nz.any() else float("nan")
    denom = (np.abs(y) + np.abs(p)) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(denom == 0, 0.0, err / np.where(denom == 0, 1.0, denom))
    return MetricsReport(
        mae=float(err.mean()),
        rmse=float(np.sqrt(np.mean(err * err))),
        mape=mape,
        smape=float(100.0 * terms.mean()),
        n=int(y.size),
        mape_skipped=int((~nz).sum()),
    )
