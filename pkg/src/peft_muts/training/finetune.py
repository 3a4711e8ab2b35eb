"""Fine-tuning loop, evaluation and the per-epoch stability trace."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Rng, mse_loss, no_grad
from ..errors import ContractError
from .metrics import compute_metrics
from .optim import AdamW, TrainConfig, lr_schedule

TRACE_COLUMNS = ("epoch", "loss_mean", "sigma_z_norm", "lr", "seed", "arm")
PROBE_SIZE = 32


@dataclass
class StabilityTrace:
    seed: int
    arm: str = "peft"
    epochs: list = field(default_factory=list)
    loss_mean: list = field(default_factory=list)
    sigma_z_norm: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)
    probe_norms: list = field(default_factory=list)  # raw per-probe norms, one array per epoch

    def rows(self):
        for i, e in enumerate(self.epochs):
            yield {"epoch": e, "loss_mean": self.loss_mean[i], "sigma_z_norm": self.sigma_z_norm[i],
                   "lr": self.lr[i], "seed": self.seed, "arm": self.arm}

    def write_csv(self, path, append=False):
        write_trace_csv(path, [self], append=append)


def write_trace_csv(path, traces, append=False):
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        if not append:
            w.writeheader()
        for tr in traces:
            for row in tr.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != set(TRACE_COLUMNS):
        raise ContractError(f"{path}: not a trace file (columns {sorted(rows[0])})")
    return rows


def choose_probe(n_pool, seed, size=PROBE_SIZE):
    """Fixed probe indices, drawn once per run."""
    if n_pool <= size:
        return np.arange(n_pool)
    return np.sort(Rng(seed).child("probe").choice(n_pool, size=size, replace=False))


def probe_norms(model, probe_x, batch_size=64):
    was_training = model.backbone.training
    model.eval()
    out = []
    with no_grad():
        for s in range(0, len(probe_x), batch_size):
            f = model.features(probe_x[s : s + batch_size]).data
            out.append(np.sqrt(np.sum(f * f, axis=1)))
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0)


def predict(model, x, batch_size=64):
    was_training = model.backbone.training
    model.eval()
    preds = []
    with no_grad():
        for s in range(0, len(x), batch_size):
            preds.append(np.atleast_1d(model(x[s : s + batch_size]).data))
    model.train(was_training)
    return np.concatenate(preds) if preds else np.zeros(0)


def evaluate(model, x, y, batch_size=64):
    if len(x) == 0:
        raise ContractError("cannot evaluate an empty test set")
    return compute_metrics(y, predict(model, x, batch_size))


def finetune(model, x, y, cfg=None, probe_x=None, arm="peft", on_epoch=None, shuffle_seed=None):
    """Train the model's trainable tensors with AdamW.

    ``x`` is ``(n, N, T)``, ``y`` is ``(n,)``.  Mini-batches follow a seeded
    shuffle per epoch and the last partial batch is kept.  When ``probe_x``
    is given, the std of its feature norms is recorded after every epoch.
    The batch order follows ``shuffle_seed`` (default: ``cfg.seed``).
    """
    cfg = cfg or TrainConfig()
    dtype = np.dtype(cfg.dtype)
    x = np.asarray(x, dtype=dtype)
    y = np.asarray(y, dtype=dtype)
    n = len(x)
    if n == 0:
        raise ContractError("training set is empty")
    if len(y) != n:
        raise ContractError(f"{n} windows but {len(y)} labels")
    if dtype != np.float64:
        model.astype(dtype)
    shuffle = Rng(cfg.seed if shuffle_seed is None else shuffle_seed).child("shuffle")
    opt = AdamW(model.parameters(), cfg)
    trace = StabilityTrace(cfg.seed, arm)
    model.train()
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        order = shuffle.permutation(n)
        total = 0.0
        batch_losses = []
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            opt.zero_grad()
            loss = mse_loss(model(x[idx]), y[idx])
            loss.backward()
            opt.step(lr)
            val = loss.item()
            batch_losses.append(val)
            total += val * len(idx)
        trace.epochs.append(epoch)
        trace.loss_mean.append(total / n)
        trace.lr.append(lr)
        trace.batch_losses.append(batch_losses)
        if probe_x is not None and len(probe_x):
            norms = probe_norms(model, np.asarray(probe_x, dtype=dtype))
            trace.probe_norms.append(norms)
            trace.sigma_z_norm.append(float(np.std(norms)))
        else:
            trace.sigma_z_norm.append(float("nan"))
        if on_epoch is not None:
            on_epoch(epoch, trace)
    model.eval()
    return model, trace
