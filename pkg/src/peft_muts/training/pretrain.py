"""Masked-span reconstruction pre-training for the univariate backbone.

A stand-in self-supervised objective: hide one contiguous span per series,
run the backbone on the masked series, and reconstruct the hidden values
with a throwaway linear decoder on the pooled features.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import Rng, Tensor, global_avg_pool_time, matmul, no_grad, ops, reshape
from ..backbone import backbone_forward, save_weights
from ..errors import ContractError, SpecError
from .optim import AdamW, TrainConfig, lr_schedule


@dataclass
class PretrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.99
    weight_decay: float = 0.01
    mask_ratio: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio < 1.0:
            raise SpecError(f"mask_ratio must lie in [0, 1), got {self.mask_ratio}")

    def train_config(self):
        return TrainConfig(lr=self.lr, lr_decay=self.lr_decay, weight_decay=self.weight_decay,
                           epochs=self.epochs, batch_size=self.batch_size, seed=self.seed)

    def to_dict(self):
        return asdict(self)


def span_mask(n, T, ratio, rng):
    """Boolean ``(n, T)`` mask with one contiguous span of ``round(ratio*T)`` per row."""
    m = np.zeros((n, T), dtype=bool)
    span = int(round(ratio * T))
    if span == 0:
        return m
    starts = rng.integers(0, T - span + 1, size=n)
    for i, s in enumerate(starts):
        m[i, s : s + span] = True
    return m


def reconstruction_loss(pred, target, mask):
    """``0.5 * mean`` squared error over masked positions; 0 when nothing is masked."""
    k = int(mask.sum())
    if k == 0:
        return ops.sum(pred * Tensor(np.zeros(pred.shape)))
    sel = Tensor(mask.astype(np.float64))
    r = (pred - Tensor(target)) * sel
    return ops.sum(ops.square(r)) * (0.5 / k)


def pretrain_proxy(backbone, pool, cfg=None, out_path=None):
    """Train ``backbone`` in place on a pool of ``(n, T)`` univariate series.

    Returns ``(backbone, losses)`` with the mean loss of every epoch, plus a
    leading entry holding the loss of the untrained model on epoch 0's masks.
    """
    cfg = cfg or PretrainConfig()
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim != 2 or len(pool) == 0:
        raise ContractError(f"pre-training pool must be a non-empty (n, T) array, got shape {pool.shape}")
    n, T = pool.shape
    backbone.spec.time_lengths(T)
    rng = Rng(cfg.seed)
    C = backbone.spec.out_channels
    bound = np.sqrt(1.0 / C)
    dec_w = Tensor(rng.child("decoder").uniform(-bound, bound, size=(C, T)), True, "decoder.weight")
    dec_b = Tensor(np.zeros(T), True, "decoder.bias")
    backbone.unfreeze()
    tcfg = cfg.train_config()
    params = {"backbone." + k: t for k, t in backbone.params.items()}
    params.update({"decoder.weight": dec_w, "decoder.bias": dec_b})
    opt = AdamW(params, tcfg)
    mask_rng = rng.child("mask")
    shuffle = rng.child("shuffle")

    def loss_on(idx, mask):
        x = np.where(mask, 0.0, pool[idx])
        feats = global_avg_pool_time(backbone_forward(backbone, reshape(Tensor(x), (len(idx), 1, T)))[-1])
        return reconstruction_loss(matmul(feats, dec_w) + dec_b, pool[idx], mask)

    losses = []
    for epoch in range(cfg.epochs):
        masks = span_mask(n, T, cfg.mask_ratio, mask_rng)
        if epoch == 0:
            # batch statistics, as in training, so the numbers are comparable
            with no_grad():
                before = [loss_on(np.arange(s, min(s + cfg.batch_size, n)), masks[s : s + cfg.batch_size]).item()
                          for s in range(0, n, cfg.batch_size)]
            losses.append(float(np.mean(before)))
        lr = lr_schedule(epoch, tcfg)
        order = shuffle.permutation(n)
        tot = []
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            opt.zero_grad()
            loss = loss_on(idx, masks[idx])
            loss.backward()
            opt.step(lr)
            tot.append(loss.item())
        losses.append(float(np.mean(tot)))
    backbone.freeze()
    if out_path is not None:
        save_weights(backbone, out_path)
    return backbone, losses
