"""AdamW with decoupled weight decay and an exponential learning-rate decay."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import NumericError, SpecError

NO_DECAY_SUFFIXES = ("meta.u", "regressor.bias", ".bias")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    lr_decay: float = 0.99
    epochs: int = 300
    batch_size: int = 8
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if not self.lr >= 0:
            raise SpecError(f"learning rate must be >= 0, got {self.lr}")
        if not 0 < self.lr_decay <= 1:
            raise SpecError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.batch_size < 1:
            raise SpecError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise SpecError(f"epochs must be >= 0, got {self.epochs}")
        if self.dtype not in ("float64", "float32"):
            raise SpecError(f"dtype must be float64 or float32, got {self.dtype!r}")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def lr_schedule(epoch, cfg):
    return cfg.lr * cfg.lr_decay ** epoch


def decays(name):
    """Weight decay skips the meta-variable, biases and batch-norm affine terms."""
    if name.endswith(NO_DECAY_SUFFIXES):
        return False
    if ".bn" in name:
        return False
    return True


class AdamW:
    def __init__(self, params, cfg):
        self.params = dict(params)
        self.cfg = cfg
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0
        self.lr = cfg.lr

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        b1, b2 = self.cfg.betas
        eps, wd = self.cfg.eps, self.cfg.weight_decay
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}")
            # arrays are replaced, never mutated, so live tapes stay valid
            w = p.data
            if wd and decays(name):
                w = w * (1.0 - lr * wd)
            m = b1 * self.m[name] + (1.0 - b1) * g
            v = b2 * self.v[name] + (1.0 - b2) * (g * g)
            self.m[name], self.v[name] = m, v
            p.data = (w - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype, copy=False)
