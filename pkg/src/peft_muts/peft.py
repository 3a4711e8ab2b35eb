"""Low-rank tuning adapters, meta-variable fusion and the RUL regressor.

Per backbone block ``k`` the data-variable rows are updated as::

    z' = block_k(z) + SiLU(Align(z A_k B_k))

and the meta-variable row as::

    m' = block_k(m) + SiLU(Align(MeanPool_vars(sigmoid(v W_k) * v) B_k)),
    v  = [m; z] A_k

with ``A_k B_k`` acting along the channel axis at every time step and
``Align`` a bias-free grouped conv (kernel 3) present only where the block
changes width or length.  ``B_k``, the meta-variable ``u`` and the default
regressor all start at zero, so a fresh model reproduces the frozen backbone
exactly and predicts 0.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint
from .autodiff import (
    Rng, Tensor, as_tensor, concat, conv1d, global_avg_pool_time, matmul, ops, reshape, sigmoid,
    silu, swapaxes,
)
from .backbone import BackboneSpec, build_backbone, state_from_arrays
from .errors import AlignmentError, ContractError, DimensionError, SpecError

TABLE2_RANKS = (128, 32, 32, 4, 4, 2, 2, 1)


@dataclass(frozen=True)
class PeftLayerSpec:
    index: int
    d_in: int
    rank: int
    align_out: int | None = None
    align_stride: int = 1
    align_kernel: int = 3

    @property
    def d_out(self):
        return self.align_out if self.align_out is not None else self.d_in


def default_ranks(spec):
    if spec.channel_schedule == list(BackboneSpec.default().channel_schedule):
        return TABLE2_RANKS
    # shallow layers get the larger projection
    d0 = spec.blocks[0].in_channels
    return tuple(max(1, d0 >> k) for k in range(len(spec.blocks)))


def layer_specs(spec, ranks=None):
    ranks = tuple(default_ranks(spec) if ranks is None else ranks)
    if len(ranks) != len(spec.blocks):
        raise SpecError(f"{len(ranks)} ranks for {len(spec.blocks)} backbone blocks")
    out = []
    for k, (b, r) in enumerate(zip(spec.blocks, ranks)):
        if r < 1:
            raise SpecError(f"rank for layer {k} must be >= 1, got {r}")
        if b.has_projection:
            if b.out_channels % b.in_channels:
                raise SpecError(f"block {k}: alignment conv needs {b.out_channels} divisible by {b.in_channels}")
            out.append(PeftLayerSpec(k, b.in_channels, int(r), b.out_channels, b.stride))
        else:
            out.append(PeftLayerSpec(k, b.in_channels, int(r)))
    return out


def _uniform_fan_in(rng, shape, fan_in):
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class PeftLayerState:
    def __init__(self, spec, A, B, W, align=None):
        self.spec = spec
        self.A, self.B, self.W, self.align = A, B, W, align

    @classmethod
    def build(cls, spec, rng):
        k = spec.index
        A = Tensor(_uniform_fan_in(rng, (spec.d_in, spec.rank), spec.d_in), True, f"peft.{k}.A")
        B = Tensor(np.zeros((spec.rank, spec.d_in)), True, f"peft.{k}.B")
        W = Tensor(_uniform_fan_in(rng, (spec.rank, spec.rank), spec.rank), True, f"peft.{k}.W")
        align = None
        if spec.align_out is not None:
            shape = (spec.align_out, 1, spec.align_kernel)
            align = Tensor(_uniform_fan_in(rng, shape, spec.align_kernel), True, f"peft.{k}.align")
        return cls(spec, A, B, W, align)

    def tensors(self):
        out = {"A": self.A, "B": self.B, "W": self.W}
        if self.align is not None:
            out["align"] = self.align
        return out

    def num_parameters(self):
        return int(sum(t.size for t in self.tensors().values()))

    def apply_align(self, x):
        if self.align is None:
            return x
        s = self.spec
        return conv1d(x, self.align, s.align_stride, s.align_kernel // 2, groups=s.d_in)


def itn_side(layer, z):
    """Tuning side path ``SiLU(Align(z A B))`` for ``(S, d_k, T)`` rows."""
    if z.shape[1] != layer.spec.d_in:
        raise DimensionError(f"layer {layer.spec.index} expects {layer.spec.d_in} channels, got {z.shape[1]}")
    low = swapaxes(matmul(swapaxes(z, 1, 2), layer.A), 1, 2)
    return _lift(layer, low)


def _lift(layer, low):
    full = swapaxes(matmul(swapaxes(low, 1, 2), layer.B), 1, 2)
    return silu(layer.apply_align(full))


def gate(v, W):
    """Self-gating filter ``sigmoid(v W) * v``."""
    return sigmoid(matmul(v, W)) * v


def fusion_side(layer, z, n_rows):
    """Fused meta-variable side path.

    ``z`` is ``(batch * n_rows, d_k, T)`` with the meta row first in every
    group of ``n_rows``.  Returns ``(batch, d_out, T_out)``.
    """
    S, d, T = z.shape
    if n_rows < 2 or S % n_rows:
        raise ContractError(f"fusion needs the meta row plus at least one data row per sample (rows={n_rows}, S={S})")
    batch = S // n_rows
    v = matmul(swapaxes(z, 1, 2), layer.A)  # (S, T, r)
    gated = gate(v, layer.W)
    pooled = ops.mean(reshape(gated, (batch, n_rows, T, layer.spec.rank)), axis=1)
    return _lift(layer, swapaxes(pooled, 1, 2))


def _check_aligned(layer, side, base):
    if side.shape != base.shape:
        raise AlignmentError(
            f"layer {layer.spec.index}: tuning path gives {side.shape}, backbone block gives {base.shape}"
        )


def itn_forward(z, layer, block):
    """``block(z) + SiLU(Align(z A B))`` for data-variable rows only."""
    base = block(z)
    side = itn_side(layer, z)
    _check_aligned(layer, side, base)
    return base + side


def fusion_forward(z, layer, block, n_rows):
    """Updated meta intermediate for rows grouped as ``[meta, data_1..data_N]``."""
    S, d, T = z.shape
    if n_rows < 2 or S % n_rows:
        raise ContractError("meta row missing: fusion needs groups of [meta, data...] rows")
    batch = S // n_rows
    meta = reshape(reshape(z, (batch, n_rows, d, T))[:, 0], (batch, d, T))
    base = block(meta)
    side = fusion_side(layer, z, n_rows)
    _check_aligned(layer, side, base)
    return base + side


@dataclass
class ModelConfig:
    n_vars: int
    window: int
    arm: str = "peft"  # peft | linear | full
    meta_variable: bool = True
    zero_init: bool = True
    ranks: tuple | None = None
    backbone: dict = field(default_factory=lambda: BackboneSpec.default().to_dict())

    def __post_init__(self):
        if self.arm not in ("peft", "linear", "full"):
            raise SpecError(f"unknown arm {self.arm!r}")
        if self.arm != "peft":
            self.meta_variable = False
        if self.ranks is not None:
            self.ranks = tuple(int(r) for r in self.ranks)

    @property
    def backbone_spec(self):
        return BackboneSpec.from_dict(self.backbone)

    @property
    def adapters(self):
        return self.arm == "peft"

    def to_dict(self):
        d = asdict(self)
        d["ranks"] = list(self.ranks) if self.ranks is not None else None
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class PeftMutsModel:
    """Frozen (or trainable) backbone plus adapters, meta-variable and regressor."""

    def __init__(self, config, backbone, layers, u, reg_weight, reg_bias):
        self.config = config
        self.backbone = backbone
        self.layers = layers
        self.u = u
        self.reg_weight = reg_weight
        self.reg_bias = reg_bias

    # -- parameters -----------------------------------------------------
    def named_tensors(self):
        """Every model-owned tensor except backbone ones, in canonical order."""
        out = {}
        for layer in self.layers:
            for key, t in layer.tensors().items():
                out[f"peft.{layer.spec.index}.{key}"] = t
        if self.u is not None:
            out["meta.u"] = self.u
        out["regressor.weight"] = self.reg_weight
        out["regressor.bias"] = self.reg_bias
        return out

    def parameters(self):
        """Trainable tensors by name (what the optimizer updates)."""
        out = {}
        if not self.backbone.frozen:
            for k, t in self.backbone.params.items():
                out["backbone." + k] = t
        for k, t in self.named_tensors().items():
            if t.requires_grad:
                out[k] = t
        return out

    def train(self, mode=True):
        self.backbone.train(mode)
        return self

    def astype(self, dtype):
        """Cast every tensor and buffer in place (float32 training runs)."""
        dtype = np.dtype(dtype)
        for t in list(self.backbone.params.values()) + list(self.named_tensors().values()):
            t.data = t.data.astype(dtype)
        for k, b in self.backbone.buffers.items():
            self.backbone.buffers[k] = b.astype(dtype)
        return self

    def eval(self):
        return self.train(False)

    # -- forward --------------------------------------------------------
    def _streams(self, x):
        x = as_tensor(x)
        if x.ndim == 2:
            x = reshape(x, (1,) + x.shape)
        if x.ndim != 3:
            raise DimensionError(f"model input must be (batch, N, T), got {x.shape}")
        batch, n, T = x.shape
        if n == 0:
            raise ContractError("model needs at least one data variable")
        if n != self.config.n_vars or T != self.config.window:
            raise DimensionError(f"model built for N={self.config.n_vars}, T={self.config.window}; got N={n}, T={T}")
        lo, hi = float(x.data.min()), float(x.data.max())
        if lo < -1.0 or hi > 2.0:
            warnings.warn(f"input range [{lo:.3g}, {hi:.3g}] looks unnormalised", stacklevel=3)
        if self.config.meta_variable:
            u = ops.broadcast_to(reshape(self.u, (1, 1, T)), (batch, 1, T))
            x = concat([u, x], axis=1)
        rows = x.shape[1]
        return reshape(x, (batch * rows, 1, T)), batch, rows

    def forward_taps(self, x):
        """Tap list ``z^(1..K+1)`` over all rows (meta row first when present)."""
        z, batch, rows = self._streams(x)
        z = self.backbone.embed(z)
        taps = [z]
        for k in range(len(self.backbone.spec.blocks)):
            base = self.backbone.block(k, z)
            if self.config.adapters:
                z = base + self._side(k, z, batch, rows)
            else:
                z = base
            taps.append(z)
        return taps, batch, rows

    def _side(self, k, z, batch, rows):
        layer = self.layers[k]
        S, d, T = z.shape
        if not self.config.meta_variable:
            return itn_side(layer, z)
        data = reshape(reshape(z, (batch, rows, d, T))[:, 1:], (batch * (rows - 1), d, T))
        side_data = itn_side(layer, data)
        side_meta = fusion_side(layer, z, rows)
        d_out, T_out = side_data.shape[1], side_data.shape[2]
        both = concat([reshape(side_meta, (batch, 1, d_out, T_out)),
                       reshape(side_data, (batch, rows - 1, d_out, T_out))], axis=1)
        return reshape(both, (S, d_out, T_out))

    def features(self, x):
        """Representation fed to the regressor, ``(batch, C)``."""
        taps, batch, rows = self.forward_taps(x)
        pooled = global_avg_pool_time(taps[-1])
        pooled = reshape(pooled, (batch, rows, pooled.shape[1]))
        if self.config.meta_variable:
            return reshape(pooled[:, 0], (batch, pooled.shape[2]))
        return ops.mean(pooled, axis=1)

    def predict_from_features(self, feats):
        return matmul(feats, self.reg_weight) + self.reg_bias

    def __call__(self, x):
        return self.predict_from_features(self.features(x))

    forward = __call__

    # -- persistence ----------------------------------------------------
    def state_dict(self):
        out = {"backbone." + k: v for k, v in self.backbone.state_dict().items()}
        for k, t in self.named_tensors().items():
            out[k] = t.data.copy()
        return out

    def load_state_dict(self, arrays):
        expected = {k: v.shape for k, v in self.state_dict().items()}
        checkpoint.check_shapes(arrays, expected)
        fresh = state_from_arrays(self.backbone.spec, arrays, frozen=self.backbone.frozen, prefix="backbone.")
        self.backbone.params, self.backbone.buffers = fresh.params, fresh.buffers
        if self.backbone.frozen:
            self.backbone.freeze()
        for k, t in self.named_tensors().items():
            t.data = np.array(arrays[k], dtype=t.data.dtype)
            t.grad = None
        return self

    def save(self, path):
        checkpoint.save(path, self.state_dict())


def _regressor(dim, zero_init, rng):
    if zero_init:
        return (Tensor(np.zeros(dim), True, "regressor.weight"),
                Tensor(np.zeros(()), True, "regressor.bias"))
    # bias-free Kaiming (He) uniform
    bound = np.sqrt(6.0 / dim)
    return (Tensor(rng.uniform(-bound, bound, size=dim), True, "regressor.weight"),
            Tensor(np.zeros(()), False, "regressor.bias"))


def build_model(config, backbone=None, rng=None):
    """Assemble a model; ``backbone=None`` draws a random one from ``rng``."""
    rng = rng if rng is not None else Rng(0)
    spec = config.backbone_spec
    if backbone is None:
        backbone = build_backbone(spec, rng.child("backbone"))
    elif backbone.spec != spec:
        raise SpecError("backbone does not match the model configuration")
    spec.time_lengths(config.window)
    if config.arm == "full":
        backbone.unfreeze()
    else:
        backbone.freeze()
    layers = []
    if config.adapters:
        lrng = rng.child("peft")
        layers = [PeftLayerState.build(s, lrng) for s in layer_specs(spec, config.ranks)]
    u = Tensor(np.zeros((1, config.window)), True, "meta.u") if config.meta_variable else None
    w, b = _regressor(spec.out_channels, config.zero_init, rng.child("regressor"))
    return PeftMutsModel(config, backbone, layers, u, w, b)


def build_variant(pretrain=True, meta_variable=True, zero_init=True, *, n_vars, window,
                  pretrained=None, backbone_spec=None, ranks=None, rng=None):
    """One of the ablation variants.

    ``pretrain=False`` (or no ``pretrained`` backbone given) uses a random
    backbone; ``meta_variable=False`` averages data-variable features instead;
    ``zero_init=False`` uses a bias-free Kaiming regressor.
    """
    rng = rng if rng is not None else Rng(0)
    spec = backbone_spec or (pretrained.spec if pretrained is not None else BackboneSpec.default())
    cfg = ModelConfig(n_vars, window, "peft", meta_variable, zero_init, ranks, spec.to_dict())
    bb = pretrained.copy() if (pretrain and pretrained is not None) else None
    return build_model(cfg, bb, rng)


def count_params(model):
    backbone_total = model.backbone.num_parameters()
    adapters = sum(layer.tensors()["A"].size + layer.tensors()["B"].size + layer.tensors()["W"].size
                   for layer in model.layers)
    align = sum(layer.align.size for layer in model.layers if layer.align is not None)
    meta = model.u.size if model.u is not None else 0
    reg_w = model.reg_weight.size
    reg_b = model.reg_bias.size if model.reg_bias.requires_grad else 0
    peft = int(adapters + align + meta + reg_w + reg_b)
    return {
        "backbone_total": int(backbone_total),
        "peft_trainable": peft,
        "ratio": peft / backbone_total,
        "adapters": int(adapters),
        "align": int(align),
        "meta_variable": int(meta),
        "regressor_weights": int(reg_w),
        "regressor_bias": int(reg_b),
    }


def load_model(path, config):
    model = build_model(config)
    model.load_state_dict(checkpoint.load(path))
    return model


__all__ = [
    "ModelConfig", "PeftLayerSpec", "PeftLayerState", "PeftMutsModel", "TABLE2_RANKS",
    "build_model", "build_variant", "count_params", "default_ranks", "fusion_forward",
    "fusion_side", "gate", "itn_forward", "itn_side", "layer_specs", "load_model",
]
