"""Univariate 1-D residual CNN backbone.

Each input variable is an independent one-channel stream; the variable axis
is folded into the batch axis, so nothing inside the backbone mixes
variables.  The default layout mirrors an 8-block ResNet-18 with channel
schedule 64-128-128-256-256-512-512-1024-1024.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint
from .autodiff import Tensor, batchnorm1d, conv1d, ops, relu
from .errors import DimensionError, SpecError
from .kernels import out_length

DEFAULT_CHANNELS = (64, 128, 128, 256, 256, 512, 512, 1024, 1024)


@dataclass(frozen=True)
class BlockSpec:
    in_channels: int
    out_channels: int
    stride: int = 1
    kernel: int = 3

    @property
    def has_projection(self):
        return self.in_channels != self.out_channels or self.stride != 1


@dataclass(frozen=True)
class BackboneSpec:
    embed_channels: int = 64
    embed_kernel: int = 7
    embed_stride: int = 2
    blocks: tuple = field(default_factory=tuple)

    @classmethod
    def from_channels(cls, channels=DEFAULT_CHANNELS, embed_kernel=7, embed_stride=2, strides=None):
        """Blocks from a channel schedule; channel-changing blocks stride by 2 unless told otherwise."""
        channels = [int(c) for c in channels]
        if len(channels) < 2:
            raise SpecError("channel schedule needs the embedding width plus at least one block")
        if strides is None:
            strides = [2 if b != a else 1 for a, b in zip(channels[:-1], channels[1:])]
        if len(strides) != len(channels) - 1:
            raise SpecError(f"{len(strides)} strides for {len(channels) - 1} blocks")
        blocks = tuple(BlockSpec(a, b, int(s)) for a, b, s in zip(channels[:-1], channels[1:], strides))
        spec = cls(channels[0], embed_kernel, embed_stride, blocks)
        spec.validate()
        return spec

    @classmethod
    def default(cls):
        return cls.from_channels(DEFAULT_CHANNELS)

    @classmethod
    def small(cls, width=8, n_blocks=4):
        """Narrow desk-scale variant with the same doubling pattern."""
        ch = [width]
        for k in range(n_blocks):
            ch.append(ch[-1] * 2 if k % 2 == 0 else ch[-1])
        return cls.from_channels(ch, embed_kernel=5, embed_stride=1)

    @property
    def embed_padding(self):
        return self.embed_kernel // 2

    @property
    def channel_schedule(self):
        return [self.embed_channels] + [b.out_channels for b in self.blocks]

    @property
    def out_channels(self):
        return self.blocks[-1].out_channels if self.blocks else self.embed_channels

    def validate(self):
        if self.embed_channels < 1 or self.embed_kernel < 1 or self.embed_stride < 1:
            raise SpecError("embedding needs positive channels, kernel and stride")
        prev = self.embed_channels
        for k, b in enumerate(self.blocks):
            if b.in_channels != prev:
                raise SpecError(f"block {k} expects {b.in_channels} input channels but receives {prev}")
            if b.out_channels < 1 or b.stride < 1 or b.kernel < 1 or b.kernel % 2 == 0:
                raise SpecError(f"block {k} has invalid geometry {b}")
            prev = b.out_channels

    def time_lengths(self, T):
        """Tap lengths for an input of length ``T``.

        Every strided stage must receive at least ``stride`` steps; otherwise
        the input is shorter than the cumulative stride reduction.
        """
        if T < max(self.embed_stride, 1) or T + 2 * self.embed_padding < self.embed_kernel:
            raise DimensionError(f"input length {T} too short for the embedding convolution")
        L = out_length(T, self.embed_kernel, self.embed_stride, self.embed_padding)
        lengths = [L]
        for k, b in enumerate(self.blocks):
            if L < b.stride:
                raise DimensionError(f"input length {T} is exhausted by stride reduction at block {k} "
                                     f"({L} steps left, stride {b.stride})")
            L = out_length(L, b.kernel, b.stride, b.kernel // 2)
            lengths.append(L)
        return lengths

    def to_dict(self):
        d = asdict(self)
        d["blocks"] = [asdict(b) for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d):
        blocks = tuple(BlockSpec(**b) for b in d["blocks"])
        spec = cls(d["embed_channels"], d["embed_kernel"], d["embed_stride"], blocks)
        spec.validate()
        return spec


def _kaiming_normal(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class BackboneState:
    """Named weights, batch-norm buffers and the frozen flag."""

    def __init__(self, spec, params, buffers, frozen=False):
        self.spec = spec
        self.params = params
        self.buffers = buffers
        self.frozen = False
        self.training = True
        if frozen:
            self.freeze()
        else:
            self.unfreeze()

    # -- freezing -------------------------------------------------------
    def freeze(self):
        for t in self.params.values():
            t.requires_grad = False
            t.grad = None
        self.frozen = True
        self.training = False
        return self

    def unfreeze(self):
        for t in self.params.values():
            t.requires_grad = True
        self.frozen = False
        self.training = True
        return self

    def train(self, mode=True):
        """Batch statistics in training mode; ignored while frozen."""
        self.training = bool(mode) and not self.frozen
        return self

    def eval(self):
        return self.train(False)

    # -- accounting -----------------------------------------------------
    def num_parameters(self):
        return int(sum(t.size for t in self.params.values()))

    def trainable_parameters(self):
        return {k: t for k, t in self.params.items() if t.requires_grad}

    def state_dict(self):
        """Weights and buffers in canonical order (arrays are copies)."""
        out = {}
        for name in _tensor_names(self.spec):
            src = self.params.get(name)
            out[name] = (src.data if src is not None else self.buffers[name]).copy()
        return out

    def copy(self):
        return state_from_arrays(self.spec, self.state_dict(), frozen=self.frozen)

    # -- forward --------------------------------------------------------
    def _bn(self, prefix, x):
        return batchnorm1d(
            x, self.params[prefix + ".weight"], self.params[prefix + ".bias"],
            self.buffers[prefix + ".running_mean"], self.buffers[prefix + ".running_var"],
            training=self.training and not self.frozen,
        )

    def embed(self, x):
        s = self.spec
        z = conv1d(x, self.params["embed.conv.weight"], s.embed_stride, s.embed_padding)
        return relu(self._bn("embed.bn", z))

    def block(self, k, z):
        b = self.spec.blocks[k]
        p = f"blocks.{k}"
        h = conv1d(z, self.params[p + ".conv1.weight"], b.stride, b.kernel // 2)
        h = relu(self._bn(p + ".bn1", h))
        h = conv1d(h, self.params[p + ".conv2.weight"], 1, b.kernel // 2)
        h = self._bn(p + ".bn2", h)
        if b.has_projection:
            sc = self._bn(p + ".shortcut.bn", conv1d(z, self.params[p + ".shortcut.conv.weight"], b.stride, 0))
        else:
            sc = z
        return relu(ops.add(h, sc))


def _tensor_shapes(spec):
    shapes = {}

    def bn(prefix, c):
        shapes[prefix + ".weight"] = (c,)
        shapes[prefix + ".bias"] = (c,)
        shapes[prefix + ".running_mean"] = (c,)
        shapes[prefix + ".running_var"] = (c,)

    shapes["embed.conv.weight"] = (spec.embed_channels, 1, spec.embed_kernel)
    bn("embed.bn", spec.embed_channels)
    for k, b in enumerate(spec.blocks):
        p = f"blocks.{k}"
        shapes[p + ".conv1.weight"] = (b.out_channels, b.in_channels, b.kernel)
        bn(p + ".bn1", b.out_channels)
        shapes[p + ".conv2.weight"] = (b.out_channels, b.out_channels, b.kernel)
        bn(p + ".bn2", b.out_channels)
        if b.has_projection:
            shapes[p + ".shortcut.conv.weight"] = (b.out_channels, b.in_channels, 1)
            bn(p + ".shortcut.bn", b.out_channels)
    return shapes


def _tensor_names(spec):
    return list(_tensor_shapes(spec))


def _is_buffer(name):
    return name.endswith(".running_mean") or name.endswith(".running_var")


def expected_shapes(spec):
    return _tensor_shapes(spec)


def state_from_arrays(spec, arrays, frozen=False, prefix=""):
    shapes = _tensor_shapes(spec)
    found = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
    checkpoint.check_shapes(found, shapes)
    params, buffers = {}, {}
    for name in shapes:
        arr = np.array(found[name], dtype=np.float64)
        if _is_buffer(name):
            buffers[name] = arr
        else:
            params[name] = Tensor(arr, name=name)
    return BackboneState(spec, params, buffers, frozen=frozen)


def build_backbone(spec, rng, dtype=np.float64):
    """Fresh backbone: fan-in scaled normal conv weights, unit/zero batch norm."""
    spec.validate()
    params, buffers = {}, {}
    for name, shape in _tensor_shapes(spec).items():
        if name.endswith("running_mean") or name.endswith(".bias"):
            arr = np.zeros(shape)
        elif name.endswith("running_var") or (".bn" in name and name.endswith(".weight")):
            arr = np.ones(shape)
        else:
            arr = _kaiming_normal(rng, shape)
        arr = arr.astype(dtype)
        if _is_buffer(name):
            buffers[name] = arr
        else:
            params[name] = Tensor(arr, name=name)
    return BackboneState(spec, params, buffers)


def backbone_forward(state, streams):
    """Run ``(S, 1, T)`` univariate streams; returns the tap list ``z^(1..K+1)``."""
    x = streams if isinstance(streams, Tensor) else Tensor(streams)
    if x.ndim == 2:
        x = ops.reshape(x, (x.shape[0], 1, x.shape[1]))
    if x.ndim != 3 or x.shape[1] != 1:
        raise DimensionError(f"backbone expects univariate streams (S, 1, T), got {x.shape}")
    state.spec.time_lengths(x.shape[2])
    taps = [state.embed(x)]
    for k in range(len(state.spec.blocks)):
        taps.append(state.block(k, taps[-1]))
    return taps


def freeze(state):
    return state.freeze()


def unfreeze(state):
    return state.unfreeze()


def save_weights(state, path, prefix=""):
    checkpoint.save(path, {prefix + k: v for k, v in state.state_dict().items()})


def load_weights(path, spec, frozen=False, prefix=""):
    return state_from_arrays(spec, checkpoint.load(path), frozen=frozen, prefix=prefix)
