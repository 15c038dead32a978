"""Attention-gated U-Net assembled from the autodiff primitives.

Encoder: ``depth`` double-conv blocks (3x3 conv + relu, twice), channel width
``base * 2^level``, each followed by 2x2 max pooling, then a double-conv
bottleneck at ``base * 2^depth``. Decoder: stride-2 transposed convolutions
back up, concatenating each skip connection after an additive attention gate,
then a double conv. Head: 1x1 conv + sigmoid, one probability channel.

The attention gate computes ``a = relu(Wx @ x_down + Wg @ g)`` where ``x`` is
the skip tensor, ``x_down`` decimates it to the gating signal's resolution
via a stride-2 1x1 conv, and ``g`` is the coarser decoder state. A single
attention channel ``alpha = sigmoid(psi @ a)`` is upsampled (nearest, 2x) and
multiplied across all skip channels. Zeroed psi parameters therefore force
``alpha = 0.5`` exactly, which the tests use as a structural invariant.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ShapeMismatchError,
    Tensor,
    concat_channels,
    conv2d,
    conv_transpose2d,
    maxpool2,
    mul,
    relu,
    sigmoid,
    upsample_nearest2,
)


class BadConfigError(ValueError):
    """Model configuration violates a structural constraint."""


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 3
    base_channels: int = 8
    in_channels: int = 1
    input_size: tuple[int, int] = (128, 128)
    attention_enabled: bool = True
    init_seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise BadConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise BadConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.in_channels != 1:
            raise BadConfigError("only single-channel input is supported")
        h, w = self.input_size
        m = 2 ** self.depth
        if h % m or w % m:
            raise BadConfigError(
                f"input size {h}x{w} must be divisible by 2^depth = {m}"
            )


@dataclass
class Model:
    """Named parameter tensors plus the architecture configuration."""

    config: ModelConfig
    params: dict[str, Tensor] = field(repr=False)

    def named_parameters(self):
        return self.params.items()

    def clone_param_data(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_param_data(self, blob: dict[str, np.ndarray]) -> None:
        if set(blob) != set(self.params):
            raise BadConfigError("parameter name set does not match this model")
        for k, v in self.params.items():
            arr = np.asarray(blob[k], dtype=np.float32)
            if arr.shape != v.data.shape:
                raise BadConfigError(f"shape mismatch for {k}: {arr.shape} vs {v.data.shape}")
            v.data = arr.copy()


def _param_rng(init_seed: int, name: str) -> np.random.Generator:
    # each parameter gets its own stream so shared layers match across
    # configurations that only differ in optional blocks (e.g. attention off)
    return np.random.default_rng(np.random.SeedSequence((init_seed, zlib.crc32(name.encode()))))


def _conv_param(params, name: str, cout: int, cin: int, k: int, seed: int):
    fan_in = cin * k * k
    std = float(np.sqrt(2.0 / fan_in))
    rng = _param_rng(seed, name + ".w")
    params[name + ".w"] = Tensor(
        rng.normal(0.0, std, (cout, cin, k, k)).astype(np.float32), requires_grad=True
    )
    params[name + ".b"] = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)


def _convt_param(params, name: str, cin: int, cout: int, k: int, seed: int):
    fan_in = cin * k * k
    std = float(np.sqrt(2.0 / fan_in))
    rng = _param_rng(seed, name + ".w")
    params[name + ".w"] = Tensor(
        rng.normal(0.0, std, (cin, cout, k, k)).astype(np.float32), requires_grad=True
    )
    params[name + ".b"] = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)


def build_unet(cfg: ModelConfig) -> Model:
    """Instantiate all parameters with He-style init (seeded, per-name streams)."""
    params: dict[str, Tensor] = {}
    base = cfg.base_channels
    seed = cfg.init_seed

    cin = cfg.in_channels
    for level in range(cfg.depth):
        c = base * 2 ** level
        _conv_param(params, f"enc{level}.conv1", c, cin, 3, seed)
        _conv_param(params, f"enc{level}.conv2", c, c, 3, seed)
        cin = c
    cb = base * 2 ** cfg.depth
    _conv_param(params, "bottleneck.conv1", cb, cin, 3, seed)
    _conv_param(params, "bottleneck.conv2", cb, cb, 3, seed)

    for level in range(cfg.depth - 1, -1, -1):
        c = base * 2 ** level
        cg = base * 2 ** (level + 1)
        _convt_param(params, f"dec{level}.up", cg, c, 2, seed)
        if cfg.attention_enabled:
            _conv_param(params, f"gate{level}.wx", c, c, 1, seed)
            _conv_param(params, f"gate{level}.wg", c, cg, 1, seed)
            _conv_param(params, f"gate{level}.psi", 1, c, 1, seed)
        _conv_param(params, f"dec{level}.conv1", c, 2 * c, 3, seed)
        _conv_param(params, f"dec{level}.conv2", c, c, 3, seed)

    _conv_param(params, "head", 1, base, 1, seed)
    return Model(config=cfg, params=params)


def attention_gate(
    x: Tensor,
    g: Tensor,
    wx: Tensor,
    bx: Tensor,
    wg: Tensor,
    bg: Tensor,
    wpsi: Tensor,
    bpsi: Tensor,
) -> Tensor:
    """Gate skip features x by a coarser signal g (spatially half of x)."""
    if x.shape[2] != 2 * g.shape[2] or x.shape[3] != 2 * g.shape[3]:
        raise ShapeMismatchError(
            f"gating signal {g.shape} must be half the skip resolution {x.shape}"
        )
    a = relu(conv2d(x, wx, bx, stride=2) + conv2d(g, wg, bg))
    alpha = sigmoid(conv2d(a, wpsi, bpsi))
    return mul(x, upsample_nearest2(alpha))


def _double_conv(x: Tensor, params, name: str) -> Tensor:
    x = relu(conv2d(x, params[f"{name}.conv1.w"], params[f"{name}.conv1.b"], pad=1))
    return relu(conv2d(x, params[f"{name}.conv2.w"], params[f"{name}.conv2.b"], pad=1))


def forward(m: Model, batch) -> Tensor:
    """Per-pixel foreground probabilities, same spatial shape as the input."""
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float32))
    if x.data.ndim != 4 or x.shape[1] != m.config.in_channels:
        raise ShapeMismatchError(f"expected (N,{m.config.in_channels},H,W), got {x.shape}")
    h, w = m.config.input_size
    if x.shape[2] != h or x.shape[3] != w:
        raise ShapeMismatchError(f"expected {h}x{w} input, got {x.shape[2]}x{x.shape[3]}")
    p = m.params

    skips = []
    cur = x
    for level in range(m.config.depth):
        cur = _double_conv(cur, p, f"enc{level}")
        skips.append(cur)
        cur = maxpool2(cur)
    cur = _double_conv(cur, p, "bottleneck")

    for level in range(m.config.depth - 1, -1, -1):
        up = conv_transpose2d(cur, p[f"dec{level}.up.w"], p[f"dec{level}.up.b"], stride=2)
        skip = skips[level]
        if m.config.attention_enabled:
            skip = attention_gate(
                skip,
                cur,
                p[f"gate{level}.wx.w"],
                p[f"gate{level}.wx.b"],
                p[f"gate{level}.wg.w"],
                p[f"gate{level}.wg.b"],
                p[f"gate{level}.psi.w"],
                p[f"gate{level}.psi.b"],
            )
        cur = concat_channels(up, skip)
        cur = _double_conv(cur, p, f"dec{level}")

    logits = conv2d(cur, p["head.w"], p["head.b"])
    return sigmoid(logits)


def count_parameters(m: Model) -> int:
    return sum(t.data.size for t in m.params.values())
