"""HRNet-lite backbone, dual attention and object-context heads.

Data flow for an (N,3,H,W) batch::

    stem (two conv + 2x downsample)          -> 1/4 resolution, ``base`` ch
    stages 1..branches, each adding a branch  -> widths base * 2**i
    concat(all branches resized to 1/4)      -> F channels
    position + channel attention (summed)    -> da head
    soft object regions + pixel/region attn  -> ocr aux head, final head

All three heads are upsampled bilinearly to the input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Dict

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

Params = Dict[str, Tensor]


@dataclass
class ModelConfig:
    num_classes: int = 5
    branches: int = 3
    base_channels: int = 8
    ocr_regions: int | None = None
    attention_reduction: int = 2
    input_size: tuple[int, int] = (32, 32)

    def __post_init__(self):
        if self.ocr_regions is None:
            self.ocr_regions = self.num_classes
        self.input_size = tuple(self.input_size)
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 2 <= self.branches <= 4:
            raise ConfigError(f"branches must lie in [2, 4], got {self.branches}")
        if self.base_channels < 4:
            raise ConfigError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.ocr_regions < 2:
            raise ConfigError(f"ocr_regions must be >= 2, got {self.ocr_regions}")
        if self.ocr_regions != self.num_classes:
            # soft regions come straight from the class-supervised aux logits
            raise ConfigError(f"ocr_regions ({self.ocr_regions}) must equal num_classes ({self.num_classes})")
        if self.attention_reduction < 1 or self.feature_channels % self.attention_reduction:
            raise ConfigError(
                f"attention_reduction {self.attention_reduction} must divide {self.feature_channels} channels"
            )

    @property
    def widths(self) -> list[int]:
        return [self.base_channels * 2**i for i in range(self.branches)]

    @property
    def feature_channels(self) -> int:
        return sum(self.widths)

    @property
    def divisor(self) -> int:
        """Input sides must be multiples of this (stride of the coarsest branch)."""
        return 2 ** (self.branches + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d


@dataclass
class ForwardOutputs:
    da_logits: Tensor
    ocr_aux_logits: Tensor
    final_logits: Tensor
    extras: dict = field(default_factory=dict, repr=False)


# --------------------------------------------------------------------------- #
# parameters
# --------------------------------------------------------------------------- #
def param_layout(cfg: ModelConfig) -> dict[str, tuple[tuple[int, ...], str]]:
    """Ordered ``name -> (shape, init kind)``; iteration order fixes RNG draws."""
    lay: dict[str, tuple[tuple[int, ...], str]] = {}

    def conv(name, c_out, c_in, k, bias=False):
        lay[f"{name}.weight"] = ((c_out, c_in, k, k), "uniform")
        if bias:
            lay[f"{name}.bias"] = ((c_out,), "zeros")

    def affine(name, c):
        lay[f"{name}.weight"] = ((c,), "ones")
        lay[f"{name}.bias"] = ((c,), "zeros")

    def block(name, c):
        conv(f"{name}.conv1", c, c, 3)
        affine(f"{name}.norm1", c)
        conv(f"{name}.conv2", c, c, 3)
        affine(f"{name}.norm2", c)

    widths = cfg.widths
    b = cfg.base_channels
    conv("stem.conv1", b, 3, 3)
    affine("stem.norm1", b)
    conv("stem.conv2", b, b, 3)
    affine("stem.norm2", b)
    for s in range(1, cfg.branches + 1):
        if s > 1:
            conv(f"stage{s}.transition.conv", widths[s - 1], widths[s - 2], 3)
            affine(f"stage{s}.transition.norm", widths[s - 1])
        for i in range(s):
            block(f"stage{s}.branch{i}", widths[i])
        if s > 1:
            for j in range(s):
                for i in range(s):
                    if i != j:
                        conv(f"stage{s}.fuse.{i}to{j}", widths[j], widths[i], 1)
    f = cfg.feature_channels
    r = f // cfg.attention_reduction
    c = cfg.num_classes
    conv("pam.query", r, f, 1, bias=True)
    conv("pam.key", r, f, 1, bias=True)
    conv("pam.value", f, f, 1, bias=True)
    lay["pam.gamma"] = ((1,), "zeros")
    lay["cam.gamma"] = ((1,), "zeros")
    conv("da_head.cls", c, f, 1, bias=True)
    conv("ocr_aux.conv", f, f, 1)
    affine("ocr_aux.norm", f)
    conv("ocr_aux.cls", c, f, 1, bias=True)
    conv("ocr.pixel_proj", r, f, 1)
    lay["ocr.region_proj"] = ((f, r), "uniform")
    lay["ocr.region_value"] = ((f, f), "uniform")
    conv("ocr.out", f, 2 * f, 1)
    affine("ocr.out_norm", f)
    conv("final.cls", c, f, 1, bias=True)
    return lay


def _fan_in(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]


def init_params(cfg: ModelConfig, seed: int) -> Params:
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name, (shape, kind) in param_layout(cfg).items():
        if kind == "uniform":
            s = 1.0 / np.sqrt(_fan_in(shape))
            data = rng.uniform(-s, s, size=shape)
        elif kind == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


# --------------------------------------------------------------------------- #
# building blocks
# --------------------------------------------------------------------------- #
def _conv(p: Params, name: str, x: Tensor, pad: int = 0) -> Tensor:
    return T.conv2d(x, p[f"{name}.weight"], p.get(f"{name}.bias"), 1, pad)


def _affine(p: Params, name: str, x: Tensor) -> Tensor:
    return T.channel_affine(x, p[f"{name}.weight"], p[f"{name}.bias"])


def _down(x: Tensor) -> Tensor:
    h, w = x.shape[-2:]
    return T.bilinear_resize(x, h // 2, w // 2)


def _basic_block(p: Params, name: str, x: Tensor) -> Tensor:
    y = T.relu(_affine(p, f"{name}.norm1", _conv(p, f"{name}.conv1", x, 1)))
    y = _affine(p, f"{name}.norm2", _conv(p, f"{name}.conv2", y, 1))
    return T.relu(T.add(y, x))


def exchange(p: Params, name: str, xs: list[Tensor]) -> list[Tensor]:
    """Fuse every branch into every other: resize, 1x1 conv, sum, relu."""
    out = []
    for j, target in enumerate(xs):
        h, w = target.shape[-2:]
        acc = target
        for i, src in enumerate(xs):
            if i != j:
                acc = T.add(acc, _conv(p, f"{name}.{i}to{j}", T.bilinear_resize(src, h, w)))
        out.append(T.relu(acc))
    return out


def hrnet_lite_forward(img: Tensor, cfg: ModelConfig, p: Params) -> Tensor:
    """(N,3,H,W) -> (N,F,H/4,W/4) with F = sum of branch widths."""
    h, w = img.shape[-2:]
    if h % cfg.divisor or w % cfg.divisor:
        raise ConfigError(f"input {h}x{w} is not divisible by {cfg.divisor} for {cfg.branches} branches")
    x = _down(T.relu(_affine(p, "stem.norm1", _conv(p, "stem.conv1", img, 1))))
    x = _down(T.relu(_affine(p, "stem.norm2", _conv(p, "stem.conv2", x, 1))))
    xs = [x]
    for s in range(1, cfg.branches + 1):
        if s > 1:
            t = T.relu(_affine(p, f"stage{s}.transition.norm", _conv(p, f"stage{s}.transition.conv", xs[-1], 1)))
            xs.append(_down(t))
        xs = [_basic_block(p, f"stage{s}.branch{i}", xi) for i, xi in enumerate(xs)]
        if s > 1:
            xs = exchange(p, f"stage{s}.fuse", xs)
    h4, w4 = xs[0].shape[-2:]
    return T.concat([xs[0]] + [T.bilinear_resize(xi, h4, w4) for xi in xs[1:]], axis=1)


def _flatten(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return T.reshape(x, (n, c, h * w))


def position_attention(x: Tensor, p: Params, prefix: str = "pam", return_attention: bool = False):
    """Pixel-to-pixel attention gated by a learned scalar (identity at gate 0)."""
    n, f, h, w = x.shape
    q = _flatten(_conv(p, f"{prefix}.query", x))  # n, f/r, hw
    k = _flatten(_conv(p, f"{prefix}.key", x))
    v = _flatten(_conv(p, f"{prefix}.value", x))  # n, f, hw
    attn = T.softmax(T.matmul(T.swap_last(q), k), axis=-1)  # n, hw, hw
    ctx = T.reshape(T.matmul(v, T.swap_last(attn)), (n, f, h, w))
    out = T.add(T.scale(ctx, p[f"{prefix}.gamma"]), x)
    return (out, attn) if return_attention else out


def channel_attention(x: Tensor, p: Params, prefix: str = "cam", return_attention: bool = False):
    """Channel-to-channel attention from the feature Gram matrix."""
    n, f, h, w = x.shape
    flat = _flatten(x)
    attn = T.softmax(T.matmul(flat, T.swap_last(flat)), axis=-1)  # n, f, f
    ctx = T.reshape(T.matmul(attn, flat), (n, f, h, w))
    out = T.add(T.scale(ctx, p[f"{prefix}.gamma"]), x)
    return (out, attn) if return_attention else out


def dual_attention_head(x: Tensor, cfg: ModelConfig, p: Params) -> tuple[Tensor, Tensor]:
    """Returns fused features and low-resolution dual-attention logits."""
    feats = T.add(position_attention(x, p), channel_attention(x, p))
    return feats, _conv(p, "da_head.cls", feats)


def ocr_aux_head(feats: Tensor, p: Params) -> Tensor:
    y = T.relu(_affine(p, "ocr_aux.norm", _conv(p, "ocr_aux.conv", feats)))
    return _conv(p, "ocr_aux.cls", y)


def ocr_context(feats: Tensor, aux_logits: Tensor, k_regions: int, p: Params, return_maps: bool = False):
    """Augment each pixel with a similarity-weighted mix of soft region features."""
    n, f, h, w = feats.shape
    if aux_logits.shape != (n, k_regions, h, w):
        raise ShapeError(f"ocr_context: aux logits {aux_logits.shape} do not give {k_regions} regions on {h}x{w}")
    r = p["ocr.region_proj"].shape[1]
    x = _flatten(feats)  # n, f, hw
    regions = T.softmax(_flatten(aux_logits), axis=-1)  # n, k, hw
    region_feats = T.matmul(regions, T.swap_last(x))  # n, k, f
    flat_regions = T.reshape(region_feats, (n * k_regions, f))
    key = T.reshape(T.matmul(flat_regions, p["ocr.region_proj"]), (n, k_regions, r))
    value = T.reshape(T.matmul(flat_regions, p["ocr.region_value"]), (n, k_regions, f))
    query = T.swap_last(_flatten(_conv(p, "ocr.pixel_proj", feats)))  # n, hw, r
    weights = T.softmax(T.matmul(query, T.swap_last(key)), axis=-1)  # n, hw, k
    ctx = T.reshape(T.swap_last(T.matmul(weights, value)), (n, f, h, w))
    out = T.relu(_affine(p, "ocr.out_norm", _conv(p, "ocr.out", T.concat([feats, ctx], axis=1))))
    if return_maps:
        return out, {"regions": regions, "pixel_region": weights, "context": ctx}
    return out


def forward(img: Tensor, cfg: ModelConfig, p: Params) -> ForwardOutputs:
    """Full network; accepts (3,H,W) or (N,3,H,W)."""
    single = img.ndim == 3
    if single:
        img = T.reshape(img, (1,) + img.shape)
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeError(f"forward expects (N,3,H,W) or (3,H,W) input, got {img.shape}")
    h, w = img.shape[-2:]
    x = hrnet_lite_forward(img, cfg, p)
    feats, da_low = dual_attention_head(x, cfg, p)
    aux_low = ocr_aux_head(feats, p)
    ctx = ocr_context(feats, aux_low, cfg.ocr_regions, p)
    final_low = _conv(p, "final.cls", ctx)

    def up(t: Tensor) -> Tensor:
        t = T.bilinear_resize(t, h, w)
        return T.reshape(t, t.shape[1:]) if single else t

    return ForwardOutputs(up(da_low), up(aux_low), up(final_low))


class SegModel:
    """Config plus named parameters; the unit that gets trained and saved."""

    def __init__(self, cfg: ModelConfig, params: Params | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        expected = param_layout(cfg)
        missing = set(expected) - set(self.params)
        if missing:
            raise ConfigError(f"parameters missing for this config: {sorted(missing)[:5]}")
        for name, (shape, _) in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def __call__(self, img: Tensor) -> ForwardOutputs:
        return forward(img, self.cfg, self.params)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

