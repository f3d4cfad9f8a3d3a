"""Finite-difference verification of every differentiable op and model block."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import model as M
from . import tensor as T
from .loss import pixel_cross_entropy
from .tensor import Tensor, gradcheck

OP_TOL = 1e-6
BLOCK_TOL = 1e-5
MODEL_TOL = 1e-4
H = 1e-5


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.error < self.tol


def _leaf(rng, *shape, low=None):
    data = rng.normal(size=shape) if low is None else rng.uniform(low, low + 1.0, size=shape)
    return Tensor(data, requires_grad=True)


def _proj(rng, out: Tensor) -> Tensor:
    # fixed random projection turns any tensor into a scalar with a generic gradient
    return Tensor(rng.normal(size=out.shape))


def _scalarise(f: Callable[[], Tensor], rng) -> Callable[[], Tensor]:
    w = _proj(rng, f())
    return lambda: T.sum(T.mul(f(), w))


def op_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    def check(name, f, inputs):
        out.append(CheckResult(name, gradcheck(_scalarise(f, rng), inputs, H), OP_TOL))

    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    check("matmul", lambda: T.matmul(a, b), [a, b])
    ba, bb = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 5)
    check("matmul_batched", lambda: T.matmul(ba, bb), [ba, bb])
    x, w, bias = _leaf(rng, 2, 5, 5), _leaf(rng, 3, 2, 3, 3), _leaf(rng, 3)
    check("conv2d_3x3_pad1", lambda: T.conv2d(x, w, bias, 1, 1), [x, w, bias])
    check("conv2d_3x3_stride2", lambda: T.conv2d(x, w, bias, 2, 0), [x, w, bias])
    xb, w1 = _leaf(rng, 2, 2, 5, 5), _leaf(rng, 3, 2, 1, 1)
    check("conv2d_1x1_batched", lambda: T.conv2d(xb, w1, bias, 1, 0), [xb, w1, bias])
    check("conv2d_1x1_stride2", lambda: T.conv2d(xb, w1, None, 2, 0), [xb, w1])
    s = _leaf(rng, 4, 6)
    check("softmax_axis1", lambda: T.softmax(s, 1), [s])
    check("softmax_axis0", lambda: T.softmax(s, 0), [s])
    check("log_softmax", lambda: T.log_softmax(s, 1), [s])
    r = _leaf(rng, 2, 3, 5)
    check("bilinear_up", lambda: T.bilinear_resize(r, 7, 9), [r])
    check("bilinear_down", lambda: T.bilinear_resize(r, 2, 2), [r])
    p, q = _leaf(rng, 2, 3), _leaf(rng, 2, 3)
    pos = _leaf(rng, 2, 3, low=0.5)
    c = _leaf(rng, 2, 5)
    check("add", lambda: T.add(p, q), [p, q])
    check("sub", lambda: T.sub(p, q), [p, q])
    check("mul", lambda: T.mul(p, q), [p, q])
    check("mul_scalar", lambda: T.mul_scalar(p, -2.5), [p])
    check("relu", lambda: T.relu(p), [p])
    check("log", lambda: T.log(pos), [pos])
    check("exp", lambda: T.exp(p), [p])
    check("concat", lambda: T.concat([p, c], axis=1), [p, c])
    check("mean", lambda: T.mul_scalar(T.mean(p), 1.0), [p])
    check("reshape_transpose", lambda: T.transpose(T.reshape(p, (3, 2)), (1, 0)), [p])
    g = _leaf(rng, 1)
    check("scale_gate", lambda: T.scale(p, g), [p, g])
    fx, fw, fb = _leaf(rng, 2, 3, 2, 2), _leaf(rng, 3), _leaf(rng, 3)
    check("channel_affine", lambda: T.channel_affine(fx, fw, fb), [fx, fw, fb])
    check("composite_expression",
          lambda: T.mean(T.log(T.add(T.exp(T.relu(T.mul(p, q))), pos))), [p, q, pos])
    logits = _leaf(rng, 4, 3, 5)
    labels = rng.integers(0, 4, size=(3, 5))
    labels[0, :2] = 255
    out.append(CheckResult("pixel_cross_entropy", gradcheck(lambda: pixel_cross_entropy(logits, labels), [logits], H), OP_TOL))
    return out


def _module_params(cfg: M.ModelConfig, seed: int, gates: float = 0.5) -> M.Params:
    params = M.init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    for name, t in params.items():
        if name.endswith("gamma"):
            t.data[...] = gates
        elif name.endswith(".bias") or "norm" in name:
            t.data += rng.normal(scale=0.1, size=t.shape)
    return params


def block_checks(seed: int = 0) -> list[CheckResult]:
    """Attention and context blocks; every input and parameter fully probed."""
    rng = np.random.default_rng(seed)
    cfg = M.ModelConfig(num_classes=3, branches=2, base_channels=4, input_size=(16, 16))
    p = _module_params(cfg, seed)
    f = cfg.feature_channels
    x = _leaf(rng, 1, f, 3, 3)
    res = []

    def check(name, fn, inputs):
        res.append(CheckResult(name, gradcheck(_scalarise(fn, rng), inputs, H), BLOCK_TOL))

    # q.(k + b) shifts each softmax row by q.b, so the key bias gradient is exactly zero
    pam = [p[k] for k in p if k.startswith("pam.") and k != "pam.key.bias"]
    check("position_attention", lambda: M.position_attention(x, p), [x] + pam)
    kb = p["pam.key.bias"]
    kb.grad = None
    _scalarise(lambda: M.position_attention(x, p), rng)().backward()
    res.append(CheckResult("position_attention_key_bias", float(np.abs(kb.grad).max()), 1e-12))
    check("channel_attention", lambda: M.channel_attention(T.mul_scalar(x, 0.3), p), [x, p["cam.gamma"]])
    aux = _leaf(rng, 1, cfg.num_classes, 3, 3)
    ocr = [p[k] for k in p if k.startswith("ocr.")]
    check("ocr_context", lambda: M.ocr_context(x, aux, cfg.num_classes, p), [x, aux] + ocr)
    xs = [_leaf(rng, 1, 4, 4, 4), _leaf(rng, 1, 8, 2, 2)]
    fuse = [p[k] for k in p if k.startswith("stage2.fuse")]
    check("exchange_unit", lambda: M.exchange(p, "stage2.fuse", xs)[0], xs + fuse)
    check("exchange_unit_low", lambda: M.exchange(p, "stage2.fuse", xs)[1], xs + fuse)
    return res


MODULE_GROUPS = ("stem", "stage", "pam", "cam", "da_head", "ocr_aux", "ocr.", "final")


def model_checks(seed: int = 0, per_group: int = 5) -> list[CheckResult]:
    """End-to-end composite loss; ``per_group`` random entries per module group.

    Each entry's difference is scaled by the largest analytic gradient in its
    group. Per-entry scaling is meaningless for gradients that are zero by
    construction (the key bias under a row softmax) or that sit below the
    finite-difference noise floor at initialisation (attention projections).
    """
    from .loss import LossWeights, composite_loss

    rng = np.random.default_rng(seed)
    cfg = M.ModelConfig(num_classes=3, branches=3, base_channels=4, input_size=(16, 16))
    p = _module_params(cfg, seed)
    img = Tensor(rng.normal(size=(2, 3, 16, 16)))
    labels = rng.integers(0, cfg.num_classes, size=(2, 16, 16))

    def loss():
        return composite_loss(M.forward(img, cfg, p), labels, LossWeights())[0]

    for t in p.values():
        t.grad = None
    loss().backward()
    results = []
    for group in MODULE_GROUPS:
        names = [n for n in p if n.startswith(group)]
        scale = max(float(np.abs(p[n].grad).max()) for n in names)
        worst = 0.0
        for _ in range(per_group):
            t = p[names[int(rng.integers(len(names)))]]
            i = int(rng.integers(t.size))
            num = T.numerical_grad(loss, t, H, [i])[0]
            ana = t.grad.reshape(-1)[i]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), scale, 1e-12))
        results.append(CheckResult(f"model[{group.rstrip('.')}]", worst, MODEL_TOL))
    return results


def run_suite(seed: int = 0) -> list[CheckResult]:
    return op_checks(seed) + block_checks(seed) + model_checks(seed)
