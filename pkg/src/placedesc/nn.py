"""Neural-network kernels for the descriptor autoencoder.

Everything the training loop needs is implemented directly on numpy arrays:
valid (no padding) convolution and its transpose, batch normalization,
PReLU, layer normalization, mean-squared-error loss and bias-corrected
Adam. There is deliberately no ML framework underneath.

Conventions:

* Activations are rank-4 arrays in (batch, channels, rows, cols) order.
* Stored values are float32; reductions accumulate in float64. Ops preserve
  the input dtype, so gradient checks may run end to end in float64.
* Forward ops never modify their inputs. The one documented exception is
  batch norm in training mode, which updates its running statistics.
* Backward ops recompute whatever they need from the forward inputs, return
  the gradients, and additionally accumulate into the ``grad`` field of any
  ``Param`` they were given.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

__all__ = [
    "Param",
    "LayerNormConfig",
    "conv2d_forward",
    "conv2d_backward",
    "deconv2d_forward",
    "deconv2d_backward",
    "batchnorm_forward",
    "batchnorm_backward",
    "prelu_forward",
    "prelu_backward",
    "layernorm",
    "layernorm_backward",
    "mse_loss",
    "adam_step",
    "l2_normalize",
]


@dataclass
class Param:
    """A trainable tensor with its gradient and Adam moment state."""

    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    name: str = ""

    @classmethod
    def of(cls, value, name: str = "") -> "Param":
        value = np.ascontiguousarray(value)
        return cls(
            value=value,
            grad=np.zeros_like(value),
            m=np.zeros_like(value),
            v=np.zeros_like(value),
            step_count=0,
            name=name,
        )

    def zero_grad(self) -> None:
        self.grad[...] = 0


@dataclass
class LayerNormConfig:
    """How per-map normalization computes its statistics.

    ``per_sample`` normalizes every map with its own mean/variance over all
    of its elements. ``frozen_stats`` applies fixed scalar statistics
    (accumulated over a training set) instead.
    """

    epsilon: float = 1e-5
    mode: str = "per_sample"
    frozen_mean: Optional[float] = None
    frozen_var: Optional[float] = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"layernorm epsilon must be > 0, got {self.epsilon}")
        if self.mode not in ("per_sample", "frozen_stats"):
            raise ConfigError(f"unknown layernorm mode {self.mode!r}")
        if self.frozen_var is not None and self.frozen_var < 0:
            raise ConfigError(f"frozen_var must be >= 0, got {self.frozen_var}")


def check_tensor4(x, name: str = "input") -> np.ndarray:
    """Validate that ``x`` is a rank-4 (n, c, h, w) array with positive dims."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank-4 (n, c, h, w), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} dims must be strictly positive, got {x.shape}")
    return x


def _pair(v) -> tuple[int, int]:
    if np.isscalar(v):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def _f64(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Convolution (valid / no padding)
# ---------------------------------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def _conv_geometry(x, w, stride, transposed=False):
    sh, sw = _pair(stride)
    if sh < 1 or sw < 1:
        raise ShapeError(f"stride must be >= 1, got ({sh}, {sw})")
    n, c, h, wd = x.shape
    kh, kw = w.shape[2], w.shape[3]
    if transposed:
        c_in, c_out = w.shape[0], w.shape[1]
        oh, ow = (h - 1) * sh + kh, (wd - 1) * sw + kw
    else:
        c_out, c_in = w.shape[0], w.shape[1]
        if kh > h:
            raise ShapeError(f"kernel height {kh} exceeds input height {h}")
        if kw > wd:
            raise ShapeError(f"kernel width {kw} exceeds input width {wd}")
        oh, ow = conv_output_size(h, kh, sh), conv_output_size(wd, kw, sw)
    if c != c_in:
        raise ShapeError(
            f"input has {c} channels but weights expect {c_in} input channels"
        )
    return n, c_in, c_out, h, wd, kh, kw, sh, sw, oh, ow


def conv2d_forward(x, weights: Param, bias: Param, stride=(1, 1)) -> np.ndarray:
    """Valid cross-correlation of (n,c,h,w) input with (c_out,c_in,kh,kw) weights.

    Output spatial size is floor((h-kh)/sh)+1 by floor((w-kw)/sw)+1.
    """
    x = check_tensor4(x)
    w, b = weights.value, bias.value
    n, c_in, c_out, h, wd, kh, kw, sh, sw, oh, ow = _conv_geometry(x, w, stride)
    if b.shape != (c_out,):
        raise ShapeError(f"bias shape {b.shape} does not match {c_out} output channels")

    xf, wf = _f64(x), _f64(w)
    out = np.zeros((n, c_out, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            patch = xf[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw]
            out += np.einsum("nchw,oc->nohw", patch, wf[:, :, i, j], optimize=True)
    out += _f64(b)[None, :, None, None]
    return out.astype(x.dtype, copy=False)


def conv2d_backward(x, weights: Param, stride, grad_out, bias: Optional[Param] = None):
    """Analytic gradients of ``conv2d_forward``.

    Returns (grad_input, grad_weights, grad_bias) and accumulates into the
    ``grad`` fields of ``weights`` (and ``bias`` when given).
    """
    x = check_tensor4(x)
    w = weights.value
    n, c_in, c_out, h, wd, kh, kw, sh, sw, oh, ow = _conv_geometry(x, w, stride)
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (n, c_out, oh, ow):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match output "
            f"({n}, {c_out}, {oh}, {ow})"
        )

    xf, wf, go = _f64(x), _f64(w), _f64(grad_out)
    grad_b = go.sum(axis=(0, 2, 3))
    grad_w = np.zeros_like(wf)
    grad_x = np.zeros_like(xf)
    for i in range(kh):
        for j in range(kw):
            rows = slice(i, i + sh * oh, sh)
            cols = slice(j, j + sw * ow, sw)
            patch = xf[:, :, rows, cols]
            grad_w[:, :, i, j] = np.einsum("nohw,nchw->oc", go, patch, optimize=True)
            grad_x[:, :, rows, cols] += np.einsum(
                "nohw,oc->nchw", go, wf[:, :, i, j], optimize=True
            )

    grad_x = grad_x.astype(x.dtype, copy=False)
    grad_w = grad_w.astype(w.dtype, copy=False)
    grad_b = grad_b.astype(w.dtype, copy=False)
    weights.grad += grad_w
    if bias is not None:
        bias.grad += grad_b
    return grad_x, grad_w, grad_b


def deconv2d_forward(x, weights: Param, bias: Param, stride=(1, 1)) -> np.ndarray:
    """Transposed convolution: the exact adjoint of ``conv2d_forward``.

    Weights are (c_in, c_out, kh, kw); output spatial size is
    (h-1)*sh+kh by (w-1)*sw+kw.
    """
    x = check_tensor4(x)
    w, b = weights.value, bias.value
    n, c_in, c_out, h, wd, kh, kw, sh, sw, oh, ow = _conv_geometry(
        x, w, stride, transposed=True
    )
    if b.shape != (c_out,):
        raise ShapeError(f"bias shape {b.shape} does not match {c_out} output channels")

    xf, wf = _f64(x), _f64(w)
    out = np.zeros((n, c_out, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + sh * h : sh, j : j + sw * wd : sw] += np.einsum(
                "nchw,co->nohw", xf, wf[:, :, i, j], optimize=True
            )
    out += _f64(b)[None, :, None, None]
    return out.astype(x.dtype, copy=False)


def deconv2d_backward(x, weights: Param, stride, grad_out, bias: Optional[Param] = None):
    """Analytic gradients of ``deconv2d_forward``; mirrors ``conv2d_backward``."""
    x = check_tensor4(x)
    w = weights.value
    n, c_in, c_out, h, wd, kh, kw, sh, sw, oh, ow = _conv_geometry(
        x, w, stride, transposed=True
    )
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (n, c_out, oh, ow):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match output "
            f"({n}, {c_out}, {oh}, {ow})"
        )

    xf, wf, go = _f64(x), _f64(w), _f64(grad_out)
    grad_b = go.sum(axis=(0, 2, 3))
    grad_w = np.zeros_like(wf)
    grad_x = np.zeros_like(xf)
    for i in range(kh):
        for j in range(kw):
            patch = go[:, :, i : i + sh * h : sh, j : j + sw * wd : sw]
            grad_w[:, :, i, j] = np.einsum("nchw,nohw->co", xf, patch, optimize=True)
            grad_x += np.einsum("nohw,co->nchw", patch, wf[:, :, i, j], optimize=True)

    grad_x = grad_x.astype(x.dtype, copy=False)
    grad_w = grad_w.astype(w.dtype, copy=False)
    grad_b = grad_b.astype(w.dtype, copy=False)
    weights.grad += grad_w
    if bias is not None:
        bias.grad += grad_b
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


def batchnorm_forward(
    x,
    gamma: Param,
    beta: Param,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    momentum: float = 0.1,
    training: bool = False,
    eps: float = 1e-5,
) -> np.ndarray:
    """Per-channel normalization over (batch, rows, cols) with affine terms.

    Training mode uses batch statistics and updates ``running_mean`` /
    ``running_var`` in place (the running variance uses the unbiased
    estimator, the usual framework convention). Eval mode applies the
    running statistics.
    """
    x = check_tensor4(x)
    n, c, h, w = x.shape
    for arr, what in ((gamma.value, "gamma"), (beta.value, "beta"),
                      (running_mean, "running_mean"), (running_var, "running_var")):
        if arr.shape != (c,):
            raise ShapeError(f"{what} shape {arr.shape} does not match {c} channels")

    xf = _f64(x)
    if training:
        count = n * h * w
        if count < 2:
            raise ShapeError(
                "degenerate variance: training-mode batch norm needs "
                f"batch*rows*cols >= 2 per channel, got {count}"
            )
        mean = xf.mean(axis=(0, 2, 3))
        var = xf.var(axis=(0, 2, 3))
        unbiased = var * (count / (count - 1))
        running_mean[...] = ((1 - momentum) * _f64(running_mean) + momentum * mean).astype(
            running_mean.dtype
        )
        running_var[...] = ((1 - momentum) * _f64(running_var) + momentum * unbiased).astype(
            running_var.dtype
        )
    else:
        mean = _f64(running_mean)
        var = _f64(running_var)

    inv_std = 1.0 / np.sqrt(var + eps)
    scale = _f64(gamma.value) * inv_std
    shift = _f64(beta.value) - mean * scale
    out = xf * scale[None, :, None, None] + shift[None, :, None, None]
    return out.astype(x.dtype, copy=False)


def batchnorm_backward(x, gamma: Param, beta: Param, grad_out, eps: float = 1e-5):
    """Gradients of training-mode ``batchnorm_forward`` (batch statistics).

    Returns (grad_input, grad_gamma, grad_beta); accumulates into the
    ``grad`` fields of ``gamma`` and ``beta``.
    """
    x = check_tensor4(x)
    n, c, h, w = x.shape
    grad_out = np.asarray(grad_out)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")

    xf, go = _f64(x), _f64(grad_out)
    count = n * h * w
    mean = xf.mean(axis=(0, 2, 3))
    var = xf.var(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (xf - mean[None, :, None, None]) * inv_std[None, :, None, None]

    grad_beta = go.sum(axis=(0, 2, 3))
    grad_gamma = (go * x_hat).sum(axis=(0, 2, 3))
    g_scaled = _f64(gamma.value)[None, :, None, None] * inv_std[None, :, None, None]
    grad_x = g_scaled * (
        go
        - (grad_beta / count)[None, :, None, None]
        - x_hat * (grad_gamma / count)[None, :, None, None]
    )

    grad_x = grad_x.astype(x.dtype, copy=False)
    grad_gamma = grad_gamma.astype(gamma.value.dtype, copy=False)
    grad_beta = grad_beta.astype(beta.value.dtype, copy=False)
    gamma.grad += grad_gamma
    beta.grad += grad_beta
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# PReLU
# ---------------------------------------------------------------------------


def prelu_forward(x, alpha: Param) -> np.ndarray:
    """Per-channel parametric ReLU: x for x > 0, alpha_c * x otherwise."""
    x = check_tensor4(x)
    c = x.shape[1]
    a = alpha.value
    if a.shape != (c,):
        raise ShapeError(f"alpha shape {a.shape} does not match {c} channels")
    slope = a.astype(x.dtype, copy=False)[None, :, None, None]
    return np.where(x > 0, x, slope * x)


def prelu_backward(x, alpha: Param, grad_out):
    """Gradients of ``prelu_forward``; the subgradient at 0 uses the alpha branch.

    Returns (grad_input, grad_alpha); accumulates into ``alpha.grad``.
    """
    x = check_tensor4(x)
    grad_out = np.asarray(grad_out)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    c = x.shape[1]
    a = alpha.value
    if a.shape != (c,):
        raise ShapeError(f"alpha shape {a.shape} does not match {c} channels")

    xf, go = _f64(x), _f64(grad_out)
    pos = xf > 0
    grad_x = np.where(pos, go, _f64(a)[None, :, None, None] * go)
    grad_a = np.where(pos, 0.0, go * xf).sum(axis=(0, 2, 3))

    grad_x = grad_x.astype(x.dtype, copy=False)
    grad_a = grad_a.astype(a.dtype, copy=False)
    alpha.grad += grad_a
    return grad_x, grad_a


# ---------------------------------------------------------------------------
# Layer normalization
# ---------------------------------------------------------------------------


def layernorm(x, cfg: LayerNormConfig) -> np.ndarray:
    """Normalize each sample to zero mean, unit variance over all its elements.

    ``per_sample`` mode computes the statistics from the sample itself
    (population variance); ``frozen_stats`` applies the stored scalars.
    No learned affine terms.
    """
    x = check_tensor4(x)
    xf = _f64(x)
    if cfg.mode == "frozen_stats":
        if cfg.frozen_mean is None or cfg.frozen_var is None:
            raise ConfigError("frozen_stats mode requires frozen_mean and frozen_var")
        out = (xf - cfg.frozen_mean) / np.sqrt(cfg.frozen_var + cfg.epsilon)
        return out.astype(x.dtype, copy=False)

    n, c, h, w = x.shape
    if c * h * w < 2:
        raise ShapeError("per_sample layernorm needs >= 2 elements per sample")
    flat = xf.reshape(n, -1)
    mean = flat.mean(axis=1)
    var = flat.var(axis=1)
    out = (xf - mean[:, None, None, None]) / np.sqrt(var + cfg.epsilon)[
        :, None, None, None
    ]
    return out.astype(x.dtype, copy=False)


def layernorm_backward(x, cfg: LayerNormConfig, grad_out) -> np.ndarray:
    """Gradient of ``layernorm`` with respect to its input."""
    x = check_tensor4(x)
    grad_out = np.asarray(grad_out)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    xf, go = _f64(x), _f64(grad_out)

    if cfg.mode == "frozen_stats":
        if cfg.frozen_mean is None or cfg.frozen_var is None:
            raise ConfigError("frozen_stats mode requires frozen_mean and frozen_var")
        gx = go / np.sqrt(cfg.frozen_var + cfg.epsilon)
        return gx.astype(x.dtype, copy=False)

    n = x.shape[0]
    flat = xf.reshape(n, -1)
    gflat = go.reshape(n, -1)
    mean = flat.mean(axis=1, keepdims=True)
    var = flat.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + cfg.epsilon)
    y = (flat - mean) * inv_std
    gx = inv_std * (
        gflat - gflat.mean(axis=1, keepdims=True) - y * (gflat * y).mean(axis=1, keepdims=True)
    )
    return gx.reshape(x.shape).astype(x.dtype, copy=False)


# ---------------------------------------------------------------------------
# Loss and optimizer
# ---------------------------------------------------------------------------


def mse_loss(prediction, target):
    """Per-sample mean squared error averaged over the batch.

    The per-sample normalizer is the element count c*h*w. Returns
    (loss, grad_prediction) with grad = 2*(pred-target)/(c*h*w*batch).
    """
    prediction = check_tensor4(prediction, "prediction")
    target = check_tensor4(target, "target")
    if prediction.shape != target.shape:
        raise ShapeError(
            f"prediction shape {prediction.shape} != target shape {target.shape}"
        )
    n = prediction.shape[0]
    per_sample = prediction[0].size
    diff = _f64(prediction) - _f64(target)
    loss = float((diff * diff).sum() / (per_sample * n))
    grad = (2.0 / (per_sample * n)) * diff
    return loss, grad.astype(prediction.dtype, copy=False)


def adam_step(
    params: Sequence[Param],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update over ``params``; zeroes gradients after.

    Update arithmetic runs in float64 and is cast back to the parameter
    dtype, so identical state produces bit-identical results.
    """
    for p in params:
        g = _f64(p.grad)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {p.name!r}")
        t = p.step_count + 1
        m = beta1 * _f64(p.m) + (1 - beta1) * g
        v = beta2 * _f64(p.v) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        p.value[...] = (_f64(p.value) - update).astype(p.value.dtype)
        p.m[...] = m.astype(p.m.dtype)
        p.v[...] = v.astype(p.v.dtype)
        p.step_count = t
        p.zero_grad()


def l2_normalize(v) -> np.ndarray:
    """Scale a vector to unit Euclidean norm; rejects the zero vector."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise ShapeError(f"expected a rank-1 vector, got shape {v.shape}")
    norm = float(np.linalg.norm(_f64(v)))
    if norm == 0.0:
        raise NumericError("cannot normalize a zero vector (degenerate descriptor)")
    return (v / norm).astype(v.dtype, copy=False)
