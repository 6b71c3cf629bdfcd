"""Dense NCHW kernels with explicit forward/backward passes.

Every array handled here is a float64 ``numpy.ndarray`` of shape
``(N, C, H, W)``.  Backward functions take the forward inputs plus the
upstream gradient and return exact gradients; nothing is recorded on a tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent with an operation."""


class LabelError(ValueError):
    """Raised when a label plane holds values outside the class alphabet."""


def make_rng(seed: int) -> np.random.Generator:
    """Return the repo-wide generator: PCG64 seeded with ``seed``.

    PCG64 streams are specified bit-for-bit by numpy and do not depend on
    the platform, so a seed fully determines every draw.
    """
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class ConvSpec:
    """Kernel, bias and geometry of a (transposed) convolution.

    For ``conv2d_*`` the kernel is ``(out_c, in_c, kh, kw)``.  For
    ``deconv2d_*`` the same array is read as ``(in_c, out_c, kh, kw)``, which
    makes the transposed convolution the exact adjoint of ``conv2d_forward``
    under one spec; the bias then has ``kernel.shape[1]`` entries.
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.kernel.ndim != 4:
            raise ShapeError(f"kernel must be rank 4, got shape {self.kernel.shape}")
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"padding must be >= 0, got {self.padding}")


def _check4(x: np.ndarray, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be rank 4 (N, C, H, W), got shape {x.shape}")


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int):
    # (N, C, oh, ow, kh, kw) view into the padded input
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _col2im(cols: np.ndarray, out_h: int, out_w: int, stride: int) -> np.ndarray:
    """Scatter-add ``cols`` of shape (kh, kw, N, C, oh, ow) into an (N, C, out_h, out_w) plane."""
    kh, kw, n, c, oh, ow = cols.shape
    out = np.zeros((n, c, out_h, out_w))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + (oh - 1) * stride + 1 : stride, j : j + (ow - 1) * stride + 1 : stride] += cols[i, j]
    return out


def conv2d_forward(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Cross-correlate ``x`` with ``spec.kernel`` (zero padding) and add the bias."""
    _check4(x, "input")
    oc, ic, kh, kw = spec.kernel.shape
    n, c, h, w = x.shape
    if c != ic:
        raise ShapeError(f"input has {c} channels but kernel expects {ic}")
    if spec.bias.shape[0] != oc:
        raise ShapeError(f"bias has {spec.bias.shape[0]} entries, kernel has {oc} output channels")
    oh = conv_output_size(h, kh, spec.stride, spec.padding)
    ow = conv_output_size(w, kw, spec.stride, spec.padding)
    if oh < 1 or ow < 1:
        raise ShapeError(f"output size {oh}x{ow} from input {h}x{w}, kernel {kh}x{kw} is empty")
    win = _windows(_pad(x, spec.padding), kh, kw, spec.stride, oh, ow)
    out = np.tensordot(win, spec.kernel, axes=([1, 4, 5], [1, 2, 3]))  # (N, oh, ow, oc)
    out = out.transpose(0, 3, 1, 2)
    out += spec.bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x: np.ndarray, spec: ConvSpec, grad_out: np.ndarray):
    """Return ``(grad_input, grad_kernel, grad_bias)`` for ``conv2d_forward``."""
    _check4(grad_out, "grad_out")
    oc, ic, kh, kw = spec.kernel.shape
    n, c, h, w = x.shape
    oh = conv_output_size(h, kh, spec.stride, spec.padding)
    ow = conv_output_size(w, kw, spec.stride, spec.padding)
    if grad_out.shape != (n, oc, oh, ow):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {(n, oc, oh, ow)}")
    p = spec.padding
    win = _windows(_pad(x, p), kh, kw, spec.stride, oh, ow)
    grad_kernel = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))  # (oc, ic, kh, kw)
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    grad_input = _conv_input_grad(grad_out, spec.kernel, spec.stride, p, h, w)
    return grad_input, grad_kernel, grad_bias


def _conv_input_grad(grad_out, kernel, stride, p, h, w):
    kh, kw = kernel.shape[2:]
    cols = np.tensordot(kernel, grad_out, axes=([0], [1]))  # (ic, kh, kw, N, oh, ow)
    cols = np.ascontiguousarray(cols.transpose(1, 2, 3, 0, 4, 5))
    full = _col2im(cols, h + 2 * p, w + 2 * p, stride)
    return full[:, :, p : p + h, p : p + w] if p else full


def deconv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size - 1) * stride + k - 2 * padding


def deconv2d_forward(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Transposed convolution ("backwards strided convolution") of ``x``."""
    _check4(x, "input")
    ic, oc, kh, kw = spec.kernel.shape
    n, c, h, w = x.shape
    if c != ic:
        raise ShapeError(f"input has {c} channels but deconv kernel expects {ic}")
    if spec.bias.shape[0] != oc:
        raise ShapeError(f"bias has {spec.bias.shape[0]} entries, deconv kernel has {oc} output channels")
    p, s = spec.padding, spec.stride
    oh, ow = deconv_output_size(h, kh, s, p), deconv_output_size(w, kw, s, p)
    if oh < 1 or ow < 1:
        raise ShapeError(f"deconv output size {oh}x{ow} is not positive")
    cols = np.tensordot(spec.kernel, x, axes=([0], [1]))  # (oc, kh, kw, N, h, w)
    cols = np.ascontiguousarray(cols.transpose(1, 2, 3, 0, 4, 5))
    full = _col2im(cols, (h - 1) * s + kh, (w - 1) * s + kw, s)
    out = full[:, :, p : p + oh, p : p + ow] + spec.bias[None, :, None, None]
    return np.ascontiguousarray(out)


def deconv2d_backward(x: np.ndarray, spec: ConvSpec, grad_out: np.ndarray):
    """Return ``(grad_input, grad_kernel, grad_bias)`` for ``deconv2d_forward``."""
    _check4(grad_out, "grad_out")
    ic, oc, kh, kw = spec.kernel.shape
    n, c, h, w = x.shape
    p, s = spec.padding, spec.stride
    expected = (n, oc, deconv_output_size(h, kh, s, p), deconv_output_size(w, kw, s, p))
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")
    # The forward pass cropped p pixels off each side of the full output plane;
    # pad the cotangent back with zeros so it lines up with that plane.
    full_h, full_w = (h - 1) * s + kh, (w - 1) * s + kw
    gp = np.zeros((n, oc, full_h, full_w))
    gp[:, :, p : p + expected[2], p : p + expected[3]] = grad_out
    win = _windows(gp, kh, kw, s, h, w)  # (N, oc, h, w, kh, kw)
    grad_input = np.tensordot(win, spec.kernel, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    grad_kernel = np.tensordot(x, win, axes=([0, 2, 3], [0, 2, 3]))  # (ic, oc, kh, kw)
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(grad_input), grad_kernel, grad_bias


def maxpool_forward(x: np.ndarray, window: int, stride: int):
    """Max over ``window`` x ``window`` patches.

    Returns the pooled tensor and, per output element, the flat ``h * W + w``
    index of the winning input pixel.  Ties go to the smallest index.
    """
    _check4(x, "input")
    if window < 1 or stride < 1:
        raise ShapeError(f"window and stride must be >= 1, got {window}, {stride}")
    n, c, h, w = x.shape
    oh, ow = conv_output_size(h, window, stride, 0), conv_output_size(w, window, stride, 0)
    if oh < 1 or ow < 1:
        raise ShapeError(f"window {window} exceeds input {h}x{w}")
    win = _windows(x, window, window, stride, oh, ow).reshape(n, c, oh, ow, window * window)
    local = win.argmax(axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    rows = np.arange(oh)[:, None] * stride + local // window
    cols = np.arange(ow)[None, :] * stride + local % window
    return np.ascontiguousarray(out), rows * w + cols


def maxpool_backward(x_shape, argmax: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    n, c, h, w = x_shape
    if grad_out.shape != argmax.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != pooled shape {argmax.shape}")
    grad = np.zeros((n * c, h * w))
    flat_idx = argmax.reshape(n * c, -1)
    rows = np.repeat(np.arange(n * c), flat_idx.shape[1])
    np.add.at(grad, (rows, flat_idx.ravel()), grad_out.reshape(-1))
    return grad.reshape(x_shape)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(x > 0, grad_out, 0.0)


def dropout(x: np.ndarray, rate: float, train_mode: bool, rng: np.random.Generator | None):
    """Inverted dropout.

    Returns ``(output, scale)`` where ``scale`` is the per-element multiplier
    (``None`` when dropout is inactive); the backward pass is ``grad * scale``.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train_mode or rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    scale = keep / (1.0 - rate)
    return x * scale, scale


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Per-pixel 2-way softmax followed by the summed negative log-likelihood.

    ``labels`` is an integer plane of shape (H, W) or (N, H, W) with values in
    {0, 1}.  Returns ``(loss, grad_logits)``.
    """
    _check4(logits, "logits")
    n, c, h, w = logits.shape
    if c != 2:
        raise ShapeError(f"expected 2 score channels, got {c}")
    labels = np.asarray(labels)
    if labels.ndim == 2 and labels.shape == (h, w):
        labels = np.broadcast_to(labels, (n, h, w))
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise LabelError("labels must take values in {0, 1}")
    lab = labels.astype(np.intp)
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    picked = np.take_along_axis(log_p, lab[:, None], axis=1)
    loss = -float(picked.sum())
    grad = np.exp(log_p)
    np.put_along_axis(grad, lab[:, None], np.take_along_axis(grad, lab[:, None], axis=1) - 1.0, axis=1)
    return loss, grad


def is_decayed(name: str) -> bool:
    """Weight decay applies to kernels only; bias parameters end in ``.b``."""
    return not name.endswith(".b")


def sgd_step(params: dict, grads: dict, lr: float, weight_decay: float) -> dict:
    """In-place update ``w <- w - lr * (g + weight_decay * w)``.

    The decay term is the gradient of ``0.5 * weight_decay * ||w||^2`` and is
    skipped for biases.  Parameters without a gradient entry are left alone.
    """
    if lr < 0 or weight_decay < 0:
        raise ValueError("lr and weight_decay must be non-negative")
    if lr == 0:
        return params
    for name, g in grads.items():
        w = params[name]
        if weight_decay and is_decayed(name):
            w -= lr * (g + weight_decay * w)
        else:
            w -= lr * g
    return params
