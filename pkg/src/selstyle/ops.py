"""Array-level building blocks: convolution, instance normalization,
nearest-neighbor upsampling, activations, and the Adam update.

Feature maps are (C, H, W).  Every forward has an explicit backward that
consumes the forward's cache; computation stays in the input dtype so the
same code path serves float32 training and float64 gradient audits.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "conv2d",
    "conv2d_cached",
    "conv2d_backward",
    "instance_norm",
    "instance_norm_cached",
    "instance_norm_backward",
    "upsample_nearest",
    "upsample_nearest_backward",
    "activation_fn",
    "sigmoid",
    "sigmoid_backward",
    "Adam",
]

_LN2 = float(np.log(2.0))


# ---------------------------------------------------------------------------
# convolution (odd kernels; 'same' zero padding or 'valid')
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad_h: int, pad_w: int):
    c, h, w = x.shape
    oh = (h + 2 * pad_h - kh) // stride + 1
    ow = (w + 2 * pad_w - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(
            f"input {h}x{w} too small for a {kh}x{kw} kernel with padding "
            f"({pad_h}, {pad_w})"
        )
    xp = np.pad(x, ((0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    cols = np.empty((c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(c * kh * kw, oh * ow), (oh, ow)


def _pad_amount(kh: int, kw: int, padding: str) -> tuple[int, int]:
    if padding == "same":
        return kh // 2, kw // 2
    if padding == "valid":
        return 0, 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d_cached(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1,
                  padding: str = "same"):
    """x: (C, H, W), w: (F, C, kh, kw), b: (F,) -> ((F, OH, OW), cache)."""
    f, c, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel sizes must be odd")
    if x.shape[0] != c:
        raise ValueError(f"input has {x.shape[0]} channels, kernel expects {c}")
    w = np.asarray(w, dtype=x.dtype)
    b = np.asarray(b, dtype=x.dtype)
    pad_h, pad_w = _pad_amount(kh, kw, padding)
    cols, (oh, ow) = _im2col(x, kh, kw, stride, pad_h, pad_w)
    y = (w.reshape(f, -1) @ cols + b[:, None]).reshape(f, oh, ow)
    cache = (cols, w, x.shape, stride, pad_h, pad_w)
    return y, cache


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1,
           padding: str = "same") -> np.ndarray:
    y, _ = conv2d_cached(x, w, b, stride, padding)
    return y


def conv2d_backward(dy: np.ndarray, cache):
    """Returns (dx, dw, db) for the matching conv2d_cached call."""
    cols, w, x_shape, stride, pad_h, pad_w = cache
    f, c, kh, kw = w.shape
    oh, ow = dy.shape[1], dy.shape[2]
    dy_mat = dy.reshape(f, -1)
    db = dy_mat.sum(axis=1)
    dw = (dy_mat @ cols.T).reshape(w.shape)
    dcols = (w.reshape(f, -1).T @ dy_mat).reshape(c, kh, kw, oh, ow)

    h, w_in = x_shape[1], x_shape[2]
    dxp = np.zeros((c, h + 2 * pad_h, w_in + 2 * pad_w), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, i, j]
    dx = dxp[:, pad_h:pad_h + h, pad_w:pad_w + w_in]
    return np.ascontiguousarray(dx), dw, db


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> int:
    """Spatial size after one convolution; <= 0 means the input is too small."""
    pad = kernel // 2 if padding == "same" else 0
    return (size + 2 * pad - kernel) // stride + 1


# ---------------------------------------------------------------------------
# instance normalization
# ---------------------------------------------------------------------------

def instance_norm_cached(x: np.ndarray, scale: np.ndarray, shift: np.ndarray,
                         eps: float = 1e-5):
    """Per-channel normalization over this one instance's H*W values."""
    scale = np.asarray(scale, dtype=x.dtype)
    shift = np.asarray(shift, dtype=x.dtype)
    mu = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    y = xhat * scale[:, None, None] + shift[:, None, None]
    return y, (xhat, inv_std, scale)


def instance_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray,
                  eps: float = 1e-5) -> np.ndarray:
    y, _ = instance_norm_cached(x, scale, shift, eps)
    return y


def instance_norm_backward(dy: np.ndarray, cache):
    """Returns (dx, dscale, dshift); variance is the biased 1/(H*W) estimate."""
    xhat, inv_std, scale = cache
    dshift = dy.sum(axis=(1, 2))
    dscale = (dy * xhat).sum(axis=(1, 2))
    dxhat = dy * scale[:, None, None]
    m = dxhat.mean(axis=(1, 2), keepdims=True)
    mx = (dxhat * xhat).mean(axis=(1, 2), keepdims=True)
    dx = (dxhat - m - xhat * mx) * inv_std
    return dx, dscale, dshift


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def upsample_nearest(x: np.ndarray, factor: int = 2) -> np.ndarray:
    return x.repeat(factor, axis=1).repeat(factor, axis=2)


def upsample_nearest_backward(dy: np.ndarray, factor: int = 2) -> np.ndarray:
    c, h, w = dy.shape
    return dy.reshape(c, h // factor, factor, w // factor, factor).sum(axis=(2, 4))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z):
    return (z > 0).astype(z.dtype)


def _softplus(z):
    # shifted so f(0) = 0, keeping the zero-input/zero-output property of relu
    return np.logaddexp(0.0, z) - z.dtype.type(_LN2)


def _softplus_grad(z):
    return expit(z).astype(z.dtype, copy=False)


_ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "softplus": (_softplus, _softplus_grad),
}


def activation_fn(kind: str):
    """Return (f, df) where df takes the pre-activation values.

    ``relu`` is the piecewise-linear production default; ``softplus`` is a
    smooth substitute (shifted to pass through the origin) for
    finite-difference work.
    """
    try:
        return _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(
            f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}"
        ) from None


def sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z).astype(z.dtype, copy=False)


def sigmoid_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adam over a dict of named parameter arrays, updated in place."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            p = params[name]
            g = np.asarray(g, dtype=p.dtype)
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= (self.learning_rate * (m / bias1)
                  / (np.sqrt(v / bias2) + self.eps)).astype(p.dtype, copy=False)
