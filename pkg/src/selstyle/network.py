"""Multi-style image transformation network.

Encoder/decoder convolutional net whose convolution weights are shared
across styles; each normalized layer additionally owns one (scale, shift)
row per style.  Selecting a style, or blending several, means convexly
mixing those rows at run time and applying the result as the instance
normalization affine.  Output passes through a sigmoid so it always lands
in [0, 1].

Shapes follow the package conventions: images are (H, W, 3) float arrays
in [0, 1], internal feature maps are (C, H, W).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import (
    activation_fn,
    conv2d_backward,
    conv2d_cached,
    instance_norm,
    instance_norm_backward,
    instance_norm_cached,
    sigmoid,
    sigmoid_backward,
    upsample_nearest,
    upsample_nearest_backward,
)

__all__ = [
    "NetworkConfig",
    "StyleNetwork",
    "init_network",
    "one_hot",
    "mix_styles",
    "cond_instance_norm",
    "forward",
    "forward_cached",
    "backward",
]


@dataclass(frozen=True)
class NetworkConfig:
    num_styles: int
    stem_width: int = 8
    down_widths: tuple[int, ...] = (16, 32)
    num_res_blocks: int = 3
    stem_kernel: int = 9
    kernel: int = 3
    activation: str = "relu"
    eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.num_styles < 1:
            raise ValueError("num_styles must be at least 1")
        if self.num_res_blocks < 0:
            raise ValueError("num_res_blocks must be non-negative")
        for k in (self.stem_kernel, self.kernel):
            if k < 1 or k % 2 == 0:
                raise ValueError("kernel sizes must be odd and positive")

    @property
    def downsample_factor(self) -> int:
        return 2 ** len(self.down_widths)


def _up_widths(config: NetworkConfig) -> tuple[int, ...]:
    if not config.down_widths:
        return ()
    return tuple(reversed((config.stem_width,) + config.down_widths[:-1]))


def _conv_specs(config: NetworkConfig):
    """(name, out_ch, in_ch, kernel, has_cin) for every conv, in order."""
    specs = [("stem", config.stem_width, 3, config.stem_kernel, True)]
    in_ch = config.stem_width
    for i, width in enumerate(config.down_widths, 1):
        specs.append((f"down{i}", width, in_ch, config.kernel, True))
        in_ch = width
    for i in range(1, config.num_res_blocks + 1):
        specs.append((f"res{i}.conv1", in_ch, in_ch, config.kernel, True))
        specs.append((f"res{i}.conv2", in_ch, in_ch, config.kernel, True))
    for i, width in enumerate(_up_widths(config), 1):
        specs.append((f"up{i}", width, in_ch, config.kernel, True))
        in_ch = width
    specs.append(("out", 3, in_ch, config.stem_kernel, False))
    return specs


@dataclass
class StyleNetwork:
    """Config plus a flat name -> array parameter dict.

    Keys: ``<layer>.w`` for conv kernels, ``out.b`` for the output bias,
    and ``cin.<layer>.scale`` / ``cin.<layer>.shift`` for the per-style
    normalization banks, each of shape (num_styles, C).
    """

    config: NetworkConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def num_styles(self) -> int:
        return self.config.num_styles

    @property
    def dtype(self):
        return self.params["stem.w"].dtype

    def astype(self, dtype) -> "StyleNetwork":
        return StyleNetwork(self.config,
                            {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "StyleNetwork":
        return StyleNetwork(self.config,
                            {k: v.copy() for k, v in self.params.items()})


def init_network(config: NetworkConfig) -> StyleNetwork:
    """Seeded He-initialized conv weights; normalization banks start as the
    identity affine (scale 1, shift 0) for every style."""
    rng = np.random.default_rng(config.seed)
    params: dict[str, np.ndarray] = {}
    for name, out_ch, in_ch, kernel, has_cin in _conv_specs(config):
        fan_in = in_ch * kernel * kernel
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                       size=(out_ch, in_ch, kernel, kernel))
        params[f"{name}.w"] = w.astype(np.float32)
        if has_cin:
            params[f"cin.{name}.scale"] = np.ones((config.num_styles, out_ch),
                                                  np.float32)
            params[f"cin.{name}.shift"] = np.zeros((config.num_styles, out_ch),
                                                   np.float32)
    params["out.b"] = np.zeros(3, np.float32)
    return StyleNetwork(config, params)


# ---------------------------------------------------------------------------
# style mixing
# ---------------------------------------------------------------------------

def one_hot(index: int, num_styles: int) -> np.ndarray:
    if not 0 <= index < num_styles:
        raise ValueError(f"style index {index} out of range for "
                         f"{num_styles} styles")
    v = np.zeros(num_styles, np.float64)
    v[index] = 1.0
    return v


def _check_weights(weights: np.ndarray, num_styles: int) -> np.ndarray:
    weights = np.asarray(weights)
    if weights.shape != (num_styles,):
        raise ValueError(f"style weights must have shape ({num_styles},), "
                         f"got {weights.shape}")
    if not np.isfinite(weights).all():
        raise ValueError("style weights must be finite")
    if (weights < 0).any():
        raise ValueError("style weights must be non-negative")
    if abs(float(weights.sum()) - 1.0) > 1e-6:
        raise ValueError(f"style weights must sum to 1, got {weights.sum()}")
    return weights


def _one_hot_index(weights: np.ndarray) -> int | None:
    hot = np.flatnonzero(weights == 1.0)
    if hot.size == 1 and np.count_nonzero(weights) == 1:
        return int(hot[0])
    return None


def mix_styles(bank: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Convex combination of the (num_styles, C) bank rows.

    A one-hot weight vector returns the selected row bit-exactly, so
    single-style use never pays mixing round-off.
    """
    bank = np.asarray(bank)
    weights = _check_weights(weights, bank.shape[0])
    k = _one_hot_index(weights)
    if k is not None:
        return bank[k].copy()
    return weights.astype(bank.dtype) @ bank


def cond_instance_norm(x: np.ndarray, scales: np.ndarray, shifts: np.ndarray,
                       weights: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Instance-normalize the (C, H, W) map and apply the style-mixed
    affine drawn from the (num_styles, C) banks."""
    return instance_norm(x, mix_styles(scales, weights),
                         mix_styles(shifts, weights), eps)


def _resolve_style(net: StyleNetwork, style) -> np.ndarray:
    if isinstance(style, (int, np.integer)):
        return one_hot(int(style), net.num_styles)
    return _check_weights(np.asarray(style), net.num_styles)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _check_divisible(net: StyleNetwork, h: int, w: int) -> None:
    factor = net.config.downsample_factor
    if h % factor or w % factor:
        raise ValueError(
            f"image size {h}x{w} is not divisible by {factor}; the network "
            f"downsamples {len(net.config.down_widths)} times, so each side "
            f"must be a multiple of {factor}"
        )


def forward(net: StyleNetwork, image: np.ndarray, style) -> np.ndarray:
    """Stylize one (H, W, 3) image; ``style`` is an index or a weight
    vector over the network's styles."""
    out, _ = forward_cached(net, image, style)
    return out


def forward_cached(net: StyleNetwork, image: np.ndarray, style):
    """Forward pass keeping every intermediate needed by :func:`backward`.

    Returns (stylized image, cache).
    """
    weights = _resolve_style(net, style)
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {image.shape}")
    _check_divisible(net, image.shape[0], image.shape[1])

    cfg = net.config
    act, act_grad = activation_fn(cfg.activation)
    p = net.params
    x = np.ascontiguousarray(image.transpose(2, 0, 1)).astype(net.dtype,
                                                              copy=False)
    tape = []

    def conv(name, x, stride=1):
        w = p[f"{name}.w"]
        b = p.get(f"{name}.b")
        if b is None:
            b = np.zeros(w.shape[0], x.dtype)
        z, cache = conv2d_cached(x, w, b, stride)
        tape.append(("conv", name, cache))
        return z

    def cin(name, z):
        scale = mix_styles(p[f"cin.{name}.scale"], weights)
        shift = mix_styles(p[f"cin.{name}.shift"], weights)
        y, cache = instance_norm_cached(z, scale, shift, cfg.eps)
        tape.append(("cin", name, cache))
        return y

    def activate(z):
        tape.append(("act", None, z))
        return act(z)

    x = activate(cin("stem", conv("stem", x)))
    for i in range(1, len(cfg.down_widths) + 1):
        x = activate(cin(f"down{i}", conv(f"down{i}", x, stride=2)))
    for i in range(1, cfg.num_res_blocks + 1):
        skip = x
        x = activate(cin(f"res{i}.conv1", conv(f"res{i}.conv1", x)))
        x = cin(f"res{i}.conv2", conv(f"res{i}.conv2", x))
        x = x + skip
        tape.append(("resadd", None, None))
    for i in range(1, len(_up_widths(cfg)) + 1):
        x = upsample_nearest(x, 2)
        tape.append(("upsample", None, 2))
        x = activate(cin(f"up{i}", conv(f"up{i}", x)))
    x = conv("out", x)
    y = sigmoid(x)
    tape.append(("sigmoid", None, y))

    out = np.ascontiguousarray(y.transpose(1, 2, 0))
    return out, (tape, weights, act_grad)


def backward(net: StyleNetwork, cache, d_output: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given d(loss)/d(stylized image).

    Normalization-bank rows for styles with zero mixing weight receive
    exact-zero gradients (each bank gradient is the outer product of the
    style weights with the mixed-affine gradient).
    """
    tape, weights, act_grad = cache
    grads: dict[str, np.ndarray] = {}

    def add(name, g):
        if name in grads:
            grads[name] = grads[name] + g
        else:
            grads[name] = g

    d = np.ascontiguousarray(np.asarray(d_output).transpose(2, 0, 1))
    skip_stack = []
    for kind, name, payload in reversed(tape):
        if kind == "sigmoid":
            d = sigmoid_backward(d, payload)
        elif kind == "act":
            d = d * act_grad(payload)
        elif kind == "resadd":
            skip_stack.append(d)
        elif kind == "upsample":
            d = upsample_nearest_backward(d, payload)
        elif kind == "cin":
            d, dscale, dshift = instance_norm_backward(d, payload)
            add(f"cin.{name}.scale", np.outer(weights, dscale))
            add(f"cin.{name}.shift", np.outer(weights, dshift))
        elif kind == "conv":
            d, dw, db = conv2d_backward(d, payload)
            add(f"{name}.w", dw)
            if f"{name}.b" in net.params:
                add(f"{name}.b", db)
            if name.endswith(".conv1") and skip_stack:
                # closes a residual block: merge the skip branch gradient
                d = d + skip_stack.pop()
        else:  # pragma: no cover
            raise RuntimeError(f"unknown tape entry {kind}")
    return grads
