"""Feature extraction and the perceptual content/style losses.

The extractor is a fixed-weight convolutional stack standing in for a
large pretrained classifier: weights are seeded at construction and never
trained.  Externally computed weights can be dropped in through
:meth:`FeatureExtractor.from_weights` without touching the loss code.

A feature stack is a plain ``dict`` mapping layer names (``conv1``,
``conv2``, ...) to (C, H, W) activation maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import (
    activation_fn,
    conv2d_backward,
    conv2d_cached,
    conv_output_size,
)

__all__ = [
    "ExtractorConfig",
    "FeatureExtractor",
    "LayerSelection",
    "LossBreakdown",
    "default_layers",
    "extract_features",
    "gram",
    "content_loss",
    "style_loss",
    "style_grams",
    "total_loss",
    "total_loss_grad",
]


@dataclass(frozen=True)
class ExtractorConfig:
    """Shape of the fixed extractor: one strided valid conv per stage."""

    widths: tuple[int, ...] = (4, 8, 16)
    kernel: int = 3
    stride: int = 2
    activation: str = "relu"
    seed: int = 0


class FeatureExtractor:
    """Immutable convolutional feature extractor.

    Each stage is a valid (unpadded) convolution followed by the
    configured activation; layer ``conv<i>`` is the post-activation output
    of stage ``i``.  Valid convolutions shrink the map, so deep layers
    genuinely require a minimum input size (see :meth:`min_input_size`).
    """

    def __init__(self, weights, activation: str, strides,
                 config: ExtractorConfig | None = None):
        if not weights:
            raise ValueError("extractor needs at least one stage")
        if isinstance(strides, int):
            strides = (strides,) * len(weights)
        if len(strides) != len(weights):
            raise ValueError("one stride per stage required")
        frozen = []
        for w, b in weights:
            w = np.ascontiguousarray(w)
            b = np.ascontiguousarray(b)
            w.flags.writeable = False
            b.flags.writeable = False
            frozen.append((w, b))
        self.weights = tuple(frozen)
        self.strides = tuple(int(s) for s in strides)
        self.activation = activation
        self.config = config
        self._act, self._act_grad = activation_fn(activation)

    @classmethod
    def from_config(cls, config: ExtractorConfig) -> "FeatureExtractor":
        rng = np.random.default_rng(config.seed)
        weights = []
        in_ch = 3
        for width in config.widths:
            fan_in = in_ch * config.kernel * config.kernel
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                           size=(width, in_ch, config.kernel, config.kernel))
            weights.append((w.astype(np.float32), np.zeros(width, np.float32)))
            in_ch = width
        return cls(weights, config.activation, config.stride, config)

    @classmethod
    def from_weights(cls, weights, activation: str = "relu",
                     stride: int = 1) -> "FeatureExtractor":
        """Wrap externally supplied (w, b) stage weights, e.g. from a
        pretrained classifier, behind the same interface."""
        return cls([(np.array(w), np.array(b)) for w, b in weights],
                   activation, stride)

    @property
    def layer_names(self) -> tuple[str, ...]:
        return tuple(f"conv{i + 1}" for i in range(len(self.weights)))

    def layer_index(self, name: str) -> int:
        try:
            return self.layer_names.index(name)
        except ValueError:
            raise ValueError(
                f"unknown layer {name!r}; extractor has {self.layer_names}"
            ) from None

    def with_activation(self, kind: str) -> "FeatureExtractor":
        return FeatureExtractor(list(self.weights), kind, self.strides, self.config)

    def astype(self, dtype) -> "FeatureExtractor":
        weights = [(w.astype(dtype), b.astype(dtype)) for w, b in self.weights]
        return FeatureExtractor(weights, self.activation, self.strides, self.config)

    def min_input_size(self, layer: str) -> int:
        """Smallest square input for which ``layer`` has >= 1x1 extent."""
        idx = self.layer_index(layer)
        size = 1
        for i in reversed(range(idx + 1)):
            k = self.weights[i][0].shape[2]
            size = (size - 1) * self.strides[i] + k
        return size

    def _check_size(self, h: int, w: int, upto: int) -> None:
        for i in range(upto + 1):
            k = self.weights[i][0].shape[2]
            h = conv_output_size(h, k, self.strides[i], "valid")
            w = conv_output_size(w, k, self.strides[i], "valid")
            if h < 1 or w < 1:
                name = self.layer_names[i]
                need = self.min_input_size(name)
                raise ValueError(
                    f"input too small for layer {name}: needs at least "
                    f"{need}x{need}"
                )

    def _forward_cached(self, x: np.ndarray, upto: int):
        """Run stages 0..upto; returns (post-activation maps, caches)."""
        self._check_size(x.shape[1], x.shape[2], upto)
        acts, caches = [], []
        for i in range(upto + 1):
            w, b = self.weights[i]
            z, conv_cache = conv2d_cached(x, w, b, self.strides[i], padding="valid")
            x = self._act(z)
            acts.append(x)
            caches.append((conv_cache, z))
        return acts, caches

    def _backward(self, inject: dict[int, np.ndarray], caches) -> np.ndarray:
        """Accumulate gradients injected at stage outputs back to the input."""
        upto = len(caches) - 1
        grad = None
        for i in range(upto, -1, -1):
            if i in inject:
                grad = inject[i] if grad is None else grad + inject[i]
            conv_cache, z = caches[i]
            dz = grad * self._act_grad(z)
            grad, _, _ = conv2d_backward(dz, conv_cache)
        return grad


@dataclass(frozen=True)
class LayerSelection:
    """Which layer supplies content features and which supply style."""

    content_layer: str
    style_layers: tuple[str, ...]

    def __post_init__(self):
        if not self.style_layers:
            raise ValueError("at least one style layer is required")

    def validate(self, extractor: FeatureExtractor) -> None:
        m = extractor.layer_index(self.content_layer)
        for name in self.style_layers:
            if extractor.layer_index(name) > m:
                raise ValueError(
                    f"style layer {name} is deeper than content layer "
                    f"{self.content_layer}"
                )

    @property
    def all_layers(self) -> tuple[str, ...]:
        seen = dict.fromkeys(self.style_layers)
        seen[self.content_layer] = None
        return tuple(seen)


def default_layers(extractor: FeatureExtractor) -> LayerSelection:
    """Content from the deepest stage, style from every stage."""
    names = extractor.layer_names
    return LayerSelection(content_layer=names[-1], style_layers=names)


def extract_features(extractor: FeatureExtractor, image: np.ndarray,
                     layers: LayerSelection) -> dict[str, np.ndarray]:
    """Feature stack for ``image`` containing exactly the requested layers."""
    layers.validate(extractor)
    x = np.ascontiguousarray(np.asarray(image).transpose(2, 0, 1))
    upto = max(extractor.layer_index(n) for n in layers.all_layers)
    acts, _ = extractor._forward_cached(x, upto)
    return {name: acts[extractor.layer_index(name)] for name in layers.all_layers}


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def gram(feature: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Channel-channel correlation G = F F^T of a (C, H, W) map.

    With ``normalize`` (the default) G is divided by C*H*W so the style
    loss does not scale with resolution.
    """
    feature = np.asarray(feature)
    if feature.ndim != 3:
        raise ValueError(f"expected a (C, H, W) map, got shape {feature.shape}")
    if not np.isfinite(feature).all():
        raise ValueError("feature map contains non-finite values")
    c = feature.shape[0]
    flat = feature.reshape(c, -1)
    g = flat @ flat.T
    if normalize:
        g = g / feature.size
    return g


def _gram_backward(dg: np.ndarray, feature: np.ndarray,
                   normalize: bool) -> np.ndarray:
    c = feature.shape[0]
    flat = feature.reshape(c, -1)
    dflat = (dg + dg.T) @ flat
    if normalize:
        dflat = dflat / feature.size
    return dflat.reshape(feature.shape)


def _reduce(sq: np.ndarray, reduction: str) -> float:
    # accumulate in float64 so the scalar is stable for float32 inputs
    if reduction == "sum":
        return float(sq.sum(dtype=np.float64))
    if reduction == "mean":
        return float(sq.mean(dtype=np.float64))
    raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")


def _as_map(stack, what: str, layer: str | None):
    if isinstance(stack, dict):
        if layer is not None:
            if layer not in stack:
                raise ValueError(f"{what} stack is missing layer {layer!r}")
            return stack[layer]
        if len(stack) != 1:
            raise ValueError(
                f"{what} stack has {len(stack)} layers; pass layer= to pick one"
            )
        return next(iter(stack.values()))
    return np.asarray(stack)


def content_loss(fc, fp, reduction: str = "mean", layer: str | None = None) -> float:
    """Squared distance between content-layer activations."""
    a = _as_map(fc, "content", layer)
    b = _as_map(fp, "stylized", layer)
    if a.shape != b.shape:
        raise ValueError(f"content feature shapes differ: {a.shape} vs {b.shape}")
    return _reduce((a - b) ** 2, reduction)


def style_loss(grams_s, grams_p, reduction: str = "mean") -> float:
    """Sum over style layers of the reduced squared Gram differences."""
    if len(grams_s) != len(grams_p):
        raise ValueError(
            f"style layer count mismatch: {len(grams_s)} vs {len(grams_p)}"
        )
    total = 0.0
    for i, (gs, gp) in enumerate(zip(grams_s, grams_p)):
        if gs.shape != gp.shape:
            raise ValueError(
                f"gram shapes differ at style layer {i}: {gs.shape} vs {gp.shape}"
            )
        total += _reduce((gs - gp) ** 2, reduction)
    return total


def style_grams(extractor: FeatureExtractor, style_image: np.ndarray,
                layers: LayerSelection, normalize: bool = True) -> list[np.ndarray]:
    """Precompute the per-layer Grams of one style image (cache these)."""
    feats = extract_features(extractor, style_image, layers)
    return [gram(feats[n], normalize) for n in layers.style_layers]


@dataclass
class LossBreakdown:
    content: float
    style: float
    total: float
    content_weight: float
    style_weight: float


def total_loss(content_image: np.ndarray, grams_s: list[np.ndarray],
               stylized: np.ndarray, extractor: FeatureExtractor,
               layers: LayerSelection, weights: tuple[float, float] = (1.0, 1.0),
               reduction: str = "mean",
               normalize_gram: bool = True) -> LossBreakdown:
    """Weighted perceptual objective for one stylized image.

    ``grams_s`` are the style image's precomputed Grams in
    ``layers.style_layers`` order.
    """
    breakdown, _ = _total_loss_impl(content_image, grams_s, stylized, extractor,
                                    layers, weights, reduction, normalize_gram,
                                    need_grad=False)
    return breakdown


def total_loss_grad(content_image: np.ndarray, grams_s: list[np.ndarray],
                    stylized: np.ndarray, extractor: FeatureExtractor,
                    layers: LayerSelection,
                    weights: tuple[float, float] = (1.0, 1.0),
                    reduction: str = "mean", normalize_gram: bool = True):
    """Like :func:`total_loss` but also returns d(total)/d(stylized)."""
    return _total_loss_impl(content_image, grams_s, stylized, extractor, layers,
                            weights, reduction, normalize_gram, need_grad=True)


def _total_loss_impl(content_image, grams_s, stylized, extractor, layers,
                     weights, reduction, normalize_gram, need_grad):
    layers.validate(extractor)
    cw, sw = (float(weights[0]), float(weights[1]))
    fc = extract_features(
        extractor, content_image,
        LayerSelection(layers.content_layer, (layers.content_layer,)),
    )[layers.content_layer]

    x = np.ascontiguousarray(np.asarray(stylized).transpose(2, 0, 1))
    upto = max(extractor.layer_index(n) for n in layers.all_layers)
    acts, caches = extractor._forward_cached(x, upto)

    m_idx = extractor.layer_index(layers.content_layer)
    fpm = acts[m_idx]
    if fc.shape != fpm.shape:
        raise ValueError(
            f"content feature shapes differ: {fc.shape} vs {fpm.shape}"
        )
    c_loss = _reduce((fc - fpm) ** 2, reduction)

    if len(grams_s) != len(layers.style_layers):
        raise ValueError(
            f"expected {len(layers.style_layers)} style grams, got {len(grams_s)}"
        )
    s_loss = 0.0
    inject: dict[int, np.ndarray] = {}
    for gs, name in zip(grams_s, layers.style_layers):
        n_idx = extractor.layer_index(name)
        fpn = acts[n_idx]
        gp = gram(fpn, normalize_gram)
        if gs.shape != gp.shape:
            raise ValueError(
                f"gram shapes differ at layer {name}: {gs.shape} vs {gp.shape}"
            )
        diff = gp - gs
        s_loss += _reduce(diff ** 2, reduction)
        if need_grad:
            dg = 2.0 * diff
            if reduction == "mean":
                dg = dg / diff.size
            df = _gram_backward(sw * dg, fpn, normalize_gram)
            inject[n_idx] = inject.get(n_idx, 0.0) + df

    total = cw * c_loss + sw * s_loss
    breakdown = LossBreakdown(content=c_loss, style=s_loss, total=total,
                              content_weight=cw, style_weight=sw)
    if not need_grad:
        return breakdown, None

    dc = 2.0 * (fpm - fc)
    if reduction == "mean":
        dc = dc / fpm.size
    inject[m_idx] = inject.get(m_idx, 0.0) + cw * dc

    dx = extractor._backward(inject, caches)
    return breakdown, np.ascontiguousarray(dx.transpose(1, 2, 0))
