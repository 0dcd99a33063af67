"""Selective stylization: full-frame transfer gated by a probability map.

The pipeline runs in two stages.  Stage one stylizes the whole frame with
the transformation network; stage two blends the stylized frame back into
the original using a per-pixel text probability map, so only (probably)
textual regions change.

``blend`` is the contract everything else leans on: where the map is
exactly 1 the output is the stylized pixel, where it is exactly 0 the
output is the untouched content pixel, bit for bit.
"""

from __future__ import annotations

import os

import numpy as np

from .data import (
    QuadAnnotation,
    feather_mask,
    load_probmap,
    rasterize_mask,
)
from .network import StyleNetwork, forward


__all__ = [
    "blend",
    "pad_to_multiple",
    "stylize_image",
    "stylize_selective",
    "ConstantProvider",
    "FileProvider",
    "FeatherProvider",
]


def _check_probmap(probmap: np.ndarray, height: int, width: int) -> np.ndarray:
    probmap = np.asarray(probmap)
    if probmap.shape != (height, width):
        raise ValueError(
            f"probability map shape {probmap.shape} does not match image "
            f"size {height}x{width}"
        )
    if not np.isfinite(probmap).all():
        raise ValueError("probability map contains non-finite values")
    if float(probmap.min()) < 0.0 or float(probmap.max()) > 1.0:
        raise ValueError("probability map values must lie in [0, 1]")
    return probmap


def blend(content: np.ndarray, stylized: np.ndarray,
          probmap: np.ndarray) -> np.ndarray:
    """Per-pixel convex mix: probmap * stylized + (1 - probmap) * content.

    Pixels where the map is exactly 0 or exactly 1 reproduce the content
    or the stylized value bit-exactly.
    """
    content = np.asarray(content)
    stylized = np.asarray(stylized)
    if content.shape != stylized.shape:
        raise ValueError(
            f"content shape {content.shape} does not match stylized shape "
            f"{stylized.shape}"
        )
    if content.ndim != 3 or content.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) images, got shape {content.shape}")
    p = _check_probmap(probmap, content.shape[0], content.shape[1])
    p = p.astype(content.dtype, copy=False)[:, :, None]
    return p * stylized + (1.0 - p) * content


def pad_to_multiple(image: np.ndarray, factor: int) -> np.ndarray:
    """Edge-pad bottom/right so both sides divide ``factor``."""
    h, w = image.shape[:2]
    pad_h = (-h) % factor
    pad_w = (-w) % factor
    if pad_h == 0 and pad_w == 0:
        return image
    return np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")


def stylize_image(net: StyleNetwork, image: np.ndarray, style) -> np.ndarray:
    """Full-frame stylization of an image of any size.

    Sizes that the network cannot process directly are edge-padded to the
    next multiple of its downsampling factor and cropped back afterwards.
    """
    h, w = image.shape[:2]
    out = forward(net, pad_to_multiple(image, net.config.downsample_factor), style)
    return np.ascontiguousarray(out[:h, :w])


def stylize_selective(net: StyleNetwork, image: np.ndarray, style,
                      probmap) -> np.ndarray:
    """Both stages in one call: stylize, then blend.

    ``probmap`` is either a ready (H, W) map or a provider to call on the
    image.
    """
    if callable(probmap):
        probmap = probmap(image)
    return blend(image, stylize_image(net, image, style), probmap)


# ---------------------------------------------------------------------------
# probability map providers
# ---------------------------------------------------------------------------
#
# A provider turns one dataset sample into a text probability map.  All
# providers share the call signature
#
#     provider(image, annotations=None, probmap_path=None) -> (H, W) map
#
# and ignore the arguments they do not need.

class ConstantProvider:
    """Same probability everywhere; value 1.0 reduces selective transfer
    to full-frame transfer, value 0.0 to the identity."""

    def __init__(self, value: float = 1.0):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"constant probability {value} outside [0, 1]")
        self.value = float(value)

    def __call__(self, image: np.ndarray,
                 annotations: list[QuadAnnotation] | None = None,
                 probmap_path: str | os.PathLike | None = None) -> np.ndarray:
        h, w = image.shape[:2]
        return np.full((h, w), self.value, np.float32)


class FileProvider:
    """Reads a precomputed map (e.g. output of a text detector) from the
    sample's probmap file."""

    def __call__(self, image: np.ndarray,
                 annotations: list[QuadAnnotation] | None = None,
                 probmap_path: str | os.PathLike | None = None) -> np.ndarray:
        if probmap_path is None:
            raise ValueError("sample has no probability map file")
        probmap = load_probmap(probmap_path)
        return _check_probmap(probmap, image.shape[0], image.shape[1])


class FeatherProvider:
    """Rasterizes the sample's text quads to a binary mask, optionally
    feathered so the blend seam fades over ``radius`` pixels.

    With ``radius`` 0 the map is exactly binary, which keeps every
    non-text pixel bit-identical through :func:`blend`.
    """

    def __init__(self, radius: float = 0.0):
        if radius < 0:
            raise ValueError(f"feather radius must be non-negative, got {radius}")
        self.radius = float(radius)

    def __call__(self, image: np.ndarray,
                 annotations: list[QuadAnnotation] | None = None,
                 probmap_path: str | os.PathLike | None = None) -> np.ndarray:
        if annotations is None:
            raise ValueError("sample has no annotations to rasterize")
        h, w = image.shape[:2]
        mask = rasterize_mask(annotations, h, w)
        return feather_mask(mask, self.radius)
