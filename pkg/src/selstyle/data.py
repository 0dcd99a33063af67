"""Images, text-region annotations, masks, and dataset manifests.

Conventions used across the package:

* an image is an ``(H, W, 3)`` float array with values in ``[0, 1]``,
  channel-last;
* a mask is an ``(H, W)`` float array with values in ``{0, 1}``;
* a probability map is an ``(H, W)`` float array with values in ``[0, 1]``.

Annotation files follow the ICDAR incidental-scene-text ground truth
grammar: one region per line, ``x1,y1,x2,y2,x3,y3,x4,y4,transcription``
with the four corners in clockwise order.  A transcription of ``###``
marks a don't-care region.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

__all__ = [
    "AnnotationError",
    "FormatError",
    "QuadAnnotation",
    "ManifestEntry",
    "DatasetManifest",
    "load_image",
    "save_image",
    "load_probmap",
    "save_probmap",
    "parse_icdar_annotations",
    "serialize_icdar_annotations",
    "load_annotations",
    "save_annotations",
    "rasterize_mask",
    "feather_mask",
    "load_manifest",
    "save_manifest",
]


class FormatError(ValueError):
    """Raised for rasters the package does not accept (bit depth, channels)."""


class AnnotationError(ValueError):
    """Annotation file did not match the expected grammar.

    Carries the 1-based ``line`` where parsing failed.
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# image / probability-map files
# ---------------------------------------------------------------------------

_SIXTEEN_BIT_MODES = ("I;16", "I;16B", "I;16L", "I;16N", "I")


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load an 8- or 16-bit PNG/BMP/PPM raster as an (H, W, 3) float image.

    Values are scaled into [0, 1] by the maximum code value of the file's
    bit depth (255 or 65535).  Grayscale inputs are replicated to three
    channels.  Raises :class:`FormatError` for unsupported bit depths and
    propagates ``OSError`` for unreadable files.
    """
    with PILImage.open(path) as im:
        im.load()
        if im.mode in _SIXTEEN_BIT_MODES:
            arr = np.asarray(im, dtype=np.float64)
            if arr.min() < 0 or arr.max() > 65535:
                raise FormatError(
                    f"{path}: sample values outside the 16-bit range"
                )
            arr = (arr / 65535.0).astype(np.float32)
        elif im.mode in ("1", "L", "LA", "P", "RGB", "RGBA"):
            if im.mode in ("LA", "P", "RGBA"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float32) / 255.0
        else:
            raise FormatError(f"{path}: unsupported raster mode {im.mode!r}")
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return np.ascontiguousarray(arr, dtype=np.float32)


def save_image(image: np.ndarray, path: str | os.PathLike) -> None:
    """Write an image as an 8-bit file (format chosen by extension)."""
    validate_image(image)
    data = np.rint(np.asarray(image, dtype=np.float64) * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="RGB").save(path)


def load_probmap(path: str | os.PathLike) -> np.ndarray:
    """Load a single-channel 8-bit PNG as an (H, W) probability map."""
    with PILImage.open(path) as im:
        im.load()
        if im.mode != "L":
            raise FormatError(
                f"{path}: probability maps must be single-channel 8-bit, "
                f"got mode {im.mode!r}"
            )
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr


def save_probmap(probmap: np.ndarray, path: str | os.PathLike) -> None:
    probmap = np.asarray(probmap)
    if probmap.ndim != 2:
        raise ValueError(f"probability map must be 2-d, got {probmap.shape}")
    data = np.rint(probmap.astype(np.float64) * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="L").save(path)


def validate_image(image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError("image must have positive height and width")
    if not np.isfinite(image).all():
        raise ValueError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------

DONT_CARE = "###"


@dataclass(frozen=True)
class QuadAnnotation:
    """One annotated text region: four (x, y) corners plus transcription."""

    points: tuple[tuple[int, int], ...]
    transcription: str

    @property
    def care_flag(self) -> bool:
        """False for don't-care regions (transcription ``###``)."""
        return self.transcription != DONT_CARE

    def clamped(self, height: int, width: int) -> "QuadAnnotation":
        """Corners clamped into the pixel grid of an ``height x width`` image."""
        pts = tuple(
            (min(max(x, 0), width - 1), min(max(y, 0), height - 1))
            for x, y in self.points
        )
        return QuadAnnotation(pts, self.transcription)


def parse_icdar_annotations(text: str, fmt: str = "quad") -> list[QuadAnnotation]:
    """Parse an ICDAR-style ground truth file body.

    ``fmt="quad"`` expects the 8-coordinate 2015 grammar
    (``x1,y1,...,y4,transcription``); the transcription may itself contain
    commas, so only the first eight fields are split off.  ``fmt="rect"``
    accepts the 4-coordinate axis-aligned 2013 grammar
    (``left,top,right,bottom,transcription``) and expands each rectangle
    to its corner quad.
    """
    if fmt not in ("quad", "rect"):
        raise ValueError(f"fmt must be 'quad' or 'rect', got {fmt!r}")
    ncoords = 8 if fmt == "quad" else 4
    annots: list[QuadAnnotation] = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip("\r").lstrip("﻿")
        if not line.strip():
            continue
        fields = line.split(",", ncoords)
        if len(fields) < ncoords + 1:
            raise AnnotationError(
                f"expected at least {ncoords + 1} comma-separated fields, "
                f"got {len(fields)}",
                lineno,
            )
        try:
            coords = [int(f.strip()) for f in fields[:ncoords]]
        except ValueError:
            raise AnnotationError("non-integer coordinate", lineno) from None
        if fmt == "quad":
            pts = tuple(zip(coords[0::2], coords[1::2]))
        else:
            x1, y1, x2, y2 = coords
            pts = ((x1, y1), (x2, y1), (x2, y2), (x1, y2))
        annots.append(QuadAnnotation(pts, fields[ncoords]))
    return annots


def serialize_icdar_annotations(annots: list[QuadAnnotation]) -> str:
    """Render annotations back to the 8-coordinate grammar, ``\\n`` endings."""
    lines = []
    for a in annots:
        coords = ",".join(f"{x},{y}" for x, y in a.points)
        lines.append(f"{coords},{a.transcription}")
    return "".join(line + "\n" for line in lines)


def load_annotations(path: str | os.PathLike, fmt: str = "quad") -> list[QuadAnnotation]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_icdar_annotations(f.read(), fmt=fmt)


def save_annotations(annots: list[QuadAnnotation], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(serialize_icdar_annotations(annots))


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def _quad_cover(points, height: int, width: int) -> np.ndarray:
    """Boolean (H, W) grid of pixel centers inside or on one quad.

    Pixel (row i, col j) has its center at continuous coordinates
    (x=j, y=i), so integer annotation coordinates name pixel centers and
    all arithmetic below is exact in int64.
    """
    px = np.arange(width, dtype=np.int64)[None, :]
    py = np.arange(height, dtype=np.int64)[:, None]
    inside = np.zeros((height, width), dtype=bool)
    boundary = np.zeros((height, width), dtype=bool)
    n = len(points)
    for k in range(n):
        x1, y1 = (int(v) for v in points[k])
        x2, y2 = (int(v) for v in points[(k + 1) % n])
        # exact point-on-segment test
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        within = (
            (px >= min(x1, x2)) & (px <= max(x1, x2))
            & (py >= min(y1, y2)) & (py <= max(y1, y2))
        )
        boundary |= (cross == 0) & within
        if y1 == y2:
            continue
        # even-odd ray cast toward +x, division-free
        straddles = (y1 > py) != (y2 > py)
        lhs = (px - x1) * (y2 - y1)
        rhs = (py - y1) * (x2 - x1)
        crossed = lhs < rhs if y2 > y1 else lhs > rhs
        inside ^= straddles & crossed
    return inside | boundary


def rasterize_mask(annots: list[QuadAnnotation], height: int, width: int) -> np.ndarray:
    """Binary (H, W) mask of pixels whose centers fall in any care region.

    Boundary pixels count as inside; don't-care regions are skipped.  An
    empty annotation list yields an all-zero mask.
    """
    if height < 1 or width < 1:
        raise ValueError("mask dimensions must be positive")
    covered = np.zeros((height, width), dtype=bool)
    for annot in annots:
        if not annot.care_flag:
            continue
        covered |= _quad_cover(annot.points, height, width)
    return covered.astype(np.float32)


def feather_mask(mask: np.ndarray, radius: float) -> np.ndarray:
    """Soften a binary mask into a probability map by distance falloff.

    Each pixel gets ``clamp(1 - d / radius, 0, 1)`` where ``d`` is the
    Euclidean distance to the nearest set pixel; ``radius = 0`` returns
    the mask values unchanged.
    """
    mask = np.asarray(mask, dtype=np.float32)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    if not mask.any():
        return np.zeros_like(mask)
    dist = ndimage.distance_transform_edt(mask == 0)
    return np.clip(1.0 - dist / radius, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# dataset manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    image: str
    annotations: str | None = None
    probmap: str | None = None


@dataclass
class DatasetManifest:
    """A dataset as a root directory plus per-image file entries.

    Serialized as UTF-8 JSON:

    .. code-block:: json

        {"root": ".",
         "entries": [{"image": "img/0.png",
                      "annotations": "gt/0.txt",
                      "probmap": null}]}

    Paths are interpreted relative to ``root`` unless absolute.  Extra
    top-level keys (e.g. augmentation provenance) are preserved on load.
    """

    root: Path
    entries: list[ManifestEntry]
    extra: dict | None = None

    def resolve(self, relpath: str) -> Path:
        p = Path(relpath)
        return p if p.is_absolute() else self.root / p

    def image_path(self, entry: ManifestEntry) -> Path:
        return self.resolve(entry.image)

    def annotation_path(self, entry: ManifestEntry) -> Path | None:
        return None if entry.annotations is None else self.resolve(entry.annotations)

    def probmap_path(self, entry: ManifestEntry) -> Path | None:
        return None if entry.probmap is None else self.resolve(entry.probmap)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Load and validate a dataset manifest.

    Every referenced file must exist and image paths must be unique.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    root_field = doc.get("root", ".")
    root = Path(root_field)
    if not root.is_absolute():
        root = path.parent / root
    entries = []
    seen: set[str] = set()
    for i, e in enumerate(doc.get("entries", [])):
        entry = ManifestEntry(
            image=e["image"],
            annotations=e.get("annotations"),
            probmap=e.get("probmap"),
        )
        if entry.image in seen:
            raise ValueError(f"duplicate image path in manifest: {entry.image}")
        seen.add(entry.image)
        entries.append(entry)
    manifest = DatasetManifest(
        root=root,
        entries=entries,
        extra={k: v for k, v in doc.items() if k not in ("root", "entries")} or None,
    )
    for entry in manifest.entries:
        for p in (
            manifest.image_path(entry),
            manifest.annotation_path(entry),
            manifest.probmap_path(entry),
        ):
            if p is not None and not p.exists():
                raise FileNotFoundError(f"manifest references missing file: {p}")
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike,
                  root_field: str = ".") -> None:
    """Write a manifest; ``root_field`` is stored verbatim (default: the
    manifest file's own directory)."""
    doc: dict = dict(manifest.extra or {})
    doc["root"] = root_field
    doc["entries"] = [
        {"image": e.image, "annotations": e.annotations, "probmap": e.probmap}
        for e in manifest.entries
    ]
    with open(path, "w", encoding="utf-8", newline="") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
