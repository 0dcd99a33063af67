"""Dataset augmentation: add stylized-text variants of annotated images.

Each input image is copied through untouched (optional) and re-emitted
with its text regions restyled under one or more styles.  Geometry never
changes, so every variant reuses its source's annotation file byte for
byte.  The output manifest records how each variant was produced.
"""

from __future__ import annotations

import os
import shutil
from dataclasses import dataclass
from pathlib import Path, PurePosixPath

import numpy as np

from .data import (
    DatasetManifest,
    ManifestEntry,
    load_annotations,
    load_image,
    load_manifest,
    save_image,
    save_manifest,
)
from .network import StyleNetwork
from .twostage import (
    ConstantProvider,
    FeatherProvider,
    FileProvider,
    blend,
    stylize_image,
)

__all__ = ["AugmentSpec", "run_augment"]


@dataclass(frozen=True)
class AugmentSpec:
    """How to augment: how many styles per image, chosen how, applied how.

    ``styles`` pins an explicit index list used for every image;
    otherwise ``styles_per_image`` indices are drawn per image without
    replacement from the seeded generator.  ``mode`` picks between the
    stylize-then-blend pipeline (``two-stage``) and a direct pass through
    a distilled student (``end-to-end``).  Provider settings apply to
    two-stage mode only.
    """

    styles_per_image: int = 1
    mode: str = "two-stage"
    styles: tuple[int, ...] | None = None
    seed: int = 0
    provider: str = "feather"
    feather_radius: float = 0.0
    constant_value: float = 1.0
    include_originals: bool = True

    def __post_init__(self):
        if self.styles_per_image < 0:
            raise ValueError("styles_per_image must be non-negative")
        if self.mode not in ("two-stage", "end-to-end"):
            raise ValueError(f"mode must be 'two-stage' or 'end-to-end', "
                             f"got {self.mode!r}")
        if self.provider not in ("feather", "file", "constant"):
            raise ValueError(f"provider must be 'feather', 'file' or "
                             f"'constant', got {self.provider!r}")
        if self.styles is not None:
            if len(set(self.styles)) != len(self.styles):
                raise ValueError("explicit style list contains duplicates")
            if any(s < 0 for s in self.styles):
                raise ValueError("style indices must be non-negative")


def _effective_styles(spec: AugmentSpec, num_styles: int) -> int:
    if spec.styles is not None:
        bad = [s for s in spec.styles if s >= num_styles]
        if bad:
            raise ValueError(
                f"style indices {bad} out of range: the checkpoint network "
                f"has {num_styles} styles"
            )
        return len(spec.styles)
    if spec.styles_per_image > num_styles:
        raise ValueError(
            f"styles_per_image={spec.styles_per_image} exceeds the "
            f"checkpoint network's {num_styles} styles (drawn without "
            f"replacement)"
        )
    return spec.styles_per_image


def _variant_relpath(relpath: str, style: int) -> str:
    p = PurePosixPath(relpath)
    return str(p.with_name(f"{p.stem}_style{style}{p.suffix}"))


def _copy_into(src: Path, out_root: Path, relpath: str) -> None:
    dst = out_root / relpath
    dst.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(src, dst)


def _make_provider(spec: AugmentSpec):
    if spec.provider == "feather":
        return FeatherProvider(spec.feather_radius)
    if spec.provider == "file":
        return FileProvider()
    return ConstantProvider(spec.constant_value)


def run_augment(net: StyleNetwork, manifest, out_dir: str | os.PathLike,
                spec: AugmentSpec = AugmentSpec()) -> DatasetManifest:
    """Write the augmented dataset under ``out_dir`` and return its
    manifest (also saved as ``out_dir/manifest.json``).

    Deterministic for a fixed spec: rerunning into a fresh directory
    reproduces every output byte.  Inputs are only ever read.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    out_root = Path(out_dir)
    out_root.mkdir(parents=True, exist_ok=True)

    spi = _effective_styles(spec, net.num_styles)
    rng = np.random.default_rng(spec.seed)
    provider = _make_provider(spec)

    entries: list[ManifestEntry] = []
    provenance: dict[str, dict] = {}
    written: set[str] = set()

    def emit(relpath: str) -> str:
        if relpath in written:
            raise ValueError(f"output path collision: {relpath}")
        written.add(relpath)
        return relpath

    for entry in manifest.entries:
        image_rel = str(PurePosixPath(entry.image))
        if spec.include_originals:
            _copy_into(manifest.image_path(entry), out_root, emit(image_rel))
            if entry.annotations:
                _copy_into(manifest.annotation_path(entry), out_root,
                           emit(entry.annotations))
            if entry.probmap:
                _copy_into(manifest.probmap_path(entry), out_root,
                           emit(entry.probmap))
            entries.append(ManifestEntry(image=image_rel,
                                         annotations=entry.annotations,
                                         probmap=entry.probmap))

        if spec.styles is not None:
            chosen = list(spec.styles)
        else:
            chosen = [int(s) for s in rng.choice(net.num_styles, size=spi,
                                                 replace=False)]
        if not chosen:
            continue

        image = load_image(manifest.image_path(entry))
        annots = None
        if entry.annotations:
            annots = load_annotations(manifest.annotation_path(entry))
        if spec.mode == "two-stage":
            probmap = provider(image, annots, manifest.probmap_path(entry))

        for style in chosen:
            if spec.mode == "two-stage":
                variant = blend(image, stylize_image(net, image, style),
                                probmap)
            else:
                variant = stylize_image(net, image, style)

            var_image_rel = emit(_variant_relpath(image_rel, style))
            dst = out_root / var_image_rel
            dst.parent.mkdir(parents=True, exist_ok=True)
            save_image(variant, dst)

            var_annot_rel = None
            if entry.annotations:
                var_annot_rel = emit(_variant_relpath(entry.annotations, style))
                _copy_into(manifest.annotation_path(entry), out_root,
                           var_annot_rel)

            entries.append(ManifestEntry(image=var_image_rel,
                                         annotations=var_annot_rel))
            provenance[var_image_rel] = {"source": image_rel, "style": style}

    out = DatasetManifest(
        root=out_root,
        entries=entries,
        extra={
            "augment": {
                "mode": spec.mode,
                "seed": spec.seed,
                "styles_per_image": spi,
                "style_selection": ("explicit" if spec.styles is not None
                                    else "random"),
                "provider": (spec.provider if spec.mode == "two-stage"
                             else None),
                "include_originals": spec.include_originals,
                "variants": provenance,
            }
        },
    )
    save_manifest(out, out_root / "manifest.json")
    return out
