"""Baseline multi-style training, checkpointing, and the gradient audit.

Checkpoints are a single file: an 8-byte magic, a little-endian u32
manifest length, a UTF-8 JSON manifest (format version, network config,
extractor config, metadata, parameter table, blob checksum), then the raw
little-endian float32 parameter blob.  The manifest is self-describing;
the checksum makes silent corruption loud.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import perceptual
from .data import DatasetManifest, load_image
from .distill import TrainingDivergedError, distill_loss, distill_loss_grad
from .distill import DistillWeights, make_targets
from .network import (
    NetworkConfig,
    StyleNetwork,
    backward,
    forward_cached,
    init_network,
    one_hot,
)
from .ops import Adam
from .perceptual import (
    ExtractorConfig,
    FeatureExtractor,
    LayerSelection,
    default_layers,
)

__all__ = [
    "TrainConfig",
    "train_baseline",
    "preprocess_content",
    "CheckpointFormatError",
    "CheckpointVersionError",
    "CheckpointIntegrityError",
    "save_checkpoint",
    "load_checkpoint",
    "read_checkpoint_manifest",
    "GradAuditReport",
    "grad_audit",
    "central_difference",
]

CHECKPOINT_MAGIC = b"SELSTYLE"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# content preprocessing
# ---------------------------------------------------------------------------

def _resize_bilinear(image: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    channels = []
    for c in range(image.shape[2]):
        chan = Image.fromarray(np.ascontiguousarray(image[:, :, c], np.float32))
        chan = chan.resize((new_w, new_h), Image.BILINEAR)
        channels.append(np.asarray(chan))
    return np.stack(channels, axis=2)


def preprocess_content(image: np.ndarray, size: int = 32) -> np.ndarray:
    """Resize the shorter side to ``size``, then center-crop to a square."""
    if size < 1:
        raise ValueError("crop size must be positive")
    h, w = image.shape[:2]
    scale = size / min(h, w)
    new_h = max(size, round(h * scale))
    new_w = max(size, round(w * scale))
    if (new_h, new_w) != (h, w):
        image = _resize_bilinear(image, new_h, new_w)
    top = (new_h - size) // 2
    left = (new_w - size) // 2
    out = image[top:top + size, left:left + size]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# baseline training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    network: NetworkConfig
    style_paths: tuple
    dataset: DatasetManifest
    steps: int = 500
    batch_size: int = 4
    learning_rate: float = 1e-3
    content_weight: float = 1.0
    style_weight: float = 1.0
    crop: int = 32
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    layers: LayerSelection | None = None
    reduction: str = "mean"
    seed: int = 0

    def __post_init__(self):
        if len(self.style_paths) != self.network.num_styles:
            raise ValueError(
                f"{len(self.style_paths)} style images for a "
                f"{self.network.num_styles}-style network"
            )
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        for v in (self.content_weight, self.style_weight):
            if not np.isfinite(v) or v < 0:
                raise ValueError("loss weights must be finite and non-negative")


def train_baseline(config: TrainConfig,
                   trace_path: str | os.PathLike | None = None) -> StyleNetwork:
    """Train an N-style network against its N style images.

    Styles rotate round-robin across batches so every style index is
    visited; content images cycle in a per-epoch shuffled order.  Style
    Grams are computed once per style up front.  Deterministic for a
    fixed seed.  With zero steps the initialized network comes back
    unchanged.
    """
    for p in config.style_paths:
        if not Path(p).is_file():
            raise FileNotFoundError(f"style image not found: {p}")

    net = init_network(config.network)
    if config.steps == 0:
        return net

    extractor = FeatureExtractor.from_config(config.extractor)
    layers = config.layers if config.layers is not None else default_layers(extractor)
    layers.validate(extractor)

    style_images = [preprocess_content(load_image(p), config.crop)
                    for p in config.style_paths]
    grams = [perceptual.style_grams(extractor, img, layers)
             for img in style_images]

    entries = config.dataset.entries
    if not entries:
        raise ValueError("content dataset is empty")
    contents = [preprocess_content(load_image(config.dataset.image_path(e)),
                                   config.crop)
                for e in entries]

    rng = np.random.default_rng(config.seed)
    adam = Adam(learning_rate=config.learning_rate)
    weights = (config.content_weight, config.style_weight)
    num_styles = config.network.num_styles

    trace_file = open(trace_path, "w", newline="") if trace_path else None
    try:
        writer = None
        if trace_file:
            writer = csv.writer(trace_file)
            writer.writerow(["step", "style", "content_loss", "style_loss",
                             "total_loss"])

        order: list[int] = []
        for step in range(1, config.steps + 1):
            style_idx = (step - 1) % num_styles
            batch = []
            for _ in range(config.batch_size):
                if not order:
                    order = list(rng.permutation(len(contents)))
                batch.append(order.pop())

            c_sum = s_sum = t_sum = 0.0
            grad_sum: dict[str, np.ndarray] = {}
            for idx in batch:
                image = contents[idx]
                stylized, cache = forward_cached(net, image,
                                                 one_hot(style_idx, num_styles))
                breakdown, dp = perceptual.total_loss_grad(
                    image, grams[style_idx], stylized, extractor, layers,
                    weights, config.reduction)
                c_sum += breakdown.content
                s_sum += breakdown.style
                t_sum += breakdown.total
                for name, g in backward(net, cache, dp).items():
                    if name in grad_sum:
                        grad_sum[name] += g
                    else:
                        grad_sum[name] = g
            n = len(batch)
            if not np.isfinite(t_sum):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}", step)
            adam.step(net.params, {k: v / n for k, v in grad_sum.items()})
            if writer:
                writer.writerow([step, style_idx, c_sum / n, s_sum / n,
                                 t_sum / n])
    finally:
        if trace_file:
            trace_file.close()
    return net


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

class CheckpointFormatError(ValueError):
    """Not a checkpoint file, or its manifest is malformed."""


class CheckpointVersionError(ValueError):
    """Checkpoint written by an incompatible format version."""


class CheckpointIntegrityError(ValueError):
    """Checkpoint is structurally valid but its payload is damaged."""


def save_checkpoint(net: StyleNetwork, path: str | os.PathLike,
                    extractor: ExtractorConfig | None = None,
                    metadata: dict | None = None) -> None:
    """Write the network (parameters as little-endian float32) plus its
    config to a single self-describing file."""
    names = sorted(net.params)
    table = []
    chunks = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(net.params[name], dtype="<f4")
        raw = arr.tobytes()
        table.append({"name": name, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)

    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "network": asdict(net.config),
        "extractor": asdict(extractor) if extractor is not None else None,
        "metadata": metadata or {},
        "params": table,
        "blob_nbytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    manifest_bytes = json.dumps(manifest, indent=1).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(manifest_bytes)))
        f.write(manifest_bytes)
        f.write(blob)


def read_checkpoint_manifest(path: str | os.PathLike) -> dict:
    """Parse and validate the manifest; the blob is not checked here."""
    manifest, _ = _read_checkpoint(path, verify_blob=False)
    return manifest


def _read_checkpoint(path, verify_blob: bool):
    data = Path(path).read_bytes()
    head = len(CHECKPOINT_MAGIC) + 4
    if len(data) < head or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointFormatError(f"{path}: not a checkpoint file")
    (manifest_len,) = struct.unpack_from("<I", data, len(CHECKPOINT_MAGIC))
    if len(data) < head + manifest_len:
        raise CheckpointFormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[head:head + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: manifest is not valid JSON "
                                    f"({e})") from e
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version!r} is not supported "
            f"(this build reads version {CHECKPOINT_VERSION})"
        )
    blob = data[head + manifest_len:]
    if not verify_blob:
        return manifest, blob
    if len(blob) != manifest.get("blob_nbytes"):
        raise CheckpointIntegrityError(
            f"{path}: blob is {len(blob)} bytes, manifest says "
            f"{manifest.get('blob_nbytes')}"
        )
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest.get("blob_sha256"):
        raise CheckpointIntegrityError(f"{path}: blob checksum mismatch")
    return manifest, blob


def load_checkpoint(path: str | os.PathLike) -> StyleNetwork:
    """Rebuild the network bit-exactly; damaged or foreign files raise."""
    manifest, blob = _read_checkpoint(path, verify_blob=True)
    try:
        net_cfg = dict(manifest["network"])
        net_cfg["down_widths"] = tuple(net_cfg["down_widths"])
        config = NetworkConfig(**net_cfg)
        table = manifest["params"]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError(f"{path}: bad manifest contents "
                                    f"({e})") from e

    params: dict[str, np.ndarray] = {}
    for entry in table:
        offset, nbytes = entry["offset"], entry["nbytes"]
        shape = tuple(entry["shape"])
        if offset < 0 or offset + nbytes > len(blob):
            raise CheckpointIntegrityError(
                f"{path}: parameter {entry['name']!r} points outside the blob"
            )
        if nbytes % 4 or nbytes // 4 != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointFormatError(
                f"{path}: parameter {entry['name']!r} size does not match "
                f"its shape"
            )
        arr = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=offset)
        params[entry["name"]] = arr.astype(np.float32).reshape(shape).copy()

    expected = {k: v.shape for k, v in init_network(config).params.items()}
    got = {k: tuple(v.shape) for k, v in params.items()}
    if expected != got:
        raise CheckpointFormatError(
            f"{path}: parameter table does not match the declared network "
            f"config"
        )
    return StyleNetwork(config, params)


# ---------------------------------------------------------------------------
# gradient audit
# ---------------------------------------------------------------------------

@dataclass
class GradAuditReport:
    loss_kind: str
    max_rel_error: float
    tolerance: float
    passed: bool

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.loss_kind}: max relative error "
                f"{self.max_rel_error:.3e} (tolerance {self.tolerance:.0e})")


def central_difference(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Elementwise (f(x+h) - f(x-h)) / 2h in float64."""
    x = np.array(x, np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xr = x.reshape(-1)
    for i in range(xr.size):
        orig = xr[i]
        xr[i] = orig + step
        hi = f(x)
        xr[i] = orig - step
        lo = f(x)
        xr[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, np.float64)
    numeric = np.asarray(numeric, np.float64)
    floor = 1e-8 * max(1.0, float(np.abs(analytic).max(initial=0.0)))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max(initial=0.0))


_AUDIT_TOLERANCES = {"total_loss": 1e-4, "distill_loss": 1e-6}


def grad_audit(loss_kind: str, tolerance: float | None = None,
               seed: int = 0, step: float = 1e-5) -> GradAuditReport:
    """Compare an analytic loss gradient against central differences on a
    small built-in fixture, in float64.

    ``total_loss`` uses a smooth-activation extractor on an 8x8 image so
    finite differences are meaningful; ``distill_loss`` uses a 2x2 image
    with a checkered mask.
    """
    if loss_kind not in _AUDIT_TOLERANCES:
        raise ValueError(f"loss_kind must be one of "
                         f"{sorted(_AUDIT_TOLERANCES)}, got {loss_kind!r}")
    if tolerance is None:
        tolerance = _AUDIT_TOLERANCES[loss_kind]
    rng = np.random.default_rng(seed)

    if loss_kind == "total_loss":
        ext_cfg = ExtractorConfig(widths=(4, 8), kernel=3, stride=2,
                                  activation="softplus", seed=seed)
        extractor = FeatureExtractor.from_config(ext_cfg).astype(np.float64)
        layers = default_layers(extractor)
        content = rng.uniform(0.0, 1.0, (8, 8, 3))
        style = rng.uniform(0.0, 1.0, (8, 8, 3))
        stylized = rng.uniform(0.0, 1.0, (8, 8, 3))
        grams = perceptual.style_grams(extractor, style, layers)

        def f(p):
            return perceptual.total_loss(content, grams, p, extractor,
                                         layers, (1.0, 1.0)).total

        _, analytic = perceptual.total_loss_grad(content, grams, stylized,
                                                 extractor, layers, (1.0, 1.0))
        numeric = central_difference(f, stylized, step)
    else:
        content = rng.uniform(0.0, 1.0, (2, 2, 3))
        stylized = rng.uniform(0.0, 1.0, (2, 2, 3))
        pred = rng.uniform(0.0, 1.0, (2, 2, 3))
        mask = np.array([[1.0, 0.0], [0.0, 1.0]])
        targets = make_targets(content, stylized, mask)
        w = DistillWeights(100.0, 1.0)

        def f(p):
            return distill_loss(p, targets, mask, w)

        _, analytic = distill_loss_grad(pred, targets, mask, w)
        numeric = central_difference(f, pred, step)

    err = max_relative_error(analytic, numeric)
    return GradAuditReport(loss_kind=loss_kind, max_rel_error=err,
                           tolerance=tolerance, passed=err < tolerance)
