"""Distilling the two-stage pipeline into a single student network.

The teacher stylizes a content image; a binary text mask splits the frame
into a text region that should look like the teacher's output and a
background that should stay untouched.  The student is trained to produce
both at once, so at inference time one forward pass replaces the whole
stylize-then-blend pipeline.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import DatasetManifest, load_annotations, load_image, rasterize_mask
from .network import (
    StyleNetwork,
    backward,
    forward,
    forward_cached,
    init_network,
    one_hot,
)
from .ops import Adam

__all__ = [
    "TrainingDivergedError",
    "DistillTargets",
    "DistillWeights",
    "DistillPhase",
    "DistillSchedule",
    "DistillSample",
    "make_targets",
    "distill_loss",
    "distill_loss_grad",
    "default_schedule",
    "load_distill_samples",
    "train_student",
]


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; ``step`` is the optimizer step that broke."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


# ---------------------------------------------------------------------------
# targets and loss
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistillTargets:
    """What the student should produce: the teacher's pixels on text,
    the untouched content pixels on background."""

    text_target: np.ndarray
    background_target: np.ndarray


def _check_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != (height, width):
        raise ValueError(
            f"mask shape {mask.shape} does not match image size "
            f"{height}x{width}"
        )
    if not ((mask == 0) | (mask == 1)).all():
        raise ValueError("mask must be binary (every value exactly 0 or 1)")
    return mask


def make_targets(content: np.ndarray, stylized: np.ndarray,
                 mask: np.ndarray) -> DistillTargets:
    """Split teacher output and content by the binary text mask.

    text_target is zero off-text, background_target is zero on-text, so
    the two add up to the ideal selective output.
    """
    content = np.asarray(content)
    stylized = np.asarray(stylized)
    if content.shape != stylized.shape:
        raise ValueError(
            f"content shape {content.shape} does not match stylized shape "
            f"{stylized.shape}"
        )
    m = _check_mask(mask, content.shape[0], content.shape[1])
    m = m.astype(content.dtype, copy=False)[:, :, None]
    return DistillTargets(text_target=stylized * m,
                          background_target=content * (1.0 - m))


@dataclass(frozen=True)
class DistillWeights:
    """Relative importance of matching the text region vs the background."""

    text_weight: float
    background_weight: float

    def __post_init__(self):
        for v in (self.text_weight, self.background_weight):
            if not np.isfinite(v) or v < 0:
                raise ValueError(
                    f"distillation weights must be finite and non-negative, "
                    f"got ({self.text_weight}, {self.background_weight})"
                )


def _weights_pair(weights) -> tuple[float, float]:
    if isinstance(weights, DistillWeights):
        return weights.text_weight, weights.background_weight
    tw, bw = (float(weights[0]), float(weights[1]))
    DistillWeights(tw, bw)  # reuse its validation
    return tw, bw


def distill_loss(pred: np.ndarray, targets: DistillTargets, mask: np.ndarray,
                 weights=DistillWeights(1.0, 1.0),
                 reduction: str = "mean") -> float:
    """Weighted squared error of the masked prediction against both targets."""
    loss, _ = _distill_loss_impl(pred, targets, mask, weights, reduction,
                                 need_grad=False)
    return loss


def distill_loss_grad(pred: np.ndarray, targets: DistillTargets,
                      mask: np.ndarray, weights=DistillWeights(1.0, 1.0),
                      reduction: str = "mean"):
    """Returns (loss, d loss / d pred)."""
    return _distill_loss_impl(pred, targets, mask, weights, reduction,
                              need_grad=True)


def _distill_loss_impl(pred, targets, mask, weights, reduction, need_grad):
    pred = np.asarray(pred)
    if pred.shape != targets.text_target.shape:
        raise ValueError(
            f"prediction shape {pred.shape} does not match target shape "
            f"{targets.text_target.shape}"
        )
    tw, bw = _weights_pair(weights)
    m = _check_mask(mask, pred.shape[0], pred.shape[1])
    m = m.astype(pred.dtype, copy=False)[:, :, None]

    text_res = pred * m - targets.text_target
    bg_res = pred * (1.0 - m) - targets.background_target
    if reduction == "mean":
        scale = 1.0 / pred.size
    elif reduction == "sum":
        scale = 1.0
    else:
        raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    # scalar reductions accumulate in float64 regardless of input dtype
    loss = scale * (tw * float((text_res ** 2).sum(dtype=np.float64))
                    + bw * float((bg_res ** 2).sum(dtype=np.float64)))
    if not need_grad:
        return loss, None
    grad = 2.0 * scale * (tw * m * text_res + bw * (1.0 - m) * bg_res)
    return loss, grad


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistillPhase:
    epochs: int
    weights: DistillWeights

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("phase epochs must be non-negative")


@dataclass(frozen=True)
class DistillSchedule:
    """Phased training plan for the student.

    ``style_mode`` decides how a multi-style teacher is conditioned:
    ``fixed`` keeps one style (or blend) for the whole run, ``per-batch``
    samples a random style index per batch.  ``cache_targets`` trades
    memory for skipping repeated teacher forwards (fixed mode only,
    since cached targets bake in the style).
    """

    phases: tuple[DistillPhase, ...]
    learning_rate: float = 1e-3
    batch_size: int = 4
    seed: int = 0
    style_mode: str = "fixed"
    cache_targets: bool = False

    def __post_init__(self):
        if not self.phases:
            raise ValueError("schedule needs at least one phase")
        if len(self.phases) > 1:
            first = self.phases[0].weights
            if not first.text_weight > first.background_weight:
                raise ValueError(
                    "the opening phase of a multi-phase schedule must weight "
                    "text above background"
                )
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.style_mode not in ("fixed", "per-batch"):
            raise ValueError(
                f"style_mode must be 'fixed' or 'per-batch', "
                f"got {self.style_mode!r}"
            )
        if self.cache_targets and self.style_mode != "fixed":
            raise ValueError("cache_targets requires style_mode 'fixed'")


def default_schedule(phase1_epochs: int = 77, phase2_epochs: int = 50,
                     **kwargs) -> DistillSchedule:
    """Text-heavy opening phase, then equal weighting."""
    return DistillSchedule(
        phases=(DistillPhase(phase1_epochs, DistillWeights(100.0, 1.0)),
                DistillPhase(phase2_epochs, DistillWeights(1.0, 1.0))),
        **kwargs,
    )


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class DistillSample:
    image: np.ndarray
    mask: np.ndarray


def load_distill_samples(manifest: DatasetManifest) -> list[DistillSample]:
    """Load every manifest entry and rasterize its text mask."""
    samples = []
    for entry in manifest.entries:
        if entry.annotations is None:
            raise ValueError(
                f"entry {entry.image!r} has no annotations; distillation "
                f"needs text masks"
            )
        image = load_image(manifest.image_path(entry))
        annots = load_annotations(manifest.annotation_path(entry))
        mask = rasterize_mask(annots, image.shape[0], image.shape[1])
        samples.append(DistillSample(image=image, mask=mask))
    return samples


def _resolve_fixed_style(style, num_styles: int) -> np.ndarray:
    if style is None:
        return one_hot(0, num_styles)
    if isinstance(style, (int, np.integer)):
        return one_hot(int(style), num_styles)
    return np.asarray(style)


def train_student(teacher: StyleNetwork, dataset, schedule: DistillSchedule,
                  style=None, trace_path: str | os.PathLike | None = None
                  ) -> StyleNetwork:
    """Train a freshly initialized student against the frozen teacher.

    ``dataset`` is a :class:`DatasetManifest` (masks rasterized from its
    annotations) or a prepared list of :class:`DistillSample`.  ``style``
    conditions both networks in fixed mode; per-batch mode draws a random
    style index each batch instead.  The teacher is never written to.

    A zero-epoch schedule returns the student exactly as initialized
    (seeded by ``schedule.seed``).
    """
    if isinstance(dataset, DatasetManifest):
        samples = load_distill_samples(dataset)
    else:
        samples = list(dataset)
    if not samples:
        raise ValueError("distillation dataset is empty")

    student = init_network(dataclasses.replace(teacher.config,
                                               seed=schedule.seed))
    rng = np.random.default_rng(schedule.seed)
    adam = Adam(learning_rate=schedule.learning_rate)
    fixed_style = _resolve_fixed_style(style, teacher.num_styles)

    target_cache: dict[int, tuple] = {}

    def sample_targets(idx: int, weights):
        if schedule.cache_targets and idx in target_cache:
            return target_cache[idx]
        s = samples[idx]
        stylized = forward(teacher, s.image, weights)
        prepared = (s.image, s.mask, make_targets(s.image, stylized, s.mask))
        if schedule.cache_targets:
            target_cache[idx] = prepared
        return prepared

    trace_file = open(trace_path, "w", newline="") if trace_path else None
    try:
        writer = None
        if trace_file:
            writer = csv.writer(trace_file)
            writer.writerow(["step", "phase", "loss"])

        step = 0
        order = list(range(len(samples)))
        for phase_num, phase in enumerate(schedule.phases, 1):
            for _ in range(phase.epochs):
                for start in range(0, len(order), schedule.batch_size):
                    batch = order[start:start + schedule.batch_size]
                    if schedule.style_mode == "per-batch":
                        weights = one_hot(int(rng.integers(teacher.num_styles)),
                                          teacher.num_styles)
                    else:
                        weights = fixed_style
                    step += 1
                    batch_loss = 0.0
                    grad_sum: dict[str, np.ndarray] = {}
                    for idx in batch:
                        image, mask, targets = sample_targets(idx, weights)
                        pred, cache = forward_cached(student, image, weights)
                        loss, dpred = distill_loss_grad(pred, targets, mask,
                                                        phase.weights)
                        batch_loss += loss
                        for name, g in backward(student, cache, dpred).items():
                            if name in grad_sum:
                                grad_sum[name] += g
                            else:
                                grad_sum[name] = g
                    batch_loss /= len(batch)
                    if not np.isfinite(batch_loss):
                        raise TrainingDivergedError(
                            f"non-finite distillation loss at step {step}",
                            step,
                        )
                    grads = {k: v / len(batch) for k, v in grad_sum.items()}
                    adam.step(student.params, grads)
                    if writer:
                        writer.writerow([step, phase_num, batch_loss])
    finally:
        if trace_file:
            trace_file.close()
    return student
