"""Selective text style transfer for annotated scene-text images.

A multi-style transformation network trained with perceptual losses,
two selective mechanisms (probability-map blending and a mask-distilled
student network), and a dataset-augmentation workflow that restyles text
regions while keeping annotations valid.
"""

from .data import (
    AnnotationError,
    DatasetManifest,
    FormatError,
    ManifestEntry,
    QuadAnnotation,
    feather_mask,
    load_annotations,
    load_image,
    load_manifest,
    load_probmap,
    parse_icdar_annotations,
    rasterize_mask,
    save_annotations,
    save_image,
    save_manifest,
    save_probmap,
    serialize_icdar_annotations,
)
from .perceptual import (
    ExtractorConfig,
    FeatureExtractor,
    LayerSelection,
    LossBreakdown,
    content_loss,
    default_layers,
    extract_features,
    gram,
    style_grams,
    style_loss,
    total_loss,
    total_loss_grad,
)
from .network import (
    NetworkConfig,
    StyleNetwork,
    cond_instance_norm,
    forward,
    init_network,
    mix_styles,
    one_hot,
)
from .twostage import (
    ConstantProvider,
    FeatherProvider,
    FileProvider,
    blend,
    stylize_image,
    stylize_selective,
)
from .distill import (
    DistillPhase,
    DistillSample,
    DistillSchedule,
    DistillTargets,
    DistillWeights,
    TrainingDivergedError,
    default_schedule,
    distill_loss,
    distill_loss_grad,
    make_targets,
    train_student,
)
from .training import (
    CheckpointFormatError,
    CheckpointIntegrityError,
    CheckpointVersionError,
    GradAuditReport,
    TrainConfig,
    grad_audit,
    load_checkpoint,
    preprocess_content,
    save_checkpoint,
    train_baseline,
)
from .augment import AugmentSpec, run_augment

__version__ = "0.1.0"
