"""Command-line entry points.

Subcommands: train-style, train-distill, stylize, blend, augment,
gradcheck.  Settings come from (highest priority first) command-line
flags, the flat key=value file named by --config, then built-in
defaults.  Exit codes: 0 success, 1 operation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np

from .augment import AugmentSpec, run_augment
from .data import load_image, load_manifest, load_probmap, save_image
from .distill import (
    DistillPhase,
    DistillSchedule,
    DistillWeights,
    train_student,
)
from .network import NetworkConfig
from .perceptual import ExtractorConfig
from .training import (
    TrainConfig,
    grad_audit,
    load_checkpoint,
    save_checkpoint,
    train_baseline,
)
from .twostage import blend, stylize_image, stylize_selective

__all__ = ["main"]


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------

_BOOLEANS = {"1": True, "true": True, "yes": True, "on": True,
             "0": False, "false": False, "no": False, "off": False}


def _load_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string("[settings]\n" + text)
    merged: dict[str, str] = {}
    for section in cp.sections():
        merged.update(cp[section])
    return merged


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    try:
        return _BOOLEANS[str(value).strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {value!r}") from None


def _parse_int_tuple(value) -> tuple[int, ...]:
    value = str(value).strip()
    if not value:
        return ()
    return tuple(int(v) for v in value.split(","))


def _parse_float_vector(value) -> np.ndarray:
    return np.array([float(v) for v in str(value).split(",")])


class Settings:
    """Flag-over-config-over-default lookup for one command invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = _load_config(getattr(args, "config", None))

    def get(self, key: str, default=None, cast=None):
        flag = getattr(self.args, key, None)
        if flag is not None:
            value = flag
        elif key in self.config:
            value = self.config[key]
        else:
            return default
        return cast(value) if cast else value

    def require(self, key: str, cast=None):
        value = self.get(key, default=None, cast=cast)
        if value is None:
            raise ValueError(f"missing required setting {key!r} "
                             f"(flag --{key.replace('_', '-')} or config key)")
        return value


def _resolve_style(settings: Settings):
    weights = settings.get("style_weights")
    index = settings.get("style_index", cast=int)
    if weights is not None:
        return _parse_float_vector(weights)
    return index if index is not None else 0


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train_style(args: argparse.Namespace) -> int:
    s = Settings(args)
    manifest = load_manifest(s.require("manifest"))
    styles = args.style or []
    if not styles:
        styles = [v.strip() for v in str(s.require("styles")).split(",")]
    out = s.require("out")

    network = NetworkConfig(
        num_styles=len(styles),
        stem_width=s.get("stem_width", 8, int),
        down_widths=s.get("down_widths", (16, 32), _parse_int_tuple),
        num_res_blocks=s.get("num_res_blocks", 3, int),
        stem_kernel=s.get("stem_kernel", 9, int),
        kernel=s.get("kernel", 3, int),
        seed=s.get("seed", 0, int),
    )
    extractor = ExtractorConfig(
        widths=s.get("extractor_widths", (4, 8, 16), _parse_int_tuple),
        kernel=s.get("extractor_kernel", 3, int),
        stride=s.get("extractor_stride", 2, int),
        seed=s.get("extractor_seed", 0, int),
    )
    config = TrainConfig(
        network=network,
        style_paths=tuple(styles),
        dataset=manifest,
        steps=s.get("steps", 500, int),
        batch_size=s.get("batch_size", 4, int),
        learning_rate=s.get("learning_rate", 1e-3, float),
        content_weight=s.get("content_weight", 1.0, float),
        style_weight=s.get("style_weight", 1.0, float),
        crop=s.get("crop", 32, int),
        extractor=extractor,
        seed=s.get("seed", 0, int),
    )
    net = train_baseline(config, trace_path=s.get("trace"))
    save_checkpoint(net, out, extractor=extractor,
                    metadata={"command": "train-style",
                              "steps": config.steps, "seed": config.seed})
    print(f"saved {network.num_styles}-style checkpoint to {out}")
    return 0


def cmd_train_distill(args: argparse.Namespace) -> int:
    s = Settings(args)
    teacher = load_checkpoint(s.require("checkpoint"))
    manifest = load_manifest(s.require("manifest"))
    out = s.require("out")

    schedule = DistillSchedule(
        phases=(
            DistillPhase(s.get("phase1_epochs", 77, int),
                         DistillWeights(s.get("phase1_text_weight", 100.0, float),
                                        s.get("phase1_background_weight", 1.0,
                                              float))),
            DistillPhase(s.get("phase2_epochs", 50, int),
                         DistillWeights(s.get("phase2_text_weight", 1.0, float),
                                        s.get("phase2_background_weight", 1.0,
                                              float))),
        ),
        learning_rate=s.get("learning_rate", 1e-3, float),
        batch_size=s.get("batch_size", 4, int),
        seed=s.get("seed", 0, int),
        style_mode=s.get("style_mode", "fixed"),
        cache_targets=s.get("cache_targets", False, _parse_bool),
    )
    student = train_student(teacher, manifest, schedule,
                            style=s.get("style_index", 0, int),
                            trace_path=s.get("trace"))
    save_checkpoint(student, out,
                    metadata={"command": "train-distill",
                              "teacher": str(s.require("checkpoint")),
                              "seed": schedule.seed})
    print(f"saved distilled student checkpoint to {out}")
    return 0


def cmd_stylize(args: argparse.Namespace) -> int:
    s = Settings(args)
    net = load_checkpoint(s.require("checkpoint"))
    image = load_image(s.require("input"))
    out = s.require("out")
    style = _resolve_style(s)

    probmap_path = s.get("probmap")
    if probmap_path is not None:
        result = stylize_selective(net, image, style,
                                   load_probmap(probmap_path))
    else:
        result = stylize_image(net, image, style)
    save_image(result, out)
    print(f"wrote {out}")
    return 0


def cmd_blend(args: argparse.Namespace) -> int:
    s = Settings(args)
    content = load_image(s.require("content"))
    stylized = load_image(s.require("stylized"))
    probmap = load_probmap(s.require("probmap"))
    out = s.require("out")
    save_image(blend(content, stylized, probmap), out)
    print(f"wrote {out}")
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    s = Settings(args)
    net = load_checkpoint(s.require("checkpoint"))
    manifest = load_manifest(s.require("manifest"))
    out = s.require("out")

    styles = s.get("styles")
    spec = AugmentSpec(
        styles_per_image=s.get("styles_per_image", 1, int),
        mode=s.get("mode", "two-stage"),
        styles=_parse_int_tuple(styles) if styles is not None else None,
        seed=s.get("seed", 0, int),
        provider=s.get("provider", "feather"),
        feather_radius=s.get("feather_radius", 0.0, float),
        constant_value=s.get("constant_value", 1.0, float),
        include_originals=not s.get("variants_only", False, _parse_bool),
    )
    result = run_augment(net, manifest, out, spec)
    print(f"wrote {len(result.entries)} entries to {out}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    s = Settings(args)
    kinds = [args.loss] if args.loss else ["total_loss", "distill_loss"]
    seed = s.get("seed", 0, int)
    ok = True
    for kind in kinds:
        report = grad_audit(kind, seed=seed)
        print(report)
        ok = ok and report.passed
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value settings file")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", help="output file or directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selstyle",
        description="Selective text style transfer: training, inference "
                    "and dataset augmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-style",
                       help="train a multi-style transfer network")
    _add_common(p)
    p.add_argument("--manifest", help="content dataset manifest")
    p.add_argument("--style", action="append",
                   help="style image path (repeat once per style)")
    p.add_argument("--steps", type=int, help="optimizer steps")
    p.add_argument("--trace", help="write a loss trace CSV here")
    p.set_defaults(func=cmd_train_style)

    p = sub.add_parser("train-distill",
                       help="distill a trained network into a student that "
                            "stylizes only text regions")
    _add_common(p)
    p.add_argument("--checkpoint", help="teacher checkpoint")
    p.add_argument("--manifest", help="annotated dataset manifest")
    p.add_argument("--style-index", type=int, dest="style_index",
                   help="style condition in fixed mode")
    p.add_argument("--trace", help="write a loss trace CSV here")
    p.set_defaults(func=cmd_train_distill)

    p = sub.add_parser("stylize", help="stylize one image")
    _add_common(p)
    p.add_argument("--checkpoint", help="network checkpoint")
    p.add_argument("--input", help="input image")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--style-index", type=int, dest="style_index")
    g.add_argument("--style-weights", dest="style_weights",
                   help="comma-separated blend weights, one per style")
    p.add_argument("--probmap",
                   help="text probability map; given one, only (probably) "
                        "textual pixels are stylized")
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("blend",
                       help="blend a stylized image into its content image "
                            "through a probability map")
    _add_common(p)
    p.add_argument("--content", help="content image")
    p.add_argument("--stylized", help="stylized image")
    p.add_argument("--probmap", help="text probability map")
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("augment",
                       help="emit a dataset with restyled-text variants")
    _add_common(p)
    p.add_argument("--checkpoint", help="network checkpoint")
    p.add_argument("--manifest", help="input dataset manifest")
    p.add_argument("--styles-per-image", type=int, dest="styles_per_image")
    p.add_argument("--styles", help="explicit comma-separated style indices")
    p.add_argument("--mode", choices=["two-stage", "end-to-end"])
    p.add_argument("--provider", choices=["feather", "file", "constant"])
    p.add_argument("--feather-radius", type=float, dest="feather_radius")
    p.add_argument("--variants-only", action="store_const", const=True,
                   dest="variants_only",
                   help="omit the originals from the output dataset")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("gradcheck",
                       help="verify analytic loss gradients against finite "
                            "differences")
    _add_common(p)
    p.add_argument("--loss", choices=["total_loss", "distill_loss"],
                   help="audit a single loss (default: both)")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
