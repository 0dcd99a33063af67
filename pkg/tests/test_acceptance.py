"""Acceptance gate: one test per shipping requirement.

`pytest tests/test_acceptance.py -v` prints one PASS/FAIL line per
criterion.  The slow training checks live here and nowhere else; every
test also asserts its own wall-clock budget.
"""

import dataclasses
import json
import math
import struct
import time

import numpy as np
from shapely.geometry import Polygon

from selstyle.data import (
    QuadAnnotation,
    load_annotations,
    load_image,
    load_manifest,
    rasterize_mask,
)
from selstyle.augment import AugmentSpec, run_augment
from selstyle.distill import (
    DistillPhase,
    DistillSample,
    DistillSchedule,
    DistillWeights,
    distill_loss,
    make_targets,
    train_student,
)
from selstyle.network import (
    NetworkConfig,
    StyleNetwork,
    backward,
    cond_instance_norm,
    forward,
    forward_cached,
    init_network,
    one_hot,
)
from selstyle.perceptual import (
    ExtractorConfig,
    FeatureExtractor,
    default_layers,
    gram,
    style_grams,
    total_loss_grad,
)
from selstyle.training import (
    CHECKPOINT_MAGIC,
    CheckpointFormatError,
    CheckpointIntegrityError,
    CheckpointVersionError,
    TrainConfig,
    grad_audit,
    load_checkpoint,
    save_checkpoint,
    train_baseline,
)
from selstyle.twostage import blend
from oracles import (
    cond_instance_norm_oracle,
    distill_loss_oracle,
    gram_oracle,
    make_targets_oracle,
    rasterize_oracle,
)
from synth import make_scene_dataset, random_rect_quad, tiny_net


def _elapsed_under(t0, limit, label):
    dt = time.monotonic() - t0
    assert dt < limit, f"{label} took {dt:.1f}s, budget {limit}s"
    return dt


def _jitter_banks(net, seed):
    """Fresh banks are identical across styles; spread them out."""
    rng = np.random.default_rng(seed)
    for name, p in net.params.items():
        if name.startswith("cin."):
            p += rng.normal(0, 0.3, p.shape).astype(p.dtype)
    return net


# ---------------------------------------------------------------------------
# criterion 1: core ops match independent brute-force oracles
# ---------------------------------------------------------------------------

def test_criterion_1_oracle_equivalence():
    t0 = time.monotonic()
    rng = np.random.default_rng(2024)
    counts = dict(gram=0, cin=0, targets=0, loss=0, raster=0)
    worst = dict(gram=0.0, cin=0.0, targets=0.0, loss=0.0)

    def check(key, got, want, atol):
        diff = float(np.max(np.abs(np.asarray(got, np.float64)
                                   - np.asarray(want, np.float64))))
        assert diff <= atol, f"{key}: {diff} > {atol}"
        counts[key] += 1
        worst[key] = max(worst[key], diff)

    for dtype, atol in ((np.float32, 1e-6), (np.float64, 1e-12)):
        # keep magnitudes small enough that the absolute tolerance is
        # meaningful for 32-bit arithmetic
        f_scale, f_hi = (0.25, 5) if dtype is np.float32 else (0.5, 6)
        for _ in range(60):
            c, h, w = (int(rng.integers(1, f_hi)) for _ in range(3))
            f = (f_scale * rng.normal(size=(c, h, w))).astype(dtype)
            normalize = bool(rng.integers(2))
            check("gram", gram(f, normalize), gram_oracle(f, normalize), atol)

        for _ in range(60):
            n = int(rng.integers(1, 4))
            c = int(rng.integers(1, 5))
            h, w = int(rng.integers(2, 5)), int(rng.integers(2, 5))
            x = rng.normal(size=(c, h, w)).astype(dtype)
            scales = (1 + 0.3 * rng.normal(size=(n, c))).astype(dtype)
            shifts = (0.3 * rng.normal(size=(n, c))).astype(dtype)
            weights = rng.dirichlet(np.ones(n))
            check("cin", cond_instance_norm(x, scales, shifts, weights),
                  cond_instance_norm_oracle(x, scales, shifts, weights), atol)

        for _ in range(60):
            h, w = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            content = rng.uniform(0, 1, (h, w, 3)).astype(dtype)
            stylized = rng.uniform(0, 1, (h, w, 3)).astype(dtype)
            mask = (rng.uniform(size=(h, w)) < 0.5).astype(dtype)
            t = make_targets(content, stylized, mask)
            want_text, want_bg = make_targets_oracle(content, stylized, mask)
            check("targets", t.text_target, want_text, atol)
            check("targets", t.background_target, want_bg, atol)

            pred = rng.uniform(0, 1, (h, w, 3)).astype(dtype)
            hi = 2.0 if dtype is np.float32 else 100.0
            tw, bw = float(rng.uniform(0, hi)), float(rng.uniform(0, 2))
            red = "mean" if rng.integers(2) else "sum"
            got = distill_loss(pred, t, mask, DistillWeights(tw, bw), red)
            want = distill_loss_oracle(pred, want_text, want_bg, mask,
                                       tw, bw, red)
            check("loss", got, want, atol)

    while counts["raster"] < 110:
        h, w = int(rng.integers(3, 13)), int(rng.integers(3, 13))
        quads = [random_rect_quad(rng, h, w)
                 for _ in range(int(rng.integers(1, 3)))]
        pts = [(int(rng.integers(0, w)), int(rng.integers(0, h)))
               for _ in range(4)]
        cx = sum(p[0] for p in pts) / 4
        cy = sum(p[1] for p in pts) / 4
        pts.sort(key=lambda p: math.atan2(p[1] - cy, p[0] - cx))
        if len(set(pts)) == 4 and Polygon(pts).is_valid:
            quads.append(tuple(pts))
        got = rasterize_mask([QuadAnnotation(q, "x") for q in quads], h, w)
        assert np.array_equal(got, rasterize_oracle(quads, h, w))
        counts["raster"] += 1

    for key, n in counts.items():
        assert n >= 100, f"only {n} {key} instances"
    dt = _elapsed_under(t0, 30, "oracle equivalence")
    print(f"criterion 1: {sum(counts.values())} instances, worst diffs "
          f"{ {k: f'{v:.2e}' for k, v in worst.items()} } ({dt:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 2: analytic gradients match central differences
# ---------------------------------------------------------------------------

def test_criterion_2_gradient_audits():
    t0 = time.monotonic()
    total = grad_audit("total_loss")
    assert total.passed, str(total)
    assert total.tolerance == 1e-4
    dist = grad_audit("distill_loss")
    assert dist.passed, str(dist)
    assert dist.tolerance == 1e-6
    dt = _elapsed_under(t0, 60, "gradient audits")
    print(f"criterion 2: total_loss {total.max_rel_error:.2e} < 1e-4, "
          f"distill_loss {dist.max_rel_error:.2e} < 1e-6 ({dt:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 3: probability-map blending identities
# ---------------------------------------------------------------------------

def test_criterion_3_blend_identities():
    t0 = time.monotonic()
    rng = np.random.default_rng(3)
    worst = 0.0
    for dtype in (np.float32, np.float64):
        for _ in range(25):
            h, w = int(rng.integers(1, 12)), int(rng.integers(1, 12))
            c = rng.uniform(0, 1, (h, w, 3)).astype(dtype)
            s = rng.uniform(0, 1, (h, w, 3)).astype(dtype)
            assert np.array_equal(blend(c, s, np.zeros((h, w), dtype)), c)
            assert np.array_equal(blend(c, s, np.ones((h, w), dtype)), s)
            p = rng.uniform(0, 1, (h, w)).astype(dtype)
            lhs = blend(c, s, p).astype(np.float64)
            rhs = c.astype(np.float64) + \
                p.astype(np.float64)[:, :, None] * (s - c).astype(np.float64)
            diff = float(np.abs(lhs - rhs).max())
            assert diff <= 1e-7
            worst = max(worst, diff)
    dt = _elapsed_under(t0, 30, "blend identities")
    print(f"criterion 3: endpoints bit-exact, convex identity within "
          f"{worst:.2e} (<= 1e-7) ({dt:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 4: student overfits one checkerboard-masked sample
# ---------------------------------------------------------------------------

def test_criterion_4_distill_overfit():
    t0 = time.monotonic()
    rng = np.random.default_rng(5)
    image = rng.uniform(0, 1, (16, 16, 3)).astype(np.float32)
    mask = (np.indices((16, 16)).sum(axis=0) % 2).astype(np.float32)
    teacher = init_network(NetworkConfig(num_styles=2, seed=11))

    schedule = DistillSchedule(
        phases=(DistillPhase(500, DistillWeights(100.0, 1.0)),
                DistillPhase(1500, DistillWeights(1.0, 1.0))),
        learning_rate=1e-2, batch_size=1, seed=5,
    )
    steps = sum(p.epochs for p in schedule.phases)  # one sample per step
    assert steps <= 2000
    student = train_student(teacher, [DistillSample(image, mask)], schedule,
                            style=0)

    targets = make_targets(image, forward(teacher, image, 0), mask)
    final = distill_loss(forward(student, image, 0), targets, mask,
                         DistillWeights(1.0, 1.0))
    assert final < 1e-3, f"loss {final} after {steps} steps"
    dt = _elapsed_under(t0, 300, "distillation overfit")
    print(f"criterion 4: loss {final:.2e} < 1e-3 after {steps} steps "
          f"({dt:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 5: baseline training drives style loss down
# ---------------------------------------------------------------------------

def test_criterion_5_baseline_progress(tmp_path):
    t0 = time.monotonic()
    make_scene_dataset(tmp_path / "data", n_images=32, size=16, seed=0)
    from synth import write_style_images
    styles = write_style_images(tmp_path / "styles", n=2, size=16, seed=0)

    config = TrainConfig(
        network=NetworkConfig(num_styles=2, seed=0),
        style_paths=tuple(styles),
        dataset=load_manifest(tmp_path / "data" / "manifest.json"),
        steps=500,
        batch_size=4,
        learning_rate=1e-3,
        crop=16,
        seed=0,
    )
    trace = tmp_path / "trace.csv"
    train_baseline(config, trace_path=trace)

    rows = trace.read_text().strip().splitlines()[1:]
    assert len(rows) == 500
    style = [float(r.split(",")[3]) for r in rows]
    first = float(np.mean(style[:50]))
    last = float(np.mean(style[-50:]))
    assert last <= 0.5 * first, f"style loss {first:.3e} -> {last:.3e}"
    dt = _elapsed_under(t0, 600, "baseline training")
    print(f"criterion 5: style loss decile means {first:.2e} -> {last:.2e}, "
          f"ratio {last / first:.3f} <= 0.5 ({dt:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 6: styles are isolated in the parameter banks
# ---------------------------------------------------------------------------

def test_criterion_6_style_isolation():
    t0 = time.monotonic()
    net = _jitter_banks(tiny_net(num_styles=3, seed=21), 22)
    rng = np.random.default_rng(23)
    image = rng.uniform(0, 1, (8, 8, 3)).astype(np.float32)

    extractor = FeatureExtractor.from_config(ExtractorConfig(widths=(3, 5)))
    layers = default_layers(extractor)
    grams = style_grams(extractor, rng.uniform(0, 1, (8, 8, 3)), layers)

    k = 1
    out, cache = forward_cached(net, image, one_hot(k, 3))
    _, d_out = total_loss_grad(image, grams, out, extractor, layers,
                               (1.0, 1.0))
    grads = backward(net, cache, d_out)
    touched = 0
    for name, g in grads.items():
        if not name.startswith("cin."):
            continue
        for row in range(3):
            if row == k:
                touched += int(np.any(g[row] != 0.0))
            else:
                assert np.all(g[row] == 0.0), f"{name} row {row} leaked"
    assert touched > 0

    # conditioning on style k equals running a one-style network built
    # from style k's rows, bit for bit
    solo_params = {
        name: (p[k:k + 1].copy() if name.startswith("cin.") else p.copy())
        for name, p in net.params.items()
    }
    solo = StyleNetwork(dataclasses.replace(net.config, num_styles=1),
                        solo_params)
    assert np.array_equal(forward(net, image, k), forward(solo, image, 0))
    dt = _elapsed_under(t0, 60, "style isolation")
    print(f"criterion 6: unused bank rows get exact-zero gradients; "
          f"one-hot forward matches extracted single-style net ({dt:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 7: dataset augmentation output contract
# ---------------------------------------------------------------------------

def test_criterion_7_augmentation(tmp_path):
    t0 = time.monotonic()
    src = make_scene_dataset(tmp_path / "in", n_images=10, size=16, seed=1)
    net = _jitter_banks(tiny_net(num_styles=4, seed=31), 32)
    spec = AugmentSpec(styles_per_image=4, provider="feather",
                       feather_radius=0.0, seed=7)

    out = run_augment(net, src, tmp_path / "out", spec)
    assert len(out.entries) == 50  # 10 originals + 10 * 4 variants
    for e in out.entries:
        assert (tmp_path / "out" / e.image).is_file()
        assert (tmp_path / "out" / e.annotations).is_file()

    prov = out.extra["augment"]["variants"]
    by_image = {e.image: e for e in out.entries}
    for rel, info in prov.items():
        variant = by_image[rel]
        source = by_image[info["source"]]
        assert (tmp_path / "out" / variant.annotations).read_bytes() == \
            (tmp_path / "out" / source.annotations).read_bytes()

        # binary map: every pixel outside the text quads survives the
        # 8-bit round trip bit-identical
        v = load_image(tmp_path / "out" / variant.image)
        o = load_image(tmp_path / "out" / source.image)
        annots = load_annotations(tmp_path / "out" / variant.annotations)
        mask = rasterize_mask(annots, o.shape[0], o.shape[1])
        assert np.array_equal(v[mask == 0], o[mask == 0])

    run_augment(net, src, tmp_path / "again", spec)
    files = sorted(p.relative_to(tmp_path / "out")
                   for p in (tmp_path / "out").rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(tmp_path / "again")
                           for p in (tmp_path / "again").rglob("*")
                           if p.is_file())
    for rel in files:
        assert (tmp_path / "out" / rel).read_bytes() == \
            (tmp_path / "again" / rel).read_bytes(), rel

    dt = _elapsed_under(t0, 120, "augmentation")
    print(f"criterion 7: 50 image+annotation pairs, annotations byte-equal "
          f"per group, background bit-stable, rerun byte-identical "
          f"({dt:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 8: checkpoints round-trip losslessly and reject damage
# ---------------------------------------------------------------------------

def test_criterion_8_checkpoint(tmp_path):
    t0 = time.monotonic()
    net = _jitter_banks(tiny_net(num_styles=2, seed=41), 42)
    path = tmp_path / "model.ckpt"
    save_checkpoint(net, path, extractor=ExtractorConfig(),
                    metadata={"purpose": "acceptance"})

    loaded = load_checkpoint(path)
    assert loaded.config == net.config
    for name in net.params:
        assert np.array_equal(loaded.params[name], net.params[name])

    raw = path.read_bytes()

    flipped = tmp_path / "flipped.ckpt"
    damage = bytearray(raw)
    damage[-5] ^= 0x01
    flipped.write_bytes(bytes(damage))
    try:
        load_checkpoint(flipped)
        raise AssertionError("flipped byte went undetected")
    except CheckpointIntegrityError:
        pass

    truncated = tmp_path / "truncated.ckpt"
    truncated.write_bytes(raw[:-16])
    try:
        load_checkpoint(truncated)
        raise AssertionError("truncation went undetected")
    except CheckpointIntegrityError:
        pass

    head = len(CHECKPOINT_MAGIC) + 4
    (mlen,) = struct.unpack_from("<I", raw, len(CHECKPOINT_MAGIC))
    manifest = json.loads(raw[head:head + mlen])
    manifest["format_version"] = 99
    mbytes = json.dumps(manifest).encode()
    future = tmp_path / "future.ckpt"
    future.write_bytes(CHECKPOINT_MAGIC + struct.pack("<I", len(mbytes))
                       + mbytes + raw[head + mlen:])
    try:
        load_checkpoint(future)
        raise AssertionError("future version went undetected")
    except CheckpointVersionError:
        pass

    alien = tmp_path / "alien.ckpt"
    alien.write_bytes(b"PNGJPEGs" + raw[8:])
    try:
        load_checkpoint(alien)
        raise AssertionError("bad magic went undetected")
    except CheckpointFormatError:
        pass

    dt = _elapsed_under(t0, 30, "checkpoint round trip")
    print(f"criterion 8: round trip bit-exact; flip/truncate/version/magic "
          f"damage all rejected ({dt:.1f}s)")
