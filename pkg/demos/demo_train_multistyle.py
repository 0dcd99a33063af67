"""Train a tiny two-style network on synthetic data, then stylize.

Uses a cut-down architecture and 80 steps so the whole run takes well
under a minute.  Shows the loss trace, saves a checkpoint, and renders
the same content under style 0, style 1, and a 50/50 mix.
"""

from pathlib import Path

import numpy as np

from selstyle import (
    DatasetManifest,
    ExtractorConfig,
    ManifestEntry,
    NetworkConfig,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    save_image,
    save_manifest,
    stylize_image,
    train_baseline,
)

out = Path(__file__).parent / "out" / "train"
out.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(0)

# ---------------------------------------------------------------------------
# synthetic content: flat colors with a little noise
# ---------------------------------------------------------------------------

(out / "img").mkdir(exist_ok=True)
entries = []
for i in range(16):
    base = rng.uniform(0.2, 0.8, (1, 1, 3))
    img = np.clip(base + rng.uniform(-0.2, 0.2, (16, 16, 3)), 0, 1)
    save_image(img.astype(np.float32), out / "img" / f"{i}.png")
    entries.append(ManifestEntry(image=f"img/{i}.png"))
manifest = DatasetManifest(root=out, entries=entries)
save_manifest(manifest, out / "manifest.json")

# two style targets with very different statistics: horizontal vs
# vertical stripes
yy, xx = np.indices((16, 16))
for k, lattice in enumerate((yy, xx)):
    stripes = (lattice // 2 % 2).astype(np.float32)
    color = rng.uniform(0.3, 1.0, 3).astype(np.float32)
    save_image(stripes[:, :, None] * color, out / f"style{k}.png")

# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

config = TrainConfig(
    network=NetworkConfig(num_styles=2, stem_width=4, down_widths=(8,),
                          num_res_blocks=1, stem_kernel=3),
    style_paths=(out / "style0.png", out / "style1.png"),
    dataset=manifest,
    steps=80,
    batch_size=4,
    crop=16,
    extractor=ExtractorConfig(widths=(4, 8)),
    seed=0,
)
net = train_baseline(config, trace_path=out / "trace.csv")
save_checkpoint(net, out / "model.ckpt", extractor=config.extractor)

rows = (out / "trace.csv").read_text().strip().splitlines()
print(rows[0])
for row in rows[1:4] + rows[-3:]:
    print(row)

# ---------------------------------------------------------------------------
# inference: pure styles and an interpolation
# ---------------------------------------------------------------------------

net = load_checkpoint(out / "model.ckpt")
content = np.clip(0.5 + rng.uniform(-0.2, 0.2, (24, 24, 3)), 0, 1)
content = content.astype(np.float32)
save_image(content, out / "content.png")
save_image(stylize_image(net, content, 0), out / "result_style0.png")
save_image(stylize_image(net, content, 1), out / "result_style1.png")
save_image(stylize_image(net, content, np.array([0.5, 0.5])),
           out / "result_mix.png")
print(f"checkpoint and renders written to {out}")
