"""Grow an annotated dataset with restyled text variants.

Builds a six-image dataset with one text quad each, then augments it
with two style variants per image.  Geometry never changes, so every
variant reuses its source annotation file; the output manifest records
which style produced which file.
"""

import json
from pathlib import Path

import numpy as np

from selstyle import (
    AugmentSpec,
    DatasetManifest,
    ManifestEntry,
    NetworkConfig,
    QuadAnnotation,
    init_network,
    run_augment,
    save_annotations,
    save_image,
    save_manifest,
)

root = Path(__file__).parent / "out" / "augment"
src = root / "source"
(src / "img").mkdir(parents=True, exist_ok=True)
(src / "gt").mkdir(exist_ok=True)
rng = np.random.default_rng(11)

entries = []
for i in range(6):
    img = np.clip(rng.uniform(0.3, 0.7, (1, 1, 3))
                  + rng.uniform(-0.15, 0.15, (24, 24, 3)), 0, 1)
    save_image(img.astype(np.float32), src / "img" / f"scene{i}.png")
    x, y = rng.integers(2, 10, size=2)
    quad = ((int(x), int(y)), (int(x) + 10, int(y)),
            (int(x) + 10, int(y) + 6), (int(x), int(y) + 6))
    save_annotations([QuadAnnotation(quad, f"word{i}")],
                     src / "gt" / f"scene{i}.txt")
    entries.append(ManifestEntry(image=f"img/scene{i}.png",
                                 annotations=f"gt/scene{i}.txt"))
save_manifest(DatasetManifest(root=src, entries=entries),
              src / "manifest.json")

# an untrained net is enough to demonstrate the mechanics; swap in
# load_checkpoint(...) for real output
net = init_network(NetworkConfig(num_styles=3, stem_width=4, down_widths=(8,),
                                 num_res_blocks=1, stem_kernel=3, seed=0))
for name, p in net.params.items():
    if name.startswith("cin."):
        p += rng.normal(0, 0.3, p.shape).astype(p.dtype)

spec = AugmentSpec(styles_per_image=2, provider="feather",
                   feather_radius=1.5, seed=0)
result = run_augment(net, src / "manifest.json", root / "augmented", spec)

print(f"{len(entries)} source images -> {len(result.entries)} entries")
for e in result.entries[:6]:
    print(f"  {e.image:28s} {e.annotations}")
print("  ...")

provenance = json.loads((root / "augmented" / "manifest.json").read_text())
variants = provenance["augment"]["variants"]
sample = next(iter(variants.items()))
print(f"provenance example: {sample[0]} came from {sample[1]['source']} "
      f"under style {sample[1]['style']}")
