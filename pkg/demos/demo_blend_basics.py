"""Probability-map blending on a synthetic scene.

Builds a small image with two annotated text boxes, rasterizes the boxes
to a mask, feathers it, and blends a recolored copy of the image back in
through the map.  Everything lands in demos/out/blend/.
"""

import numpy as np

from selstyle import (
    QuadAnnotation,
    blend,
    feather_mask,
    rasterize_mask,
    save_image,
    save_probmap,
)

from pathlib import Path

out = Path(__file__).parent / "out" / "blend"
out.mkdir(parents=True, exist_ok=True)

# a flat gray scene with two bright rectangles standing in for text
h, w = 48, 64
content = np.full((h, w, 3), 0.45, np.float32)
content[10:20, 8:40] = 0.9
content[30:42, 24:56] = 0.85

annots = [
    QuadAnnotation(((8, 10), (39, 10), (39, 19), (8, 19)), "HELLO"),
    QuadAnnotation(((24, 30), (55, 30), (55, 41), (24, 41)), "WORLD"),
]

# a stand-in for the stylization stage: channel-swapped and darkened
stylized = content[:, :, ::-1] * 0.6
stylized[:, :, 0] += 0.3

# binary mask straight from the quads
mask = rasterize_mask(annots, h, w)
save_probmap(mask, out / "mask.png")
print(f"mask covers {int(mask.sum())} of {h * w} pixels")

# hard blend: text pixels swap style, background is untouched bit for bit
hard = blend(content, stylized, mask)
assert np.array_equal(hard[mask == 0], content[mask == 0])
save_image(content, out / "content.png")
save_image(stylized, out / "stylized.png")
save_image(hard, out / "blend_hard.png")

# feathering softens the seam; radius is in pixels
for radius in (2.0, 5.0):
    soft = blend(content, stylized, feather_mask(mask, radius))
    save_image(soft, out / f"blend_feather_r{int(radius)}.png")

print(f"wrote {len(list(out.iterdir()))} files to {out}")
