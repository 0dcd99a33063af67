"""Independent brute-force reference implementations.

Everything here is deliberately written as plain scalar loops (plus
shapely for the geometry), sharing no code with the package, so that a
match between the two is meaningful evidence rather than an identity.
"""

import math

import numpy as np
from shapely.geometry import Point, Polygon


def gram_oracle(feature, normalize=True):
    c, h, w = feature.shape
    g = np.zeros((c, c), dtype=np.float64)
    for i in range(c):
        for j in range(c):
            acc = 0.0
            for y in range(h):
                for x in range(w):
                    acc += float(feature[i, y, x]) * float(feature[j, y, x])
            g[i, j] = acc
    if normalize:
        g /= c * h * w
    return g


def instance_norm_oracle(x, scale, shift, eps=1e-5):
    c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for ch in range(c):
        vals = [float(x[ch, y, xx]) for y in range(h) for xx in range(w)]
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        denom = math.sqrt(var + eps)
        for y in range(h):
            for xx in range(w):
                norm = (float(x[ch, y, xx]) - mean) / denom
                out[ch, y, xx] = norm * float(scale[ch]) + float(shift[ch])
    return out


def cond_instance_norm_oracle(x, scales, shifts, weights, eps=1e-5):
    n, c = scales.shape
    mixed_scale = np.zeros(c, dtype=np.float64)
    mixed_shift = np.zeros(c, dtype=np.float64)
    for k in range(n):
        for ch in range(c):
            mixed_scale[ch] += float(weights[k]) * float(scales[k, ch])
            mixed_shift[ch] += float(weights[k]) * float(shifts[k, ch])
    return instance_norm_oracle(x, mixed_scale, mixed_shift, eps)


def make_targets_oracle(content, stylized, mask):
    h, w, c = content.shape
    text = np.zeros_like(content, dtype=np.float64)
    background = np.zeros_like(content, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            m = float(mask[y, x])
            for ch in range(c):
                text[y, x, ch] = float(stylized[y, x, ch]) * m
                background[y, x, ch] = float(content[y, x, ch]) * (1.0 - m)
    return text, background


def distill_loss_oracle(pred, text_target, background_target, mask,
                        text_weight, background_weight, reduction="mean"):
    h, w, c = pred.shape
    text_acc = 0.0
    bg_acc = 0.0
    for y in range(h):
        for x in range(w):
            m = float(mask[y, x])
            for ch in range(c):
                p = float(pred[y, x, ch])
                text_acc += (p * m - float(text_target[y, x, ch])) ** 2
                bg_acc += (p * (1.0 - m)
                           - float(background_target[y, x, ch])) ** 2
    if reduction == "mean":
        text_acc /= h * w * c
        bg_acc /= h * w * c
    return text_weight * text_acc + background_weight * bg_acc


def blend_oracle(content, stylized, probmap):
    h, w, c = content.shape
    out = np.zeros_like(content, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            p = float(probmap[y, x])
            for ch in range(c):
                out[y, x, ch] = (p * float(stylized[y, x, ch])
                                 + (1.0 - p) * float(content[y, x, ch]))
    return out


def content_loss_oracle(a, b, reduction="mean"):
    fa = np.asarray(a, dtype=np.float64).reshape(-1)
    fb = np.asarray(b, dtype=np.float64).reshape(-1)
    acc = 0.0
    for i in range(fa.size):
        acc += (fa[i] - fb[i]) ** 2
    if reduction == "mean":
        acc /= fa.size
    return acc


def conv2d_oracle(x, w, b, stride=1, padding="same"):
    c, h, ww = x.shape
    f, _, kh, kw = w.shape
    ph = kh // 2 if padding == "same" else 0
    pw = kw // 2 if padding == "same" else 0
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (ww + 2 * pw - kw) // stride + 1
    out = np.zeros((f, oh, ow), dtype=np.float64)
    for fo in range(f):
        for oy in range(oh):
            for ox in range(ow):
                acc = float(b[fo])
                for ci in range(c):
                    for ky in range(kh):
                        for kx in range(kw):
                            iy = oy * stride + ky - ph
                            ix = ox * stride + kx - pw
                            if 0 <= iy < h and 0 <= ix < ww:
                                acc += (float(x[ci, iy, ix])
                                        * float(w[fo, ci, ky, kx]))
                out[fo, oy, ox] = acc
    return out


def rasterize_oracle(quads, height, width):
    """Pixel centers covered by any quad, boundary inclusive (shapely)."""
    mask = np.zeros((height, width), dtype=np.float32)
    polys = [Polygon(points) for points in quads]
    for y in range(height):
        for x in range(width):
            pt = Point(x, y)
            if any(poly.covers(pt) for poly in polys):
                mask[y, x] = 1.0
    return mask


def feather_oracle(mask, radius):
    h, w = mask.shape
    if radius == 0:
        return np.asarray(mask, dtype=np.float64)
    text = [(y, x) for y in range(h) for x in range(w) if mask[y, x] == 1]
    out = np.zeros((h, w), dtype=np.float64)
    if not text:
        return out
    for y in range(h):
        for x in range(w):
            d = min(math.hypot(y - ty, x - tx) for ty, tx in text)
            out[y, x] = min(1.0, max(0.0, 1.0 - d / radius))
    return out
