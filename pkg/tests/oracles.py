"""Independent re-derivations used as test oracles (plain Python loops)."""

import itertools
import math

IGNORE = 255


def brute_scores(pairs, num_classes):
    """(pixel accuracy, mean IoU) over a list of (pred, gt) maps, by set counting."""
    pixels = []
    for pred, gt in pairs:
        for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
            if g != IGNORE:
                pixels.append((p, g))
    if not pixels:
        return 0.0, 0.0
    acc = sum(p == g for p, g in pixels) / len(pixels)
    ious = []
    for c in range(num_classes):
        inter = sum(p == c and g == c for p, g in pixels)
        union = sum(p == c or g == c for p, g in pixels)
        if union:
            ious.append(inter / union)
    return acc, (sum(ious) / len(ious) if ious else 0.0)


def binary_maps_2x2():
    import numpy as np

    return [np.array(bits, dtype=np.uint8).reshape(2, 2) for bits in itertools.product((0, 1), repeat=4)]


def bilinear_source(i, n_in, n_out):
    """Half-pixel source coordinate, clamped to the valid range."""
    return min(max((i + 0.5) * n_in / n_out - 0.5, 0.0), n_in - 1.0)


def bilinear_value(img, y, x, ch, h_out, w_out):
    h, w = img.shape[:2]
    sy, sx = bilinear_source(y, h, h_out), bilinear_source(x, w, w_out)
    y0, x0 = math.floor(sy), math.floor(sx)
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = sy - y0, sx - x0
    v = (float(img[y0, x0, ch]) * (1 - fy) * (1 - fx) + float(img[y0, x1, ch]) * (1 - fy) * fx
         + float(img[y1, x0, ch]) * fy * (1 - fx) + float(img[y1, x1, ch]) * fy * fx)
    return v


def nearest_source(i, n_in, n_out):
    return min(math.floor((i + 0.5) * n_in / n_out), n_in - 1)
