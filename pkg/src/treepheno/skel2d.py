"""Zhang-Suen thinning of binary 2D masks."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

_EIGHT = np.ones((3, 3), dtype=bool)


def _neighbours(p: np.ndarray):
    """P2..P9 (clockwise from north) for the interior of padded image ``p``."""
    return (
        p[:-2, 1:-1], p[:-2, 2:], p[1:-1, 2:], p[2:, 2:],
        p[2:, 1:-1], p[2:, :-2], p[1:-1, :-2], p[:-2, :-2],
    )


def _candidates(p: np.ndarray, first: bool) -> np.ndarray:
    n = [a.astype(np.uint8) for a in _neighbours(p)]
    b = sum(n)
    # A(P1): number of 0 -> 1 transitions in P2, P3, ..., P9, P2
    a = sum(((n[i] == 0) & (n[(i + 1) % 8] == 1)).astype(np.uint8) for i in range(8))
    p2, p4, p6, p8 = n[0], n[2], n[4], n[6]
    if first:
        c3, c4 = p2 * p4 * p6, p4 * p6 * p8
    else:
        c3, c4 = p2 * p4 * p8, p2 * p6 * p8
    core = p[1:-1, 1:-1]
    return core & (b >= 2) & (b <= 6) & (a == 1) & (c3 == 0) & (c4 == 0)


def skeletonize(img) -> np.ndarray:
    """Thin ``img`` to a one-pixel centerline.

    Classic two-subiteration Zhang-Suen on a copy padded with one background
    pixel, run to a fixpoint. Plain Zhang-Suen erases 2x2 blocks entirely; when
    a subiteration would delete every pixel of a connected component, the first
    pixel of that component in raster order is kept instead.
    """
    img = np.asarray(img)
    p = np.pad(img.astype(bool), 1)
    while True:
        changed = False
        for first in (True, False):
            cand = _candidates(p, first)
            if not cand.any():
                continue
            core = p[1:-1, 1:-1]
            _protect_components(core, cand)
            if cand.any():
                core &= ~cand
                changed = True
        if not changed:
            break
    return p[1:-1, 1:-1].astype(img.dtype if img.dtype != bool else bool)


def _protect_components(core: np.ndarray, cand: np.ndarray) -> None:
    lab, n = ndimage.label(core, structure=_EIGHT)
    if n == 0:
        return
    size = np.bincount(lab.ravel(), minlength=n + 1)
    hit = np.bincount(lab[cand], minlength=n + 1)
    doomed = np.flatnonzero((size == hit) & (size > 0))
    doomed = doomed[doomed > 0]
    if len(doomed) == 0:
        return
    flat = lab.ravel()
    for c in doomed:
        first = int(np.argmax(flat == c))
        cand.ravel()[first] = False


def n_components(img) -> int:
    _, n = ndimage.label(np.asarray(img).astype(bool), structure=_EIGHT)
    return int(n)
