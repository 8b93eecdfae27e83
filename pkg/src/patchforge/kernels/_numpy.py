"""Vectorised numpy implementations of the hot kernels.

Every function here has a loop-level twin in ``_numba`` with the same
signature and the same floating-point expression order.
"""

import numpy as np

_PIP_CHUNK = 4096


def cubic_apply(padded, row_idx, row_w, col_idx, col_w):
    """Separable 4-tap filter: rows first, then columns."""
    tmp = np.zeros((row_idx.shape[0], padded.shape[1]))
    for k in range(4):
        tmp += row_w[:, k, None] * padded[row_idx[:, k], :]
    out = np.zeros((row_idx.shape[0], col_idx.shape[0]))
    for k in range(4):
        out += col_w[None, :, k] * tmp[:, col_idx[:, k]]
    return out


def even_odd_mask(x0, y0, x1, y1, height, width):
    """Rasterise closed rings with the even-odd rule at pixel centres.

    Edge coordinates are in pixel units; pixel ``(r, c)`` is sampled at
    ``(c + 0.5, r + 0.5)``. A pixel is inside when an odd number of edges
    cross its row strictly left of its centre.
    """
    lo = np.minimum(y0, y1)
    hi = np.maximum(y0, y1)
    first = np.clip(np.ceil(lo - 0.5), 0, height).astype(np.int64)
    stop = np.clip(np.ceil(hi - 0.5), 0, height).astype(np.int64)
    counts = np.maximum(stop - first, 0)
    total = int(counts.sum())
    toggles = np.zeros((height, width + 1), dtype=np.int32)
    if total:
        edge = np.repeat(np.arange(x0.size), counts)
        offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        rows = first[edge] + offsets
        yc = rows + 0.5
        ex0, ey0, ex1, ey1 = x0[edge], y0[edge], x1[edge], y1[edge]
        xint = ex0 + (yc - ey0) * (ex1 - ex0) / (ey1 - ey0)
        start = np.clip(np.floor(xint - 0.5) + 1.0, 0, width).astype(np.int64)
        np.add.at(toggles, (rows, start), 1)
    parity = np.cumsum(toggles, axis=1)[:, :width] & 1
    return parity.astype(bool)


def points_in_edges(px, py, x0, y0, x1, y1):
    """Even-odd point-in-polygon test for many points against one edge set."""
    n = px.size
    inside = np.zeros(n, dtype=bool)
    if n == 0 or x0.size == 0:
        return inside
    with np.errstate(divide="ignore", invalid="ignore"):
        for s in range(0, n, _PIP_CHUNK):
            qx = px[s:s + _PIP_CHUNK, None]
            qy = py[s:s + _PIP_CHUNK, None]
            crosses = (y0 > qy) != (y1 > qy)
            xint = x0 + (qy - y0) * (x1 - x0) / (y1 - y0)
            hits = crosses & (xint < qx)
            inside[s:s + _PIP_CHUNK] = (np.count_nonzero(hits, axis=1) & 1).astype(bool)
    return inside


def _footprint(src, size):
    valid = (src >= -0.5) & (src < size - 0.5)
    return valid, np.clip(src, 0.0, size - 1.0)


def remap_bilinear(img, src_r, src_c, fill):
    """Sample ``img`` (H, W, B) at fractional positions; outside footprints get ``fill``."""
    h, w = img.shape[:2]
    vr, r = _footprint(src_r, h)
    vc, c = _footprint(src_c, w)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[..., None]
    fc = (c - c0)[..., None]
    top = img[r0, c0] * (1.0 - fc) + img[r0, c1] * fc
    bottom = img[r1, c0] * (1.0 - fc) + img[r1, c1] * fc
    out = top * (1.0 - fr) + bottom * fr
    out[~(vr & vc)] = fill
    return out


def remap_nearest(idx, src_r, src_c, fill):
    """Nearest-neighbour sampling of an integer map."""
    h, w = idx.shape
    ri = np.floor(src_r + 0.5).astype(np.int64)
    ci = np.floor(src_c + 0.5).astype(np.int64)
    valid = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
    out = np.full(src_r.shape, fill, dtype=np.int64)
    out[valid] = idx[ri[valid], ci[valid]]
    return out


def accumulate_tile(num, den, prob, weights, r0, c0):
    """Add ``weights * prob`` into ``num`` and ``weights`` into ``den`` at (r0, c0), clipped."""
    _, h, w = num.shape
    p = weights.shape[0]
    ra, rb = max(r0, 0), min(r0 + p, h)
    ca, cb = max(c0, 0), min(c0 + p, w)
    if ra >= rb or ca >= cb:
        return
    wt = weights[ra - r0:rb - r0, ca - c0:cb - c0]
    num[:, ra:rb, ca:cb] += wt * prob[:, ra - r0:rb - r0, ca - c0:cb - c0]
    den[ra:rb, ca:cb] += wt
