"""numba-compiled twins of the kernels in ``_numpy``."""

import math

import numpy as np
from numba import njit

_opts = dict(cache=True, nogil=True)


@njit(**_opts)
def cubic_apply(padded, row_idx, row_w, col_idx, col_w):
    ho = row_idx.shape[0]
    wp = padded.shape[1]
    wo = col_idx.shape[0]
    tmp = np.zeros((ho, wp))
    for o in range(ho):
        for k in range(4):
            src = row_idx[o, k]
            wk = row_w[o, k]
            for c in range(wp):
                tmp[o, c] += wk * padded[src, c]
    out = np.zeros((ho, wo))
    for o in range(ho):
        for j in range(wo):
            acc = 0.0
            for k in range(4):
                acc += col_w[j, k] * tmp[o, col_idx[j, k]]
            out[o, j] = acc
    return out


@njit(**_opts)
def even_odd_mask(x0, y0, x1, y1, height, width):
    toggles = np.zeros((height, width + 1), dtype=np.int32)
    for e in range(x0.size):
        lo = min(y0[e], y1[e])
        hi = max(y0[e], y1[e])
        first = int(min(max(math.ceil(lo - 0.5), 0.0), height))
        stop = int(min(max(math.ceil(hi - 0.5), 0.0), height))
        for row in range(first, stop):
            yc = row + 0.5
            xint = x0[e] + (yc - y0[e]) * (x1[e] - x0[e]) / (y1[e] - y0[e])
            start = int(min(max(math.floor(xint - 0.5) + 1.0, 0.0), width))
            toggles[row, start] += 1
    mask = np.zeros((height, width), dtype=np.bool_)
    for r in range(height):
        acc = 0
        for c in range(width):
            acc += toggles[r, c]
            mask[r, c] = (acc & 1) == 1
    return mask


@njit(**_opts)
def points_in_edges(px, py, x0, y0, x1, y1):
    n = px.size
    inside = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        qx = px[i]
        qy = py[i]
        count = 0
        for e in range(x0.size):
            if (y0[e] > qy) != (y1[e] > qy):
                xint = x0[e] + (qy - y0[e]) * (x1[e] - x0[e]) / (y1[e] - y0[e])
                if xint < qx:
                    count += 1
        inside[i] = (count & 1) == 1
    return inside


@njit(**_opts)
def remap_bilinear(img, src_r, src_c, fill):
    h, w, nb = img.shape
    ho, wo = src_r.shape
    out = np.empty((ho, wo, nb))
    for i in range(ho):
        for j in range(wo):
            r = src_r[i, j]
            c = src_c[i, j]
            if not (r >= -0.5 and r < h - 0.5 and c >= -0.5 and c < w - 0.5):
                for b in range(nb):
                    out[i, j, b] = fill
                continue
            r = min(max(r, 0.0), h - 1.0)
            c = min(max(c, 0.0), w - 1.0)
            r0 = int(math.floor(r))
            c0 = int(math.floor(c))
            r1 = min(r0 + 1, h - 1)
            c1 = min(c0 + 1, w - 1)
            fr = r - r0
            fc = c - c0
            for b in range(nb):
                top = img[r0, c0, b] * (1.0 - fc) + img[r0, c1, b] * fc
                bottom = img[r1, c0, b] * (1.0 - fc) + img[r1, c1, b] * fc
                out[i, j, b] = top * (1.0 - fr) + bottom * fr
    return out


@njit(**_opts)
def remap_nearest(idx, src_r, src_c, fill):
    h, w = idx.shape
    ho, wo = src_r.shape
    out = np.empty((ho, wo), dtype=np.int64)
    for i in range(ho):
        for j in range(wo):
            ri = int(math.floor(src_r[i, j] + 0.5))
            ci = int(math.floor(src_c[i, j] + 0.5))
            if 0 <= ri < h and 0 <= ci < w:
                out[i, j] = idx[ri, ci]
            else:
                out[i, j] = fill
    return out


@njit(**_opts)
def accumulate_tile(num, den, prob, weights, r0, c0):
    nc, h, w = num.shape
    p = weights.shape[0]
    ra, rb = max(r0, 0), min(r0 + p, h)
    ca, cb = max(c0, 0), min(c0 + p, w)
    for k in range(nc):
        for r in range(ra, rb):
            i = r - r0
            for c in range(ca, cb):
                num[k, r, c] += weights[i, c - c0] * prob[k, i, c - c0]
    for r in range(ra, rb):
        for c in range(ca, cb):
            den[r, c] += weights[r - r0, c - c0]
