#!/usr/bin/env python3
"""Time each hot kernel under the numpy and numba backends.

Usage:
    python3 benchmarks/bench_kernels.py [--size N] [--repeat R] [--json out.json]

Numba timings exclude the first (compiling) call.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from patchforge.kernels import available_backends, get_backend


def cases(size: int, rng: np.random.Generator) -> dict:
    p = size
    padded = rng.uniform(0, 255, (p + 6, p + 6))
    idx = np.clip(np.arange(p)[:, None] + np.arange(4) + 1, 0, p + 5).astype(np.int64)
    w = np.tile([-0.0625, 0.5625, 0.5625, -0.0625], (p, 1))

    ang = np.linspace(0, 2 * np.pi, 65)
    xs = p / 2 + p / 3 * np.cos(ang)
    ys = p / 2 + p / 3 * np.sin(ang)
    x0, y0, x1, y1 = xs[:-1], ys[:-1], xs[1:], ys[1:]
    px, py = rng.uniform(0, p, 20_000), rng.uniform(0, p, 20_000)

    img = rng.uniform(0, 255, (p, p, 3))
    lab = rng.integers(0, 9, (p, p)).astype(np.int64)
    rr, cc = np.meshgrid(np.arange(p, dtype=float), np.arange(p, dtype=float), indexing="ij")
    src_r, src_c = rr + rng.normal(0, 2, rr.shape), cc + rng.normal(0, 2, cc.shape)

    num = np.zeros((9, 4 * p, 4 * p), np.float32)
    den = np.zeros((4 * p, 4 * p), np.float32)
    prob = rng.random((9, p, p)).astype(np.float32)
    weights = np.ones((p, p), np.float32)

    return {
        "cubic_apply": (padded, idx, w, idx, w),
        "even_odd_mask": (x0, y0, x1, y1, p, p),
        "points_in_edges": (px, py, x0, y0, x1, y1),
        "remap_bilinear": (img, src_r, src_c, 0.0),
        "remap_nearest": (lab, src_r, src_c, 0),
        "accumulate_tile": (num, den, prob, weights, p // 2, p // 2),
    }


def best_of(fn, args, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args()

    inputs = cases(args.size, np.random.default_rng(0))
    results = {}
    for backend in available_backends():
        mod = get_backend(backend)
        for name, call_args in inputs.items():
            fn = getattr(mod, name)
            fn(*call_args)  # warm-up / compile
            results.setdefault(name, {})[backend] = best_of(fn, call_args, args.repeat)

    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, r in results.items():
        nb = r.get("numba")
        speed = f"{r['numpy'] / nb:9.1f}x" if nb else "        -"
        nb_text = f"{nb * 1e3:12.2f}" if nb else f"{'-':>12}"
        print(f"{name:<18}{r['numpy'] * 1e3:12.2f}{nb_text}{speed}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"size": args.size, "seconds": results}, fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
