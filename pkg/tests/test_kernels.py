import os
import subprocess
import sys

import numpy as np
import pytest

from patchforge import kernels
from patchforge.kernels import available_backends, get_backend

pytestmark = pytest.mark.skipif("numba" not in available_backends(), reason="numba not installed")


@pytest.fixture(scope="module")
def nb():
    return get_backend("numba")


@pytest.fixture(scope="module")
def npb():
    return get_backend("numpy")


def test_cubic_parity(nb, npb, rng):
    padded = rng.uniform(0, 255, (30, 40))
    ri = np.clip(np.arange(20)[:, None] + np.arange(4) + rng.integers(0, 5, (20, 1)), 0, 29).astype(np.int64)
    ci = np.clip(np.arange(33)[:, None] + np.arange(4), 0, 39).astype(np.int64)
    rw, cw = rng.normal(size=(20, 4)), rng.normal(size=(33, 4))
    a = nb.cubic_apply(padded, ri, rw, ci, cw)
    b = npb.cubic_apply(padded, ri, rw, ci, cw)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-9)


def test_even_odd_parity(nb, npb, rng):
    for _ in range(20):
        n = rng.integers(3, 12)
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        xs = 8 + rng.uniform(1, 9, n) * np.cos(ang)
        ys = 8 + rng.uniform(1, 9, n) * np.sin(ang)
        args = (xs, ys, np.roll(xs, -1), np.roll(ys, -1), 17, 15)
        assert np.array_equal(nb.even_odd_mask(*args), npb.even_odd_mask(*args))


def test_points_parity(nb, npb, rng):
    xs = rng.uniform(0, 10, 9)
    ys = rng.uniform(0, 10, 9)
    px, py = rng.uniform(-1, 11, 5000), rng.uniform(-1, 11, 5000)
    args = (px, py, xs, ys, np.roll(xs, -1), np.roll(ys, -1))
    assert np.array_equal(nb.points_in_edges(*args), npb.points_in_edges(*args))


def test_remap_parity(nb, npb, rng):
    img = rng.uniform(0, 255, (24, 20, 3))
    lab = rng.integers(0, 6, (24, 20)).astype(np.int64)
    rr, cc = np.mgrid[0:24, 0:20].astype(float)
    sr, sc = rr + rng.normal(0, 3, rr.shape), cc + rng.normal(0, 3, cc.shape)
    assert np.allclose(nb.remap_bilinear(img, sr, sc, 7.0), npb.remap_bilinear(img, sr, sc, 7.0), atol=1e-9)
    assert np.array_equal(nb.remap_nearest(lab, sr, sc, 5), npb.remap_nearest(lab, sr, sc, 5))


def test_remap_identity(nb, npb, rng):
    img = rng.uniform(0, 255, (8, 9, 2))
    rr, cc = np.mgrid[0:8, 0:9].astype(float)
    for be in (nb, npb):
        assert np.array_equal(be.remap_bilinear(img, rr, cc, 0.0), img)


def test_accumulate_parity_bitwise(nb, npb, rng):
    prob = rng.random((4, 16, 16)).astype(np.float32)
    w = rng.random((16, 16)).astype(np.float32) + 0.1
    outs = []
    for be in (nb, npb):
        num = np.zeros((4, 40, 40), np.float32)
        den = np.zeros((40, 40), np.float32)
        for r0, c0 in [(-8, -8), (0, 0), (30, 30), (12, -3), (50, 50)]:
            be.accumulate_tile(num, den, prob, w, r0, c0)
        outs.append((num, den))
    assert np.array_equal(outs[0][0], outs[1][0]) and np.array_equal(outs[0][1], outs[1][1])


def test_env_flag_selects_numpy():
    env = dict(os.environ, PATCHFORGE_NUMBA="0")
    out = subprocess.run(
        [sys.executable, "-c", "from patchforge import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"


def test_default_backend_is_numba():
    if os.environ.get("PATCHFORGE_NUMBA", "1") not in ("0", "false", "no", "off"):
        assert kernels.BACKEND == "numba"


def test_unknown_backend():
    with pytest.raises(ValueError):
        get_backend("fortran")
