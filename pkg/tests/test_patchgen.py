import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from patchforge.errors import DataError, WindowError
from patchforge.patchgen import (
    Batch,
    DatasetManifest,
    batch_iter,
    batches_per_epoch,
    extract_chip,
    extract_dataset,
    load_chip,
    reported_batches_per_epoch,
    scale_batch,
)
from patchforge.raster import Window
from patchforge.sampling import PatchExtent, grid_patches
from patchforge.vector import rasterize_onehot

EPOCH_FIXTURES = [(2_408, 16), (9_632, 64), (38_528, 256), (154_112, 1_024)]


@pytest.mark.parametrize("n,batch", EPOCH_FIXTURES)
def test_reported_batches_fixture(n, batch):
    assert reported_batches_per_epoch(n, batch) == 151
    assert batches_per_epoch(n, batch) == 151


def test_half_rounds_up_not_to_even():
    assert reported_batches_per_epoch(5, 2) == 3
    assert reported_batches_per_epoch(9, 2) == 5


@pytest.fixture(scope="module")
def dataset(scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    ext = grid_patches(scene.image.window, scene.features, scene.catalog, 32, scene.image.geotransform, 64, seed=1)
    return extract_dataset(scene.image, scene.features, scene.catalog, ext, out, {"strategy": "grid"}), ext


def test_manifest_matches_disk(dataset):
    manifest, ext = dataset
    manifest.check()
    assert len(manifest) == len(ext)
    assert manifest.class_order == tuple(sorted(manifest.class_order))
    again = DatasetManifest.load(manifest.root)
    assert again.to_json() == manifest.to_json()


def test_chip_labels_match_rasterization(dataset, scene):
    manifest, ext = dataset
    for rec, e in list(zip(manifest.records, ext))[:10]:
        chip = load_chip(manifest, rec)
        direct = rasterize_onehot(scene.features, scene.catalog, e.window, scene.image.geotransform).pixels
        assert np.array_equal(chip.label.transpose(2, 0, 1), direct)
        assert (chip.label.sum(axis=-1) == 1).all()
        img = scene.image.pixels[:, e.window.row_off:e.window.row_end, e.window.col_off:e.window.col_end]
        assert np.array_equal(chip.image.transpose(2, 0, 1), img)


def test_background_chip(scene, tmp_path):
    from patchforge.synthetic import make_scene

    bg = scene.catalog.background_index
    idx = scene.labels.pixels[0]
    # find a 16x16 window of pure background
    for r in range(0, 240, 8):
        for c in range(0, 240, 8):
            if (idx[r:r + 16, c:c + 16] == bg).all():
                chip = extract_chip(scene.image, scene.features, scene.catalog, PatchExtent(0, Window(c, r, 16, 16)))
                label = chip.pixels[scene.image.bands:]
                assert (label[bg] == 1).all() and label.sum() == 256
                return
    pytest.skip("no pure background window")


def test_extent_outside(scene, tmp_path):
    with pytest.raises(WindowError):
        extract_dataset(scene.image, scene.features, scene.catalog, [PatchExtent(0, Window(250, 0, 16, 16))], tmp_path)


def test_manifest_written_last(scene, tmp_path):
    ext = [PatchExtent(0, Window(0, 0, 16, 16)), PatchExtent(1, Window(250, 250, 16, 16))]
    (tmp_path / "manifest.json").write_text("{}")
    with pytest.raises(WindowError):
        extract_dataset(scene.image, scene.features, scene.catalog, ext, tmp_path)
    assert not (tmp_path / "manifest.json").exists() or json.loads((tmp_path / "manifest.json").read_text()) == {}


def test_check_detects_missing_chip(dataset, tmp_path):
    manifest, _ = dataset
    broken = DatasetManifest(tmp_path, manifest.patch_size, manifest.bands, manifest.dtype,
                             manifest.class_order, manifest.background, manifest.records)
    with pytest.raises(DataError):
        broken.check()


def test_batch_iter_sizes_and_cover(dataset):
    manifest, _ = dataset
    n = len(manifest)
    batches = list(batch_iter(manifest, 7, epoch_seed=3))
    assert [b.n for b in batches] == [7] * (n // 7) + ([n % 7] if n % 7 else [])
    seen = sorted(p for b in batches for p in b.patch_ids)
    assert seen == sorted(r.patch_id for r in manifest.records)
    again = [b.patch_ids for b in batch_iter(manifest, 7, epoch_seed=3)]
    other = [b.patch_ids for b in batch_iter(manifest, 7, epoch_seed=4)]
    assert again == [b.patch_ids for b in batches] and other != again


def test_ten_by_three(tmp_path, scene):
    ext = [PatchExtent(i, Window(i * 8, 0, 8, 8)) for i in range(10)]
    m = extract_dataset(scene.image, scene.features, scene.catalog, ext, tmp_path)
    assert [b.n for b in batch_iter(m, 3, 0)] == [3, 3, 3, 1]


def test_batch_size_validation(dataset):
    with pytest.raises(ValueError):
        next(batch_iter(dataset[0], 0, 1))


def make_batch(images):
    n = images.shape[0]
    return Batch(images.astype(np.float32), np.zeros(images.shape[:3] + (2,), np.uint8), tuple(range(n)))


def test_scale_sixty():
    img = np.zeros((2, 2, 2, 1))
    img[0, 0, 0, 0], img[1, 1, 1, 0], img[0, 1, 0, 0] = 10, 110, 60
    img[img == 0] = 10
    out = scale_batch(make_batch(img)).images
    assert out[0, 1, 0, 0] == 127.5


def test_scale_identity_on_full_range():
    img = np.random.default_rng(0).uniform(0, 255, (3, 4, 4, 2))
    img[0, 0, 0] = 0
    img[0, 0, 1] = 255
    out = scale_batch(make_batch(img)).images
    assert np.allclose(out, img.astype(np.float32), atol=1e-4)


def test_scale_constant_band_zero():
    img = np.random.default_rng(0).uniform(0, 255, (3, 4, 4, 2))
    img[..., 1] = 42
    out = scale_batch(make_batch(img)).images
    assert (out[..., 1] == 0).all()


def test_scale_keeps_labels():
    b = make_batch(np.random.default_rng(0).uniform(0, 9, (2, 3, 3, 1)))
    b2 = Batch(b.images, np.ones_like(b.labels), b.patch_ids)
    assert np.array_equal(scale_batch(b2).labels, b2.labels)


@given(arrays(np.float64, (3, 4, 4, 3), elements=st.floats(-1e4, 1e4)))
def test_scale_range_and_idempotence(img):
    out = scale_batch(make_batch(img)).images
    for b in range(3):
        band = out[..., b]
        if np.ptp(img[..., b].astype(np.float32)) > 0:
            assert band.min() == 0 and band.max() == 255
        else:
            assert (band == 0).all()
    assert np.allclose(scale_batch(make_batch(out)).images, out, atol=1e-5 * 255)
