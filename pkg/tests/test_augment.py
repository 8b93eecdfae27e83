from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchforge.augment import (
    ATMOSPHERIC,
    PHOTOMETRIC,
    AugConfig,
    AugPlan,
    Transform,
    apply,
    augment_batch,
    geometric,
    photometric,
    sample_plan,
)
from patchforge.patchgen import Batch, ChipPair
from patchforge.vector import onehot


def make_chip(seed=0, p=24, c=4, b=3):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, c, (p, p))
    label = np.moveaxis(onehot(idx, c), 0, -1)
    return ChipPair(seed, rng.uniform(0, 255, (p, p, b)).astype(np.float32), label, seed)


def test_plan_deterministic():
    assert sample_plan(99) == sample_plan(99)
    assert sample_plan(99) != sample_plan(100)


def test_plan_has_one_of_each():
    for s in range(200):
        plan = sample_plan(s)
        assert plan.photometric.name in PHOTOMETRIC
        assert plan.noise and plan.geometric
        assert plan.atmospheric is None or plan.atmospheric.name in ATMOSPHERIC


def test_photometric_shares():
    counts = Counter(sample_plan(s).photometric.name for s in range(10_000))
    for name in PHOTOMETRIC:
        assert abs(counts[name] / 10_000 - 0.2) <= 0.012


def test_gamma_two():
    out = photometric(np.array([128.0]), Transform("gamma", {"gamma": 2.0}))
    assert out[0] == pytest.approx(255 * (128 / 255) ** 2)
    assert round(float(out[0]), 2) == 64.25


def test_identity_plan():
    chip = make_chip()
    out = apply(AugPlan.identity(), chip, background_index=0)
    assert np.allclose(out.image, chip.image, atol=1e-6)
    assert np.array_equal(out.label, chip.label)


def test_flip_mirrors_and_involutes():
    chip = make_chip(1)
    idx = np.argmax(chip.label, -1)
    t = Transform("flip", {"horizontal": True, "vertical": False})
    img, lab = geometric(chip.image.astype(float), idx, t, None, 0)
    assert np.array_equal(img, chip.image[:, ::-1]) and np.array_equal(lab, idx[:, ::-1])
    img2, lab2 = geometric(img, lab, t, None, 0)
    assert np.array_equal(img2, chip.image) and np.array_equal(lab2, idx)


def test_photometric_noise_atmospheric_leave_labels():
    chip = make_chip(2)
    still = Transform("flip", {"horizontal": False, "vertical": False})
    for s in range(50):
        plan = sample_plan(s)
        plan = AugPlan(plan.photometric, plan.noise, still, plan.atmospheric, plan.seed)
        out = apply(plan, chip, background_index=0)
        assert np.array_equal(out.label, chip.label)


@settings(max_examples=40)
@given(st.integers(0, 2**63 - 1))
def test_any_plan_keeps_range_and_onehot(seed):
    chip = make_chip(seed % 7)
    out = apply(sample_plan(seed), chip, background_index=3)
    assert np.isfinite(out.image).all()
    assert out.image.min() >= 0 and out.image.max() <= 255
    assert (out.label.sum(-1) == 1).all() and set(np.unique(out.label)) <= {0, 1}


def test_out_of_frame_fill():
    chip = make_chip(3)
    t = Transform("affine", {"rotation": 0.0, "scale": 1.0, "tx": 0.5, "ty": 0.0, "shear": 0.0})
    img, lab = geometric(chip.image.astype(float), np.argmax(chip.label, -1), t, None, 2)
    assert (img[:, :10] == 0).all() and (lab[:, :10] == 2).all()


def test_nearest_warp_commutes_with_argmax():
    chip = make_chip(4)
    idx = np.argmax(chip.label, -1)
    t = Transform("affine", {"rotation": 17.0, "scale": 1.1, "tx": 0.05, "ty": -0.02, "shear": 3.0})
    _, warped_idx = geometric(chip.image.astype(float), idx, t, None, 0)
    per_band = np.stack(
        [geometric(chip.image.astype(float), chip.label[..., k].astype(np.int64), t, None, 0)[1] for k in range(4)], -1
    )
    # warping each band then taking argmax equals warping the argmax (background fill aside)
    inside = per_band.sum(-1) == 1
    assert np.array_equal(np.argmax(per_band, -1)[inside], warped_idx[inside])


def test_batch_per_chip_seeding_order_free():
    chips = [make_chip(s) for s in range(5)]
    a = augment_batch(Batch.from_chips(chips), 77, epoch=1, background_index=0)
    b = augment_batch(Batch.from_chips(chips[::-1]), 77, epoch=1, background_index=0)
    for i, pid in enumerate(a.patch_ids):
        j = b.patch_ids.index(pid)
        assert np.array_equal(a.images[i], b.images[j]) and np.array_equal(a.labels[i], b.labels[j])
    c = augment_batch(Batch.from_chips(chips), 77, epoch=2, background_index=0)
    assert not np.array_equal(a.images, c.images)
    assert (a.labels.sum(-1) == 1).all()


def test_batch_thread_independent(monkeypatch):
    batch = Batch.from_chips([make_chip(s) for s in range(4)])
    monkeypatch.setenv("PATCHFORGE_THREADS", "1")
    one = augment_batch(batch, 5, background_index=0)
    monkeypatch.setenv("PATCHFORGE_THREADS", "4")
    four = augment_batch(batch, 5, background_index=0)
    assert np.array_equal(one.images, four.images)


def test_overrides():
    cfg = AugConfig.with_overrides({"atmospheric_p": 0.0, "gamma": [1.0, 1.0]})
    assert all(sample_plan(s, cfg).atmospheric is None for s in range(100))
    with pytest.raises(ValueError):
        AugConfig.with_overrides({"nope": 1})
