import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patchforge.errors import DataError, GeometryError
from patchforge.raster import GeoTransform, Window
from patchforge.synthetic import REGION_CLASSES
from patchforge.vector import (
    ClassCatalog,
    Feature,
    FeatureSet,
    classify_points,
    features_from_geojson,
    features_to_geojson,
    onehot,
    rasterize_classes,
    rasterize_onehot,
    ring_area,
)

GT = GeoTransform(0.0, 1.0, 0.0, 10.0, 0.0, -1.0)
WIN = Window(0, 0, 10, 10)
CAT = ClassCatalog.from_names(["Other", "B", "A"], background="Other")


def rect(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


def inside_even_odd(rings, x, y):
    """Brute-force crossing test, one edge at a time."""
    inside = False
    for ring in rings:
        n = len(ring)
        for i in range(n):
            (xa, ya), (xb, yb) = ring[i], ring[(i + 1) % n]
            if (ya > y) != (yb > y):
                xi = xa + (y - ya) * (xb - xa) / (yb - ya)
                if x < xi:
                    inside = not inside
    return inside


def test_catalog_band_order_and_background():
    assert CAT.band_order == ("A", "B", "Other")
    assert CAT.background == "Other" and CAT.background_index == 2
    assert CAT.n_classes == 3


def test_banana_is_band_zero():
    cat = ClassCatalog.from_names([n for n, _, _ in REGION_CLASSES], background="Other")
    assert cat.index("Banana Plantations") == 0
    fs = FeatureSet((Feature(1, "Banana Plantations", [rect(2, 2, 5, 5)]),))
    oh = rasterize_onehot(fs, cat, WIN, GT).pixels
    assert oh[0, 6, 3] == 1 and oh[1:, 6, 3].sum() == 0


def test_catalog_validation():
    with pytest.raises(DataError):
        ClassCatalog((("A", False), ("A", True)))
    with pytest.raises(DataError):
        ClassCatalog((("A", False), ("B", False)))
    with pytest.raises(DataError):
        ClassCatalog((("A", True), ("B", True)))


def test_catalog_json_roundtrip(tmp_path):
    CAT.save(tmp_path / "c.json")
    assert ClassCatalog.load(tmp_path / "c.json").band_order == CAT.band_order


def test_feature_area_checks():
    f = Feature(1, "A", [rect(0, 0, 2, 3)])
    assert f.area == pytest.approx(6.0)
    Feature(2, "A", [rect(0, 0, 2, 3)], area=6.0 * (1 + 1e-8))
    with pytest.raises(GeometryError):
        Feature(3, "A", [rect(0, 0, 2, 3)], area=6.1)
    with pytest.raises(GeometryError):
        Feature(4, "A", [[[0, 0], [1, 1], [2, 2]]])


def test_hole_area():
    f = Feature(1, "A", [[rect(0, 0, 4, 4), rect(1, 1, 2, 2)]])
    assert f.area == pytest.approx(15.0)


def test_ring_area_orientation_free():
    ring = np.array(rect(0, 0, 3, 2), float)
    assert ring_area(ring) == pytest.approx(ring_area(ring[::-1]))


def test_empty_featureset_is_background():
    oh = rasterize_onehot(FeatureSet(()), CAT, WIN, GT).pixels
    assert (oh[2] == 1).all() and (oh[:2] == 0).all()


def test_last_feature_wins():
    fs = FeatureSet((Feature(1, "A", [rect(0, 0, 6, 6)]), Feature(2, "B", [rect(3, 3, 9, 9)])))
    idx = rasterize_classes(fs, CAT, WIN, GT)
    assert idx[10 - 1 - 4, 4] == CAT.index("B")  # pixel centre (4.5, 4.5)
    swapped = FeatureSet(tuple(reversed(fs.features)))
    assert rasterize_classes(swapped, CAT, WIN, GT)[5, 4] == CAT.index("A")


def test_pixel_centre_rule():
    # rectangle covering x in [0, 2.4): centres 0.5, 1.5 inside, 2.5 outside
    fs = FeatureSet((Feature(1, "A", [rect(0, 0, 2.4, 10)]),))
    idx = rasterize_classes(fs, CAT, WIN, GT)
    assert (idx[:, :2] == 0).all() and (idx[:, 2:] == 2).all()


def test_window_offset_matches_full_raster():
    fs = FeatureSet((Feature(1, "A", [[[1, 1], [8, 2], [5, 9]]]), Feature(2, "B", [rect(6, 0.5, 9.5, 4)])))
    full = rasterize_classes(fs, CAT, WIN, GT)
    sub = rasterize_classes(fs, CAT, Window(3, 2, 5, 6), GT)
    assert np.array_equal(sub, full[2:8, 3:8])


@st.composite
def polygons(draw):
    n = draw(st.integers(3, 9))
    ang = np.sort(np.array(draw(st.lists(st.floats(0, 2 * np.pi), min_size=n, max_size=n, unique=True))))
    rad = np.array(draw(st.lists(st.floats(0.5, 6), min_size=n, max_size=n)))
    cx, cy = draw(st.floats(3, 9)), draw(st.floats(3, 9))
    ring = np.stack([cx + rad * np.cos(ang), cy + rad * np.sin(ang)], axis=1)
    return ring


@given(polygons())
def test_rasterize_matches_brute_force(ring):
    if abs(ring_area(ring)) < 1e-6:
        return
    fs = FeatureSet((Feature(1, "A", [ring]),))
    gt = GeoTransform(0.0, 1.0, 0.0, 12.0, 0.0, -1.0)
    idx = rasterize_classes(fs, CAT, Window(0, 0, 12, 12), gt)
    rings = [ring.tolist()]
    for r in range(12):
        for c in range(12):
            x, y = c + 0.5, 12 - (r + 0.5)
            expect = 0 if inside_even_odd(rings, x, y) else 2
            # skip centres lying on an edge, where either answer is defensible
            if idx[r, c] != expect:
                d = min(
                    abs((yb - ya) * (x - xa) - (xb - xa) * (y - ya)) / np.hypot(xb - xa, yb - ya)
                    for (xa, ya), (xb, yb) in zip(ring, np.roll(ring, -1, axis=0))
                )
                assert d < 1e-9


@given(polygons(), polygons())
def test_onehot_sums_to_one(a, b):
    feats = []
    for i, ring in enumerate((a, b)):
        if abs(ring_area(ring)) > 1e-6:
            feats.append(Feature(i, "AB"[i], [ring]))
    oh = rasterize_onehot(FeatureSet(tuple(feats)), CAT, Window(0, 0, 12, 12), GeoTransform(0, 1, 0, 12, 0, -1)).pixels
    assert (oh.sum(axis=0) == 1).all()


def test_onehot_identity():
    idx = np.random.default_rng(0).integers(0, 5, (7, 8))
    assert np.array_equal(np.argmax(onehot(idx, 5), axis=0), idx)


def test_classify_points_holes():
    fs = FeatureSet((Feature(1, "A", [[rect(0, 0, 4, 4), rect(1, 1, 3, 3)]]),))
    got = classify_points(fs, CAT, [0.5, 2.0, 5.0], [0.5, 2.0, 5.0])
    assert list(got) == [0, 2, 2]


def test_geojson_roundtrip():
    fs = FeatureSet(
        (
            Feature(5, "A", [[rect(0, 0, 4, 4), rect(1, 1, 2, 2)]]),
            Feature(9, "B", [[rect(5, 5, 6, 6)], [rect(7, 7, 8, 9)]]),
        )
    )
    back = features_from_geojson(json.loads(json.dumps(features_to_geojson(fs))))
    assert [f.feature_id for f in back] == [5, 9]
    assert [f.class_name for f in back] == ["A", "B"]
    assert [f.area for f in back] == pytest.approx([f.area for f in fs])


def test_geojson_reads_polygon_and_class_property():
    obj = {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "properties": {"class_name": "A"},
             "geometry": {"type": "Polygon", "coordinates": [rect(0, 0, 1, 1) + [[0, 0]]]}},
        ],
    }
    fs = features_from_geojson(obj)
    assert fs.features[0].class_name == "A" and fs.features[0].area == pytest.approx(1.0)


def test_validate_unknown_class():
    fs = FeatureSet((Feature(1, "Z", [rect(0, 0, 1, 1)]),))
    with pytest.raises(DataError):
        fs.validate(CAT)


def test_duplicate_ids():
    with pytest.raises(DataError):
        FeatureSet((Feature(1, "A", [rect(0, 0, 1, 1)]), Feature(1, "B", [rect(2, 2, 3, 3)])))
