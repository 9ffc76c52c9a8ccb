import numpy as np
import pytest

from hiercap import tensor as T
from hiercap.dataset import generate_scene
from hiercap.features import (
    BoundingBox,
    FeatureStack,
    InstanceFeature,
    compute_raw_features,
    expand_patch,
    extract_descriptor,
    full_image_box,
    iou,
    project_features,
    raw_descriptor,
    stack_features,
    top_n_boxes,
)


def test_box_rejects_non_positive_extents():
    with pytest.raises(ValueError):
        BoundingBox(1, 1, 0, 2)
    with pytest.raises(ValueError):
        BoundingBox(1, 1, 2, -1)


def test_iou_disjoint_and_identical():
    a = BoundingBox(5, 5, 4, 4)
    assert iou(a, BoundingBox(50, 50, 4, 4)) == 0.0
    assert abs(iou(a, a) - 1.0) < 1e-12


def test_expand_patch_identity_at_unit_scale():
    box = BoundingBox(30, 40, 10, 8)
    out = expand_patch(box, 1.0, 100, 100)
    assert (out.cx, out.cy, out.w, out.h) == (30, 40, 10, 8)


def test_expand_patch_interior_doubling():
    out = expand_patch(BoundingBox(128, 128, 40, 20), 2.0, 256, 256)
    assert (out.cx, out.cy, out.w, out.h) == (128, 128, 80, 40)


def test_expand_patch_corner_clipping():
    out = expand_patch(BoundingBox(10, 10, 40, 40), 2.0, 256, 256)
    assert (out.cx, out.cy, out.w, out.h) == (25, 25, 50, 50)


def test_expand_patch_rejects_non_positive_scale():
    with pytest.raises(ValueError):
        expand_patch(BoundingBox(10, 10, 4, 4), 0.0, 64, 64)


def test_expand_patch_always_inside_image():
    rng = np.random.default_rng(5)
    for _ in range(200):
        w, h = rng.uniform(1, 40, 2)
        cx = rng.uniform(0, 64)
        cy = rng.uniform(0, 64)
        k = rng.uniform(0.2, 4.0)
        out = expand_patch(BoundingBox(cx, cy, w, h), k, 64, 64)
        x0, y0, x1, y1 = out.edges()
        assert x0 >= -1e-12 and y0 >= -1e-12
        assert x1 <= 64 + 1e-12 and y1 <= 64 + 1e-12


class _FakeScene:
    def __init__(self, boxes, width=64, height=64):
        self._boxes = boxes
        self.width = width
        self.height = height

    def boxes(self):
        return list(self._boxes)


class _FakeSample:
    def __init__(self, boxes, image=None):
        self.scene = _FakeScene(boxes)
        self.image = (
            image
            if image is not None
            else np.full((64, 64, 3), 128, dtype=np.uint8)
        )


def test_top_n_boxes_sorted_by_area_descending():
    small = BoundingBox(10, 10, 4, 4)
    big = BoundingBox(40, 40, 20, 10)
    out = top_n_boxes(_FakeSample([small, big]), 2)
    assert out == [big, small]


def test_top_n_boxes_pads_with_last_box():
    a = BoundingBox(10, 10, 8, 8)
    b = BoundingBox(40, 40, 4, 4)
    out = top_n_boxes(_FakeSample([a, b]), 5)
    assert out == [a, b, b, b, b]


def test_top_n_boxes_empty_scene_uses_full_image():
    out = top_n_boxes(_FakeSample([]), 3)
    assert out == [full_image_box(64, 64)] * 3


def test_top_n_boxes_area_ties_break_left_then_top():
    left = BoundingBox(10, 30, 6, 6)
    right = BoundingBox(50, 30, 6, 6)
    top = BoundingBox(10, 10, 6, 6)
    out = top_n_boxes(_FakeSample([right, left, top]), 3)
    assert out == [top, left, right]


def test_raw_descriptor_mid_gray_full_image():
    image = np.full((32, 32, 3), 127.5)
    out = raw_descriptor(image, full_image_box(32, 32))
    np.testing.assert_allclose(out, [0.5, 0.5, 0.5, 0.0, 1.0, 1.0, 0.5, 0.5, 1.0])


def test_raw_descriptor_half_width_centered_box():
    image = np.zeros((40, 40, 3))
    box = BoundingBox(20, 20, 20, 10)
    out = raw_descriptor(image, box)
    assert out[4] == 0.5  # w/W
    assert abs(out[8] - 0.5 * out[5]) < 1e-12  # area ratio = 0.5 * h/H


def test_raw_descriptor_deterministic():
    rng = np.random.default_rng(0)
    image = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
    box = BoundingBox(8, 8, 5, 7)
    np.testing.assert_array_equal(
        raw_descriptor(image, box), raw_descriptor(image, box)
    )


def test_raw_descriptor_zero_area_box_uses_nearest_pixel():
    image = np.zeros((8, 8, 3), dtype=np.uint8)
    image[0, 0] = [255, 0, 0]
    degenerate = BoundingBox.from_edges(0.0, 0.0, 1e-9, 1e-9)
    out = raw_descriptor(image, degenerate)
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out[:3], [1.0, 0.0, 0.0])


def test_extract_descriptor_applies_projection():
    image = np.full((10, 10, 3), 255, dtype=np.uint8)
    proj = T.Tensor(np.eye(9)[:, :4])
    feat = extract_descriptor(image, full_image_box(10, 10), proj, "global")
    np.testing.assert_allclose(feat.vector.data, [1.0, 1.0, 1.0, 0.0])


def test_stack_features_ordering_and_size():
    def f(level, value):
        return InstanceFeature(level, T.Tensor(np.full(3, float(value))))

    objs = [f("object", i) for i in range(5)]
    pats = [f("patch", 10 + i) for i in range(5)]
    stack = stack_features(objs, pats, f("global", 99))
    assert stack.num_slots == 11
    assert stack.matrix.data[0, 0] == 0.0
    assert stack.matrix.data[5, 0] == 10.0
    assert stack.matrix.data[10, 0] == 99.0
    assert stack.slot_labels()[0] == "obj1"
    assert stack.slot_labels()[-1] == "global"


def test_stack_features_degenerate_global_only():
    g = InstanceFeature("global", T.Tensor(np.array([1.0, 2.0])))
    stack = stack_features([], [], g)
    assert stack.num_slots == 1
    np.testing.assert_array_equal(stack.matrix.data, [[1.0, 2.0]])


def test_stack_features_count_mismatch():
    g = InstanceFeature("global", T.Tensor(np.zeros(2)))
    o = InstanceFeature("object", T.Tensor(np.zeros(2)))
    with pytest.raises(ValueError):
        stack_features([o], [], g)


def test_stack_features_length_mismatch():
    g = InstanceFeature("global", T.Tensor(np.zeros(3)))
    o = InstanceFeature("object", T.Tensor(np.zeros(2)))
    p = InstanceFeature("patch", T.Tensor(np.zeros(2)))
    with pytest.raises(ValueError):
        stack_features([o], [p], g)


def test_feature_stack_row_count_validation():
    with pytest.raises(ValueError):
        FeatureStack(T.Tensor(np.zeros((4, 3))), n=2)


def test_compute_and_project_features_shapes():
    from hiercap.decoder import DecoderConfig, init_params

    sample = generate_scene(3, 0)
    raw = compute_raw_features(sample, 5, 2.0)
    assert raw.object_raw.shape == (5, 9)
    assert raw.patch_raw.shape == (5, 9)
    assert raw.global_raw.shape == (9,)
    params = init_params(DecoderConfig(feature_dim=8), 12, np.random.default_rng(0))
    stack = project_features(raw, params)
    assert stack.num_slots == 11
    assert stack.feature_dim == 8
