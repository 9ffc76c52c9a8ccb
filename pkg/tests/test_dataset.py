import numpy as np
import pytest

from hiercap.dataset import (
    CLASSES,
    MAX_IOU,
    caption_templates,
    build_vocabulary,
    generate_scene,
    load_split,
    save_dataset,
    split_dataset,
)
from hiercap.features import iou
from hiercap.metrics import tokenize
from hiercap.vocab import RESERVED, UNK_ID


def test_generate_scene_deterministic():
    a = generate_scene(3, 17)
    b = generate_scene(3, 17)
    np.testing.assert_array_equal(a.image, b.image)
    assert a.captions == b.captions
    assert a.image_id == b.image_id


def test_generate_scene_different_index_differs():
    a = generate_scene(3, 0)
    b = generate_scene(3, 1)
    assert a.captions != b.captions or not np.array_equal(a.image, b.image)


def test_generate_scene_respects_iou_bound():
    for index in range(30):
        boxes = generate_scene(11, index).scene.boxes()
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                assert iou(boxes[i], boxes[j]) <= MAX_IOU + 1e-12


def test_generate_scene_boxes_inside_image():
    for index in range(30):
        scene = generate_scene(5, index).scene
        for box in scene.boxes():
            x0, y0, x1, y1 = box.edges()
            assert 0 <= x0 < x1 <= scene.width
            assert 0 <= y0 < y1 <= scene.height


def test_every_sample_has_five_nonempty_captions():
    for index in range(30):
        captions = generate_scene(9, index).captions
        assert len(captions) == 5
        assert all(c.strip() for c in captions)


def test_empty_scene_uses_background_templates():
    # Hunt a seeded empty scene; the generator draws counts 0..6 uniformly.
    for index in range(60):
        sample = generate_scene(0, index)
        if not sample.scene.objects:
            bg = sample.scene.background
            assert all(bg in c for c in sample.captions)
            assert all(cls not in c for c in sample.captions for cls in CLASSES)
            return
    pytest.fail("no empty scene found in 60 draws")


def test_count_caption_mentions_main_class_count():
    from hiercap.dataset import NUMBER_WORDS

    for index in range(30):
        sample = generate_scene(2, index)
        if not sample.scene.objects:
            continue
        counts = {}
        for obj in sample.scene.objects:
            counts[obj.cls] = counts.get(obj.cls, 0) + 1
        main = sorted(counts, key=lambda c: (-counts[c], c))[0]
        assert NUMBER_WORDS[counts[main]] in sample.captions[0]
        assert main in sample.captions[0]


def test_caption_templates_deterministic():
    scene = generate_scene(4, 1).scene
    assert caption_templates(scene, 123) == caption_templates(scene, 123)


def test_split_sizes():
    assert tuple(map(len, split_dataset(100, 0))) == (80, 10, 10)
    assert tuple(map(len, split_dataset(10, 0))) == (8, 1, 1)
    assert tuple(map(len, split_dataset(101, 0))) == (81, 10, 10)


def test_split_disjoint_and_exhaustive():
    train, val, test = split_dataset(57, 3)
    combined = train + val + test
    assert len(set(combined)) == 57
    assert sorted(combined) == list(range(57))


def test_split_too_small_rejected():
    with pytest.raises(ValueError):
        split_dataset(9, 0)


def test_build_vocabulary_reserved_first_and_ordering():
    vocab = build_vocabulary(["a pond", "a road", "a pond here"])
    assert vocab.words[:4] == list(RESERVED)
    # "a" (3), "pond" (2), then ties at 1 lexicographically.
    assert vocab.words[4:] == ["a", "pond", "here", "road"]


def test_build_vocabulary_deterministic():
    captions = [generate_scene(1, i).captions for i in range(5)]
    flat = [c for caps in captions for c in caps]
    assert build_vocabulary(flat).words == build_vocabulary(flat).words


def test_training_captions_encode_without_unk():
    samples = [generate_scene(6, i) for i in range(20)]
    vocab = build_vocabulary([c for s in samples for c in s.captions])
    for s in samples:
        for caption in s.captions:
            assert UNK_ID not in vocab.encode(tokenize(caption))


def test_save_and_load_roundtrip(tmp_path):
    out = tmp_path / "data"
    manifest = save_dataset(out, seed=1, count=12, image_size=32)
    assert manifest.counts == {"train": 10, "val": 1, "test": 1}
    train = load_split(out, "train")
    assert len(train) == 10
    sample = train[0]
    assert sample.image.dtype == np.uint8
    assert sample.image.shape == (32, 32, 3)
    assert len(sample.captions) == 5
    # Loaded records reproduce the generator's output for their index.
    index = int(sample.image_id[3:])
    regenerated = generate_scene(1, index, 32)
    np.testing.assert_array_equal(sample.image, regenerated.image)
    assert sample.captions == regenerated.captions


def test_save_dataset_deterministic_tree(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    save_dataset(a, seed=2, count=10, image_size=16)
    save_dataset(b, seed=2, count=10, image_size=16)
    for name in ("manifest.json", "train.jsonl", "val.jsonl", "test.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_load_split_unknown_split(tmp_path):
    out = tmp_path / "data"
    save_dataset(out, seed=0, count=10, image_size=16)
    with pytest.raises(ValueError):
        load_split(out, "bogus")
