"""Deterministic synthetic scene corpus.

Each sample is a flat-background raster with up to six solid-color shapes
from a small taxonomy, the matching ground-truth boxes, and five templated
caption sentences.  Everything is a pure function of (seed, index), so a
manifest seed reproduces the corpus byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import BoundingBox, iou
from .metrics import tokenize
from .vocab import RESERVED, Vocabulary

CLASSES = ("bridge", "building", "field", "pond", "road", "tank", "tree", "vehicle")

CLASS_COLORS = {
    "bridge": (139, 90, 43),
    "building": (178, 34, 34),
    "field": (154, 205, 50),
    "pond": (30, 144, 255),
    "road": (80, 80, 80),
    "tank": (230, 230, 230),
    "tree": (34, 139, 34),
    "vehicle": (255, 215, 0),
}

BACKGROUNDS = {
    "plain": (200, 190, 160),
    "meadow": (120, 180, 100),
    "desert": (220, 200, 140),
}

NUMBER_WORDS = ("zero", "one", "two", "three", "four", "five", "six")

MAX_OBJECTS = 6
MAX_IOU = 0.3
DEFAULT_IMAGE_SIZE = 64


@dataclass
class PlacedObject:
    cls: str
    box: BoundingBox
    color: tuple[int, int, int]


@dataclass
class SceneSpec:
    width: int
    height: int
    background: str
    objects: list[PlacedObject]

    def boxes(self) -> list[BoundingBox]:
        return [o.box for o in self.objects]


@dataclass
class CaptionSample:
    image_id: str
    image: np.ndarray  # (H, W, 3) uint8
    scene: SceneSpec
    captions: list[str]


def _grid_position(box: BoundingBox, width: int, height: int) -> str:
    col = min(2, int(3 * box.cx / width))
    row = min(2, int(3 * box.cy / height))
    names = [
        ["top left", "top center", "top right"],
        ["middle left", "center", "middle right"],
        ["bottom left", "bottom center", "bottom right"],
    ]
    return names[row][col]


def _plural(cls: str, count: int) -> str:
    return cls if count == 1 else cls + "s"


def caption_templates(scene: SceneSpec, seed: int) -> list[str]:
    """Five sentences from five template families, deterministic per scene.

    Only classes present in the scene are mentioned; empty scenes fall back
    to background-only phrasing in every family.
    """
    rng = np.random.default_rng([seed, 91])
    bg = scene.background
    if not scene.objects:
        return [
            f"an empty {bg} with nothing around",
            f"a quiet {bg} scene",
            f"a bare {bg} stretches out",
            f"nothing but open {bg} here",
            f"an empty scene with only a {bg}",
        ]
    counts: dict[str, int] = {}
    for obj in scene.objects:
        counts[obj.cls] = counts.get(obj.cls, 0) + 1
    # Most numerous class, ties toward the alphabetically first.
    main_cls = sorted(counts, key=lambda c: (-counts[c], c))[0]
    main_count = counts[main_cls]
    present = sorted(counts)
    largest = max(scene.objects, key=lambda o: (o.box.area, -o.box.cx, -o.box.cy))

    verb = "is" if main_count == 1 else "are"
    count_caption = (
        f"there {verb} {NUMBER_WORDS[main_count]} "
        f"{_plural(main_cls, main_count)} in the scene"
    )

    if len(scene.objects) >= 2:
        a = scene.objects[int(rng.integers(0, len(scene.objects)))]
        others = [o for o in scene.objects if o is not a]
        b = min(
            others,
            key=lambda o: (o.box.cx - a.box.cx) ** 2 + (o.box.cy - a.box.cy) ** 2,
        )
        relation_caption = f"a {a.cls} is near a {b.cls}"
    else:
        relation_caption = f"a {scene.objects[0].cls} stands alone on the {bg}"

    scatter_caption = f"{_plural(main_cls, 2)} scattered across a {bg}"
    position_caption = (
        f"a {largest.cls} in the {_grid_position(largest.box, scene.width, scene.height)}"
    )
    if len(present) >= 2:
        listing = " and ".join(_plural(c, counts[c]) for c in present[:2])
    else:
        listing = _plural(present[0], counts[present[0]])
    summary_caption = f"a {bg} scene with {listing}"
    return [
        count_caption,
        relation_caption,
        scatter_caption,
        position_caption,
        summary_caption,
    ]


def render_scene(scene: SceneSpec) -> np.ndarray:
    image = np.empty((scene.height, scene.width, 3), dtype=np.uint8)
    image[...] = BACKGROUNDS[scene.background]
    for obj in scene.objects:
        x0, y0, x1, y1 = obj.box.edges()
        ix0 = int(np.clip(round(x0), 0, scene.width))
        iy0 = int(np.clip(round(y0), 0, scene.height))
        ix1 = int(np.clip(round(x1), 0, scene.width))
        iy1 = int(np.clip(round(y1), 0, scene.height))
        image[iy0:iy1, ix0:ix1] = obj.color
    return image


def generate_scene(seed: int, index: int, image_size: int = DEFAULT_IMAGE_SIZE) -> CaptionSample:
    """Sample a scene fully determined by (seed, index).

    Box placement rejection-resamples until every pairwise IoU is at most
    0.3; after 1000 rejections the object count is reduced, so generation
    never fails.
    """
    rng = np.random.default_rng([seed, index])
    width = height = image_size
    background = list(BACKGROUNDS)[int(rng.integers(0, len(BACKGROUNDS)))]
    count = int(rng.integers(0, MAX_OBJECTS + 1))
    objects: list[PlacedObject] = []
    while count > 0:
        objects = []
        rejections = 0
        while len(objects) < count and rejections < 1000:
            cls = CLASSES[int(rng.integers(0, len(CLASSES)))]
            # Extent range follows the canvas so small images stay placeable.
            hi = min(24.0, 0.375 * image_size)
            lo = min(8.0, hi / 2.0)
            w = float(rng.uniform(lo, hi))
            h = float(rng.uniform(lo, hi))
            cx = float(rng.uniform(w / 2, width - w / 2))
            cy = float(rng.uniform(h / 2, height - h / 2))
            box = BoundingBox(cx, cy, w, h)
            if all(iou(box, o.box) <= MAX_IOU for o in objects):
                objects.append(PlacedObject(cls, box, CLASS_COLORS[cls]))
            else:
                rejections += 1
        if len(objects) == count:
            break
        count -= 1
    scene = SceneSpec(width, height, background, objects)
    captions = caption_templates(scene, seed * 1_000_003 + index)
    return CaptionSample(
        image_id=f"img{index:05d}",
        image=render_scene(scene),
        scene=scene,
        captions=captions,
    )


def split_dataset(num_samples: int, seed: int, ratios=(0.8, 0.1, 0.1)) -> tuple[list[int], list[int], list[int]]:
    """Seeded shuffle, then contiguous cut; train absorbs rounding."""
    if num_samples < 10:
        raise ValueError(f"need at least 10 samples to split, got {num_samples}")
    rng = np.random.default_rng([seed, 7])
    order = [int(i) for i in rng.permutation(num_samples)]
    n_val = int(num_samples * ratios[1])
    n_test = int(num_samples * ratios[2])
    n_train = num_samples - n_val - n_test
    return (
        order[:n_train],
        order[n_train : n_train + n_val],
        order[n_train + n_val :],
    )


def build_vocabulary(captions: Sequence[str]) -> Vocabulary:
    """All tokens, reserved entries first, frequency then lexicographic."""
    if not captions:
        raise ValueError("cannot build a vocabulary from no captions")
    counts: dict[str, int] = {}
    for caption in captions:
        for token in tokenize(caption):
            counts[token] = counts.get(token, 0) + 1
    ordered = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + ordered)


@dataclass
class DatasetManifest:
    seed: int
    image_size: int
    counts: dict[str, int]
    files: dict[str, str]
    classes: list[str]
    template_version: int = 1


def save_dataset(out_dir, seed: int, count: int, image_size: int = DEFAULT_IMAGE_SIZE) -> DatasetManifest:
    """Generate, split, and write manifest.json plus per-split JSONL."""
    train_idx, val_idx, test_idx = split_dataset(count, seed)
    os.makedirs(out_dir, exist_ok=True)
    splits = {"train": train_idx, "val": val_idx, "test": test_idx}
    manifest = DatasetManifest(
        seed=seed,
        image_size=image_size,
        counts={name: len(idx) for name, idx in splits.items()},
        files={name: f"{name}.jsonl" for name in splits},
        classes=list(CLASSES),
    )
    for name, indices in splits.items():
        with open(os.path.join(out_dir, f"{name}.jsonl"), "w", encoding="utf-8") as fh:
            for index in indices:
                sample = generate_scene(seed, index, image_size)
                record = {
                    "image_id": sample.image_id,
                    "image": sample.image.tolist(),
                    "background": sample.scene.background,
                    "boxes": [
                        {
                            "cx": o.box.cx,
                            "cy": o.box.cy,
                            "w": o.box.w,
                            "h": o.box.h,
                            "class": o.cls,
                        }
                        for o in sample.scene.objects
                    ],
                    "captions": sample.captions,
                }
                fh.write(json.dumps(record, separators=(",", ":")) + "\n")
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "seed": manifest.seed,
                "image_size": manifest.image_size,
                "counts": manifest.counts,
                "files": manifest.files,
                "classes": manifest.classes,
                "template_version": manifest.template_version,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return manifest


def load_split(data_dir, split: str) -> list[CaptionSample]:
    manifest_path = os.path.join(data_dir, "manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if split not in manifest["files"]:
        raise ValueError(f"unknown split {split!r}; have {sorted(manifest['files'])}")
    samples = []
    with open(os.path.join(data_dir, manifest["files"][split]), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            image = np.asarray(rec["image"], dtype=np.uint8)
            objects = [
                PlacedObject(
                    cls=b["class"],
                    box=BoundingBox(b["cx"], b["cy"], b["w"], b["h"]),
                    color=CLASS_COLORS.get(b["class"], (0, 0, 0)),
                )
                for b in rec["boxes"]
            ]
            scene = SceneSpec(
                width=image.shape[1],
                height=image.shape[0],
                background=rec.get("background", "plain"),
                objects=objects,
            )
            samples.append(
                CaptionSample(
                    image_id=rec["image_id"],
                    image=image,
                    scene=scene,
                    captions=list(rec["captions"]),
                )
            )
    return samples
