"""Multi-level feature extraction: object boxes, expanded patches, and a
whole-image descriptor, stacked into the 2n+1-row matrix the decoder
attends over.

The descriptor is a deterministic 9-number summary of the pixels under a
box (channel means, grayscale spread, and normalized geometry) followed by
a trainable linear projection, one projection per level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T

RAW_DIM = 9
LEVELS = ("object", "patch", "global")


@dataclass
class BoundingBox:
    """Axis-aligned box as center + extents, in pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def edges(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    @classmethod
    def from_edges(cls, x0, y0, x1, y1) -> "BoundingBox":
        return cls((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)


def full_image_box(image_w: float, image_h: float) -> BoundingBox:
    return BoundingBox(image_w / 2.0, image_h / 2.0, image_w, image_h)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ax0, ay0, ax1, ay1 = a.edges()
    bx0, by0, bx1, by1 = b.edges()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def expand_patch(box: BoundingBox, k: float, image_w: float, image_h: float) -> BoundingBox:
    """Scale a box about its center by factor k, then clip each edge to the
    image independently.  Clipping at a border can shift the effective
    center and aspect ratio; interior boxes keep both exactly."""
    if k <= 0:
        raise ValueError(f"patch scale factor must be positive, got {k}")
    scaled = BoundingBox(box.cx, box.cy, box.w * k, box.h * k)
    x0, y0, x1, y1 = scaled.edges()
    if x0 >= 0.0 and y0 >= 0.0 and x1 <= image_w and y1 <= image_h:
        return scaled  # interior: keep center/extents exact
    x0 = min(max(x0, 0.0), image_w)
    x1 = min(max(x1, 0.0), image_w)
    y0 = min(max(y0, 0.0), image_h)
    y1 = min(max(y1, 0.0), image_h)
    return BoundingBox.from_edges(x0, y0, x1, y1)


def top_n_boxes(sample, n: int) -> list[BoundingBox]:
    """The n largest ground-truth boxes, area-descending.

    Stands in for a detector's top-n proposals.  Short scenes are padded by
    repeating the last box; empty scenes use the full-image box.  Ties in
    area break left-to-right, then top-to-bottom.
    """
    if n < 1:
        raise ValueError(f"box count must be >= 1, got {n}")
    boxes = list(sample.scene.boxes())
    boxes.sort(key=lambda b: (-b.area, b.cx, b.cy))
    if not boxes:
        boxes = [full_image_box(sample.scene.width, sample.scene.height)]
    boxes = boxes[:n]
    while len(boxes) < n:
        boxes.append(boxes[-1])
    return boxes


def raw_descriptor(image: np.ndarray, box: BoundingBox) -> np.ndarray:
    """The 9-number pixel/geometry summary of a clipped box.

    [mean R, mean G, mean B, grayscale stddev, w/W, h/H, cx/W, cy/H,
    area/image-area], with channel values scaled to [0, 1].  A box that
    clips to zero area falls back to its single nearest pixel.
    """
    img_h, img_w = image.shape[0], image.shape[1]
    x0, y0, x1, y1 = box.edges()
    ix0 = int(np.clip(np.floor(x0), 0, img_w - 1))
    iy0 = int(np.clip(np.floor(y0), 0, img_h - 1))
    ix1 = int(np.clip(np.ceil(x1), ix0 + 1, img_w))
    iy1 = int(np.clip(np.ceil(y1), iy0 + 1, img_h))
    region = image[iy0:iy1, ix0:ix1].astype(np.float64) / 255.0
    means = region.reshape(-1, 3).mean(axis=0)
    gray = region.mean(axis=2)
    return np.array(
        [
            means[0],
            means[1],
            means[2],
            gray.std(),
            box.w / img_w,
            box.h / img_h,
            box.cx / img_w,
            box.cy / img_h,
            box.area / (img_w * img_h),
        ]
    )


@dataclass
class InstanceFeature:
    level: str
    vector: T.Tensor

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown feature level {self.level!r}")


def extract_descriptor(image: np.ndarray, box: BoundingBox, projection: T.Tensor, level: str) -> InstanceFeature:
    """Raw descriptor followed by the level's trainable linear projection."""
    raw = T.Tensor(raw_descriptor(image, box))
    return InstanceFeature(level, T.matmul(raw, projection))


class FeatureStack:
    """The attention slots: n object rows, n patch rows, one global row."""

    def __init__(self, matrix: T.Tensor, n: int):
        if matrix.data.ndim != 2 or matrix.data.shape[0] != 2 * n + 1:
            raise ValueError(
                f"feature stack needs {2 * n + 1} rows, got shape {matrix.data.shape}"
            )
        self.matrix = matrix
        self.n = n

    @classmethod
    def from_matrix(cls, matrix: T.Tensor, n: int) -> "FeatureStack":
        return cls(matrix, n)

    @property
    def num_slots(self) -> int:
        return 2 * self.n + 1

    @property
    def feature_dim(self) -> int:
        return self.matrix.data.shape[1]

    def slot_labels(self) -> list[str]:
        return (
            [f"obj{i + 1}" for i in range(self.n)]
            + [f"patch{i + 1}" for i in range(self.n)]
            + ["global"]
        )


def stack_features(
    objects: Sequence[InstanceFeature],
    patches: Sequence[InstanceFeature],
    global_feature: InstanceFeature,
) -> FeatureStack:
    """Order rows as [objects, patches, global]; a pure reordering."""
    if len(objects) != len(patches):
        raise ValueError(
            f"object/patch count mismatch: {len(objects)} vs {len(patches)}"
        )
    rows = [f.vector for f in objects] + [f.vector for f in patches] + [global_feature.vector]
    dim = rows[0].data.shape
    for r in rows:
        if r.data.shape != dim:
            raise ValueError(
                f"feature length mismatch: {r.data.shape} vs {dim}"
            )
    return FeatureStack(T.stack_rows(rows), len(objects))


@dataclass
class RawFeatures:
    """Parameter-independent descriptors for one image, cached across epochs."""

    object_raw: np.ndarray  # (n, 9)
    patch_raw: np.ndarray  # (n, 9)
    global_raw: np.ndarray  # (9,)

    @property
    def n(self) -> int:
        return self.object_raw.shape[0]


def compute_raw_features(sample, n: int, k: float) -> RawFeatures:
    image = sample.image
    img_h, img_w = image.shape[0], image.shape[1]
    boxes = top_n_boxes(sample, n)
    obj = np.stack([raw_descriptor(image, b) for b in boxes])
    pat = np.stack(
        [raw_descriptor(image, expand_patch(b, k, img_w, img_h)) for b in boxes]
    )
    glo = raw_descriptor(image, full_image_box(img_w, img_h))
    return RawFeatures(obj, pat, glo)


def project_features(raws: RawFeatures, params) -> FeatureStack:
    """Apply the three trainable projections and stack; the vectorized
    equivalent of extract_descriptor + stack_features."""
    obj = T.matmul(T.Tensor(raws.object_raw), params.proj_object)
    pat = T.matmul(T.Tensor(raws.patch_raw), params.proj_patch)
    glo = T.matmul(T.Tensor(raws.global_raw[None, :]), params.proj_global)
    return FeatureStack(T.concat_rows([obj, pat, glo]), raws.n)


def load_precomputed_jsonl(path) -> dict[str, "RawProjectedFeatures"]:
    """Ingest externally computed features, bypassing the descriptor.

    One JSON record per line: {image_id, object_features: n x d,
    patch_features: n x d, global_feature: d}.
    """
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            try:
                obj = np.asarray(rec["object_features"], dtype=np.float64)
                pat = np.asarray(rec["patch_features"], dtype=np.float64)
                glo = np.asarray(rec["global_feature"], dtype=np.float64)
                image_id = rec["image_id"]
            except KeyError as exc:
                raise ValueError(f"{path}:{line_no}: missing field {exc}") from exc
            if obj.shape != pat.shape or obj.ndim != 2 or glo.shape != (obj.shape[1],):
                raise ValueError(
                    f"{path}:{line_no}: inconsistent feature shapes "
                    f"{obj.shape}, {pat.shape}, {glo.shape}"
                )
            out[image_id] = RawProjectedFeatures(obj, pat, glo)
    return out


@dataclass
class RawProjectedFeatures:
    """Already-projected features from an external encoder."""

    object_features: np.ndarray
    patch_features: np.ndarray
    global_feature: np.ndarray

    def to_stack(self) -> FeatureStack:
        n = self.object_features.shape[0]
        matrix = np.concatenate(
            [self.object_features, self.patch_features, self.global_feature[None, :]]
        )
        return FeatureStack(T.Tensor(matrix), n)
