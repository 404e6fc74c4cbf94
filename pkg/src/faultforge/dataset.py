"""Synthetic data sets wrapped with reproduction metadata.

Every sample carries (virtual path, image id, height, width) so a fault
condition can be traced back to, and re-executed on, a single data item.
Synthetic images are generated from the package PRNG with one derived
stream per image, so a data set is a pure function of its descriptor.

Ground-truth convention: there is no training loop in this engine, so
classification labels are the fault-free model's own top-1 predictions
(assigned by a profiling pass) and detection ground truth is the fault-free
model's decoded boxes. Silent-data-error metrics compare against the
fault-free leg, which this convention makes measurable on random weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model_registry import Model, decode_detections
from .prng import Xoshiro256StarStar, derive_seed


@dataclass
class Sample:
    image: np.ndarray
    image_id: int
    path: str
    height: int
    width: int
    label: int | None = None
    boxes: list[tuple[float, float, float, float, int]] | None = None


@dataclass
class DatasetHandle:
    """Ordered, deterministically iterable collection of samples.

    ``shuffle`` stays False: iteration order is part of the reproducibility
    contract (matching a data loader run with shuffling disabled).
    """

    name: str
    samples: list[Sample]
    descriptor: dict = field(default_factory=dict)
    shuffle: bool = False

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i) -> Sample:
        return self.samples[i]


def _synthetic_images(name, count, channels, h, w, seed):
    samples = []
    for i in range(count):
        gen = Xoshiro256StarStar(derive_seed(seed, f"{name}/image/{i}"))
        flat = np.empty(channels * h * w, dtype=np.float32)
        for k in range(flat.size):
            flat[k] = np.float32(gen.random())
        samples.append(Sample(
            image=flat.reshape(channels, h, w),
            image_id=i,
            path=f"synthetic://{name}/{i:06d}.img",
            height=h,
            width=w,
        ))
    return samples


def synthetic_classification_dataset(count, channels, h, w, num_classes, seed,
                                     model: Model | None = None) -> DatasetHandle:
    """Deterministic uniform-noise classification set.

    Labels stay None until assigned from a model's fault-free predictions
    (pass ``model`` here or call :func:`assign_labels_from_model` later).
    """
    name = f"synth-cls-{count}x{channels}x{h}x{w}-s{seed}"
    ds = DatasetHandle(
        name=name,
        samples=_synthetic_images(name, count, channels, h, w, seed),
        descriptor={
            "type": "synthetic-classification",
            "count": count, "channels": channels, "height": h, "width": w,
            "num_classes": num_classes, "seed": seed,
        },
    )
    if model is not None:
        assign_labels_from_model(ds, model)
    return ds


def synthetic_detection_dataset(count, channels, h, w, seed,
                                model: Model | None = None) -> DatasetHandle:
    """Deterministic uniform-noise detection set; boxes from the model's
    fault-free decode when ``model`` is given."""
    name = f"synth-det-{count}x{channels}x{h}x{w}-s{seed}"
    ds = DatasetHandle(
        name=name,
        samples=_synthetic_images(name, count, channels, h, w, seed),
        descriptor={
            "type": "synthetic-detection",
            "count": count, "channels": channels, "height": h, "width": w,
            "seed": seed,
        },
    )
    if model is not None:
        assign_boxes_from_model(ds, model)
    return ds


def dataset_for_model(model: Model, count: int, seed: int) -> DatasetHandle:
    """The natural synthetic set for a model: shape from the model's input,
    ground truth from its fault-free behavior."""
    shape = model.input_shape
    if model.head == "detection":
        if len(shape) != 3:
            raise ValidationError(f"detection model input must be CxHxW, got {shape}")
        return synthetic_detection_dataset(count, shape[0], shape[1], shape[2], seed, model)
    if len(shape) == 3:
        c, h, w = shape
    elif len(shape) == 4:
        # conv3d front: encode depth into the channel axis of the descriptor
        c, h, w = shape[0] * shape[1], shape[2], shape[3]
    else:
        c, h, w = 1, 1, shape[0]
    ds = synthetic_classification_dataset(count, c, h, w, model.num_classes, seed, model=None)
    if ds[0].image.size != int(np.prod(shape)):
        raise ValidationError(f"cannot shape samples of {ds[0].image.shape} into {shape}")
    for s in ds:
        s.image = s.image.reshape(shape)
    assign_labels_from_model(ds, model)
    return ds


def assign_labels_from_model(ds: DatasetHandle, model: Model) -> DatasetHandle:
    """Label every sample with the fault-free model's top-1 class."""
    for s in ds:
        logits = model.forward(s.image)
        s.label = int(np.argmax(logits))
    return ds


def assign_boxes_from_model(ds: DatasetHandle, model: Model) -> DatasetHandle:
    """Attach the fault-free model's decoded boxes as ground truth."""
    for s in ds:
        dets = decode_detections(model, model.forward(s.image))
        s.boxes = [(x1, y1, x2, y2, cls) for x1, y1, x2, y2, score, cls in dets]
    return ds


def batches(ds: DatasetHandle, batch_size: int):
    """Deterministic batching; the final batch may be partial."""
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    for start in range(0, len(ds), batch_size):
        yield ds.samples[start:start + batch_size]


def export_ground_truth_json(ds: DatasetHandle, path) -> None:
    """COCO-style ground truth: images[], annotations[], categories[].

    Detection annotations carry xywh ``bbox`` plus ``category_id``;
    classification annotations carry ``category_id`` only. The dataset
    descriptor rides along so the exact set can be rebuilt. Key order and
    float formatting are stable, so re-exports are byte-identical.
    """
    images = [
        {"id": s.image_id, "file_name": s.path, "height": s.height, "width": s.width}
        for s in ds
    ]
    annotations = []
    ann_id = 0
    categories = set()
    for s in ds:
        if s.boxes is not None:
            for x1, y1, x2, y2, cls in s.boxes:
                annotations.append({
                    "id": ann_id,
                    "image_id": s.image_id,
                    "bbox": [x1, y1, x2 - x1, y2 - y1],
                    "category_id": int(cls),
                })
                categories.add(int(cls))
                ann_id += 1
        elif s.label is not None:
            annotations.append({
                "id": ann_id,
                "image_id": s.image_id,
                "bbox": None,
                "category_id": int(s.label),
            })
            categories.add(int(s.label))
            ann_id += 1
    doc = {
        "descriptor": ds.descriptor,
        "images": images,
        "annotations": annotations,
        "categories": [{"id": c, "name": f"class-{c}"} for c in sorted(categories)],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset(path, model: Model | None = None) -> DatasetHandle:
    """Rebuild a synthetic data set from an exported ground-truth document."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    desc = doc.get("descriptor") or {}
    kind = desc.get("type")
    if kind == "synthetic-classification":
        ds = synthetic_classification_dataset(
            desc["count"], desc["channels"], desc["height"], desc["width"],
            desc["num_classes"], desc["seed"])
        if model is not None:
            if model.input_shape != ds[0].image.shape:
                for s in ds:
                    s.image = s.image.reshape(model.input_shape)
            assign_labels_from_model(ds, model)
        return ds
    if kind == "synthetic-detection":
        return synthetic_detection_dataset(
            desc["count"], desc["channels"], desc["height"], desc["width"],
            desc["seed"], model)
    raise ValidationError(f"dataset descriptor in {path} has unknown type {kind!r}")
