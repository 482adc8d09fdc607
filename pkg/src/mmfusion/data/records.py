"""Object records, training samples and the manifest format.

Manifest: UTF-8 text, one JSON object per line::

    {"object_id": "obj-0001", "class": "house", "split": "train",
     "facade": ["img/obj-0001_f0.png"], "interior": ["img/obj-0001_i0.png", ...]}

Image references are paths relative to the manifest's directory (absolute
paths are used as-is). Images are 8-bit RGB raster files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

SPLITS = ("train", "val", "test")
MODALITIES = ("facade", "interior")


@dataclass(frozen=True)
class ObjectRecord:
    object_id: str
    class_label: str
    facade_images: tuple[str, ...]
    interior_images: tuple[str, ...]
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "facade_images", tuple(self.facade_images))
        object.__setattr__(self, "interior_images", tuple(self.interior_images))
        if self.split not in SPLITS:
            raise ValueError(f"{self.object_id}: unknown split {self.split!r}")
        if not self.facade_images and not self.interior_images:
            raise ValueError(f"{self.object_id}: record has no images")

    @property
    def is_complete(self) -> bool:
        return bool(self.facade_images) and bool(self.interior_images)

    def images(self, modality: str) -> tuple[str, ...]:
        if modality == "facade":
            return self.facade_images
        if modality == "interior":
            return self.interior_images
        raise ValueError(f"unknown modality {modality!r}")

    def to_json(self) -> dict:
        return {
            "object_id": self.object_id,
            "class": self.class_label,
            "split": self.split,
            "facade": list(self.facade_images),
            "interior": list(self.interior_images),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ObjectRecord":
        return cls(
            object_id=str(d["object_id"]),
            class_label=str(d["class"]),
            facade_images=tuple(d.get("facade", ())),
            interior_images=tuple(d.get("interior", ())),
            split=d.get("split", "train"),
        )


@dataclass
class Sample:
    """One training/evaluation unit. Images are (H, W, 3) float32 in [0, 1]."""

    object_id: str
    facade: np.ndarray
    interior: np.ndarray
    facade_present: bool
    interior_present: bool
    label_index: int
    facade_ref: str | None = None
    interior_ref: str | None = None

    def __post_init__(self):
        if not (self.facade_present or self.interior_present):
            raise ValueError(f"{self.object_id}: a sample needs at least one modality")
        if self.facade.shape != self.interior.shape:
            raise ValueError(f"{self.object_id}: facade {self.facade.shape} vs interior {self.interior.shape}")
        if not self.facade_present and self.facade.any():
            raise ValueError(f"{self.object_id}: absent facade must be all zeros")
        if not self.interior_present and self.interior.any():
            raise ValueError(f"{self.object_id}: absent interior must be all zeros")

    @property
    def is_complete(self) -> bool:
        return self.facade_present and self.interior_present

    def blacken(self, modality: str) -> "Sample":
        """Copy of the sample with ``modality`` replaced by a black image."""
        if modality == "facade":
            return replace(self, facade=np.zeros_like(self.facade), facade_present=False, facade_ref=None)
        if modality == "interior":
            return replace(self, interior=np.zeros_like(self.interior), interior_present=False, interior_ref=None)
        raise ValueError(f"unknown modality {modality!r}")


def read_manifest(path: str | Path) -> list[ObjectRecord]:
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(ObjectRecord.from_json(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return records


def write_manifest(path: str | Path, records: Iterable[ObjectRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def class_vocabulary(records: Iterable[ObjectRecord]) -> list[str]:
    return sorted({r.class_label for r in records})


class ImageLoader:
    """Loads image references relative to ``root`` as (size, size, 3) float32 in [0, 1]."""

    def __init__(self, root: str | Path, size: int = 64):
        self.root = Path(root)
        self.size = size

    def resolve(self, ref: str) -> Path:
        p = Path(ref)
        return p if p.is_absolute() else self.root / p

    def __call__(self, ref: str) -> np.ndarray:
        with Image.open(self.resolve(ref)) as im:
            im = im.convert("RGB")
            if im.size != (self.size, self.size):
                im = im.resize((self.size, self.size), Image.BILINEAR)
            return np.asarray(im, dtype=np.float32) / 255.0


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Write a [0, 1] float image as a lossless 8-bit PNG."""
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def stack_samples(samples: Sequence[Sample]) -> dict[str, np.ndarray]:
    """Columnar arrays for a list of samples (the ``pair`` output format)."""
    return {
        "facade": np.stack([s.facade for s in samples]).astype(np.float32),
        "interior": np.stack([s.interior for s in samples]).astype(np.float32),
        "facade_present": np.array([s.facade_present for s in samples], bool),
        "interior_present": np.array([s.interior_present for s in samples], bool),
        "label_index": np.array([s.label_index for s in samples], np.int64),
        "object_id": np.array([s.object_id for s in samples], dtype=str),
        "facade_ref": np.array([s.facade_ref or "" for s in samples], dtype=str),
        "interior_ref": np.array([s.interior_ref or "" for s in samples], dtype=str),
    }


def save_samples(path: str | Path, samples: Sequence[Sample]) -> None:
    if not samples:
        raise ValueError("no samples to save")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, **stack_samples(samples))


def load_samples(path: str | Path) -> list[Sample]:
    with np.load(path, allow_pickle=False) as z:
        cols = {k: z[k] for k in z.files}
    return [
        Sample(
            object_id=str(cols["object_id"][i]),
            facade=cols["facade"][i],
            interior=cols["interior"][i],
            facade_present=bool(cols["facade_present"][i]),
            interior_present=bool(cols["interior_present"][i]),
            label_index=int(cols["label_index"][i]),
            facade_ref=str(cols["facade_ref"][i]) or None,
            interior_ref=str(cols["interior_ref"][i]) or None,
        )
        for i in range(len(cols["label_index"]))
    ]
