"""Procedural two-modality dataset with controllable cue reliability.

Every object has a true class ``c``. Each of its images independently carries
a cue:

* with probability ``fidelity`` the cue of ``c`` (a clear clue),
* otherwise, with probability ``conflict_fraction``, the cue of a uniformly
  chosen other class (a conflicting clue),
* otherwise no class cue at all (a missing clue: the motif is drawn in a
  neutral grey with a random layout).

Motifs
    facade    a grid of filled rectangles; colour hue ``c / n``, grid shape
              fixed per class
    interior  ``c + 1`` filled circles (capped at 6); colour hue ``(c + 0.5) / n``

Both are drawn over a random flat background with Gaussian pixel noise.
``conflict_fraction=1`` makes every unreliable image a conflicting clue. In that
regime two equally reliable binary cues carry no more usable information than
one, so fusion cannot help; missing clues are what make the second modality
worth having.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..seeding import rng_for
from .records import SPLITS, ObjectRecord, save_image

NEUTRAL = (0.85, 0.85, 0.85)


@dataclass
class SynthConfig:
    num_classes: int = 2
    objects_per_class_per_split: dict = field(default_factory=lambda: {"train": 100, "val": 25, "test": 100})
    facade_cue_fidelity: float = 0.8
    interior_cue_fidelity: float = 0.8
    # ((facade_min, facade_max), (interior_min, interior_max)) images per object
    images_per_object: tuple = ((1, 1), (1, 1))
    noise_level: float = 0.05
    seed: int = 0
    conflict_fraction: float = 1.0
    # objects with a single modality (alternating facade-only / interior-only)
    incomplete_objects_per_class_per_split: dict = field(default_factory=lambda: {"train": 0, "val": 0, "test": 0})
    image_size: int = 64

    def __post_init__(self):
        self.images_per_object = tuple(tuple(int(v) for v in r) for r in self.images_per_object)
        self.validate()

    @property
    def classes(self) -> list[str]:
        return [f"class_{c}" for c in range(self.num_classes)]

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ValueError("num_classes must be at least 1")
        for name in ("facade_cue_fidelity", "interior_cue_fidelity", "conflict_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        counts = {**self.objects_per_class_per_split}
        for split, n in list(counts.items()) + list(self.incomplete_objects_per_class_per_split.items()):
            if split not in SPLITS:
                raise ValueError(f"unknown split {split!r}")
            if n < 0:
                raise ValueError(f"negative object count for {split}")
        if sum(counts.values()) == 0:
            raise ValueError("synthetic dataset would contain no objects")
        for lo, hi in self.images_per_object:
            if not 1 <= lo <= hi:
                raise ValueError(f"invalid images-per-object range ({lo}, {hi})")
        if self.noise_level < 0:
            raise ValueError("noise_level must be non-negative")
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["images_per_object"] = [list(r) for r in self.images_per_object]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


def _hue_rgb(h: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h % 1.0, 0.9, 0.95), np.float32)


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(0.25, 0.6) + rng.uniform(-0.05, 0.05, size=3)
    return np.broadcast_to(base.astype(np.float32), (size, size, 3)).copy()


def _grid_shape(c: int) -> tuple[int, int]:
    return 1 + c % 3, 2 + (c // 3) % 3


def draw_facade(rng: np.random.Generator, size: int, cue: int | None, num_classes: int) -> np.ndarray:
    img = _background(rng, size)
    if cue is None:
        rows, cols = _grid_shape(int(rng.integers(num_classes)))
        color = np.array(NEUTRAL, np.float32)
    else:
        rows, cols = _grid_shape(cue)
        color = _hue_rgb(cue / num_classes)
    margin = size // 8
    cell_h = (size - 2 * margin) // rows
    cell_w = (size - 2 * margin) // cols
    jy, jx = rng.integers(-2, 3, size=2)
    for r in range(rows):
        for c in range(cols):
            y0 = margin + r * cell_h + cell_h // 6 + jy
            x0 = margin + c * cell_w + cell_w // 6 + jx
            y1 = y0 + (2 * cell_h) // 3
            x1 = x0 + (2 * cell_w) // 3
            img[max(y0, 0) : min(y1, size), max(x0, 0) : min(x1, size)] = color
    return img


def draw_interior(rng: np.random.Generator, size: int, cue: int | None, num_classes: int) -> np.ndarray:
    img = _background(rng, size)
    if cue is None:
        count = 1 + int(rng.integers(min(num_classes, 6)))
        color = np.array(NEUTRAL, np.float32)
    else:
        count = 1 + min(cue, 5)
        color = _hue_rgb((cue + 0.5) / num_classes)
    yy, xx = np.ogrid[:size, :size]
    radius = size / 10.0
    for _ in range(count):
        cy, cx = rng.uniform(radius, size - radius, size=2)
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2] = color
    return img


def _draw_cue(rng: np.random.Generator, true_class: int, fidelity: float, conflict_fraction: float, n: int) -> int | None:
    if rng.random() < fidelity or n == 1:
        return true_class
    if rng.random() < conflict_fraction:
        others = [k for k in range(n) if k != true_class]
        return int(others[int(rng.integers(len(others)))])
    return None


def _finish(img: np.ndarray, rng: np.random.Generator, noise: float) -> np.ndarray:
    if noise > 0:
        img = img + rng.normal(0.0, noise, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def render_object(cfg: SynthConfig, object_id: str, true_class: int, facade: bool = True, interior: bool = True):
    """Images and cue labels for one object, seeded by (cfg.seed, object_id)."""
    rng = rng_for(cfg.seed, "synthetic", object_id)
    (f_lo, f_hi), (i_lo, i_hi) = cfg.images_per_object
    n_f = int(rng.integers(f_lo, f_hi + 1)) if facade else 0
    n_i = int(rng.integers(i_lo, i_hi + 1)) if interior else 0
    out = {"facade": [], "interior": [], "facade_cues": [], "interior_cues": []}
    for _ in range(n_f):
        cue = _draw_cue(rng, true_class, cfg.facade_cue_fidelity, cfg.conflict_fraction, cfg.num_classes)
        out["facade"].append(_finish(draw_facade(rng, cfg.image_size, cue, cfg.num_classes), rng, cfg.noise_level))
        out["facade_cues"].append(cue)
    for _ in range(n_i):
        cue = _draw_cue(rng, true_class, cfg.interior_cue_fidelity, cfg.conflict_fraction, cfg.num_classes)
        out["interior"].append(_finish(draw_interior(rng, cfg.image_size, cue, cfg.num_classes), rng, cfg.noise_level))
        out["interior_cues"].append(cue)
    return out


def generate_synthetic(cfg: SynthConfig, out_dir: str | Path) -> list[ObjectRecord]:
    """Render the dataset into ``out_dir`` and return its records.

    Writes ``images/*.png``, ``manifest.jsonl`` (with extra ``facade_cues`` /
    ``interior_cues`` fields, ``null`` marking a missing clue) and
    ``synth_config.json``.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records: list[ObjectRecord] = []
    lines: list[dict] = []
    for split in SPLITS:
        for c, cls in enumerate(cfg.classes):
            n_complete = cfg.objects_per_class_per_split.get(split, 0)
            n_incomplete = cfg.incomplete_objects_per_class_per_split.get(split, 0)
            specs = [(f"syn-{split}-{c}-{j:05d}", True, True) for j in range(n_complete)]
            specs += [(f"syn-{split}-{c}-m{j:05d}", j % 2 == 0, j % 2 == 1) for j in range(n_incomplete)]
            for object_id, has_f, has_i in specs:
                rendered = render_object(cfg, object_id, c, facade=has_f, interior=has_i)
                refs = {}
                for modality in ("facade", "interior"):
                    refs[modality] = []
                    for k, img in enumerate(rendered[modality]):
                        ref = f"images/{object_id}_{modality[0]}{k}.png"
                        save_image(out_dir / ref, img)
                        refs[modality].append(ref)
                rec = ObjectRecord(object_id, cls, tuple(refs["facade"]), tuple(refs["interior"]), split)
                records.append(rec)
                lines.append({**rec.to_json(), "facade_cues": rendered["facade_cues"], "interior_cues": rendered["interior_cues"]})
    with (out_dir / "manifest.jsonl").open("w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line) + "\n")
    (out_dir / "synth_config.json").write_text(json.dumps(cfg.to_dict(), indent=2), encoding="utf-8")
    return records
