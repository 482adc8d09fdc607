"""Use-case vocabularies and split counts."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Mapping

import yaml

from .records import SPLITS


@dataclass(frozen=True)
class UseCase:
    id: str
    name: str
    classes: tuple[str, ...]
    # split -> class -> (complete objects, incomplete objects)
    split_counts: Mapping[str, Mapping[str, tuple[int, int]]] | None = None

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def random_baseline(self) -> float:
        return 1.0 / self.num_classes

    @property
    def header(self) -> str:
        rb = 100.0 * self.random_baseline
        rb_text = f"{rb:.0f}" if abs(rb - round(rb)) < 1e-9 else f"{rb:.1f}"
        return f"{self.id}: {self.name} (RB = {rb_text}%)"

    def count(self, split: str, cls: str, incomplete: bool = False) -> int:
        if self.split_counts is None:
            raise ValueError(f"{self.id} has no declared split counts")
        return self.split_counts[split][cls][1 if incomplete else 0]


def parse_use_cases(doc: Mapping) -> dict[str, UseCase]:
    out = {}
    for uc_id, body in doc.items():
        classes = tuple(body["classes"])
        counts = None
        if "splits" in body:
            counts = {}
            for split, per_class in body["splits"].items():
                if split not in SPLITS:
                    raise ValueError(f"{uc_id}: unknown split {split!r}")
                if set(per_class) != set(classes):
                    raise ValueError(f"{uc_id}/{split}: classes {sorted(per_class)} != {sorted(classes)}")
                counts[split] = {c: (int(v[0]), int(v[1])) for c, v in per_class.items()}
                for c, (_, extra) in counts[split].items():
                    if extra % 2:
                        raise ValueError(f"{uc_id}/{split}/{c}: incomplete count {extra} cannot be balanced")
        out[uc_id] = UseCase(uc_id, body.get("name", uc_id), classes, counts)
    return out


def load_use_cases(path=None) -> dict[str, UseCase]:
    """Use cases from ``path``, or the bundled UC1-UC3 definitions."""
    if path is None:
        text = resources.files(__package__).joinpath("usecases.yaml").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_use_cases(yaml.safe_load(text))


def synthetic_use_case(classes, uc_id: str = "SYN") -> UseCase:
    return UseCase(uc_id, "Synthetic", tuple(classes))
