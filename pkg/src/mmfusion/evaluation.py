"""Test variants, confusion matrices, Macro F1 and multi-run aggregation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data.records import Sample
from .fusion import FusionModel, predict_proba
from .seeding import rng_for

VARIANTS = ("test_c", "test_f", "test_i")


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray
    classes: tuple[str, ...]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.classes = tuple(self.classes)
        n = len(self.classes)
        if self.counts.shape != (n, n):
            raise ValueError(f"confusion counts shape {self.counts.shape} does not match {n} classes")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_labels(cls, y_true: Iterable[int], y_pred: Iterable[int], classes: Sequence[str]) -> "ConfusionMatrix":
        n = len(classes)
        counts = np.zeros((n, n), np.int64)
        np.add.at(counts, (np.asarray(list(y_true), int), np.asarray(list(y_pred), int)), 1)
        return cls(counts, tuple(classes))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts.tolist()}


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a, dtype=np.float64)
    np.divide(a, b, out=out, where=b != 0)
    return out


def macro_f1(confusion: ConfusionMatrix) -> tuple[np.ndarray, float]:
    """Per-class F1 and their unweighted mean. Every 0/0 counts as 0."""
    counts = confusion.counts
    if counts.shape[0] < 2:
        raise ValueError("Macro F1 needs at least two classes")
    if confusion.total == 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(counts).astype(np.float64)
    precision = _safe_div(tp, counts.sum(axis=0).astype(np.float64))
    recall = _safe_div(tp, counts.sum(axis=1).astype(np.float64))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return f1, float(f1.mean())


@dataclass
class MetricsReport:
    variant: str
    per_class_f1: np.ndarray
    macro_f1: float
    confusion: ConfusionMatrix
    # predicted class per evaluated sample, aligned with the input order
    predicted: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "macro_f1": self.macro_f1,
            "per_class_f1": [float(v) for v in self.per_class_f1],
            "confusion": self.confusion.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        conf = ConfusionMatrix(np.array(d["confusion"]["counts"]), tuple(d["confusion"]["classes"]))
        return cls(d["variant"], np.array(d["per_class_f1"], np.float64), float(d["macro_f1"]), conf)


def report_from_confusion(confusion: ConfusionMatrix, variant: str) -> MetricsReport:
    per_class, macro = macro_f1(confusion)
    return MetricsReport(variant, per_class, macro, confusion)


def make_test_variant(samples: Sequence[Sample], variant: str) -> list[Sample]:
    """test_c keeps pairs, test_f blackens interiors, test_i blackens facades."""
    if variant == "test_c":
        return list(samples)
    if variant == "test_f":
        return [s.blacken("interior") for s in samples]
    if variant == "test_i":
        return [s.blacken("facade") for s in samples]
    raise ValueError(f"unknown test variant {variant!r}; choose from {VARIANTS}")


def evaluate(
    model: FusionModel, samples: Sequence[Sample], variant: str, classes: Sequence[str] | None = None
) -> MetricsReport:
    """Build ``variant`` from complete ``samples``, predict every sample, score it.

    ``classes`` is the dataset vocabulary; it must equal the model's.
    """
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    if classes is not None and tuple(classes) != tuple(model.classes):
        raise ValueError(f"dataset vocabulary {list(classes)} does not match model vocabulary {list(model.classes)}")
    labels = np.array([s.label_index for s in samples])
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise ValueError("sample labels outside the model's class range")
    variant_samples = make_test_variant(samples, variant)
    probs = predict_proba(
        model,
        np.stack([s.facade for s in variant_samples]),
        np.stack([s.interior for s in variant_samples]),
    )
    if not np.isfinite(probs).all():
        raise FloatingPointError("model produced non-finite probabilities")
    predicted = probs.argmax(axis=1)
    report = report_from_confusion(ConfusionMatrix.from_labels(labels, predicted, model.classes), variant)
    report.predicted = predicted
    return report


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float
    n: int

    @property
    def text(self) -> str:
        return format_mean_std(self.mean, self.std)


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.2f} ({std:.2f})"


def summarize(values: Sequence[float]) -> Aggregate:
    """Arithmetic mean and population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("nothing to aggregate")
    return Aggregate(float(arr.mean()), float(arr.std(ddof=0)), int(arr.size))


def aggregate_runs(reports: Iterable[MetricsReport]) -> dict[str, Aggregate]:
    """Macro F1 over repeated runs, grouped by test variant."""
    by_variant: dict[str, list[float]] = {}
    for r in reports:
        by_variant.setdefault(r.variant, []).append(r.macro_f1)
    return {v: summarize(vals) for v, vals in by_variant.items()}


def export_confusion_grid(
    report: MetricsReport, samples: Sequence[Sample], path: str | Path | None = None, seed: int = 0
) -> dict:
    """Confusion matrix plus one representative sample per non-empty cell.

    Representatives are picked uniformly (seeded) among the samples that fell
    into the cell; their object id and image references are recorded so the
    pair can be inspected by hand. Empty cells are omitted.
    """
    if report.predicted is None or len(report.predicted) != len(samples):
        raise ValueError("report must carry one prediction per sample")
    classes = report.confusion.classes
    members: dict[tuple[int, int], list[int]] = {}
    for i, (s, p) in enumerate(zip(samples, report.predicted)):
        members.setdefault((s.label_index, int(p)), []).append(i)
    rng = rng_for(seed, "confusion-grid", report.variant)
    cells = []
    for (t, p) in sorted(members):
        idx = members[(t, p)]
        pick = samples[idx[int(rng.integers(len(idx)))]]
        cells.append(
            {
                "true": classes[t],
                "predicted": classes[p],
                "count": len(idx),
                "correct": t == p,
                "object_id": pick.object_id,
                "facade_ref": pick.facade_ref,
                "interior_ref": pick.interior_ref,
            }
        )
    doc = {"variant": report.variant, "macro_f1": report.macro_f1, **report.confusion.to_dict(), "cells": cells}
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return doc


def confusion_from_grid(doc: dict) -> ConfusionMatrix:
    return ConfusionMatrix(np.array(doc["counts"]), tuple(doc["classes"]))
