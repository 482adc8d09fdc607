"""Turning object records into samples, and the four training-data regimes."""

from __future__ import annotations

from itertools import cycle, islice
from typing import Callable, Sequence

import numpy as np

from ..seeding import derive_seed, rng_for
from .records import ObjectRecord, Sample

Loader = Callable[[str], np.ndarray]

MODALITY_CONFIGS = ("complete", "facade_only", "interior_only", "complete_plus_missing")


def _label_index(record: ObjectRecord, classes: Sequence[str]) -> int:
    try:
        return list(classes).index(record.class_label)
    except ValueError:
        raise ValueError(f"{record.object_id}: class {record.class_label!r} not in vocabulary {list(classes)}") from None


def pair_indices(n_facade: int, n_interior: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Index pairs (facade, interior) for one object.

    ``min(n_facade, n_interior)`` images are drawn without replacement from the
    larger list (interior on ties) in a random order and zipped with the smaller
    list in its original order.
    """
    k = min(n_facade, n_interior)
    if k == 0:
        return []
    if n_interior >= n_facade:
        chosen = rng.permutation(n_interior)[:k]
        return [(f, int(i)) for f, i in zip(range(k), chosen)]
    chosen = rng.permutation(n_facade)[:k]
    return [(int(f), i) for f, i in zip(chosen, range(k))]


def pair_object(record: ObjectRecord, seed: int, *, loader: Loader, classes: Sequence[str]) -> list[Sample]:
    """Complete facade/interior pairs for one object, all carrying its label.

    Objects missing either modality yield no pairs; they belong in the
    incomplete pool (see :func:`make_incomplete`).
    """
    label = _label_index(record, classes)
    rng = rng_for(seed, "pair", record.object_id)
    samples = []
    for fi, ii in pair_indices(len(record.facade_images), len(record.interior_images), rng):
        f_ref, i_ref = record.facade_images[fi], record.interior_images[ii]
        samples.append(
            Sample(
                object_id=record.object_id,
                facade=loader(f_ref),
                interior=loader(i_ref),
                facade_present=True,
                interior_present=True,
                label_index=label,
                facade_ref=f_ref,
                interior_ref=i_ref,
            )
        )
    return samples


def make_incomplete(
    record: ObjectRecord, missing: str, seed: int, *, loader: Loader, classes: Sequence[str]
) -> Sample:
    """One sample with ``missing`` blackened and the other modality drawn from the record."""
    if missing not in ("facade", "interior"):
        raise ValueError(f"missing must be 'facade' or 'interior', got {missing!r}")
    present = "interior" if missing == "facade" else "facade"
    refs = record.images(present)
    if not refs:
        raise ValueError(f"{record.object_id}: no {present} images to build a missing-{missing} sample")
    rng = rng_for(seed, "incomplete", record.object_id, missing)
    ref = refs[int(rng.integers(len(refs)))]
    image = loader(ref)
    black = np.zeros_like(image)
    if missing == "facade":
        return Sample(record.object_id, black, image, False, True, _label_index(record, classes), None, ref)
    return Sample(record.object_id, image, black, True, False, _label_index(record, classes), ref, None)


def build_missing_pool(
    records: Sequence[ObjectRecord], size: int, seed: int, *, loader: Loader, classes: Sequence[str]
) -> list[Sample]:
    """``size / 2`` missing-facade plus ``size / 2`` missing-interior samples.

    Records that genuinely lack the missing modality are used first; records are
    reused (with fresh draws) only when there are too few of them.
    """
    if size < 0 or size % 2:
        raise ValueError(f"missing pool size must be a non-negative even number, got {size}")
    half = size // 2
    pool: list[Sample] = []
    if half == 0:
        return pool
    rng = rng_for(seed, "missing-pool")
    for missing, present in (("facade", "interior"), ("interior", "facade")):
        eligible = sorted((r for r in records if r.images(present)), key=lambda r: r.object_id)
        if not eligible:
            raise ValueError(f"no records with {present} images for missing-{missing} samples")
        truly = [r for r in eligible if not r.images(missing)]
        rest = [r for r in eligible if r.images(missing)]
        order = [truly[i] for i in rng.permutation(len(truly))] + [rest[i] for i in rng.permutation(len(rest))]
        for j, rec in enumerate(islice(cycle(order), half)):
            pool.append(make_incomplete(rec, missing, derive_seed(seed, j), loader=loader, classes=classes))
    return pool


def apply_modality_config(
    samples: Sequence[Sample], config: str, missing_pool: Sequence[Sample] | None = None, seed: int = 0
) -> list[Sample]:
    """Derive one of the four training-data regimes from complete pairs.

    ``complete_plus_missing`` appends ``missing_pool`` and shuffles with ``seed``.
    """
    if config == "complete":
        return list(samples)
    if config == "facade_only":
        return [s.blacken("interior") for s in samples]
    if config == "interior_only":
        return [s.blacken("facade") for s in samples]
    if config == "complete_plus_missing":
        if missing_pool is None:
            raise ValueError("complete_plus_missing needs a missing pool")
        merged = list(samples) + list(missing_pool)
        order = rng_for(seed, "complete_plus_missing").permutation(len(merged))
        return [merged[i] for i in order]
    raise ValueError(f"unknown modality configuration {config!r}; choose from {MODALITY_CONFIGS}")


def complete_samples(
    records: Sequence[ObjectRecord], seed: int, *, loader: Loader, classes: Sequence[str]
) -> list[Sample]:
    """All complete pairs from ``records`` in record order."""
    out: list[Sample] = []
    for rec in records:
        out.extend(pair_object(rec, seed, loader=loader, classes=classes))
    return out
