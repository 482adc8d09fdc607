"""Versioned weight container shared by backbone weights and model checkpoints.

A container is an uncompressed ``.npz`` archive. Every tensor is stored under
its state-dict name (``streams.0.stage3.conv_weight``, ``mmtm.2.joint_weight``,
``head_weight`` ...) and one extra entry ``__meta__`` holds a JSON document::

    {"format": "mmfusion-weights", "version": 1, ...}

Model checkpoints add ``kind``, ``backbone_config``, ``classes``,
``num_classes``, ``config_fingerprint``, ``best_val_loss`` and ``best_epoch``.
Nothing is pickled.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT = "mmfusion-weights"
VERSION = 1
META_KEY = "__meta__"


def save_container(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    """Atomically write ``tensors`` and ``meta`` to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"format": FORMAT, "version": VERSION, **(meta or {})}
    if META_KEY in tensors:
        raise ValueError(f"{META_KEY!r} is reserved")
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **{k: np.asarray(v) for k, v in tensors.items()}, **{META_KEY: np.array(json.dumps(doc))})
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        if META_KEY not in z.files:
            raise ValueError(f"{path}: not an {FORMAT} container (no metadata)")
        meta = json.loads(str(z[META_KEY]))
        tensors = {k: z[k] for k in z.files if k != META_KEY}
    if meta.get("format") != FORMAT:
        raise ValueError(f"{path}: unexpected format {meta.get('format')!r}")
    if meta.get("version", 0) > VERSION:
        raise ValueError(f"{path}: container version {meta['version']} is newer than supported ({VERSION})")
    return tensors, meta


def model_state(model) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def save_model(path: str | Path, model, state: Mapping[str, np.ndarray] | None = None, **meta) -> None:
    """Write a model checkpoint; ``state`` defaults to the model's current weights."""
    doc = {
        "kind": model.kind,
        "backbone_config": model.backbone_config.to_dict(),
        "num_classes": model.num_classes,
        "classes": list(model.classes),
        **meta,
    }
    save_container(path, state if state is not None else model_state(model), doc)


def load_model(path: str | Path):
    """Rebuild a :class:`~mmfusion.fusion.FusionModel` from a checkpoint; returns (model, meta)."""
    import torch

    from .backbone import BackboneConfig
    from .fusion import build_model

    tensors, meta = load_container(path)
    cfg = BackboneConfig.from_dict(meta["backbone_config"])
    # pretrained weights are already part of the stored state
    if cfg.pretrained_weights_path:
        cfg = BackboneConfig.from_dict({**meta["backbone_config"], "pretrained_weights_path": None})
    model = build_model(meta["kind"], cfg, int(meta["num_classes"]), seed=0, classes=meta["classes"])
    model.load_state_dict({k: torch.as_tensor(v) for k, v in tensors.items()}, strict=True)
    model.eval()
    return model, meta
