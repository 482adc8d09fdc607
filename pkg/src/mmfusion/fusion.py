"""Early, late and intermediate (MMTM) fusion classifiers.

early         facade | interior concatenated along width -> one backbone
late          one backbone per modality, final maps concatenated on channels
              (facade channels first)
intermediate  late, with an MMTM block gating both streams after every tap stage

Every variant ends in global average pooling, an affine head and a softmax.
The head weight is stored as ``(feature_dim, num_classes)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .backbone import BackboneConfig, ShapeError, build_backbone, check_input, images_to_tensor
from .mmtm import MMTM
from .seeding import derive_seed

ARCHITECTURES = ("early", "late", "intermediate")


@dataclass
class Prediction:
    probabilities: np.ndarray
    predicted_class: int


def _head_init(feature_dim: int, num_classes: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    limit = np.sqrt(6.0 / (feature_dim + num_classes))
    return rng.uniform(-limit, limit, size=(feature_dim, num_classes)).astype(np.float32)


class FusionModel(nn.Module):
    def __init__(
        self,
        kind: str,
        backbone_config: BackboneConfig,
        num_classes: int,
        streams: Sequence[nn.Module],
        mmtm: dict[int, MMTM] | None = None,
        classes: Sequence[str] | None = None,
        head_seed: int = 0,
    ):
        super().__init__()
        if kind not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {kind!r}; choose from {ARCHITECTURES}")
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        n_streams = 1 if kind == "early" else 2
        if len(streams) != n_streams:
            raise ValueError(f"{kind} fusion needs {n_streams} stream(s), got {len(streams)}")
        mmtm = mmtm or {}
        if kind == "intermediate" and sorted(mmtm) != sorted(backbone_config.mmtm_tap_stages):
            raise ValueError(f"intermediate fusion needs MMTM blocks at stages {backbone_config.mmtm_tap_stages}")
        if kind != "intermediate" and mmtm:
            raise ValueError(f"{kind} fusion has no MMTM blocks")
        if classes is None:
            classes = [f"class_{i}" for i in range(num_classes)]
        if len(classes) != num_classes:
            raise ValueError("class vocabulary length must equal num_classes")

        self.kind = kind
        self.backbone_config = backbone_config
        self.num_classes = num_classes
        self.classes = tuple(classes)
        self.streams = nn.ModuleList(streams)
        self.mmtm = nn.ModuleDict({str(k): block for k, block in sorted(mmtm.items())})
        fdim = self.feature_dim
        self.head_weight = nn.Parameter(torch.from_numpy(_head_init(fdim, num_classes, head_seed)))
        self.head_bias = nn.Parameter(torch.zeros(num_classes))

    @property
    def feature_dim(self) -> int:
        c = self.backbone_config.final_channels
        return c if self.kind == "early" else 2 * c

    def fuse_input(self, facade: torch.Tensor, interior: torch.Tensor) -> torch.Tensor:
        """Early-fusion input: facade on the left, interior on the right."""
        return torch.cat([facade, interior], dim=3)

    def final_maps(self, facade: torch.Tensor, interior: torch.Tensor) -> list[torch.Tensor]:
        """Final-stage feature maps (NCHW): one for early fusion, two otherwise."""
        check_input(facade, self.backbone_config)
        check_input(interior, self.backbone_config)
        if self.kind == "early":
            return [self.streams[0](self.fuse_input(facade, interior))]
        if self.kind == "late":
            return [self.streams[0](facade), self.streams[1](interior)]
        x1, x2 = facade, interior
        for k, (st1, st2) in enumerate(zip(self.streams[0].stages, self.streams[1].stages), start=1):
            x1, x2 = st1(x1), st2(x2)
            block = self.mmtm[str(k)] if str(k) in self.mmtm else None
            if block is not None:
                x1, x2, _, _ = block(x1, x2)
        return [x1, x2]

    def features(self, facade: torch.Tensor, interior: torch.Tensor) -> torch.Tensor:
        return torch.cat([m.mean(dim=(2, 3)) for m in self.final_maps(facade, interior)], dim=1)

    def forward(self, facade: torch.Tensor, interior: torch.Tensor) -> torch.Tensor:
        """Logits for NCHW facade/interior batches."""
        return self.features(facade, interior) @ self.head_weight + self.head_bias


def build_model(
    kind: str,
    backbone_config: BackboneConfig,
    num_classes: int,
    seed: int,
    classes: Sequence[str] | None = None,
) -> FusionModel:
    """Seeded model construction.

    Each stream, each MMTM block and the head get their own seed derived from
    ``seed``, so the two streams of late/intermediate models start different.
    """
    if kind not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {kind!r}; choose from {ARCHITECTURES}")
    n_streams = 1 if kind == "early" else 2
    streams = [build_backbone(backbone_config, derive_seed(seed, "stream", i)) for i in range(n_streams)]
    mmtm = {}
    if kind == "intermediate":
        for k in backbone_config.mmtm_tap_stages:
            c = backbone_config.stage_channels[k - 1]
            mmtm[k] = MMTM.create(c, c, derive_seed(seed, "mmtm", k))
    return FusionModel(
        kind,
        backbone_config,
        num_classes,
        streams,
        mmtm=mmtm,
        classes=classes,
        head_seed=derive_seed(seed, "head"),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(model: FusionModel, facades: np.ndarray, interiors: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Class probabilities for channels-last image batches, in inference mode."""
    facades = np.asarray(facades)
    interiors = np.asarray(interiors)
    if facades.ndim == 3:
        facades, interiors = facades[None], interiors[None]
    if facades.shape != interiors.shape:
        raise ShapeError("facade/interior batch", facades.shape, interiors.shape)
    was_training = model.training
    model.eval()
    out = []
    try:
        with torch.no_grad():
            for i in range(0, len(facades), batch_size):
                logits = model(images_to_tensor(facades[i : i + batch_size]), images_to_tensor(interiors[i : i + batch_size]))
                out.append(logits.double().numpy())
    finally:
        model.train(was_training)
    if not out:
        return np.zeros((0, model.num_classes))
    return softmax(np.concatenate(out))


def predict(model: FusionModel, facade: np.ndarray, interior: np.ndarray) -> Prediction:
    """Classify one facade/interior pair. A missing modality is an all-zero image."""
    expected = model.backbone_config.input_shape()
    for name, img in (("facade", facade), ("interior", interior)):
        if np.shape(img) != expected:
            raise ShapeError(f"{name} image", expected, np.shape(img))
    probs = predict_proba(model, facade, interior)[0]
    return Prediction(probabilities=probs, predicted_class=int(np.argmax(probs)))
