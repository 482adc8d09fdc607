"""Staged convolutional feature extractors with named tap points.

Two configurations are provided:

* ``desknet`` - four conv(3x3, stride 2) -> batch-norm -> ReLU stages with
  16/32/64/128 channels on 64x64x3 inputs. Small enough to train on a CPU.
* ``fullscale-b0`` - EfficientNet-B0 (torchvision layout) on 224x224x3 inputs,
  giving a 7x7x1280 final map. Pretrained weights can be loaded from a file;
  no pretraining happens here.

Canonical weight layout
-----------------------
DeskNet weights are a flat mapping of named arrays, the same names the torch
module uses in its ``state_dict``::

    stage{k}.conv_weight       (3, 3, C_in, C_out)   kernel height, width, in, out
    stage{k}.bn_gamma          (C_out,)
    stage{k}.bn_beta           (C_out,)
    stage{k}.bn_running_mean   (C_out,)
    stage{k}.bn_running_var    (C_out,)

Stages are 1-indexed. Images at every public boundary are channels-last
``(H, W, 3)`` float arrays in ``[0, 1]``; modules take NCHW tensors.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

# running = 0.9 * running + 0.1 * batch  (torch expresses this as momentum=0.1)
BN_DECAY = 0.9
BN_EPS = 1e-5


class ShapeError(ValueError):
    """Raised when a tensor does not have the shape a component expects."""

    def __init__(self, what: str, expected, actual):
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"{what}: expected shape {self.expected}, got {self.actual}")


@dataclass(frozen=True)
class BackboneConfig:
    name: str
    input_height: int
    input_width: int
    stage_channels: tuple[int, ...]
    mmtm_tap_stages: tuple[int, ...]
    pretrained_weights_path: str | None = None

    def __post_init__(self):
        if self.name not in ("desknet", "fullscale-b0"):
            raise ValueError(f"unknown backbone {self.name!r}")
        if self.pretrained_weights_path is not None and self.name != "fullscale-b0":
            raise ValueError("pretrained weights are only supported for fullscale-b0")
        for s in self.mmtm_tap_stages:
            if not 1 <= s <= len(self.stage_channels):
                raise ValueError(f"tap stage {s} outside 1..{len(self.stage_channels)}")

    @property
    def num_stages(self) -> int:
        return len(self.stage_channels)

    @property
    def final_channels(self) -> int:
        return self.stage_channels[-1]

    def input_shape(self, width_multiple: int = 1) -> tuple[int, int, int]:
        return (self.input_height, self.input_width * width_multiple, 3)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_height": self.input_height,
            "input_width": self.input_width,
            "stage_channels": list(self.stage_channels),
            "mmtm_tap_stages": list(self.mmtm_tap_stages),
            "pretrained_weights_path": self.pretrained_weights_path,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BackboneConfig":
        return cls(
            name=d["name"],
            input_height=int(d["input_height"]),
            input_width=int(d["input_width"]),
            stage_channels=tuple(int(c) for c in d["stage_channels"]),
            mmtm_tap_stages=tuple(int(s) for s in d["mmtm_tap_stages"]),
            pretrained_weights_path=d.get("pretrained_weights_path"),
        )


DESKNET = BackboneConfig(
    name="desknet",
    input_height=64,
    input_width=64,
    stage_channels=(16, 32, 64, 128),
    mmtm_tap_stages=(2, 3, 4),
)

# Stage 1 is the stem plus the first MBConv block; stages 2..7 are the remaining
# MBConv blocks and stage 8 is the 1x1 projection to 1280 channels. Stages 5, 6, 7
# therefore line up with EfficientNet-B0 blocks 5, 6, 7.
FULLSCALE_B0 = BackboneConfig(
    name="fullscale-b0",
    input_height=224,
    input_width=224,
    stage_channels=(16, 24, 40, 80, 112, 192, 320, 1280),
    mmtm_tap_stages=(5, 6, 7),
)

CONFIGS = {"desknet": DESKNET, "fullscale-b0": FULLSCALE_B0}


def get_config(name: str, **overrides) -> BackboneConfig:
    try:
        base = CONFIGS[name]
    except KeyError:
        raise ValueError(f"unknown backbone {name!r}; choose from {sorted(CONFIGS)}") from None
    return replace(base, **overrides) if overrides else base


@dataclass
class StageFeatureMap:
    stage_index: int
    tensor: np.ndarray  # (height, width, channels)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.tensor.shape)

    @property
    def channels(self) -> int:
        return self.tensor.shape[-1]


def images_to_tensor(images: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(H, W, 3) or (N, H, W, 3) channels-last array -> NCHW tensor."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ShapeError("image batch", ("N", "H", "W", 3), arr.shape)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def tensor_to_maps(t: torch.Tensor) -> np.ndarray:
    """NCHW tensor -> (N, H, W, C) numpy array."""
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1)


def check_input(x: torch.Tensor, config: BackboneConfig, width_multiple: int = 1) -> None:
    expected = config.input_shape(width_multiple)
    actual = (x.shape[2], x.shape[3], x.shape[1]) if x.ndim == 4 else tuple(x.shape)
    if x.ndim != 4 or actual != expected:
        raise ShapeError(f"{config.name} input", expected, actual)


# ---------------------------------------------------------------------------
# DeskNet


class ConvBNReLU(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv_weight = nn.Parameter(torch.zeros(3, 3, c_in, c_out))
        self.bn_gamma = nn.Parameter(torch.ones(c_out))
        self.bn_beta = nn.Parameter(torch.zeros(c_out))
        self.register_buffer("bn_running_mean", torch.zeros(c_out))
        self.register_buffer("bn_running_var", torch.ones(c_out))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.conv2d(x, self.conv_weight.permute(3, 2, 0, 1), stride=2, padding=1)
        x = F.batch_norm(
            x,
            self.bn_running_mean,
            self.bn_running_var,
            self.bn_gamma,
            self.bn_beta,
            training=self.training,
            momentum=1.0 - BN_DECAY,
            eps=BN_EPS,
        )
        return F.relu(x)


class DeskNet(nn.Module):
    def __init__(self, config: BackboneConfig = DESKNET):
        super().__init__()
        if config.name != "desknet":
            raise ValueError(f"DeskNet cannot be built from {config.name!r}")
        self.config = config
        c_in = 3
        for k, c_out in enumerate(config.stage_channels, start=1):
            self.add_module(f"stage{k}", ConvBNReLU(c_in, c_out))
            c_in = c_out

    @property
    def stages(self) -> list[nn.Module]:
        return [getattr(self, f"stage{k}") for k in range(1, self.config.num_stages + 1)]

    @classmethod
    def from_weights(cls, weights: Mapping[str, np.ndarray], config: BackboneConfig = DESKNET) -> "DeskNet":
        net = cls(config)
        state = {k: torch.as_tensor(np.asarray(v)) for k, v in weights.items()}
        net.load_state_dict(state, strict=True)
        return net

    def export_weights(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy().copy() for k, v in self.state_dict().items()}

    def forward_stages(self, x: torch.Tensor) -> list[torch.Tensor]:
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_stages(x)[-1]


def desknet_init(seed: int, config: BackboneConfig = DESKNET) -> dict[str, np.ndarray]:
    """Deterministic DeskNet weights.

    Convolution kernels are He-normal: N(0, 2 / fan_in) with
    fan_in = 3 * 3 * C_in, drawn stage by stage from ``default_rng(seed)``.
    Batch-norm starts at gamma=1, beta=0, running mean 0 and variance 1.
    """
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}
    c_in = 3
    for k, c_out in enumerate(config.stage_channels, start=1):
        std = np.sqrt(2.0 / (9 * c_in))
        weights[f"stage{k}.conv_weight"] = (rng.standard_normal((3, 3, c_in, c_out)) * std).astype(np.float32)
        weights[f"stage{k}.bn_gamma"] = np.ones(c_out, np.float32)
        weights[f"stage{k}.bn_beta"] = np.zeros(c_out, np.float32)
        weights[f"stage{k}.bn_running_mean"] = np.zeros(c_out, np.float32)
        weights[f"stage{k}.bn_running_var"] = np.ones(c_out, np.float32)
        c_in = c_out
    return weights


# ---------------------------------------------------------------------------
# EfficientNet-B0


class EfficientNetB0Backbone(nn.Module):
    """torchvision EfficientNet-B0 feature extractor regrouped into 8 stages."""

    def __init__(self, config: BackboneConfig = FULLSCALE_B0):
        super().__init__()
        if config.name != "fullscale-b0":
            raise ValueError(f"EfficientNetB0Backbone cannot be built from {config.name!r}")
        from torchvision.models import efficientnet_b0

        features = efficientnet_b0(weights=None).features
        self.config = config
        self.blocks = nn.ModuleList([nn.Sequential(features[0], features[1])] + [features[i] for i in range(2, 9)])
        if config.pretrained_weights_path:
            self.load_pretrained(config.pretrained_weights_path)

    @property
    def stages(self) -> list[nn.Module]:
        return list(self.blocks)

    def load_pretrained(self, path: str) -> None:
        """Load a torchvision ``efficientnet_b0`` state dict (``features.*`` keys)."""
        state = torch.load(path, map_location="cpu", weights_only=True)
        if "state_dict" in state:
            state = state["state_dict"]
        features = {k[len("features."):]: v for k, v in state.items() if k.startswith("features.")}
        if not features:
            features = dict(state)
        remapped = {}
        for key, value in features.items():
            idx, rest = key.split(".", 1)
            idx = int(idx)
            if idx <= 1:
                remapped[f"blocks.0.{idx}.{rest}"] = value
            else:
                remapped[f"blocks.{idx - 1}.{rest}"] = value
        self.load_state_dict(remapped, strict=True)

    def forward_stages(self, x: torch.Tensor) -> list[torch.Tensor]:
        maps = []
        for stage in self.blocks:
            x = stage(x)
            maps.append(x)
        return maps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_stages(x)[-1]


def build_backbone(config: BackboneConfig, seed: int) -> nn.Module:
    """Seeded backbone module for ``config``."""
    if config.name == "desknet":
        return DeskNet.from_weights(desknet_init(seed, config), config)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return EfficientNetB0Backbone(config)


def forward_stages(
    image: np.ndarray,
    weights: Mapping[str, np.ndarray] | nn.Module,
    config: BackboneConfig,
    training: bool = False,
    width_multiple: int = 1,
) -> list[StageFeatureMap]:
    """Run one ``(H, W, 3)`` image through every stage.

    ``training=True`` normalizes with batch statistics (of this single image),
    otherwise running statistics are used. The caller's weights and module are
    never modified. ``width_multiple=2`` accepts the horizontally concatenated
    input used by early fusion.
    """
    image = np.asarray(image)
    expected = config.input_shape(width_multiple)
    if image.shape != expected:
        raise ShapeError(f"{config.name} input", expected, image.shape)
    if isinstance(weights, nn.Module):
        net = copy.deepcopy(weights) if training else weights
    elif config.name == "desknet":
        net = DeskNet.from_weights(weights, config)
    else:
        net = EfficientNetB0Backbone(config)
        net.load_state_dict({k: torch.as_tensor(np.asarray(v)) for k, v in weights.items()})
    was_training = net.training
    net.train(training)
    try:
        with torch.no_grad():
            maps = net.forward_stages(images_to_tensor(image))
    finally:
        net.train(was_training)
    return [StageFeatureMap(k, tensor_to_maps(m)[0]) for k, m in enumerate(maps, start=1)]
