"""Multimodal transfer module: cross-stream channel gating.

Given feature maps ``f1`` (C1 channels) and ``f2`` (C2 channels) from the same
depth of two streams::

    u1, u2 = spatial mean of f1, f2
    z      = relu([u1; u2] @ joint_weight + joint_bias)          # Cz = max(4, (C1+C2)//4)
    s1     = 2 * sigmoid(z @ excite_weight_1 + excite_bias_1)    # in (0, 2)
    s2     = 2 * sigmoid(z @ excite_weight_2 + excite_bias_2)
    f1'    = f1 * s1   (per channel),   f2' = f2 * s2

Weight matrices are stored input-major (``in_features x out_features``).
The backward pass is written out by hand in :class:`MMTMFunction`.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch
import torch.nn as nn

from .backbone import ShapeError, StageFeatureMap

ROLES = ("joint_weight", "joint_bias", "excite_weight_1", "excite_bias_1", "excite_weight_2", "excite_bias_2")


def bottleneck_channels(c1: int, c2: int) -> int:
    return max(4, (c1 + c2) // 4)


@dataclass
class MMTMWeights:
    joint_weight: np.ndarray  # (C1 + C2, Cz)
    joint_bias: np.ndarray  # (Cz,)
    excite_weight_1: np.ndarray  # (Cz, C1)
    excite_bias_1: np.ndarray  # (C1,)
    excite_weight_2: np.ndarray  # (Cz, C2)
    excite_bias_2: np.ndarray  # (C2,)

    @property
    def c1(self) -> int:
        return self.excite_weight_1.shape[1]

    @property
    def c2(self) -> int:
        return self.excite_weight_2.shape[1]

    @property
    def cz(self) -> int:
        return self.joint_weight.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class GatingSignals:
    s1: np.ndarray
    s2: np.ndarray


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)


def mmtm_init(c1: int, c2: int, seed: int) -> MMTMWeights:
    """Glorot-uniform weights drawn from ``default_rng(seed)``; all biases zero."""
    if c1 < 1 or c2 < 1:
        raise ValueError(f"channel counts must be positive, got c1={c1}, c2={c2}")
    cz = bottleneck_channels(c1, c2)
    rng = np.random.default_rng(seed)
    return MMTMWeights(
        joint_weight=_glorot(rng, c1 + c2, cz),
        joint_bias=np.zeros(cz, np.float32),
        excite_weight_1=_glorot(rng, cz, c1),
        excite_bias_1=np.zeros(c1, np.float32),
        excite_weight_2=_glorot(rng, cz, c2),
        excite_bias_2=np.zeros(c2, np.float32),
    )


class MMTMFunction(torch.autograd.Function):
    """Forward/backward of the gating block on NCHW batches."""

    @staticmethod
    def forward(ctx, f1, f2, wj, bj, we1, be1, we2, be2):
        u = torch.cat([f1.mean(dim=(2, 3)), f2.mean(dim=(2, 3))], dim=1)
        a = u @ wj + bj
        z = torch.relu(a)
        s1 = 2.0 * torch.sigmoid(z @ we1 + be1)
        s2 = 2.0 * torch.sigmoid(z @ we2 + be2)
        ctx.save_for_backward(f1, f2, wj, we1, we2, u, a, z, s1, s2)
        return f1 * s1[:, :, None, None], f2 * s2[:, :, None, None], s1, s2

    @staticmethod
    def backward(ctx, g_out1, g_out2, g_s1_ext, g_s2_ext):
        f1, f2, wj, we1, we2, u, a, z, s1, s2 = ctx.saved_tensors
        c1 = f1.shape[1]

        g_s1 = (g_out1 * f1).sum(dim=(2, 3))
        g_s2 = (g_out2 * f2).sum(dim=(2, 3))
        if g_s1_ext is not None:
            g_s1 = g_s1 + g_s1_ext
        if g_s2_ext is not None:
            g_s2 = g_s2 + g_s2_ext

        # d/de [2 sigmoid(e)] = 2 sig (1 - sig) = s (1 - s/2)
        g_e1 = g_s1 * s1 * (1.0 - 0.5 * s1)
        g_e2 = g_s2 * s2 * (1.0 - 0.5 * s2)
        g_we1 = z.transpose(0, 1) @ g_e1
        g_we2 = z.transpose(0, 1) @ g_e2
        g_be1 = g_e1.sum(0)
        g_be2 = g_e2.sum(0)

        g_a = (g_e1 @ we1.transpose(0, 1) + g_e2 @ we2.transpose(0, 1)) * (a > 0).to(a.dtype)
        g_wj = u.transpose(0, 1) @ g_a
        g_bj = g_a.sum(0)
        g_u = g_a @ wj.transpose(0, 1)

        area1 = f1.shape[2] * f1.shape[3]
        area2 = f2.shape[2] * f2.shape[3]
        g_f1 = g_out1 * s1[:, :, None, None] + (g_u[:, :c1] / area1)[:, :, None, None]
        g_f2 = g_out2 * s2[:, :, None, None] + (g_u[:, c1:] / area2)[:, :, None, None]
        return g_f1, g_f2, g_wj, g_bj, g_we1, g_be1, g_we2, g_be2


class MMTM(nn.Module):
    """Trainable gating block; parameter names match :class:`MMTMWeights`."""

    def __init__(self, weights: MMTMWeights):
        super().__init__()
        for role in ROLES:
            self.register_parameter(role, nn.Parameter(torch.as_tensor(np.array(getattr(weights, role)))))

    @classmethod
    def create(cls, c1: int, c2: int, seed: int) -> "MMTM":
        return cls(mmtm_init(c1, c2, seed))

    @property
    def c1(self) -> int:
        return self.excite_weight_1.shape[1]

    @property
    def c2(self) -> int:
        return self.excite_weight_2.shape[1]

    def export_weights(self) -> MMTMWeights:
        return MMTMWeights(**{r: getattr(self, r).detach().cpu().numpy().copy() for r in ROLES})

    def zero_excitation(self) -> None:
        """Zero both excitation projections, turning the block into the identity."""
        with torch.no_grad():
            for role in ("excite_weight_1", "excite_bias_1", "excite_weight_2", "excite_bias_2"):
                getattr(self, role).zero_()

    def forward(self, f1: torch.Tensor, f2: torch.Tensor):
        if f1.shape[1] != self.c1 or f2.shape[1] != self.c2:
            raise ShapeError("MMTM input channels", (self.c1, self.c2), (f1.shape[1], f2.shape[1]))
        return MMTMFunction.apply(f1, f2, *(getattr(self, r) for r in ROLES))


def mmtm_forward(f1: StageFeatureMap | np.ndarray, f2: StageFeatureMap | np.ndarray, w: MMTMWeights):
    """Gate two channels-last feature maps.

    Accepts ``(H, W, C)`` arrays or :class:`StageFeatureMap`; returns the
    reweighted maps in the same form plus the :class:`GatingSignals`.
    Computation runs in float64.
    """
    a1 = f1.tensor if isinstance(f1, StageFeatureMap) else np.asarray(f1)
    a2 = f2.tensor if isinstance(f2, StageFeatureMap) else np.asarray(f2)
    if a1.ndim != 3 or a2.ndim != 3:
        raise ShapeError("MMTM input rank", (3, 3), (a1.ndim, a2.ndim))
    if a1.shape[-1] != w.c1 or a2.shape[-1] != w.c2:
        raise ShapeError("MMTM input channels", (w.c1, w.c2), (a1.shape[-1], a2.shape[-1]))

    def to_t(x):
        return torch.from_numpy(np.ascontiguousarray(np.asarray(x, np.float64)))

    t1 = to_t(a1.transpose(2, 0, 1))[None]
    t2 = to_t(a2.transpose(2, 0, 1))[None]
    params = [to_t(getattr(w, r)) for r in ROLES]
    with torch.no_grad():
        o1, o2, s1, s2 = MMTMFunction.apply(t1, t2, *params)
    o1 = o1[0].numpy().transpose(1, 2, 0)
    o2 = o2[0].numpy().transpose(1, 2, 0)
    signals = GatingSignals(s1[0].numpy(), s2[0].numpy())
    if isinstance(f1, StageFeatureMap):
        return StageFeatureMap(f1.stage_index, o1), StageFeatureMap(f2.stage_index, o2), signals
    return o1, o2, signals
