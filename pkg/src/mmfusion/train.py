"""Training loop: Adam on mean categorical cross-entropy, best-on-validation checkpointing."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .backbone import images_to_tensor
from .checkpoint import model_state, save_model
from .data.augment import augment
from .data.records import Sample
from .fusion import FusionModel
from .seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
DESK_EPOCHS = 30


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    loss: str = "categorical_cross_entropy"
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        self.learning_rate = float(self.learning_rate)
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.loss != "categorical_cross_entropy":
            raise ValueError(f"unsupported loss {self.loss!r}")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def cross_entropy(probabilities, label_index: int) -> float:
    """-log p[label] with p floored at 1e-12."""
    p = np.asarray(probabilities, dtype=np.float64)
    if not 0 <= label_index < p.shape[-1]:
        raise ValueError(f"label index {label_index} out of range for {p.shape[-1]} classes")
    return float(-np.log(max(p[label_index], PROB_FLOOR)))


def batch_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of softmax(logits), with the same 1e-12 probability floor."""
    logp = torch.log_softmax(logits, dim=1).clamp_min(math.log(PROB_FLOOR))
    return -logp.gather(1, labels[:, None]).mean()


class NonFiniteLossError(RuntimeError):
    def __init__(self, epoch: int, step: int, phase: str, value: float):
        self.diagnostic = {"epoch": epoch, "step": step, "phase": phase, "loss": repr(value)}
        super().__init__(f"non-finite {phase} loss {value!r} at epoch {epoch}, step {step}")


class BestTracker:
    """Strict-improvement rule: save only when the validation loss drops below the best so far."""

    def __init__(self):
        self.best_loss = math.inf
        self.best_epoch: int | None = None

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            return True
        return False


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    saved: bool


@dataclass
class Checkpoint:
    state: dict
    best_val_loss: float
    best_epoch: int
    fingerprint: str


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochRecord] = field(default_factory=list)
    steps: int = 0


def _stack(samples: Sequence[Sample]):
    facades = images_to_tensor(np.stack([s.facade for s in samples]))
    interiors = images_to_tensor(np.stack([s.interior for s in samples]))
    labels = torch.tensor([s.label_index for s in samples], dtype=torch.long)
    return facades, interiors, labels


def validation_loss(model: FusionModel, samples: Sequence[Sample], batch_size: int = 64) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            f, it, y = _stack(samples[i : i + batch_size])
            total += float(batch_loss(model(f, it), y)) * len(y)
    return total / len(samples)


def _check_labels(samples: Sequence[Sample], num_classes: int, name: str) -> None:
    if not samples:
        raise ValueError(f"{name} set is empty")
    bad = [s.label_index for s in samples if not 0 <= s.label_index < num_classes]
    if bad:
        raise ValueError(f"{name} set has label indices outside 0..{num_classes - 1}: {sorted(set(bad))}")


def train(
    model: FusionModel,
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample],
    cfg: TrainConfig,
    *,
    checkpoint_path: str | Path | None = None,
    history_path: str | Path | None = None,
    checkpoint_meta: dict | None = None,
) -> TrainResult:
    """Train ``model`` in place and leave it holding the best-validation weights.

    Each epoch reshuffles the training data (seeded by ``cfg.seed`` and the
    epoch), augments training samples when ``cfg.augment`` is set, then scores
    the full validation set. A checkpoint is written to ``checkpoint_path``
    exactly when the validation loss strictly improves; ``history_path``
    receives one JSON line per epoch.

    Raises:
        NonFiniteLossError: a training or validation loss became NaN/inf.
    """
    _check_labels(train_samples, model.num_classes, "training")
    _check_labels(val_samples, model.num_classes, "validation")
    torch.manual_seed(derive_seed(cfg.seed, "torch"))
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS)
    fingerprint = cfg.fingerprint()
    tracker = BestTracker()
    best_state = model_state(model)
    history: list[EpochRecord] = []
    hist_fh = None
    if history_path is not None:
        Path(history_path).parent.mkdir(parents=True, exist_ok=True)
        hist_fh = open(history_path, "w", encoding="utf-8")

    n = len(train_samples)
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            order = rng_for(cfg.seed, "epoch", epoch).permutation(n)
            running = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                batch = [
                    augment(train_samples[i], derive_seed(cfg.seed, "augment", epoch, int(i))) if cfg.augment else train_samples[i]
                    for i in idx
                ]
                f, it, y = _stack(batch)
                loss = batch_loss(model(f, it), y)
                step += 1
                if not torch.isfinite(loss):
                    raise NonFiniteLossError(epoch, step, "train", loss.item())
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                running += loss.item() * len(idx)
            train_loss = running / n
            val_loss = validation_loss(model, val_samples)
            if not math.isfinite(val_loss):
                raise NonFiniteLossError(epoch, step, "validation", val_loss)
            saved = tracker.update(epoch, val_loss)
            if saved:
                best_state = model_state(model)
                if checkpoint_path is not None:
                    save_model(
                        checkpoint_path,
                        model,
                        state=best_state,
                        config_fingerprint=fingerprint,
                        best_val_loss=val_loss,
                        best_epoch=epoch,
                        **(checkpoint_meta or {}),
                    )
            rec = EpochRecord(epoch, train_loss, val_loss, saved)
            history.append(rec)
            if hist_fh is not None:
                hist_fh.write(json.dumps(asdict(rec)) + "\n")
                hist_fh.flush()
            logger.debug("epoch %d train %.4f val %.4f%s", epoch, train_loss, val_loss, " *" if saved else "")
    finally:
        if hist_fh is not None:
            hist_fh.close()

    model.load_state_dict({k: torch.as_tensor(v) for k, v in best_state.items()})
    model.eval()
    ckpt = Checkpoint(best_state, tracker.best_loss, tracker.best_epoch, fingerprint)
    return TrainResult(ckpt, history, step)
