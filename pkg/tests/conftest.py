import os
from pathlib import Path

import numpy as np
import pytest

from mmfusion.data.records import ObjectRecord
from mmfusion.data.synthetic import SynthConfig

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = []

    def record(label: str, ok: bool, detail: str = ""):
        lines.append(f"[{'PASS' if ok else 'FAIL'}] {label}" + (f" - {detail}" if detail else ""))
        return ok

    yield record
    for line in lines:
        ACCEPTANCE_LINES.append(line)
        print(line)


class ConstantLoader:
    """Stand-in image loader: a constant image whose level encodes the reference."""

    def __init__(self, size: int = 8):
        self.size = size
        self.calls: list[str] = []

    def __call__(self, ref: str) -> np.ndarray:
        self.calls.append(ref)
        level = (sum(ref.encode()) % 200 + 20) / 255.0
        return np.full((self.size, self.size, 3), level, np.float32)


@pytest.fixture
def loader():
    return ConstantLoader()


def make_record(object_id="obj", n_facade=3, n_interior=6, cls="a", split="train"):
    return ObjectRecord(
        object_id,
        cls,
        tuple(f"{object_id}/f{i}.png" for i in range(n_facade)),
        tuple(f"{object_id}/i{i}.png" for i in range(n_interior)),
        split,
    )


def acceptance_synth_config() -> SynthConfig:
    # 2 classes, 200 train / 50 val / 200 test complete objects, 100-sample training
    # missing pool (50 per class); a quarter of unreliable cues are conflicting.
    return SynthConfig(
        num_classes=2,
        objects_per_class_per_split={"train": 100, "val": 25, "test": 100},
        facade_cue_fidelity=0.8,
        interior_cue_fidelity=0.8,
        conflict_fraction=0.25,
        incomplete_objects_per_class_per_split={"train": 50, "val": 10, "test": 0},
        noise_level=0.05,
        seed=2024,
    )


@pytest.fixture(scope="session")
def acceptance_dir(tmp_path_factory) -> Path:
    env = os.environ.get("MMFUSION_ACCEPTANCE_DIR")
    if env:
        Path(env).mkdir(parents=True, exist_ok=True)
        return Path(env)
    return tmp_path_factory.mktemp("acceptance")
