"""Acceptance gate. Each test checks one criterion and logs a PASS/FAIL line.

Criteria 6-9 share one desk-scale experiment matrix over a synthetic use case
(4 modality configurations x 3 architectures x 3 repeats, DeskNet, 30 epochs).
Set MMFUSION_ACCEPTANCE_DIR to keep its output; completed runs are reused.
"""

import json
import re
import time
from fractions import Fraction

import numpy as np
import pytest
import torch

from conftest import ConstantLoader, acceptance_synth_config, make_record
from mmfusion.backbone import DESKNET, FULLSCALE_B0, forward_stages, desknet_init
from mmfusion.checkpoint import load_model
from mmfusion.data.pairing import build_missing_pool, pair_indices, pair_object
from mmfusion.data.records import Sample
from mmfusion.evaluation import ConfusionMatrix, macro_f1
from mmfusion.fusion import build_model, predict_proba
from mmfusion.mmtm import MMTM, MMTMFunction, ROLES
from mmfusion.runner import ExperimentMatrix, report, run_matrix
from mmfusion.train import TrainConfig, train

# ---------------------------------------------------------------------------
# 1. Metric oracle


def brute_force_macro_f1(counts):
    """Expand the matrix into (true, predicted) pairs and count per class, exactly."""
    n = len(counts)
    pairs = [(t, p) for t in range(n) for p in range(n) for _ in range(int(counts[t][p]))]
    scores = []
    for c in range(n):
        tp = sum(1 for t, p in pairs if t == c and p == c)
        fp = sum(1 for t, p in pairs if t != c and p == c)
        fn = sum(1 for t, p in pairs if t == c and p != c)
        denom = 2 * tp + fp + fn
        scores.append(Fraction(2 * tp, denom) if denom else Fraction(0))
    return sum(scores) / n


def test_ac1_metric_oracle(criterion):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.choice([2, 3, 4]))
        counts = rng.integers(0, 21, size=(n, n))
        if counts.sum() == 0:
            counts[0, 0] = 1
        _, macro = macro_f1(ConfusionMatrix(counts, [str(i) for i in range(n)]))
        worst = max(worst, abs(macro - float(brute_force_macro_f1(counts.tolist()))))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and elapsed < 5.0
    criterion("AC1 metric oracle", ok, f"max |diff| {worst:.2e}, {elapsed:.2f}s")
    assert worst < 1e-9
    assert elapsed < 5.0


# ---------------------------------------------------------------------------
# 2. MMTM gradient check


def _fd_check(seed: int, c1: int, c2: int, step: float = 1e-4) -> float:
    rng = np.random.default_rng(seed)
    f1 = torch.tensor(rng.normal(size=(1, c1, 4, 4)), dtype=torch.float64, requires_grad=True)
    f2 = torch.tensor(rng.normal(size=(1, c2, 4, 4)), dtype=torch.float64, requires_grad=True)
    block = MMTM.create(c1, c2, seed).double()
    with torch.no_grad():
        for role in ROLES:
            p = getattr(block, role)
            p.copy_(torch.tensor(rng.normal(scale=0.5, size=tuple(p.shape))))
    r1 = torch.tensor(rng.normal(size=(1, c1, 4, 4)))
    r2 = torch.tensor(rng.normal(size=(1, c2, 4, 4)))
    q1 = torch.tensor(rng.normal(size=(1, c1)))
    q2 = torch.tensor(rng.normal(size=(1, c2)))
    inputs = [f1, f2] + [getattr(block, r) for r in ROLES]

    def loss_of(tensors):
        o1, o2, s1, s2 = MMTMFunction.apply(*tensors)
        return (o1 * r1).sum() + (o2 * r2).sum() + (s1 * q1).sum() + (s2 * q2).sum()

    loss_of(inputs).backward()
    analytic = [t.grad.detach().clone() for t in inputs]

    worst = 0.0
    with torch.no_grad():
        base = [t.detach().clone() for t in inputs]
        for k, t in enumerate(base):
            numeric = torch.zeros_like(t)
            flat = t.view(-1)
            for j in range(flat.numel()):
                orig = flat[j].item()
                flat[j] = orig + step
                plus = loss_of(base).item()
                flat[j] = orig - step
                minus = loss_of(base).item()
                flat[j] = orig
                numeric.view(-1)[j] = (plus - minus) / (2 * step)
            scale = max(analytic[k].norm().item(), numeric.norm().item(), 1e-12)
            worst = max(worst, (analytic[k] - numeric).norm().item() / scale)
    return worst


def test_ac2_mmtm_gradient_check(criterion):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    errors = []
    for seed in range(20):
        c1, c2 = (int(c) for c in rng.choice([4, 8, 16], size=2))
        errors.append(_fd_check(seed, c1, c2))
    elapsed = time.perf_counter() - start
    worst = max(errors)
    ok = worst < 1e-3 and elapsed < 60
    criterion("AC2 MMTM gradient check", ok, f"max relative error {worst:.2e} over 20 instances, {elapsed:.1f}s")
    assert worst < 1e-3
    assert elapsed < 60


# ---------------------------------------------------------------------------
# 3. Degeneracy: zero-excitation intermediate == late


def test_ac3_zero_excitation_equals_late(criterion):
    worst = 0.0
    for seed in range(3):
        inter = build_model("intermediate", DESKNET, 3, seed)
        for block in inter.mmtm.values():
            block.zero_excitation()
        late = build_model("late", DESKNET, 3, seed + 100)
        late.load_state_dict({k: v for k, v in inter.state_dict().items() if not k.startswith("mmtm.")})
        rng = np.random.default_rng(seed)
        facades = rng.random((100, 64, 64, 3)).astype(np.float32)
        interiors = rng.random((100, 64, 64, 3)).astype(np.float32)
        diff = np.abs(predict_proba(inter, facades, interiors) - predict_proba(late, facades, interiors)).max()
        worst = max(worst, float(diff))
    criterion("AC3 zero-excitation degeneracy", worst <= 1e-6, f"max |dp| {worst:.2e}")
    assert worst <= 1e-6


# ---------------------------------------------------------------------------
# 4. Shape conformance


def test_ac4_shape_conformance(criterion):
    checks = {}
    early = build_model("early", FULLSCALE_B0, 4, 0)
    early.eval()
    facade = torch.rand(1, 3, 224, 224)
    interior = torch.rand(1, 3, 224, 224)
    with torch.no_grad():
        fused = early.fuse_input(facade, interior)
        final = early.final_maps(facade, interior)[0]
    checks["early input 224x448x3"] = (fused.shape[2], fused.shape[3], fused.shape[1]) == (224, 448, 3)
    checks["early feature 7x14x1280"] = (final.shape[2], final.shape[3], final.shape[1]) == (7, 14, 1280)
    checks["early head input 1280"] = tuple(early.head_weight.shape) == (1280, 4)

    late = build_model("late", FULLSCALE_B0, 4, 0)
    late.eval()
    with torch.no_grad():
        maps = late.final_maps(facade, interior)
        logits = late(facade, interior)
    checks["late stream maps 7x7x1280"] = all((m.shape[2], m.shape[3], m.shape[1]) == (7, 7, 1280) for m in maps)
    checks["late head input 2560"] = late.feature_dim == 2560 and tuple(late.head_weight.shape) == (2560, 4)
    checks["late logits"] = tuple(logits.shape) == (1, 4)

    stages = forward_stages(np.zeros((64, 64, 3), np.float32), desknet_init(0), DESKNET)
    checks["desknet stages"] = [m.shape for m in stages] == [(32, 32, 16), (16, 16, 32), (8, 8, 64), (4, 4, 128)]
    failed = [k for k, v in checks.items() if not v]
    criterion("AC4 shape conformance", not failed, "all shapes match" if not failed else f"failed: {failed}")
    assert not failed


# ---------------------------------------------------------------------------
# 5. Pairing properties


def test_ac5_pairing_properties(criterion):
    loader = ConstantLoader()
    problems = []
    for nf in range(11):
        for ni in range(11):
            pairs = pair_indices(nf, ni, np.random.default_rng(nf * 11 + ni))
            if len(pairs) != min(nf, ni):
                problems.append(f"count {nf},{ni}")
            if nf and ni:
                rec = make_record(f"o{nf}-{ni}", nf, ni)
                a = pair_object(rec, 7, loader=loader, classes=["a"])
                b = pair_object(rec, 7, loader=loader, classes=["a"])
                if len(a) != min(nf, ni):
                    problems.append(f"pair_object count {nf},{ni}")
                same = all(
                    x.facade_ref == y.facade_ref and x.interior_ref == y.interior_ref and np.array_equal(x.facade, y.facade)
                    and np.array_equal(x.interior, y.interior)
                    for x, y in zip(a, b)
                )
                if not same:
                    problems.append(f"not reproducible {nf},{ni}")
    counts = [(i % 3, (i + 1) % 4) for i in range(12)]
    records = [make_record(f"r{i}", nf, ni) for i, (nf, ni) in enumerate(counts) if nf or ni]
    for size in (2, 10, 40):
        pool = build_missing_pool(records, size, 3, loader=loader, classes=["a"])
        mf = sum(not s.facade_present for s in pool)
        mi = sum(not s.interior_present for s in pool)
        if (mf, mi) != (size // 2, size // 2):
            problems.append(f"pool {size} unbalanced {mf}/{mi}")
    criterion("AC5 pairing properties", not problems, "121 count pairs, pools balanced, reproducible" if not problems else str(problems[:5]))
    assert not problems


# ---------------------------------------------------------------------------
# 6-9. Desk-scale synthetic experiment matrix


@pytest.fixture(scope="module")
def matrix_run(acceptance_dir):
    matrix = ExperimentMatrix(
        synthetic=acceptance_synth_config(),
        seeds=(0, 1, 2),
        train=TrainConfig(epochs=30),
        global_seed=0,
    )
    records = run_matrix(matrix, acceptance_dir)
    table = report(records, acceptance_dir / "results_table.tsv")
    return matrix, records, table


def _mean(records, mc, arch, variant):
    vals = [r.macro_f1(variant) for r in records if (r.modality_config, r.architecture) == (mc, arch)]
    assert len(vals) == 3 and None not in vals, (mc, arch, variant, vals)
    return float(np.mean(vals))


@pytest.mark.slow
def test_ac6_fusion_beats_single_modality(matrix_run, criterion):
    _, records, _ = matrix_run
    assert all(r.status == "completed" for r in records)
    failures = []
    for arch in ("early", "late", "intermediate"):
        complete = _mean(records, "complete", arch, "test_c")
        single = max(_mean(records, "facade_only", arch, "test_f"), _mean(records, "interior_only", arch, "test_i"))
        runtime = sum(
            r.wall_clock_s for r in records if r.architecture == arch and r.modality_config in ("complete", "facade_only", "interior_only")
        )
        ok = complete - single >= 0.03 and runtime < 15 * 60
        criterion(f"AC6 fusion beats single modality [{arch}]", ok, f"complete {complete:.3f} vs best single {single:.3f} (gap {complete - single:+.3f}), {runtime / 60:.1f} min")
        if not ok:
            failures.append(arch)
    assert not failures


@pytest.mark.slow
def test_ac7_missing_data_augmentation(matrix_run, criterion):
    _, records, _ = matrix_run
    failures = []
    for arch in ("early", "late", "intermediate"):
        parts = []
        ok = True
        for variant in ("test_f", "test_i"):
            cpm = _mean(records, "complete_plus_missing", arch, variant)
            comp = _mean(records, "complete", arch, variant)
            ok &= cpm >= comp - 0.02 and cpm >= 0.50 + 0.10
            parts.append(f"{variant} c+m {cpm:.3f} vs complete {comp:.3f}")
        criterion(f"AC7 missing-data augmentation [{arch}]", ok, "; ".join(parts))
        if not ok:
            failures.append(arch)
    assert not failures


@pytest.mark.slow
def test_ac8_complete_models_robust_to_missing(matrix_run, acceptance_dir, criterion):
    _, records, _ = matrix_run
    failures = []
    black = np.zeros((4, 64, 64, 3), np.float32)
    rng = np.random.default_rng(8)
    present = rng.random((4, 64, 64, 3)).astype(np.float32)
    for arch in ("early", "late", "intermediate"):
        f = _mean(records, "complete", arch, "test_f")
        i = _mean(records, "complete", arch, "test_i")
        valid = True
        for rep in range(3):
            model, _ = load_model(acceptance_dir / "runs" / "SYN" / "complete" / arch / f"rep{rep}" / "checkpoint.npz")
            for fac, inte in ((present, black), (black, present), (black, black)):
                p = predict_proba(model, fac, inte)
                valid &= bool(np.isfinite(p).all() and np.allclose(p.sum(axis=1), 1.0, atol=1e-5))
        ok = f >= 0.55 and i >= 0.55 and valid
        criterion(f"AC8 complete-trained robustness [{arch}]", ok, f"test_f {f:.3f}, test_i {i:.3f}, black-input probabilities valid: {valid}")
        if not ok:
            failures.append(arch)
    assert not failures


EXPECTED_ROWS = [
    ("complete", "early", "XXX"),
    ("", "late", "XXX"),
    ("", "intermediate", "XXX"),
    ("facade only", "early", "-X-"),
    ("", "late", "-X-"),
    ("", "intermediate", "-X-"),
    ("interior only", "early", "--X"),
    ("", "late", "--X"),
    ("", "intermediate", "--X"),
    ("complete+missing", "early", "XXX"),
    ("", "late", "XXX"),
    ("", "intermediate", "XXX"),
]


@pytest.mark.slow
def test_ac9_protocol_fidelity(matrix_run, acceptance_dir, criterion):
    matrix, records, table = matrix_run
    problems = []
    if len(matrix.runs()) != 36 or len(records) != 36:
        problems.append("expected 12 configurations x 3 repeats")
    rows = [line.split("\t") for line in (acceptance_dir / "results_table.tsv").read_text().splitlines()]
    if rows[0][:2] != ["Modality Configuration", "Multimodal Architecture"] or "RB = 50%" not in rows[0][2]:
        problems.append(f"header {rows[0]}")
    if rows[1] != ["", "", "test_c", "test_f", "test_i"]:
        problems.append(f"subheader {rows[1]}")
    cell = re.compile(r"^[01]\.\d\d \(\d\.\d\d\)$")
    for got, (label, arch, pattern) in zip(rows[2:], EXPECTED_ROWS):
        if got[:2] != [label, arch]:
            problems.append(f"row label {got[:2]}")
        for text, mark in zip(got[2:], pattern):
            if (mark == "X") != bool(cell.match(text)) or (mark == "-" and text != ""):
                problems.append(f"cell {label or arch}/{arch}: {text!r}")
    if len(rows) != 2 + len(EXPECTED_ROWS):
        problems.append(f"{len(rows)} table rows")
    if not any(c.bold for c in table.cells.values()):
        problems.append("no bold flags")

    saves_ok = True
    for r in records:
        run_dir = acceptance_dir / "runs" / r.use_case / r.modality_config / r.architecture / f"rep{r.repeat}"
        best = float("inf")
        last_saved = None
        for line in (run_dir / "history.jsonl").read_text().splitlines():
            h = json.loads(line)
            should = h["val_loss"] < best
            if should != h["saved"]:
                saves_ok = False
            if should:
                best, last_saved = h["val_loss"], h["epoch"]
        if last_saved != r.best_epoch:
            saves_ok = False
    if not saves_ok:
        problems.append("checkpoint saves do not follow strict improvements")
    criterion("AC9 protocol fidelity", not problems, "Table layout and checkpoint log verified" if not problems else "; ".join(problems[:5]))
    assert not problems


# ---------------------------------------------------------------------------
# 10. Overfit sanity


def _two_samples():
    rng = np.random.default_rng(10)
    return [
        Sample(f"s{k}", rng.random((64, 64, 3)).astype(np.float32), rng.random((64, 64, 3)).astype(np.float32), True, True, k)
        for k in range(2)
    ]


@pytest.mark.parametrize("arch", ["early", "late", "intermediate"])
def test_ac10_overfit_two_samples(arch, criterion):
    samples = _two_samples()
    model = build_model(arch, DESKNET, 2, seed=10)
    cfg = TrainConfig(epochs=500, batch_size=16, learning_rate=1e-4, seed=10, augment=False)
    result = train(model, samples, samples, cfg)
    losses = [h.train_loss for h in result.history]
    reached = next((i + 1 for i, l in enumerate(losses) if l < 1e-2), None)
    ok = result.steps == 500 and reached is not None
    criterion(f"AC10 overfit sanity [{arch}]", ok, f"train loss < 1e-2 after {reached} steps" if reached else f"min loss {min(losses):.3g}")
    assert ok
