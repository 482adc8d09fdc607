from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ConstantLoader, make_record
from mmfusion.backbone import DESKNET
from mmfusion.data.pairing import complete_samples
from mmfusion.evaluation import (
    ConfusionMatrix,
    aggregate_runs,
    confusion_from_grid,
    evaluate,
    export_confusion_grid,
    format_mean_std,
    macro_f1,
    make_test_variant,
    report_from_confusion,
    summarize,
)
from mmfusion.fusion import build_model


def exact_macro_f1(counts):
    n = len(counts)
    total = Fraction(0)
    for c in range(n):
        tp = counts[c][c]
        fp = sum(counts[r][c] for r in range(n)) - tp
        fn = sum(counts[c]) - tp
        total += Fraction(2 * tp, 2 * tp + fp + fn) if tp + fp + fn else 0
    return total / n


def cm(counts):
    return ConfusionMatrix(np.array(counts), [str(i) for i in range(len(counts))])


@pytest.mark.parametrize(
    "counts,expected",
    [([[5, 0], [0, 5]], 1.0), ([[0, 3], [4, 0]], 0.0), ([[3, 1], [2, 4]], float(Fraction(23, 33)))],
)
def test_macro_f1_examples(counts, expected):
    assert macro_f1(cm(counts))[1] == pytest.approx(expected, abs=1e-12)


def test_constant_predictor():
    # three balanced classes, everything predicted as class 0
    per_class, macro = macro_f1(cm([[4, 0, 0], [4, 0, 0], [4, 0, 0]]))
    assert per_class[1] == per_class[2] == 0.0
    assert macro == pytest.approx(1 / 6)


def test_absent_class_counts_zero():
    per_class, _ = macro_f1(cm([[3, 0, 0], [0, 2, 0], [0, 0, 0]]))
    assert per_class.tolist() == [1.0, 1.0, 0.0]


def test_rejects_degenerate():
    with pytest.raises(ValueError):
        macro_f1(cm([[3]]))
    with pytest.raises(ValueError):
        macro_f1(cm([[0, 0], [0, 0]]))
    with pytest.raises(ValueError):
        ConfusionMatrix(np.zeros((2, 3)), ["a", "b"])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 4).flatmap(lambda n: st.lists(st.lists(st.integers(0, 15), min_size=n, max_size=n), min_size=n, max_size=n)))
def test_matches_exact_and_is_permutation_invariant(counts):
    if sum(map(sum, counts)) == 0:
        counts[0][0] = 1
    per_class, macro = macro_f1(cm(counts))
    assert macro == pytest.approx(float(exact_macro_f1(counts)), abs=1e-12)
    assert per_class.min() - 1e-12 <= macro <= per_class.max() + 1e-12
    perm = np.random.default_rng(len(counts)).permutation(len(counts))
    arr = np.array(counts)[np.ix_(perm, perm)]
    assert macro_f1(cm(arr.tolist()))[1] == pytest.approx(macro, abs=1e-12)


def test_aggregate_formatting():
    assert summarize([0.52, 0.56]).text == "0.54 (0.02)"
    assert format_mean_std(0.7, 0.0) == "0.70 (0.00)"
    assert summarize([0.5]).text == "0.50 (0.00)"
    reports = [report_from_confusion(cm(c), "test_c") for c in ([[5, 0], [0, 5]], [[0, 3], [4, 0]])]
    agg = aggregate_runs(reports)["test_c"]
    assert (agg.mean, agg.std, agg.n) == (0.5, 0.5, 2)
    with pytest.raises(ValueError):
        summarize([])


def test_evaluate_and_grid(tmp_path):
    records = [make_record(f"o{i}", 1, 1, cls="ab"[i % 2]) for i in range(6)]
    samples = complete_samples(records, 0, loader=ConstantLoader(64), classes=["a", "b"])
    model = build_model("late", DESKNET, 2, 0, classes=["a", "b"])
    rep = evaluate(model, samples, "test_f", ["a", "b"])
    assert rep.confusion.total == 6 and len(rep.predicted) == 6
    grid = export_confusion_grid(rep, samples, tmp_path / "g.json", seed=1)
    assert sum(c["count"] for c in grid["cells"]) == 6
    assert all(c["count"] > 0 for c in grid["cells"])
    assert export_confusion_grid(rep, samples, seed=1) == grid
    assert confusion_from_grid(grid).counts.tolist() == rep.confusion.counts.tolist()
    with pytest.raises(ValueError):
        evaluate(model, samples, "test_c", ["b", "a"])
    with pytest.raises(ValueError):
        evaluate(model, [], "test_c")


def test_grid_omits_empty_cells():
    from mmfusion.data.records import Sample
    from mmfusion.evaluation import MetricsReport

    img = np.ones((2, 2, 3), np.float32)
    samples = [Sample(f"s{i}", img, img, True, True, i % 2, f"f{i}", f"i{i}") for i in range(4)]
    conf = ConfusionMatrix.from_labels([0, 1, 0, 1], [0, 0, 0, 1], ["a", "b"])
    rep = MetricsReport("test_c", *macro_f1(conf), conf, predicted=np.array([0, 0, 0, 1]))
    cells = export_confusion_grid(rep, samples)["cells"]
    assert [(c["true"], c["predicted"], c["count"]) for c in cells] == [("a", "a", 2), ("b", "a", 1), ("b", "b", 1)]


def test_variants(loader):
    samples = complete_samples([make_record("o", 1, 1)], 0, loader=loader, classes=["a"])
    assert not make_test_variant(samples, "test_f")[0].interior.any()
    assert not make_test_variant(samples, "test_i")[0].facade.any()
    with pytest.raises(ValueError):
        make_test_variant(samples, "test_x")
