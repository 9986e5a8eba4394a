import itertools

import numpy as np
import pytest

from gazemask.errors import EmptyEvaluation, TooFewFolds
from gazemask.evaluation import (
    ConfusionMatrix,
    FoldResult,
    accuracy,
    aggregate,
    delta_table,
    emit_report,
    load_fold_results,
    macro_f1,
    majority_share,
    markdown_tables,
    mean_std,
    per_class_f1,
    summary_csv,
)


def cm(rows):
    return ConfusionMatrix(np.array(rows))


def test_accuracy_examples():
    assert accuracy(cm(np.diag([3, 4, 5]))) == 1.0
    assert accuracy(cm(np.ones((3, 3), int))) == pytest.approx(1 / 3)
    assert accuracy(cm([[0, 1, 0], [0, 0, 0], [0, 0, 0]])) == 0.0
    with pytest.raises(EmptyEvaluation):
        accuracy(cm(np.zeros((3, 3), int)))


def test_macro_f1_examples():
    assert macro_f1(cm(np.diag([2, 2, 2]))) == 1.0
    one_class = ConfusionMatrix.from_labels([1, 2, 3] * 4, [1] * 12)
    assert macro_f1(one_class) == pytest.approx(1 / 6, abs=1e-15)
    # class 3 absent from truth and predictions contributes 0
    assert macro_f1(cm([[2, 0, 0], [0, 2, 0], [0, 0, 0]])) == pytest.approx(2 / 3)
    with pytest.raises(EmptyEvaluation):
        macro_f1(cm(np.zeros((3, 3), int)))


def test_from_labels_rows_are_truth():
    c = ConfusionMatrix.from_labels([1, 1, 2], [2, 2, 2])
    assert c.counts[0, 1] == 2 and c.counts[1, 1] == 1 and c.total == 3


def test_macro_f1_label_permutation_invariant(rng):
    y = rng.integers(1, 4, 60)
    p = rng.integers(1, 4, 60)
    base = macro_f1(ConfusionMatrix.from_labels(y, p))
    for perm in itertools.permutations([1, 2, 3]):
        m = np.array([0, *perm])
        assert macro_f1(ConfusionMatrix.from_labels(m[y], m[p])) == pytest.approx(base, abs=1e-15)


def test_per_class_f1_formula():
    c = cm([[5, 1, 0], [2, 3, 1], [0, 0, 4]])
    f = per_class_f1(c)
    p0, r0 = 5 / 7, 5 / 6
    assert f[0] == pytest.approx(2 * p0 * r0 / (p0 + r0))


def test_mean_std_examples():
    s = mean_std([0.7, 0.8])
    assert s.mean == pytest.approx(0.75) and s.std == pytest.approx(0.0707, abs=1e-4)
    assert mean_std([0.5] * 5).std == 0.0
    with pytest.raises(TooFewFolds):
        mean_std([0.5])
    assert s.cell() == "75.00 ± 7.07"


def _results(traits=("O", "N"), variants=("Full",), protocol="SegmentStratified5Fold", seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for t in traits:
        for v in variants:
            for k in range(5):
                y = rng.integers(1, 4, 40)
                p = np.where(rng.random(40) < 0.6, y, rng.integers(1, 4, 40))
                out.append(FoldResult(t, k, v, protocol, ConfusionMatrix.from_labels(y, p)))
    return out


def test_aggregate_order_invariant():
    res = _results()
    shuffled = [res[i] for i in np.random.default_rng(1).permutation(len(res))]
    assert aggregate(res) == aggregate(shuffled)
    assert set(aggregate(res)) == {("O", "Full", "SegmentStratified5Fold"), ("N", "Full", "SegmentStratified5Fold")}


def test_fold_result_metrics_recomputable():
    r = _results()[0]
    assert r.accuracy == accuracy(r.confusion) and r.macro_f1 == macro_f1(r.confusion)


def test_markdown_shape_full_five_traits():
    md = markdown_tables(_results(traits=("O", "C", "E", "A", "N")))
    acc_table = md.split("### ")[1].splitlines()
    rows = [line for line in acc_table if line.startswith("| ") and not line.startswith("| Variant")]
    assert len(rows) == 1
    assert acc_table[2].count("|") == 7  # label column + 5 traits


def test_markdown_four_variants():
    md = markdown_tables(_results(variants=("Full", "TsGap", "TsOnly", "Statistical")))
    table = md.split("### ")[1]
    labels = [line.split("|")[1].strip() for line in table.splitlines() if line.startswith("| ") and "Variant" not in line]
    assert labels == ["Full", "TS+Temporal Gap", "TS Only", "Statistical"]


def test_delta_table_rows():
    md = delta_table(_results(variants=("Full", "TsGap", "TsOnly", "Statistical")))
    rows = [line for line in md.splitlines() if line.startswith("| ") and "Variant" not in line]
    assert len(rows) == 3


def test_report_round_trip(tmp_path):
    res = _results(variants=("Full", "TsOnly"))
    emit_report(res, tmp_path)
    assert (tmp_path / "summary.md").exists()
    d = tmp_path / "reports" / "SegmentStratified5Fold" / "Full" / "O"
    assert (d / "metrics.csv").exists() and (d / "confusion_fold4.csv").exists()
    back = load_fold_results(tmp_path)
    assert summary_csv(back) == (tmp_path / "summary.csv").read_text()
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    agg = aggregate(res)
    for line in lines[1:]:
        protocol, variant, trait, n, am, asd, fm, fsd = line.split(",")
        m = agg[(trait, variant, protocol)]
        assert float(am) == pytest.approx(m["accuracy"].mean, abs=5e-7)
        assert float(fsd) == pytest.approx(m["macro_f1"].std, abs=5e-7)


def test_confusion_csv_round_trip():
    c = cm([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
    assert ConfusionMatrix.from_csv(c.to_csv()) == c


def test_majority_share():
    assert majority_share(cm([[3, 0, 0], [1, 0, 0], [0, 0, 0]])) == 0.75
