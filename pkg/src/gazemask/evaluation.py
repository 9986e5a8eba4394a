"""Confusion matrices, accuracy / macro-F1, fold aggregation and report files."""
from __future__ import annotations

import csv
import io
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import TRAIT_NAMES, TRAITS
from .errors import EmptyEvaluation, TooFewFolds

N_CLASSES = 3


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class (classes 1..C)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or (c < 0).any():
            raise ValueError("confusion counts must be a square nonnegative matrix")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_labels(cls, y_true, y_pred, n_classes: int = N_CLASSES) -> "ConfusionMatrix":
        c = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(c, (np.asarray(y_true) - 1, np.asarray(y_pred) - 1), 1)
        return cls(c)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def to_csv(self) -> str:
        n = self.counts.shape[0]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *(str(k + 1) for k in range(n))])
        for k in range(n):
            w.writerow([k + 1, *self.counts[k].tolist()])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        return cls(np.array([[int(v) for v in r[1:]] for r in rows]))


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyEvaluation("no evaluated windows")
    return float(np.trace(cm.counts)) / cm.total


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    pred = c.sum(axis=0)
    true = c.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    # undefined F1 (P + R = 0) counts as 0
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyEvaluation("no evaluated windows")
    return float(np.mean(per_class_f1(cm)))


@dataclass(frozen=True)
class FoldResult:
    trait: str
    fold: int
    variant: str
    protocol: str
    confusion: ConfusionMatrix

    @property
    def accuracy(self) -> float:
        return accuracy(self.confusion)

    @property
    def macro_f1(self) -> float:
        return macro_f1(self.confusion)


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    n: int

    def cell(self, percent: bool = True) -> str:
        k = 100.0 if percent else 1.0
        return f"{self.mean * k:.2f} ± {self.std * k:.2f}"


def mean_std(values: Sequence[float]) -> MetricSummary:
    """Mean and sample (N - 1) standard deviation."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise TooFewFolds(f"need at least 2 folds, got {v.size}")
    return MetricSummary(float(v.mean()), float(v.std(ddof=1)), int(v.size))


def aggregate(results: Iterable[FoldResult]) -> dict[tuple[str, str, str], dict[str, MetricSummary]]:
    """Group by (trait, variant, protocol) and summarize accuracy and macro-F1."""
    groups: dict[tuple[str, str, str], list[FoldResult]] = defaultdict(list)
    for r in results:
        groups[(r.trait, r.variant, r.protocol)].append(r)
    out = {}
    for key in sorted(groups):
        rs = sorted(groups[key], key=lambda r: r.fold)
        out[key] = {
            "accuracy": mean_std([r.accuracy for r in rs]),
            "macro_f1": mean_std([r.macro_f1 for r in rs]),
        }
    return out


VARIANT_ORDER = ("Full", "TsGap", "TsOnly", "Statistical")
VARIANT_DISPLAY = {
    "Full": "Full",
    "TsGap": "TS+Temporal Gap",
    "TsOnly": "TS Only",
    "Statistical": "Statistical",
}


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def summary_csv(results: Sequence[FoldResult]) -> str:
    agg = aggregate(results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["protocol", "variant", "trait", "n_folds", "accuracy_mean", "accuracy_std", "macro_f1_mean", "macro_f1_std"])
    for (trait, variant, protocol), m in sorted(agg.items(), key=lambda kv: (kv[0][2], _vkey(kv[0][1]), _tkey(kv[0][0]))):
        a, f = m["accuracy"], m["macro_f1"]
        w.writerow([protocol, variant, trait, a.n, _fmt(a.mean), _fmt(a.std), _fmt(f.mean), _fmt(f.std)])
    return buf.getvalue()


def _vkey(v: str) -> int:
    return VARIANT_ORDER.index(v) if v in VARIANT_ORDER else len(VARIANT_ORDER)


def _tkey(t: str) -> int:
    return TRAITS.index(t) if t in TRAITS else len(TRAITS)


def markdown_tables(results: Sequence[FoldResult]) -> str:
    """Tables shaped like the ablation table: variants as rows, traits as columns."""
    agg = aggregate(results)
    protocols = sorted({k[2] for k in agg})
    lines = []
    for protocol in protocols:
        keys = [k for k in agg if k[2] == protocol]
        traits = sorted({k[0] for k in keys}, key=_tkey)
        variants = sorted({k[1] for k in keys}, key=_vkey)
        for metric, title in (("accuracy", "Accuracy (%)"), ("macro_f1", "Macro F1 (%)")):
            lines.append(f"### {protocol}: {title}")
            lines.append("")
            lines.append("| Variant | " + " | ".join(TRAIT_NAMES.get(t, t) for t in traits) + " |")
            lines.append("|---|" + "---|" * len(traits))
            for v in variants:
                cells = [agg[(t, v, protocol)][metric].cell() if (t, v, protocol) in agg else "n/a" for t in traits]
                lines.append(f"| {VARIANT_DISPLAY.get(v, v)} | " + " | ".join(cells) + " |")
            lines.append("")
    return "\n".join(lines)


def delta_table(results: Sequence[FoldResult], metric: str = "accuracy") -> str:
    """Full minus each other variant, per trait, as a markdown table."""
    agg = aggregate(results)
    lines = []
    for protocol in sorted({k[2] for k in agg}):
        traits = sorted({k[0] for k in agg if k[2] == protocol}, key=_tkey)
        lines.append(f"### {protocol}: Full minus variant ({metric}, percentage points)")
        lines.append("")
        lines.append("| Variant | " + " | ".join(TRAIT_NAMES.get(t, t) for t in traits) + " |")
        lines.append("|---|" + "---|" * len(traits))
        others = sorted({k[1] for k in agg if k[2] == protocol and k[1] != "Full"}, key=_vkey)
        for v in others:
            cells = []
            for t in traits:
                full, other = agg.get((t, "Full", protocol)), agg.get((t, v, protocol))
                cells.append("n/a" if not full or not other else f"{100 * (full[metric].mean - other[metric].mean):+.2f}")
            lines.append(f"| {VARIANT_DISPLAY.get(v, v)} | " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)


def emit_report(results: Sequence[FoldResult], out_dir: str | os.PathLike, formats=("csv", "markdown")) -> Path:
    """Write per-cell metrics and confusion grids plus ``summary.csv`` / ``summary.md``.

    Layout: ``<out>/reports/<protocol>/<variant>/<trait>/{metrics.csv, confusion_fold<k>.csv}``.
    """
    if not results:
        raise ValueError("no results to report")
    out = Path(out_dir)
    cells: dict[tuple[str, str, str], list[FoldResult]] = defaultdict(list)
    for r in results:
        cells[(r.protocol, r.variant, r.trait)].append(r)
    for (protocol, variant, trait), rs in cells.items():
        d = out / "reports" / protocol / variant / trait
        d.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "accuracy", "macro_f1", "n_windows"])
        for r in sorted(rs, key=lambda r: r.fold):
            w.writerow([r.fold, _fmt(r.accuracy), _fmt(r.macro_f1), r.confusion.total])
            (d / f"confusion_fold{r.fold}.csv").write_text(r.confusion.to_csv())
        (d / "metrics.csv").write_text(buf.getvalue())
    if "csv" in formats:
        (out / "summary.csv").write_text(summary_csv(results))
    if "markdown" in formats:
        (out / "summary.md").write_text("# Cross-validation summary\n\n" + markdown_tables(results))
    return out


def load_fold_results(out_dir: str | os.PathLike) -> list[FoldResult]:
    """Rebuild fold results from the confusion CSVs of an emitted report."""
    root = Path(out_dir) / "reports"
    results = []
    for path in sorted(root.glob("*/*/*/confusion_fold*.csv")):
        protocol, variant, trait = path.parts[-4:-1]
        fold = int(path.stem.removeprefix("confusion_fold"))
        results.append(FoldResult(trait, fold, variant, protocol, ConfusionMatrix.from_csv(path.read_text())))
    return results


def majority_share(cm: ConfusionMatrix) -> float:
    true = cm.counts.sum(axis=1)
    return float(true.max() / true.sum()) if true.sum() else math.nan
