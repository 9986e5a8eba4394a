"""Cross-validated experiment grid: features per fold, sequence models or forest, fold results."""
from __future__ import annotations

import logging
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .baseline import ForestConfig, fit_forest, predict_forest, stat_feature_matrix
from .core import PUPIL, TRAITS, VELOCITY, RecordingConfig, SessionSeries, TertileLabel
from .errors import LeakageError
from .evaluation import ConfusionMatrix, FoldResult
from .featurize import (
    FeatureVariant,
    apply_normalization,
    augment,
    fit_normalization,
    raw_feature_matrix,
    select_variant,
)
from .ingest import labels_from_responses, load_bfi_key, load_labels, load_responses, parse_recording
from .model import ModelDims, predict_proba
from .split import (
    FoldPlan,
    Protocol,
    Segment,
    WindowingConfig,
    assign_folds_by_participant,
    assign_folds_stratified,
    segment,
    validation_split,
    window_starts,
)
from .train import TrainConfig, fit

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    sessions: list[SessionSeries]
    labels: dict[str, dict[str, TertileLabel]]

    def __post_init__(self):
        missing = [s.participant_id for s in self.sessions if s.participant_id not in self.labels]
        if missing:
            raise ValueError(f"no labels for participants {missing}")


def load_dataset(directory: str | Path, config: RecordingConfig = RecordingConfig()) -> Dataset:
    """Read ``recordings/*.csv`` plus ``labels.csv`` (or ``responses.csv`` + ``bfi_key.csv``)."""
    root = Path(directory)
    rec_dir = root / "recordings"
    paths = sorted(rec_dir.glob("*.csv"))
    if not paths:
        raise FileNotFoundError(f"no recordings under {rec_dir}")
    sessions = [parse_recording(p, config) for p in paths]
    if (root / "labels.csv").exists():
        labels = load_labels(root / "labels.csv")
    else:
        labels = labels_from_responses(load_responses(root / "responses.csv"), load_bfi_key(root / "bfi_key.csv"))
    return Dataset(sessions, labels)


@dataclass
class PreparedSegment:
    """Fold-independent features of one segment: raw matrix (NaN = missing), mask, gaps."""

    segment: Segment
    raw: np.ndarray
    mask: np.ndarray
    gaps: np.ndarray


def prepare_segments(dataset: Dataset, windowing: WindowingConfig, counter: Counter | None = None) -> list[PreparedSegment]:
    """Segment every session and featurize each segment on its own.

    Velocity and temporal gaps restart at every segment boundary, so no
    segment's features depend on samples of another.
    """
    out = []
    for s in dataset.sessions:
        for seg in segment(s.participant_id, len(s), windowing.segments_per_session):
            piece = s.slice(seg.start, seg.stop)
            raw = raw_feature_matrix(piece, counter)
            aug = augment(raw, s.config, s.participant_id)
            out.append(PreparedSegment(seg, raw, aug.mask, aug.gaps))
    return out


@dataclass
class FoldData:
    """Windows of one split part: flat 12-d frames plus the raw value/mask for statistics."""

    flat: np.ndarray  # (N, L, 12)
    values: np.ndarray  # (N, L, 4) normalized, zero-filled
    mask: np.ndarray  # (N, L, 4)
    y: np.ndarray
    folds: np.ndarray
    index: list[tuple[str, int, int]]  # (participant, start, stop) per window


def _windows(arr: np.ndarray, starts: range, window_len: int) -> np.ndarray:
    view = sliding_window_view(arr, window_len, axis=0)  # (T - L + 1, C, L)
    return view[np.asarray(starts, dtype=np.int64)].transpose(0, 2, 1)


def build_part(
    segs: Sequence[PreparedSegment], stats, windowing: WindowingConfig, labels: Mapping[str, int], folds: Mapping[str, int]
) -> FoldData:
    flats, vals, masks, ys, fs, index = [], [], [], [], [], []
    L = windowing.window_len
    for ps in segs:
        starts = window_starts(len(ps.segment), L, windowing.stride)
        if not starts:
            continue
        values = apply_normalization(ps.raw, stats)
        values[ps.mask == 0] = 0.0
        aug_flat = _flat(values, ps.mask, ps.gaps)
        flats.append(_windows(aug_flat, starts, L))
        vals.append(_windows(values, starts, L))
        masks.append(_windows(ps.mask, starts, L))
        n = len(starts)
        ys.append(np.full(n, labels[ps.segment.key]))
        fs.append(np.full(n, folds[ps.segment.key]))
        index += [(ps.segment.participant_id, ps.segment.start + s, ps.segment.start + s + L) for s in starts]
    if not flats:
        empty = np.empty((0, L, 12))
        return FoldData(empty, np.empty((0, L, 4)), np.empty((0, L, 4), np.uint8), np.empty(0, int), np.empty(0, int), [])
    return FoldData(
        np.concatenate(flats), np.concatenate(vals), np.concatenate(masks), np.concatenate(ys), np.concatenate(fs), index
    )


def _flat(values, mask, gaps) -> np.ndarray:
    from .core import FLAT_SIGNAL_ORDER

    cols = []
    for ch in FLAT_SIGNAL_ORDER:
        cols += [values[:, ch], mask[:, ch].astype(np.float64), gaps[:, ch]]
    return np.stack(cols, axis=1)


@dataclass
class FoldSplit:
    fold: int
    fit: FoldData
    val: FoldData
    test: FoldData


def stable_seed(*parts) -> int:
    """Deterministic 32-bit seed from ints and strings (no Python hash randomization)."""
    words = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def make_fold_plan(
    prepared: Sequence[PreparedSegment], labels: Mapping[str, Mapping[str, int]], trait: str, protocol: Protocol, n_folds: int, seed: int
) -> FoldPlan:
    if protocol is Protocol.SEGMENT:
        units = [(ps.segment.key, int(labels[ps.segment.participant_id][trait])) for ps in prepared]
        return assign_folds_stratified(units, n_folds, seed)
    pids = sorted({ps.segment.participant_id for ps in prepared})
    return assign_folds_by_participant([(p, int(labels[p][trait])) for p in pids], n_folds, seed)


def fold_split(
    prepared: Sequence[PreparedSegment],
    labels: Mapping[str, Mapping[str, int]],
    trait: str,
    plan: FoldPlan,
    k: int,
    windowing: WindowingConfig,
    val_fraction: float,
    seed: int,
) -> FoldSplit:
    """Fit / validation / test windows for test fold ``k``.

    Validation segments are drawn from the training folds (stratified), and
    normalization statistics come from the remaining fit segments only.
    """
    seg_label = {ps.segment.key: int(labels[ps.segment.participant_id][trait]) for ps in prepared}
    seg_fold = {ps.segment.key: plan.fold_of(ps.segment) for ps in prepared}
    test = [ps for ps in prepared if seg_fold[ps.segment.key] == k]
    train = [ps for ps in prepared if seg_fold[ps.segment.key] != k]
    fit_keys, _ = validation_split(
        [(ps.segment.key, seg_label[ps.segment.key]) for ps in train], val_fraction, stable_seed(seed, "val", k)
    )
    fit_set = set(fit_keys)
    fit_segs = [ps for ps in train if ps.segment.key in fit_set]
    val_segs = [ps for ps in train if ps.segment.key not in fit_set]
    if any(seg_fold[ps.segment.key] == k for ps in fit_segs):
        raise LeakageError("test segment in normalization fit set")
    stats = fit_normalization([ps.raw[:, PUPIL] for ps in fit_segs], [ps.raw[:, VELOCITY] for ps in fit_segs])
    return FoldSplit(
        k,
        build_part(fit_segs, stats, windowing, seg_label, seg_fold),
        build_part(val_segs, stats, windowing, seg_label, seg_fold),
        build_part(test, stats, windowing, seg_label, seg_fold),
    )


def fold_splits(prepared, labels, trait, plan, windowing, val_fraction, seed) -> Iterable[FoldSplit]:
    for k in range(plan.n_folds):
        yield fold_split(prepared, labels, trait, plan, k, windowing, val_fraction, seed)


@dataclass(frozen=True)
class GridConfig:
    variants: tuple[FeatureVariant, ...] = (FeatureVariant.FULL,)
    protocols: tuple[Protocol, ...] = (Protocol.SEGMENT,)
    traits: tuple[str, ...] = TRAITS
    n_folds: int = 5
    seed: int = 0
    windowing: WindowingConfig = field(default_factory=WindowingConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    hidden_size: int = 64
    num_layers: int = 2
    dropout: float = 0.3


def run_cell(split: FoldSplit, variant: FeatureVariant, grid: GridConfig, seed: int) -> np.ndarray:
    """Train on ``split.fit`` (early stopping on ``split.val``) and predict ``split.test``."""
    if variant is FeatureVariant.STATISTICAL:
        x_fit = stat_feature_matrix(split.fit.values, split.fit.mask)
        x_val = stat_feature_matrix(split.val.values, split.val.mask)
        forest_cfg = ForestConfig(**{**grid.forest.__dict__, "seed": seed})
        forest = fit_forest(np.concatenate([x_fit, x_val]), np.concatenate([split.fit.y, split.val.y]), forest_cfg)
        pred, _ = predict_forest(forest, stat_feature_matrix(split.test.values, split.test.mask))
        return np.asarray(pred)
    x_fit = select_variant(split.fit.flat, variant)
    x_val = select_variant(split.val.flat, variant)
    dims = ModelDims(x_fit.shape[2], grid.hidden_size, grid.num_layers, 3, None, grid.dropout)
    cfg = TrainConfig(**{**grid.train.__dict__, "seed": seed})
    result = fit(
        x_fit, split.fit.y, x_val, split.val.y, cfg, dims,
        train_folds=split.fit.folds, val_folds=split.val.folds, test_fold=split.fold,
    )
    x_test = select_variant(split.test.flat, variant).astype(result.params.dtype)
    return predict_proba(result.params, x_test).argmax(axis=1) + 1


@dataclass(frozen=True)
class FoldTask:
    protocol: Protocol
    trait: str
    plan: FoldPlan
    fold: int
    plan_seed: int


def run_fold(prepared, labels, task: FoldTask, grid: GridConfig) -> list[FoldResult]:
    """All variants on one (protocol, trait, fold) split."""
    split = fold_split(
        prepared, labels, task.trait, task.plan, task.fold, grid.windowing, grid.train.val_fraction, task.plan_seed
    )
    if len(split.test.y) == 0:
        log.warning("%s/%s fold %d has no test windows", task.protocol.value, task.trait, task.fold)
        return []
    cell_seed = stable_seed(grid.seed, task.protocol.value, task.trait, task.fold, "model")
    out = []
    for variant in grid.variants:
        pred = run_cell(split, variant, grid, cell_seed)
        res = FoldResult(
            task.trait, task.fold, variant.value, task.protocol.value, ConfusionMatrix.from_labels(split.test.y, pred)
        )
        log.info(
            "%s %s %s fold %d: acc %.4f f1 %.4f",
            task.protocol.value, variant.value, task.trait, task.fold, res.accuracy, res.macro_f1,
        )
        out.append(res)
    return out


_WORKER_STATE: dict = {}


def _init_worker(prepared, labels, grid):
    _WORKER_STATE.update(prepared=prepared, labels=labels, grid=grid)


def _run_fold_in_worker(task: FoldTask) -> list[FoldResult]:
    st = _WORKER_STATE
    return run_fold(st["prepared"], st["labels"], task, st["grid"])


def plan_tasks(prepared, labels, grid: GridConfig) -> list[FoldTask]:
    tasks = []
    for protocol in grid.protocols:
        for trait in grid.traits:
            plan_seed = stable_seed(grid.seed, protocol.value, trait, "plan")
            plan = make_fold_plan(prepared, labels, trait, protocol, grid.n_folds, plan_seed)
            tasks += [FoldTask(protocol, trait, plan, k, plan_seed) for k in range(plan.n_folds)]
    return tasks


def run_grid(
    dataset: Dataset,
    grid: GridConfig,
    on_result: Callable[[FoldResult], None] | None = None,
    on_plan: Callable[[Protocol, str, FoldPlan], None] | None = None,
    workers: int = 1,
) -> list[FoldResult]:
    """Every (protocol, trait, fold, variant) cell.

    Folds run on up to ``workers`` processes; results are collected in task
    order and every cell has its own derived seed, so the output does not
    depend on the worker count.
    """
    counter: Counter = Counter()
    prepared = prepare_segments(dataset, grid.windowing, counter)
    if counter["clamped"]:
        log.info("clamped %d off-screen gaze coordinates", counter["clamped"])
    tasks = plan_tasks(prepared, dataset.labels, grid)
    if on_plan:
        for t in tasks:
            if t.fold == 0:
                on_plan(t.protocol, t.trait, t.plan)
    results: list[FoldResult] = []

    def collect(batch):
        for res in batch:
            results.append(res)
            if on_result:
                on_result(res)

    if workers <= 1:
        for t in tasks:
            collect(run_fold(prepared, dataset.labels, t, grid))
        return results
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(prepared, dataset.labels, grid)) as pool:
        for batch in pool.map(_run_fold_in_worker, tasks):
            collect(batch)
    return results
