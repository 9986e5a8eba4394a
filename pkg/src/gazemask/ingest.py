"""Recording/questionnaire parsing and tertile labeling."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import TRAITS, RecordingConfig, SessionSeries, TertileLabel
from .errors import (
    InsufficientParticipants,
    KeyMismatch,
    MalformedRow,
    OutOfRangeResponse,
)

RECORDING_COLUMNS = (
    "timestamp_s",
    "left_x_px",
    "left_y_px",
    "right_x_px",
    "right_y_px",
    "left_pupil_mm",
    "right_pupil_mm",
)
N_BFI_ITEMS = 44
TERTILE_QUANTILES = (0.33, 0.66)


@dataclass(frozen=True)
class BfiItem:
    item_index: int
    trait: str
    reverse_scored: bool


@dataclass(frozen=True)
class BfiKey:
    items: tuple[BfiItem, ...]

    def __post_init__(self):
        if len(self.items) != N_BFI_ITEMS:
            raise KeyMismatch(f"BFI key has {len(self.items)} items, expected {N_BFI_ITEMS}")
        indices = sorted(it.item_index for it in self.items)
        if indices != list(range(1, N_BFI_ITEMS + 1)):
            raise KeyMismatch("BFI key must map each item 1..44 exactly once")
        for it in self.items:
            if it.trait not in TRAITS:
                raise KeyMismatch(f"item {it.item_index}: unknown trait {it.trait!r}")


@dataclass(frozen=True)
class TertileCuts:
    trait: str
    cut_33: float
    cut_66: float

    def __post_init__(self):
        if self.cut_33 > self.cut_66:
            raise ValueError("cut_33 must not exceed cut_66")


def _cell(token: str, row_index: int, column: str) -> float:
    token = token.strip()
    if token == "":
        return math.nan
    try:
        value = float(token)
    except ValueError:
        raise MalformedRow(row_index, f"column {column!r}: cannot parse {token!r}") from None
    return value if math.isfinite(value) else math.nan


def _merge_eyes(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    # mean of the valid eyes; NaN only when both are invalid
    both = np.stack([left, right])
    valid = ~np.isnan(both)
    n = valid.sum(axis=0)
    total = np.where(valid, both, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, total / np.maximum(n, 1), np.nan)


def parse_recording(
    path: str | os.PathLike,
    config: RecordingConfig = RecordingConfig(),
    participant_id: str | None = None,
) -> SessionSeries:
    """Read a binocular recording CSV into a :class:`SessionSeries`.

    Empty cells and non-finite tokens (``nan``, ``inf``) become missing. Per-eye
    columns are averaged over the eyes that are valid.
    """
    path = Path(path)
    if participant_id is None:
        participant_id = path.stem
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedRow(0, "empty file") from None
        if tuple(header) != RECORDING_COLUMNS:
            raise MalformedRow(0, f"header {header} does not match {list(RECORDING_COLUMNS)}")
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(RECORDING_COLUMNS):
                raise MalformedRow(i, f"expected {len(RECORDING_COLUMNS)} fields, got {len(row)}")
            rows.append([_cell(tok, i, col) for tok, col in zip(row, RECORDING_COLUMNS)])
    data = np.array(rows, dtype=np.float64).reshape(-1, len(RECORDING_COLUMNS))
    ts = data[:, 0]
    if np.isnan(ts).any():
        raise MalformedRow(int(np.argmax(np.isnan(ts))) + 1, "timestamp missing or non-finite")
    return SessionSeries(
        participant_id,
        ts,
        _merge_eyes(data[:, 1], data[:, 3]),
        _merge_eyes(data[:, 2], data[:, 4]),
        _merge_eyes(data[:, 5], data[:, 6]),
        config,
    )


def write_recording(series: SessionSeries, path: str | os.PathLike) -> None:
    """Write ``series`` in the recording schema, duplicating the signal onto both eyes."""

    def fmt(v: float) -> str:
        return "" if math.isnan(v) else repr(float(v))

    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORDING_COLUMNS)
        for t, x, y, p in zip(series.timestamps, series.gaze_x, series.gaze_y, series.pupil):
            w.writerow([repr(float(t)), fmt(x), fmt(y), fmt(x), fmt(y), fmt(p), fmt(p)])


def load_bfi_key(path: str | os.PathLike) -> BfiKey:
    items = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != [
            "item_index",
            "trait",
            "reverse",
        ]:
            raise KeyMismatch("BFI key header must be item_index,trait,reverse")
        for i, row in enumerate(reader, start=1):
            try:
                rev = int(row["reverse"])
                idx = int(row["item_index"])
            except (TypeError, ValueError):
                raise MalformedRow(i, "item_index and reverse must be integers") from None
            if rev not in (0, 1):
                raise MalformedRow(i, "reverse must be 0 or 1")
            items.append(BfiItem(idx, row["trait"].strip(), bool(rev)))
    return BfiKey(tuple(items))


def load_responses(path: str | os.PathLike) -> dict[str, list[int]]:
    """Responses CSV ``participant_id,item_1..item_44`` -> {participant: responses}."""
    expected = ["participant_id"] + [f"item_{i}" for i in range(1, N_BFI_ITEMS + 1)]
    out = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != expected:
            raise MalformedRow(0, "responses header must be participant_id,item_1,...,item_44")
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(expected):
                raise MalformedRow(i, f"expected {len(expected)} fields, got {len(row)}")
            try:
                out[row[0].strip()] = [int(v) for v in row[1:]]
            except ValueError:
                raise MalformedRow(i, "responses must be integers") from None
    return out


def score_bfi(responses: Sequence[int], key: BfiKey) -> dict[str, float]:
    """Per-trait mean of item responses, reverse-keyed items scored as ``6 - r``.

    Traits without any items in ``key`` are omitted.
    """
    if len(responses) != len(key.items):
        raise KeyMismatch(f"{len(responses)} responses for a {len(key.items)}-item key")
    return _score(responses, key.items)


def _score(responses, items) -> dict[str, float]:
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for it in items:
        r = responses[it.item_index - 1]
        if isinstance(r, bool) or int(r) != r or not 1 <= r <= 5:
            raise OutOfRangeResponse(f"item {it.item_index}: response {r!r} not in 1..5")
        v = 6 - r if it.reverse_scored else r
        sums[it.trait] = sums.get(it.trait, 0.0) + v
        counts[it.trait] = counts.get(it.trait, 0) + 1
    return {t: sums[t] / counts[t] for t in TRAITS if t in sums}


def fit_tertiles(scores: Iterable[float], trait: str = "") -> TertileCuts:
    """33rd/66th empirical percentiles with linear interpolation at ``q * (N - 1)``."""
    s = np.sort(np.asarray(list(scores), dtype=np.float64))
    if s.size < 3:
        raise InsufficientParticipants(f"need at least 3 scores, got {s.size}")
    cuts = []
    for q in TERTILE_QUANTILES:
        pos = q * (s.size - 1)
        lo = int(math.floor(pos))
        hi = min(lo + 1, s.size - 1)
        cuts.append(float(s[lo] + (pos - lo) * (s[hi] - s[lo])))
    return TertileCuts(trait, cuts[0], cuts[1])


def label_tertile(score: float, cuts: TertileCuts) -> TertileLabel:
    # ties at a cut point go to the lower class
    if score <= cuts.cut_33:
        return TertileLabel.LOW
    if score <= cuts.cut_66:
        return TertileLabel.MEDIUM
    return TertileLabel.HIGH


def labels_from_responses(
    responses: Mapping[str, Sequence[int]], key: BfiKey
) -> dict[str, dict[str, TertileLabel]]:
    """Score every participant, fit cuts per trait on all participants, and label."""
    scores = {pid: score_bfi(r, key) for pid, r in responses.items()}
    labels: dict[str, dict[str, TertileLabel]] = {pid: {} for pid in scores}
    for trait in TRAITS:
        cuts = fit_tertiles([scores[p][trait] for p in scores], trait)
        for pid in scores:
            labels[pid][trait] = label_tertile(scores[pid][trait], cuts)
    return labels


def load_labels(path: str | os.PathLike) -> dict[str, dict[str, TertileLabel]]:
    """Labels CSV ``participant_id,O,C,E,A,N`` holding tertile labels 1..3."""
    out = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != ["participant_id", *TRAITS]:
            raise MalformedRow(0, "labels header must be participant_id,O,C,E,A,N")
        for i, row in enumerate(reader, start=1):
            try:
                out[row["participant_id"]] = {t: TertileLabel(int(row[t])) for t in TRAITS}
            except (TypeError, ValueError):
                raise MalformedRow(i, "labels must be 1, 2 or 3") from None
    return out


def write_labels(labels: Mapping[str, Mapping[str, int]], path: str | os.PathLike) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant_id", *TRAITS])
        for pid in sorted(labels):
            w.writerow([pid, *(int(labels[pid][t]) for t in TRAITS)])
