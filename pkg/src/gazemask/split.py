"""Leakage-free segmentation, fold assignment and window extraction.

Each session is cut into contiguous, non-overlapping segments; segments (or
whole participants) are dealt to folds; windows are generated only inside a
segment, after fold assignment, so no raw sample can reach two folds.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import io
import logging
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .core import Window
from .errors import ClassTooSmall, ConfigError, TooFewParticipants, TooShortForSegmentation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowingConfig:
    window_len: int = 100
    stride: int = 50
    segments_per_session: int = 5

    def __post_init__(self):
        if self.window_len < 2:
            raise ConfigError("window_len must be at least 2")
        if not 1 <= self.stride <= self.window_len:
            raise ConfigError("stride must be in [1, window_len]")
        if self.segments_per_session < 1:
            raise ConfigError("segments_per_session must be positive")


class Protocol(enum.Enum):
    SEGMENT = "SegmentStratified5Fold"
    PARTICIPANT = "ParticipantStratified"

    @classmethod
    def parse(cls, text: str) -> "Protocol":
        key = text.lower().replace("-", "").replace("_", "")
        for p in cls:
            if key in (p.value.lower(), p.name.lower()):
                return p
        if key.startswith("segment"):
            return cls.SEGMENT
        if key.startswith("participant"):
            return cls.PARTICIPANT
        raise ValueError(f"unknown protocol {text!r}")


@dataclass(frozen=True)
class Segment:
    participant_id: str
    segment_id: int
    start: int
    stop: int

    @property
    def key(self) -> str:
        return f"{self.participant_id}#{self.segment_id}"

    def __len__(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class FoldPlan:
    protocol: Protocol
    assignments: Mapping[str, int]
    labels: Mapping[str, int]
    seed: int
    n_folds: int = field(default=0)

    def __post_init__(self):
        n = self.n_folds or (max(self.assignments.values()) + 1 if self.assignments else 0)
        object.__setattr__(self, "n_folds", n)
        used = set(self.assignments.values())
        if used != set(range(n)):
            raise ConfigError("every fold must receive at least one unit")

    @property
    def unit_kind(self) -> str:
        return "segment" if self.protocol is Protocol.SEGMENT else "participant"

    def fold_of(self, segment: Segment) -> int:
        if self.protocol is Protocol.SEGMENT:
            return self.assignments[segment.key]
        return self.assignments[segment.participant_id]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["unit_id", "unit_kind", "fold", "label", "seed"])
        for unit in sorted(self.assignments):
            w.writerow([unit, self.unit_kind, self.assignments[unit], self.labels[unit], self.seed])
        return buf.getvalue()

    def write_csv(self, path: str | os.PathLike) -> str:
        text = self.to_csv()
        Path(path).write_text(text)
        return hashlib.sha256(text.encode()).hexdigest()

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()

    @classmethod
    def from_csv(cls, text: str) -> "FoldPlan":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ConfigError("empty fold plan")
        kind = rows[0]["unit_kind"]
        protocol = Protocol.SEGMENT if kind == "segment" else Protocol.PARTICIPANT
        return cls(
            protocol,
            {r["unit_id"]: int(r["fold"]) for r in rows},
            {r["unit_id"]: int(r["label"]) for r in rows},
            int(rows[0]["seed"]),
        )


def segment_bounds(n_samples: int, n_segments: int) -> list[tuple[int, int]]:
    """Split ``range(n_samples)`` into ``n_segments`` contiguous pieces.

    Lengths are floor/ceil of ``n_samples / n_segments``; the remainder goes
    to the earliest pieces.
    """
    if n_samples < n_segments:
        raise TooShortForSegmentation(f"{n_samples} samples cannot form {n_segments} segments")
    base, extra = divmod(n_samples, n_segments)
    bounds = []
    start = 0
    for k in range(n_segments):
        stop = start + base + (1 if k < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def segment(participant_id: str, n_samples: int, n_segments: int = 5) -> list[Segment]:
    return [
        Segment(participant_id, k, a, b) for k, (a, b) in enumerate(segment_bounds(n_samples, n_segments))
    ]


def _deal(units_by_class: dict[int, list[Hashable]], n_folds: int, rng) -> dict[Hashable, int]:
    # shuffle within each class, then deal round-robin, continuing where the previous class stopped
    out = {}
    pos = 0
    for label in sorted(units_by_class):
        members = list(units_by_class[label])
        order = rng.permutation(len(members))
        for idx in order:
            out[members[idx]] = pos % n_folds
            pos += 1
    return out


def _group(units: Iterable[tuple[str, int]]) -> dict[int, list[str]]:
    by_class: dict[int, list[str]] = {}
    for unit, label in sorted(units):
        by_class.setdefault(int(label), []).append(unit)
    return by_class


def assign_folds_stratified(units: Iterable[tuple[str, int]], n_folds: int = 5, seed: int = 0) -> FoldPlan:
    """Stratified deal of labeled segments (``(segment_key, label)``) to folds."""
    units = list(units)
    by_class = _group(units)
    for label, members in by_class.items():
        if len(members) < n_folds:
            raise ClassTooSmall(f"class {label} has {len(members)} segments (< {n_folds} folds)")
    rng = np.random.default_rng(seed)
    assignments = _deal(by_class, n_folds, rng)
    return FoldPlan(Protocol.SEGMENT, assignments, dict(units), seed, n_folds)


def assign_folds_by_participant(
    participants: Iterable[tuple[str, int]], n_folds: int = 5, seed: int = 0
) -> FoldPlan:
    """Stratified deal of whole participants to folds."""
    participants = list(participants)
    n = len(participants)
    if n_folds >= n:
        raise TooFewParticipants(
            f"{n_folds} folds for {n} participants leaves single-participant test folds "
            "(leave-one-subject-out is unsupported: each test fold would hold one class)"
        )
    if n_folds < 2:
        raise ConfigError("need at least 2 folds")
    by_class = _group(participants)
    small = {lab: len(m) for lab, m in by_class.items() if len(m) < n_folds}
    if small:
        warnings.warn(
            f"classes {small} have fewer participants than folds; some folds will lack them",
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    assignments = _deal(by_class, n_folds, rng)
    return FoldPlan(Protocol.PARTICIPANT, assignments, dict(participants), seed, n_folds)


def window_starts(n_samples: int, window_len: int, stride: int) -> range:
    """0-based starts of every full window; empty when ``n_samples < window_len``."""
    if n_samples < window_len:
        return range(0)
    return range(0, n_samples - window_len + 1, stride)


def make_windows(
    seg: Segment, config: WindowingConfig, label: int, fold: int | None = None
) -> list[Window]:
    starts = window_starts(len(seg), config.window_len, config.stride)
    if not starts:
        log.debug("segment %s shorter than one window", seg.key)
    return [
        Window(seg.participant_id, seg.segment_id, seg.start + s, config.window_len, int(label), fold)
        for s in starts
    ]


def validation_split(
    units: Sequence[tuple[str, int]], fraction: float = 0.2, seed: int = 0
) -> tuple[list[str], list[str]]:
    """Hold out ``fraction`` of the labeled units per class. Returns (fit, validation)."""
    rng = np.random.default_rng(seed)
    fit, val = [], []
    for label, members in sorted(_group(units).items()):
        order = rng.permutation(len(members))
        n_val = int(round(fraction * len(members)))
        if len(members) > 1:
            n_val = min(max(n_val, 1), len(members) - 1)
        else:
            n_val = 0
        for rank, idx in enumerate(order):
            (val if rank < n_val else fit).append(members[idx])
    return sorted(fit), sorted(val)
