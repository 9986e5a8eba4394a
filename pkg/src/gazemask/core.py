"""Domain types shared across the pipeline.

Raw recordings keep missing values as NaN inside float arrays (the tracker's
own convention); the per-sample views (:class:`GazeSample`,
:class:`FeatureFrame`) expose them as ``None``. After augmentation a missing
value is ``0`` with ``mask == 0``.

Per-frame arrays use the signal order ``(gaze_x, gaze_y, pupil, velocity)``.
The flattened 12-d model input uses ``(gaze_x, gaze_y, velocity, pupil)``
with ``(value, mask, gap)`` interleaved per signal, see :data:`FLAT_COLUMNS`.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .errors import NonMonotonicTimestamps, TooShort

TRAITS = ("O", "C", "E", "A", "N")
TRAIT_NAMES = {
    "O": "Openness",
    "C": "Conscientiousness",
    "E": "Extraversion",
    "A": "Agreeableness",
    "N": "Neuroticism",
}

# per-frame array channels
GAZE_X, GAZE_Y, PUPIL, VELOCITY = 0, 1, 2, 3
SIGNALS = ("gaze_x", "gaze_y", "pupil", "velocity")
N_SIGNALS = 4

# signal order of the flattened model input
FLAT_SIGNAL_ORDER = (GAZE_X, GAZE_Y, VELOCITY, PUPIL)
FLAT_COLUMNS = tuple(
    name
    for ch in FLAT_SIGNAL_ORDER
    for name in (SIGNALS[ch], f"mask_{SIGNALS[ch]}", f"gap_{SIGNALS[ch]}")
)

SIGMA_FLOOR = 1e-8
TRAINING_ONLY = "training-only"


class TertileLabel(enum.IntEnum):
    LOW = 1
    MEDIUM = 2
    HIGH = 3


@dataclass(frozen=True)
class RecordingConfig:
    sampling_rate_hz: float = 60.0
    screen_width_px: int = 1024
    screen_height_px: int = 576
    sampling_period_s: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not (self.sampling_rate_hz > 0 and math.isfinite(self.sampling_rate_hz)):
            raise ValueError("sampling_rate_hz must be positive")
        if self.sampling_period_s is None:
            object.__setattr__(self, "sampling_period_s", 1.0 / self.sampling_rate_hz)
        if abs(self.sampling_period_s * self.sampling_rate_hz - 1.0) > 1e-9:
            raise ValueError("sampling_period_s must equal 1 / sampling_rate_hz")
        if self.screen_width_px <= 0 or self.screen_height_px <= 0:
            raise ValueError("screen dimensions must be positive")


@dataclass(frozen=True)
class GazeSample:
    timestamp_s: float
    gaze_x_px: Optional[float] = None
    gaze_y_px: Optional[float] = None
    pupil_mm: Optional[float] = None

    def __post_init__(self):
        if not math.isfinite(self.timestamp_s):
            raise ValueError("timestamp must be finite")


def _frozen(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _opt(v: float) -> Optional[float]:
    return None if np.isnan(v) else float(v)


def _nan(v: Optional[float]) -> float:
    return np.nan if v is None else float(v)


@dataclass(frozen=True, eq=False)
class SessionSeries:
    """One participant session; array-backed, NaN marks a missing sample."""

    participant_id: str
    timestamps: np.ndarray
    gaze_x: np.ndarray
    gaze_y: np.ndarray
    pupil: np.ndarray
    config: RecordingConfig = RecordingConfig()

    def __post_init__(self):
        for name in ("timestamps", "gaze_x", "gaze_y", "pupil"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = len(self.timestamps)
        if any(len(getattr(self, k)) != n for k in ("gaze_x", "gaze_y", "pupil")):
            raise ValueError("signal arrays must share the timestamp length")
        if n < 2:
            raise TooShort(f"session {self.participant_id!r} has {n} samples (< 2)")
        if not np.isfinite(self.timestamps).all():
            raise ValueError("timestamps must be finite")
        diffs = np.diff(self.timestamps)
        if (diffs <= 0).any():
            raise NonMonotonicTimestamps(
                f"session {self.participant_id!r}: timestamps not strictly increasing "
                f"at index {int(np.argmax(diffs <= 0)) + 1}"
            )
        dt = self.config.sampling_period_s
        bad = np.abs(diffs - dt) > 0.1 * dt
        if bad.any():
            raise NonMonotonicTimestamps(
                f"session {self.participant_id!r}: sample gap {diffs[bad][0]:.6g}s deviates "
                f"more than 10% from the sampling period {dt:.6g}s"
            )

    def __len__(self) -> int:
        return len(self.timestamps)

    def __eq__(self, other):
        if not isinstance(other, SessionSeries):
            return NotImplemented
        return (
            self.participant_id == other.participant_id
            and self.config == other.config
            and all(
                np.array_equal(getattr(self, k), getattr(other, k), equal_nan=True)
                for k in ("timestamps", "gaze_x", "gaze_y", "pupil")
            )
        )

    @property
    def samples(self) -> tuple[GazeSample, ...]:
        return tuple(
            GazeSample(float(t), _opt(x), _opt(y), _opt(p))
            for t, x, y, p in zip(self.timestamps, self.gaze_x, self.gaze_y, self.pupil)
        )

    @classmethod
    def from_samples(cls, participant_id, samples, config=RecordingConfig()) -> "SessionSeries":
        return cls(
            participant_id,
            [s.timestamp_s for s in samples],
            [_nan(s.gaze_x_px) for s in samples],
            [_nan(s.gaze_y_px) for s in samples],
            [_nan(s.pupil_mm) for s in samples],
            config,
        )

    def slice(self, start: int, stop: int) -> "SessionSeries":
        return SessionSeries(
            self.participant_id,
            self.timestamps[start:stop],
            self.gaze_x[start:stop],
            self.gaze_y[start:stop],
            self.pupil[start:stop],
            self.config,
        )


@dataclass(frozen=True)
class FeatureFrame:
    """Normalized per-timestep values ``(gaze_x, gaze_y, pupil, velocity)``; ``None`` if missing."""

    values: tuple[Optional[float], Optional[float], Optional[float], Optional[float]]

    def __post_init__(self):
        if len(self.values) != N_SIGNALS:
            raise ValueError("a feature frame has exactly 4 values")
        for j, v in enumerate(self.values):
            if v is None:
                continue
            if not math.isfinite(v):
                raise ValueError("present values must be finite")
            if j in (GAZE_X, GAZE_Y) and not -1.0 <= v <= 1.0:
                raise ValueError("normalized gaze must lie in [-1, 1]")


@dataclass(frozen=True)
class AugmentedFrame:
    values: tuple[float, float, float, float]
    mask: tuple[int, int, int, int]
    gaps_s: tuple[float, float, float, float]

    def __post_init__(self):
        for v, m, g in zip(self.values, self.mask, self.gaps_s):
            if m not in (0, 1):
                raise ValueError("mask entries are 0 or 1")
            if m == 0 and v != 0:
                raise ValueError("missing entries must carry value 0")
            if m == 1 and g != 0:
                raise ValueError("observed entries must carry gap 0")
            if g < 0:
                raise ValueError("gaps are nonnegative")

    def flatten(self) -> tuple[float, ...]:
        out: list[float] = []
        for ch in FLAT_SIGNAL_ORDER:
            out += [self.values[ch], float(self.mask[ch]), self.gaps_s[ch]]
        return tuple(out)


@dataclass(frozen=True, eq=False)
class AugmentedSequence:
    """Array form of a run of :class:`AugmentedFrame` objects, each array (T, 4)."""

    participant_id: str
    values: np.ndarray
    mask: np.ndarray
    gaps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "mask", _frozen(self.mask, np.uint8))
        object.__setattr__(self, "gaps", _frozen(self.gaps))
        if not (self.values.shape == self.mask.shape == self.gaps.shape) or self.values.ndim != 2:
            raise ValueError("values, mask and gaps must share shape (T, 4)")

    def __len__(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, AugmentedSequence):
            return NotImplemented
        return self.participant_id == other.participant_id and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("values", "mask", "gaps")
        )

    @property
    def frames(self) -> list[AugmentedFrame]:
        return [
            AugmentedFrame(tuple(map(float, v)), tuple(map(int, m)), tuple(map(float, g)))
            for v, m, g in zip(self.values, self.mask, self.gaps)
        ]

    def flat(self) -> np.ndarray:
        """(T, 12) matrix in :data:`FLAT_COLUMNS` order."""
        cols = []
        for ch in FLAT_SIGNAL_ORDER:
            cols += [self.values[:, ch], self.mask[:, ch].astype(np.float64), self.gaps[:, ch]]
        return np.stack(cols, axis=1)


@dataclass(frozen=True)
class Window:
    """A length-``length`` slice of one segment; ``start_index`` is 0-based within the session."""

    participant_id: str
    segment_id: int
    start_index: int
    length: int
    label: int
    fold: Optional[int] = None

    @property
    def stop_index(self) -> int:
        return self.start_index + self.length


@dataclass(frozen=True)
class TraitProfile:
    participant_id: str
    scores: tuple[float, ...]
    labels: tuple[TertileLabel, ...]

    def __post_init__(self):
        if len(self.scores) != 5 or len(self.labels) != 5:
            raise ValueError("a trait profile covers all five traits")
        for s in self.scores:
            if not 1.0 <= s <= 5.0:
                raise ValueError(f"trait score {s} outside [1, 5]")

    @classmethod
    def from_scores(cls, participant_id: str, scores, cuts) -> "TraitProfile":
        """Derive labels from ``cuts`` (a mapping trait -> TertileCuts)."""
        from .ingest import label_tertile

        scores = tuple(float(s) for s in scores)
        labels = tuple(label_tertile(s, cuts[t]) for s, t in zip(scores, TRAITS))
        return cls(participant_id, scores, labels)

    def label(self, trait: str) -> TertileLabel:
        return self.labels[TRAITS.index(trait)]


@dataclass(frozen=True)
class NormalizationStats:
    pupil_mean: float
    pupil_std: float
    velocity_mean: float
    velocity_std: float
    provenance: str = TRAINING_ONLY

    def __post_init__(self):
        if self.pupil_std < SIGMA_FLOOR or self.velocity_std < SIGMA_FLOOR:
            raise ValueError("standard deviations must be floored at 1e-8")


def to_dict(obj) -> dict[str, Any]:
    """Plain-data form of any dataclass in this module (JSON-safe)."""
    out = {"type": type(obj).__name__}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, np.ndarray):
            v = [None if (isinstance(x, float) and math.isnan(x)) else x for x in v.tolist()]
        elif dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = [int(x) if isinstance(x, enum.IntEnum) else x for x in v]
        out[f.name] = v
    return out


def from_dict(d: dict[str, Any]):
    """Inverse of :func:`to_dict`."""
    d = dict(d)
    cls = _TYPES[d.pop("type")]
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in d:
            continue
        v = d[f.name]
        if isinstance(v, dict) and "type" in v:
            v = from_dict(v)
        elif cls is SessionSeries and f.name != "participant_id":
            v = [np.nan if x is None else x for x in v]
        elif cls is TraitProfile and f.name == "labels":
            v = tuple(TertileLabel(x) for x in v)
        elif isinstance(v, list) and cls is not AugmentedSequence:
            v = tuple(v)
        kwargs[f.name] = v
    return cls(**kwargs)


_TYPES = {
    c.__name__: c
    for c in (
        RecordingConfig,
        GazeSample,
        SessionSeries,
        FeatureFrame,
        AugmentedFrame,
        AugmentedSequence,
        Window,
        TraitProfile,
        NormalizationStats,
    )
}
