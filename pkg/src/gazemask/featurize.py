"""Velocity, normalization, validity masks and temporal gaps."""
from __future__ import annotations

import csv
import enum
import logging
import os
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._backend import kernels
from .core import (
    FLAT_COLUMNS,
    GAZE_X,
    GAZE_Y,
    N_SIGNALS,
    PUPIL,
    SIGMA_FLOOR,
    TRAINING_ONLY,
    VELOCITY,
    AugmentedFrame,
    AugmentedSequence,
    FeatureFrame,
    NormalizationStats,
    RecordingConfig,
    SessionSeries,
)
from .errors import LeakageError, NoObservedSamples, StatisticalVariantNotSequential

log = logging.getLogger(__name__)


class FeatureVariant(enum.Enum):
    FULL = "Full"
    TS_GAP = "TsGap"
    TS_ONLY = "TsOnly"
    STATISTICAL = "Statistical"

    @property
    def per_frame_dim(self) -> int | None:
        return _VARIANT_COLUMNS[self].size if self in _VARIANT_COLUMNS else None

    @property
    def display_name(self) -> str:
        return _DISPLAY[self]

    @classmethod
    def parse(cls, text: str) -> "FeatureVariant":
        key = text.replace("+", "").replace("_", "").replace("-", "").replace(" ", "").lower()
        for v in cls:
            if key in (v.value.lower(), v.name.replace("_", "").lower()):
                return v
        if key in ("tstemporalgap", "tsgap"):
            return cls.TS_GAP
        raise ValueError(f"unknown variant {text!r}")


_DISPLAY = {
    FeatureVariant.FULL: "Full",
    FeatureVariant.TS_GAP: "TS+Temporal Gap",
    FeatureVariant.TS_ONLY: "TS Only",
    FeatureVariant.STATISTICAL: "Statistical",
}

# column indices into the 12-d flat layout
_VARIANT_COLUMNS = {
    FeatureVariant.FULL: np.arange(12),
    FeatureVariant.TS_GAP: np.array([0, 2, 3, 5, 6, 8, 9, 11]),
    FeatureVariant.TS_ONLY: np.array([0, 3, 6, 9]),
}


def variant_columns(variant: FeatureVariant) -> list[str]:
    if variant not in _VARIANT_COLUMNS:
        raise StatisticalVariantNotSequential("the Statistical variant has no per-frame layout")
    return [FLAT_COLUMNS[i] for i in _VARIANT_COLUMNS[variant]]


def velocity_from_positions(x: np.ndarray, y: np.ndarray, dt: float) -> np.ndarray:
    """Gaze speed ``|g_t - g_{t-1}| / dt``; NaN where either position is missing.

    The first sample has speed 0 when its position is observed.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    v = np.empty_like(x)
    v[0] = np.nan if (np.isnan(x[0]) or np.isnan(y[0])) else 0.0
    v[1:] = np.hypot(np.diff(x), np.diff(y)) / dt  # NaN propagates from either neighbor
    return v


def compute_velocity(series: SessionSeries) -> np.ndarray:
    return velocity_from_positions(series.gaze_x, series.gaze_y, series.config.sampling_period_s)


def normalize_gaze(x_px, y_px, config: RecordingConfig, counter: Counter | None = None):
    """Map pixel coordinates to ``[-1, 1]``; off-screen values are clamped and counted."""
    gx = 2.0 * np.asarray(x_px, dtype=np.float64) / config.screen_width_px - 1.0
    gy = 2.0 * np.asarray(y_px, dtype=np.float64) / config.screen_height_px - 1.0
    with np.errstate(invalid="ignore"):
        n_out = int(np.count_nonzero(np.abs(gx) > 1.0) + np.count_nonzero(np.abs(gy) > 1.0))
    if n_out:
        if counter is not None:
            counter["clamped"] += n_out
        log.debug("clamped %d off-screen gaze coordinates", n_out)
        gx = np.clip(gx, -1.0, 1.0)
        gy = np.clip(gy, -1.0, 1.0)
    if gx.ndim == 0:
        return float(gx), float(gy)
    return gx, gy


def _pool(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        a = samples.ravel()
    else:
        parts = [np.asarray(s, dtype=np.float64).ravel() for s in samples]
        a = np.concatenate(parts) if parts else np.empty(0)
    a = a.astype(np.float64)
    return a[~np.isnan(a)]


def fit_normalization(pupil_samples, velocity_samples) -> NormalizationStats:
    """Mean and population std over observed training samples, std floored at 1e-8.

    Each argument is an array or an iterable of arrays (NaN = missing).
    """
    p = _pool(pupil_samples)
    v = _pool(velocity_samples)
    if p.size == 0:
        raise NoObservedSamples("no observed pupil samples in the training data")
    if v.size == 0:
        raise NoObservedSamples("no observed velocity samples in the training data")
    return NormalizationStats(
        float(p.mean()),
        max(float(p.std()), SIGMA_FLOOR),
        float(v.mean()),
        max(float(v.std()), SIGMA_FLOOR),
        TRAINING_ONLY,
    )


def fit_normalization_from_sessions(sessions: Iterable[SessionSeries]) -> NormalizationStats:
    sessions = list(sessions)
    return fit_normalization([s.pupil for s in sessions], [compute_velocity(s) for s in sessions])


def standardize(value, mean: float, std: float):
    if std < SIGMA_FLOOR:
        raise ValueError("std must be at least 1e-8")
    return (value - mean) / std


def raw_feature_matrix(series: SessionSeries, counter: Counter | None = None) -> np.ndarray:
    """(T, 4) matrix of normalized gaze, raw pupil and raw velocity; NaN = missing."""
    gx, gy = normalize_gaze(series.gaze_x, series.gaze_y, series.config, counter)
    out = np.empty((len(series), N_SIGNALS))
    out[:, GAZE_X] = gx
    out[:, GAZE_Y] = gy
    out[:, PUPIL] = series.pupil
    out[:, VELOCITY] = compute_velocity(series)
    return out


def apply_normalization(raw: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Z-score the pupil and velocity columns of a :func:`raw_feature_matrix` output."""
    if stats.provenance != TRAINING_ONLY:
        raise LeakageError(f"normalization stats have provenance {stats.provenance!r}")
    out = np.array(raw, dtype=np.float64, copy=True)
    out[:, PUPIL] = standardize(out[:, PUPIL], stats.pupil_mean, stats.pupil_std)
    out[:, VELOCITY] = standardize(out[:, VELOCITY], stats.velocity_mean, stats.velocity_std)
    return out


def feature_frames(series: SessionSeries, stats: NormalizationStats) -> list[FeatureFrame]:
    values = apply_normalization(raw_feature_matrix(series), stats)
    return [FeatureFrame(tuple(None if np.isnan(v) else float(v) for v in row)) for row in values]


def temporal_gaps(mask: np.ndarray, dt: float) -> np.ndarray:
    return kernels.temporal_gaps(np.ascontiguousarray(mask, dtype=np.uint8), float(dt))


def augment(
    frames: Sequence[FeatureFrame] | np.ndarray,
    config: RecordingConfig = RecordingConfig(),
    participant_id: str = "",
) -> AugmentedSequence:
    """Zero-fill missing values and attach validity masks and temporal gaps.

    ``frames`` is a sequence of :class:`FeatureFrame` or a (T, 4) array with NaN
    for missing entries. A feature missing at the first step gets gap ``dt``.
    """
    if isinstance(frames, np.ndarray):
        values = np.array(frames, dtype=np.float64)
    else:
        values = np.array(
            [[np.nan if v is None else v for v in f.values] for f in frames], dtype=np.float64
        )
    if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] != N_SIGNALS:
        raise ValueError("augment needs a nonempty (T, 4) frame sequence")
    observed = ~np.isnan(values)
    mask = observed.astype(np.uint8)
    values[~observed] = 0.0
    return AugmentedSequence(participant_id, values, mask, temporal_gaps(mask, config.sampling_period_s))


def select_variant(
    frames: AugmentedSequence | Sequence[AugmentedFrame] | np.ndarray, variant: FeatureVariant
) -> np.ndarray:
    """Per-timestep vectors for a sequential variant: 12, 8 or 4 columns.

    Accepts an augmented sequence, a list of frames, or an already flattened
    (..., 12) array.
    """
    if variant not in _VARIANT_COLUMNS:
        raise StatisticalVariantNotSequential(
            "the Statistical variant is handled by the random-forest baseline"
        )
    if isinstance(frames, AugmentedSequence):
        flat = frames.flat()
    elif isinstance(frames, np.ndarray):
        flat = frames
    else:
        flat = np.array([f.flatten() for f in frames], dtype=np.float64).reshape(-1, 12)
    return flat[..., _VARIANT_COLUMNS[variant]]


def write_augmented_csv(sequences: Iterable[AugmentedSequence], path: str | os.PathLike) -> None:
    """Export sequences as ``participant_id,timestep`` plus the 12 flat columns."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant_id", "timestep", *FLAT_COLUMNS])
        for seq in sequences:
            flat = seq.flat()
            for t, row in enumerate(flat):
                w.writerow([seq.participant_id, t, *(repr(float(v)) for v in row)])


def read_augmented_csv(path: str | os.PathLike) -> list[AugmentedSequence]:
    from .core import FLAT_SIGNAL_ORDER

    rows: dict[str, list[list[float]]] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["participant_id", "timestep", *FLAT_COLUMNS]:
            raise ValueError("unexpected augmented CSV header")
        for row in reader:
            rows.setdefault(row[0], []).append([float(v) for v in row[2:]])
    out = []
    for pid, data in rows.items():
        flat = np.array(data)
        values = np.empty((len(flat), N_SIGNALS))
        mask = np.empty_like(values)
        gaps = np.empty_like(values)
        for pos, ch in enumerate(FLAT_SIGNAL_ORDER):
            values[:, ch] = flat[:, 3 * pos]
            mask[:, ch] = flat[:, 3 * pos + 1]
            gaps[:, ch] = flat[:, 3 * pos + 2]
        out.append(AugmentedSequence(pid, values, mask, gaps))
    return out
