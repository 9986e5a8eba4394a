"""Seeded synthetic gaze sessions with class-conditioned dynamics and missingness.

Each participant belongs to one of three classes. Gaze alternates between
fixations (exponential dwell, isotropic jitter, Poisson corrective
microsaccades) and instantaneous saccades of the class amplitude; pupil is
baseline plus Gaussian noise; tracking loss follows a two-state Markov chain
whose stationary missing fraction and mean gap length come from the class
profile. Loss blanks gaze and pupil together, as a blink or look-away does.
"""
from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .core import TRAITS, RecordingConfig, SessionSeries, TertileLabel
from .errors import InvalidSpec
from .ingest import write_labels, write_recording
from .split import segment_bounds, window_starts

SIGNAL_MODES = ("dynamics-only", "missingness-only", "both")
_DYNAMICS_FIELDS = (
    "fixation_dwell_mean_s",
    "saccade_rate_hz",
    "saccade_amplitude_px",
    "pupil_baseline_mm",
    "pupil_noise_mm",
)
_MISSING_FIELDS = ("missing_rate", "gap_len_mean_s")


@dataclass(frozen=True)
class ClassProfile:
    label: TertileLabel
    fixation_dwell_mean_s: float
    saccade_rate_hz: float  # rate of small corrective jumps inside a fixation
    saccade_amplitude_px: float
    pupil_baseline_mm: float
    pupil_noise_mm: float
    missing_rate: float
    gap_len_mean_s: float

    def __post_init__(self):
        object.__setattr__(self, "label", TertileLabel(int(self.label)))
        for name in ("fixation_dwell_mean_s", "saccade_rate_hz", "saccade_amplitude_px", "pupil_baseline_mm", "gap_len_mean_s"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise InvalidSpec(f"profile {int(self.label)}: {name} must be positive, got {v!r}")
        if not self.pupil_noise_mm >= 0:
            raise InvalidSpec(f"profile {int(self.label)}: pupil_noise_mm must be nonnegative")
        if not 0.0 <= self.missing_rate < 1.0:
            raise InvalidSpec(f"profile {int(self.label)}: missing_rate must lie in [0, 1)")

    def transition_probs(self, dt: float) -> tuple[float, float]:
        """(P(observed -> missing), P(missing -> observed)) per sample."""
        g = max(self.gap_len_mean_s / dt, 1.0)
        p_mo = 1.0 / g
        p_om = self.missing_rate * p_mo / (1.0 - self.missing_rate)
        if p_om > 1.0:
            raise InvalidSpec(
                f"profile {int(self.label)}: missing_rate {self.missing_rate} unreachable with "
                f"mean gap {self.gap_len_mean_s}s"
            )
        return p_om, p_mo


DEFAULT_PROFILES = (
    ClassProfile(TertileLabel.LOW, 0.25, 1.0, 120.0, 3.0, 0.25, 0.05, 0.05),
    ClassProfile(TertileLabel.MEDIUM, 0.35, 1.0, 220.0, 3.5, 0.25, 0.25, 0.05),
    ClassProfile(TertileLabel.HIGH, 0.50, 1.0, 320.0, 4.0, 0.25, 0.50, 0.05),
)


@dataclass(frozen=True)
class SynthSpec:
    n_participants_per_class: int = 10
    session_len_samples: int = 6000
    profiles: tuple[ClassProfile, ...] = DEFAULT_PROFILES
    seed: int = 0
    signal_mode: str = "both"
    signal_traits: tuple[str, ...] = ("N",)
    fixation_jitter_px: float = 3.0
    window_len: int = 100
    config: RecordingConfig = field(default_factory=RecordingConfig)

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        object.__setattr__(self, "signal_traits", tuple(self.signal_traits))
        if self.signal_mode not in SIGNAL_MODES:
            raise InvalidSpec(f"signal_mode must be one of {SIGNAL_MODES}, got {self.signal_mode!r}")
        if sorted(int(p.label) for p in self.profiles) != [1, 2, 3]:
            raise InvalidSpec("profiles must cover the labels 1, 2 and 3 exactly once")
        if self.n_participants_per_class < 1:
            raise InvalidSpec("n_participants_per_class must be positive")
        if self.session_len_samples < max(self.window_len, 2):
            raise InvalidSpec("session_len_samples must be at least the window length")
        if not set(self.signal_traits) <= set(TRAITS) or not self.signal_traits:
            raise InvalidSpec(f"signal_traits must be a nonempty subset of {TRAITS}")
        for p in self.profiles:
            p.transition_probs(self.config.sampling_period_s)

    def profile(self, label: int) -> ClassProfile:
        return next(p for p in self.profiles if int(p.label) == int(label))

    def effective_profile(self, label: int) -> ClassProfile:
        """Profile after the signal mode has equalized dynamics or missingness."""
        own = self.profile(label)
        ref = self.profile(TertileLabel.MEDIUM)
        if self.signal_mode == "missingness-only":
            return dataclasses.replace(own, **{f: getattr(ref, f) for f in _DYNAMICS_FIELDS})
        if self.signal_mode == "dynamics-only":
            return dataclasses.replace(own, **{f: getattr(ref, f) for f in _MISSING_FIELDS})
        return own

    @classmethod
    def from_mapping(cls, d: Mapping[str, Any]) -> "SynthSpec":
        """Build from parsed YAML/JSON; unknown keys raise :class:`InvalidSpec`."""
        if not isinstance(d, Mapping):
            raise InvalidSpec("synth spec must be a mapping")
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown synth spec field(s): {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        try:
            for k, v in d.items():
                if k == "profiles":
                    kwargs[k] = tuple(_profile(p) for p in v)
                elif k == "config":
                    kwargs[k] = RecordingConfig(**v)
                elif k in ("n_participants_per_class", "session_len_samples", "seed", "window_len"):
                    if not isinstance(v, int) or isinstance(v, bool):
                        raise InvalidSpec(f"field {k!r} must be an integer, got {v!r}")
                    kwargs[k] = v
                elif k == "signal_traits":
                    kwargs[k] = tuple(v) if not isinstance(v, str) else (v,)
                else:
                    kwargs[k] = v
            return cls(**kwargs)
        except InvalidSpec:
            raise
        except (TypeError, ValueError) as exc:
            raise InvalidSpec(f"invalid synth spec: {exc}") from exc

    def to_mapping(self) -> dict[str, Any]:
        return {
            "n_participants_per_class": self.n_participants_per_class,
            "session_len_samples": self.session_len_samples,
            "seed": self.seed,
            "signal_mode": self.signal_mode,
            "signal_traits": list(self.signal_traits),
            "fixation_jitter_px": self.fixation_jitter_px,
            "window_len": self.window_len,
            "config": {
                "sampling_rate_hz": self.config.sampling_rate_hz,
                "screen_width_px": self.config.screen_width_px,
                "screen_height_px": self.config.screen_height_px,
            },
            "profiles": [
                {f.name: (int(getattr(p, f.name)) if f.name == "label" else getattr(p, f.name)) for f in dataclasses.fields(p)}
                for p in self.profiles
            ],
        }


def _profile(p) -> ClassProfile:
    if isinstance(p, ClassProfile):
        return p
    if not isinstance(p, Mapping):
        raise InvalidSpec("each profile must be a mapping")
    fields = {f.name for f in dataclasses.fields(ClassProfile)}
    missing = fields - set(p)
    extra = set(p) - fields
    if missing or extra:
        raise InvalidSpec(f"profile fields: missing {sorted(missing)}, unknown {sorted(extra)}")
    try:
        return ClassProfile(**{k: (v if k == "label" else float(v)) for k, v in p.items()})
    except (TypeError, ValueError) as exc:
        raise InvalidSpec(f"invalid profile: {exc}") from exc


@dataclass
class SynthDataset:
    spec: SynthSpec
    sessions: list[SessionSeries]
    classes: dict[str, int]
    labels: dict[str, dict[str, TertileLabel]]

    def write(self, out_dir: str | os.PathLike) -> Path:
        out = Path(out_dir)
        (out / "recordings").mkdir(parents=True, exist_ok=True)
        for s in self.sessions:
            write_recording(s, out / "recordings" / f"{s.participant_id}.csv")
        write_labels(self.labels, out / "labels.csv")
        return out


def _markov_missing(n: int, p_om: float, p_mo: float, rate: float, rng) -> np.ndarray:
    """Boolean array, True = missing, from alternating geometric run lengths."""
    missing = np.zeros(n, dtype=bool)
    if p_om <= 0.0:
        return missing
    state = rng.random() < rate  # stationary start
    t = 0
    while t < n:
        run = int(rng.geometric(p_mo if state else p_om))
        if state:
            missing[t : t + run] = True
        t += run
        state = not state
    return missing


def _gaze_path(n: int, prof: ClassProfile, spec: SynthSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    cfg = spec.config
    dt = cfg.sampling_period_s
    w, h = cfg.screen_width_px, cfg.screen_height_px
    jitter = spec.fixation_jitter_px
    margin = min(max(6.0 * jitter, 0.1 * min(w, h)), 0.25 * min(w, h))
    lo = np.array([margin, margin])
    hi = np.array([w - margin, h - margin])
    centers = np.empty((n, 2))
    pos = rng.uniform(lo, hi)
    p_end = min(dt / prof.fixation_dwell_mean_s, 1.0)
    p_micro = min(prof.saccade_rate_hz * dt, 1.0)
    t = 0
    while t < n:
        dwell = int(rng.geometric(p_end))
        seg = min(dwell, n - t)
        # corrective microsaccades: 10% of the saccade amplitude, random direction
        jumps = rng.random(seg) < p_micro
        jumps[0] = False
        ang = rng.uniform(0, 2 * np.pi, seg)
        step = 0.1 * prof.saccade_amplitude_px * np.stack([np.cos(ang), np.sin(ang)], axis=1) * jumps[:, None]
        path = np.clip(pos + np.cumsum(step, axis=0), lo, hi)
        centers[t : t + seg] = path
        pos = path[-1]
        t += seg
        # saccade: try a few directions that keep the target on screen
        for _ in range(16):
            ang = rng.uniform(0, 2 * np.pi)
            target = pos + prof.saccade_amplitude_px * np.array([np.cos(ang), np.sin(ang)])
            if np.all(target >= lo) and np.all(target <= hi):
                break
        pos = np.clip(target, lo, hi)
    xy = centers + rng.normal(0.0, jitter, size=(n, 2))
    xy = np.clip(xy, [0.0, 0.0], [w, h])
    return xy[:, 0], xy[:, 1]


def generate_session(participant_id: str, prof: ClassProfile, spec: SynthSpec, rng) -> SessionSeries:
    n = spec.session_len_samples
    dt = spec.config.sampling_period_s
    gx, gy = _gaze_path(n, prof, spec, rng)
    pupil = prof.pupil_baseline_mm + rng.normal(0.0, prof.pupil_noise_mm, n)
    pupil = np.maximum(pupil, 0.5)
    p_om, p_mo = prof.transition_probs(dt)
    miss = _markov_missing(n, p_om, p_mo, prof.missing_rate, rng)
    gx[miss] = np.nan
    gy[miss] = np.nan
    pupil[miss] = np.nan
    ts = np.arange(n) * dt
    return SessionSeries(participant_id, ts, gx, gy, pupil, spec.config)


def generate(spec: SynthSpec) -> SynthDataset:
    """Deterministic dataset for ``spec``: sessions plus per-trait tertile labels.

    Traits in ``spec.signal_traits`` carry the generative class; the other
    traits get balanced labels drawn independently of it.
    """
    n_per = spec.n_participants_per_class
    n_total = 3 * n_per
    root = np.random.SeedSequence(spec.seed)
    label_ss, *person_ss = root.spawn(n_total + 1)
    classes = {}
    sessions = []
    for idx in range(n_total):
        pid = f"p{idx:03d}"
        cls = idx % 3 + 1
        classes[pid] = cls
        rng = np.random.default_rng(person_ss[idx])
        sessions.append(generate_session(pid, spec.effective_profile(cls), spec, rng))
    label_rng = np.random.default_rng(label_ss)
    base = np.array([classes[f"p{i:03d}"] for i in range(n_total)])
    labels: dict[str, dict[str, TertileLabel]] = {pid: {} for pid in classes}
    for trait in TRAITS:
        trait_labels = base if trait in spec.signal_traits else label_rng.permutation(base)
        for i, pid in enumerate(sorted(classes)):
            labels[pid][trait] = TertileLabel(int(trait_labels[i]))
    return SynthDataset(spec, sessions, classes, labels)


def window_masks(
    dataset: SynthDataset, window_len: int = 100, stride: int = 50, segments_per_session: int = 5
) -> tuple[np.ndarray, np.ndarray]:
    """Gaze-missingness masks (N, L) of every segment-local window, with class labels."""
    masks, labels = [], []
    for s in dataset.sessions:
        m = np.isnan(s.gaze_x)
        for a, b in segment_bounds(len(s), segments_per_session):
            for st in window_starts(b - a, window_len, stride):
                masks.append(m[a + st : a + st + window_len])
                labels.append(dataset.classes[s.participant_id])
    return np.array(masks, dtype=bool).reshape(-1, window_len), np.array(labels)


def oracle_log_likelihoods(spec: SynthSpec, missing: np.ndarray) -> np.ndarray:
    """Exact log-likelihood of each window's missingness path under each class's chain.

    The path likelihood depends only on the start state and the four
    transition counts, i.e. on the number of missing samples and the number
    and lengths of gaps.
    """
    missing = np.atleast_2d(missing).astype(bool)
    prev, cur = missing[:, :-1], missing[:, 1:]
    n_oo = np.sum(~prev & ~cur, axis=1)
    n_om = np.sum(~prev & cur, axis=1)
    n_mo = np.sum(prev & ~cur, axis=1)
    n_mm = np.sum(prev & cur, axis=1)
    first = missing[:, 0]
    dt = spec.config.sampling_period_s
    out = np.empty((len(missing), 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(3):
            prof = spec.effective_profile(k + 1)
            p_om, p_mo = prof.transition_probs(dt)
            rate = prof.missing_rate
            ll = np.where(first, np.log(rate), np.log1p(-rate))
            for n_tr, p in ((n_oo, 1 - p_om), (n_om, p_om), (n_mo, p_mo), (n_mm, 1 - p_mo)):
                ll = ll + np.where(n_tr > 0, n_tr * np.log(p), 0.0)
            out[:, k] = ll
    return out


def bayes_gap_oracle(
    spec: SynthSpec,
    dataset: SynthDataset | None = None,
    window_len: int = 100,
    stride: int = 50,
    segments_per_session: int = 5,
) -> float:
    """Accuracy of the likelihood-ratio classifier on the dataset's windows.

    Reads only the missingness channel, with the known generative parameters.
    Equal likelihoods resolve to the lowest class.
    """
    if spec.signal_mode == "dynamics-only":
        raise InvalidSpec("the gap oracle needs class signal in the missingness process")
    dataset = dataset or generate(spec)
    masks, labels = window_masks(dataset, window_len, stride, segments_per_session)
    pred = np.argmax(oracle_log_likelihoods(spec, masks), axis=1) + 1
    return float(np.mean(pred == labels))
