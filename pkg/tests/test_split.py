import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazemask.errors import ClassTooSmall, ConfigError, TooFewParticipants, TooShortForSegmentation
from gazemask.split import (
    FoldPlan,
    Protocol,
    Segment,
    WindowingConfig,
    assign_folds_by_participant,
    assign_folds_stratified,
    make_windows,
    segment,
    segment_bounds,
    validation_split,
    window_starts,
)


def _lengths(T, S):
    return [b - a for a, b in segment_bounds(T, S)]


def test_segment_examples():
    assert _lengths(1000, 5) == [200] * 5
    assert _lengths(1003, 5) == [201, 201, 201, 200, 200]
    with pytest.raises(TooShortForSegmentation):
        segment("p", 4, 5)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 5000), st.integers(1, 12))
def test_segmentation_lossless(T, S):
    if T < S:
        return
    segs = segment("p", T, S)
    assert np.concatenate([np.arange(s.start, s.stop) for s in segs]).tolist() == list(range(T))
    lens = [len(s) for s in segs]
    assert set(lens) <= {T // S, -(-T // S)}
    assert lens == sorted(lens, reverse=True)


def test_windowing_config_validation():
    with pytest.raises(ConfigError):
        WindowingConfig(window_len=1)
    with pytest.raises(ConfigError):
        WindowingConfig(window_len=10, stride=11)


def test_window_examples():
    cfg = WindowingConfig(100, 50, 5)
    assert len(make_windows(Segment("p", 0, 0, 100), cfg, 1)) == 1
    assert len(make_windows(Segment("p", 0, 0, 99), cfg, 1)) == 0
    ws = make_windows(Segment("p", 3, 500, 1500), cfg, 2, fold=4)
    assert len(ws) == 19
    assert ws[0].start_index == 500 and ws[-1].stop_index == 1500
    assert all(w.label == 2 and w.fold == 4 and w.segment_id == 3 for w in ws)


def test_windows_stay_inside_segment():
    cfg = WindowingConfig(100, 30, 5)
    seg = Segment("p", 1, 237, 611)
    for w in make_windows(seg, cfg, 1):
        assert seg.start <= w.start_index and w.stop_index <= seg.stop


def _units(counts):
    out = []
    for label, n in enumerate(counts, start=1):
        out += [(f"u{label}_{i}", label) for i in range(n)]
    return out


def _fold_class_counts(plan, n_folds=5):
    c = np.zeros((n_folds, 4), dtype=int)
    for unit, f in plan.assignments.items():
        c[f, plan.labels[unit]] += 1
    return c[:, 1:]


def test_stratified_exact_deal():
    plan = assign_folds_stratified(_units([5, 5, 5]), 5, seed=0)
    assert np.all(_fold_class_counts(plan) == 1)


def test_stratified_seed_changes_members_not_counts():
    a = assign_folds_stratified(_units([7, 6, 5]), 5, seed=0)
    b = assign_folds_stratified(_units([7, 6, 5]), 5, seed=1)
    assert np.array_equal(_fold_class_counts(a), _fold_class_counts(b))
    assert a.assignments != b.assignments


def test_stratified_class_too_small():
    with pytest.raises(ClassTooSmall):
        assign_folds_stratified(_units([7, 5, 3]), 5, seed=0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(5, 30), min_size=3, max_size=3), st.integers(0, 2**31), st.integers(2, 5))
def test_stratified_proportions(counts, seed, k):
    plan = assign_folds_stratified(_units(counts), k, seed)
    c = _fold_class_counts(plan, k)
    for j, n in enumerate(counts):
        assert c[:, j].sum() == n
        assert c[:, j].max() - c[:, j].min() <= 1
    assert plan == assign_folds_stratified(_units(counts), k, seed)


def test_participant_folds_25():
    plan = assign_folds_by_participant(_units([9, 8, 8]), 5, seed=3)
    assert np.bincount(list(plan.assignments.values())).tolist() == [5] * 5


def test_participant_imbalance_warns():
    with pytest.warns(UserWarning):
        plan = assign_folds_by_participant(_units([6, 6, 3]), 5, seed=0)
    assert len(set(plan.assignments.values())) == 5


def test_participant_loso_rejected():
    with pytest.raises(TooFewParticipants):
        assign_folds_by_participant(_units([9, 8, 8]), 25, seed=0)


def test_fold_plan_csv_round_trip():
    plan = assign_folds_stratified(_units([5, 6, 7]), 5, seed=11)
    text = plan.to_csv()
    assert text.splitlines()[0] == "unit_id,unit_kind,fold,label,seed"
    back = FoldPlan.from_csv(text)
    assert back.assignments == plan.assignments and back.labels == plan.labels and back.seed == 11
    assert back.content_hash() == plan.content_hash()


def test_fold_plan_requires_nonempty_folds():
    with pytest.raises(ConfigError):
        FoldPlan(Protocol.SEGMENT, {"a": 0, "b": 2}, {"a": 1, "b": 1}, 0, 3)


def test_fold_of_by_protocol():
    seg = Segment("p1", 2, 0, 10)
    assert FoldPlan(Protocol.SEGMENT, {"p1#2": 1, "x": 0}, {"p1#2": 1, "x": 1}, 0).fold_of(seg) == 1
    assert FoldPlan(Protocol.PARTICIPANT, {"p1": 0, "p2": 1}, {"p1": 1, "p2": 1}, 0).fold_of(seg) == 0


def test_protocol_parse():
    assert Protocol.parse("segment") is Protocol.SEGMENT
    assert Protocol.parse("ParticipantStratified") is Protocol.PARTICIPANT
    with pytest.raises(ValueError):
        Protocol.parse("loso")


def test_validation_split_stratified():
    units = _units([10, 10, 10])
    fit, val = validation_split(units, 0.2, seed=5)
    assert len(val) == 6 and len(fit) == 24
    assert not set(fit) & set(val)
    labels = dict(units)
    assert sorted(labels[u] for u in val) == [1, 1, 2, 2, 3, 3]


@pytest.mark.parametrize("L", [10, 100])
@pytest.mark.parametrize("stride", [5, 50])
def test_window_count_closed_form(L, stride):
    for T in range(1, 501):
        starts = window_starts(T, L, stride)
        brute = [s for s in range(T) if s % stride == 0 and s + L <= T]
        assert list(starts) == brute
        assert len(starts) == ((T - L) // stride + 1 if T >= L else 0)
