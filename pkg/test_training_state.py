"""Tests for phase transitions and plateau detection."""

import pytest

from errors import UsageError
from training_state import ConvergenceTracker, TrainingPhase, TrainState


def test_forward_transitions_are_recorded():
    state = TrainState(phase=TrainingPhase.ACP_PRETRAIN, name="demo")
    state.transition_to(TrainingPhase.MONO_VIEW)
    state.transition_to(TrainingPhase.CONVERGED)
    assert state.phase == TrainingPhase.CONVERGED
    assert state.transition_count == 2
    assert state.phase_history == ["acp_pretrain", "mono_view", "converged"]


def test_backward_and_self_transitions_are_rejected():
    state = TrainState(phase=TrainingPhase.BIVIEW_COMBINE)
    with pytest.raises(UsageError):
        state.transition_to(TrainingPhase.MONO_VIEW)
    with pytest.raises(UsageError):
        state.transition_to(TrainingPhase.BIVIEW_COMBINE)


def test_tracker_converges_after_patience_flat_evaluations():
    tracker = ConvergenceTracker(patience=3, min_delta=0.2)
    assert tracker.update(10.0)
    assert tracker.update(10.5)
    assert not tracker.update(10.6)
    assert not tracker.update(10.4)
    assert not tracker.converged
    assert not tracker.update(10.7)
    assert tracker.converged
    assert tracker.best == 10.5


def test_improvement_resets_patience():
    tracker = ConvergenceTracker(patience=2, min_delta=0.0)
    tracker.update(1.0)
    tracker.update(1.0)
    tracker.update(2.0)
    assert tracker.bad_evaluations == 0
    assert not tracker.converged


def test_tracker_validation():
    with pytest.raises(UsageError):
        ConvergenceTracker(patience=0)
    with pytest.raises(UsageError):
        ConvergenceTracker(min_delta=-1)


def test_to_dict_shape():
    data = TrainState(name="tgt_view").to_dict()
    assert data['name'] == "tgt_view"
    assert data['phase'] == "mono_view"
    assert data['optimizer']['step'] == 0
    assert data['convergence']['converged'] is False
