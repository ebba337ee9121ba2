"""
Training Phase Machine

Tracks which phase a training run is in and the mutable state carried across
rounds: optimizer moments, round counter, RNG handle and the convergence
tracker that decides when validation BLEU has plateaued.

Phase Flow: ACP_PRETRAIN -> MONO_VIEW -> BIVIEW_COMBINE -> CONVERGED
(runs may enter at any phase and skip forward, never backward)
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from errors import UsageError
from numerics import AdamState

logger = logging.getLogger(__name__)


class TrainingPhase(Enum):
    """Training phases with explicit forward progression."""
    ACP_PRETRAIN = "acp_pretrain"
    MONO_VIEW = "mono_view"
    BIVIEW_COMBINE = "biview_combine"
    CONVERGED = "converged"


PHASE_ORDER = [
    TrainingPhase.ACP_PRETRAIN,
    TrainingPhase.MONO_VIEW,
    TrainingPhase.BIVIEW_COMBINE,
    TrainingPhase.CONVERGED,
]

# Phase display names for logs and run listings
PHASE_DISPLAY_NAMES = {
    TrainingPhase.ACP_PRETRAIN: "ACP pretraining",
    TrainingPhase.MONO_VIEW: "Anchored training",
    TrainingPhase.BIVIEW_COMBINE: "Bi-view combination",
    TrainingPhase.CONVERGED: "Converged",
}


@dataclass
class ConvergenceTracker:
    """
    Plateau detection on a higher-is-better validation metric.

    An evaluation improves when it beats the best so far by more than
    min_delta; the run has converged after ``patience`` evaluations in a row
    without improvement.
    """
    patience: int = 5
    min_delta: float = 0.2
    best: Optional[float] = None
    bad_evaluations: int = 0
    history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.patience < 1:
            raise UsageError(f"patience must be >= 1, got {self.patience}")
        if self.min_delta < 0:
            raise UsageError(f"min_delta must be >= 0, got {self.min_delta}")

    def update(self, metric: float) -> bool:
        """
        Record one validation result.

        Returns:
            True if the metric improved on the best by more than min_delta
        """
        self.history.append(float(metric))
        if self.best is None or metric > self.best + self.min_delta:
            self.best = float(metric)
            self.bad_evaluations = 0
            return True
        self.bad_evaluations += 1
        return False

    @property
    def converged(self) -> bool:
        return self.bad_evaluations >= self.patience

    def to_dict(self) -> dict:
        return {
            'patience': self.patience,
            'min_delta': self.min_delta,
            'best': self.best,
            'bad_evaluations': self.bad_evaluations,
            'evaluations': len(self.history),
            'converged': self.converged,
        }


@dataclass
class TrainState:
    """
    Mutable state of one training run.

    Phase changes go through transition_to so each one is logged and
    counted.
    """
    phase: TrainingPhase = TrainingPhase.MONO_VIEW
    optimizer: AdamState = field(default_factory=AdamState)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    convergence: ConvergenceTracker = field(default_factory=ConvergenceTracker)
    name: str = "run"

    round: int = 0
    skipped_rounds: int = 0
    transition_count: int = 0
    phase_history: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.phase_history.append(self.phase.value)

    def transition_to(self, new_phase: TrainingPhase):
        """
        Move to a later phase.

        Args:
            new_phase: Target phase; must come after the current one
        """
        if not self.can_transition_to(new_phase):
            raise UsageError(
                f"Illegal phase transition {self.phase.value} -> {new_phase.value}"
            )
        old_phase = self.phase
        self.phase = new_phase
        self.transition_count += 1
        self.phase_history.append(new_phase.value)

        logger.info(
            f"[STATE] {self.name}: {PHASE_DISPLAY_NAMES[old_phase]} -> {PHASE_DISPLAY_NAMES[new_phase]} "
            f"(round={self.round}, optimizer step={self.optimizer.step})"
        )

    def can_transition_to(self, target: TrainingPhase) -> bool:
        return PHASE_ORDER.index(target) > PHASE_ORDER.index(self.phase)

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'phase': self.phase.value,
            'round': self.round,
            'skipped_rounds': self.skipped_rounds,
            'transitions': self.transition_count,
            'phase_history': list(self.phase_history),
            'optimizer': self.optimizer.to_dict(),
            'convergence': self.convergence.to_dict(),
        }
