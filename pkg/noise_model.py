"""
Denoising corruption: random token deletion followed by a bounded local shuffle.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from errors import UsageError
from subword import IdSequence, SpecialIds

logger = logging.getLogger(__name__)


@dataclass
class NoiseConfig:
    drop_prob: float = 0.1
    shuffle_window: int = 3
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    special_ids: SpecialIds = field(default_factory=SpecialIds)

    def __post_init__(self):
        if not 0.0 <= self.drop_prob < 1.0:
            raise UsageError(f"drop_prob must be in [0, 1), got {self.drop_prob}")
        if self.shuffle_window < 0:
            raise UsageError(f"shuffle_window must be >= 0, got {self.shuffle_window}")

    @classmethod
    def from_config(cls, config, rng: Optional[np.random.Generator] = None) -> 'NoiseConfig':
        noise = config.section('noise')
        return cls(
            drop_prob=float(noise['drop_prob']),
            shuffle_window=int(noise['shuffle_window']),
            rng=rng if rng is not None else config.rng('noise'),
        )


def corrupt(ids: IdSequence, cfg: NoiseConfig) -> IdSequence:
    """
    Delete then locally permute tokens.

    Special tokens are never deleted. If every deletable token was dropped,
    one of them is restored at random. Each survivor ends at most
    shuffle_window positions from where it stood after deletion; anchor
    flags move with their tokens.
    """
    n = len(ids)
    if n == 0:
        return ids

    specials = cfg.special_ids.as_set()
    deletable = np.array([i not in specials for i in ids.ids], dtype=bool)
    keep = np.ones(n, dtype=bool)
    if cfg.drop_prob > 0.0:
        dropped = (cfg.rng.random(n) < cfg.drop_prob) & deletable
        keep = ~dropped
        if not keep.any():
            keep[int(cfg.rng.choice(np.flatnonzero(deletable)))] = True

    survivors: List[int] = list(np.flatnonzero(keep))
    if cfg.shuffle_window > 0 and len(survivors) > 1:
        keys = np.arange(len(survivors)) + cfg.rng.uniform(0.0, cfg.shuffle_window + 1, size=len(survivors))
        order = np.argsort(keys, kind='stable')
        survivors = [survivors[i] for i in order]

    return IdSequence(
        tuple(ids.ids[i] for i in survivors),
        tuple(ids.anchor_mask[i] for i in survivors),
        ids.lang,
    )
