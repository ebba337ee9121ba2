"""Tests for the deletion + local shuffle corruption."""

import numpy as np
import pytest

from config import ExperimentConfig
from errors import UsageError
from noise_model import NoiseConfig, corrupt
from subword import IdSequence
from text_corpus import Lang


def sequence(n, anchored=()):
    ids = tuple(range(5, 5 + n))
    return IdSequence(ids, tuple(i in anchored for i in range(n)), Lang.SRC)


@pytest.mark.parametrize("seed", range(10))
def test_shuffle_displacement_bounded_by_window(seed):
    ids = sequence(20)
    cfg = NoiseConfig(drop_prob=0.0, shuffle_window=3, rng=np.random.default_rng(seed))
    out = corrupt(ids, cfg)
    assert sorted(out.ids) == list(ids.ids)
    for position, token in enumerate(out.ids):
        assert abs(position - ids.ids.index(token)) <= 3


def test_no_noise_is_identity():
    ids = sequence(8, anchored={2})
    out = corrupt(ids, NoiseConfig(drop_prob=0.0, shuffle_window=0))
    assert out == ids


def test_deletion_keeps_order_without_shuffle():
    ids = sequence(30)
    out = corrupt(ids, NoiseConfig(drop_prob=0.5, shuffle_window=0, rng=np.random.default_rng(1)))
    assert 0 < len(out) < 30
    assert list(out.ids) == sorted(out.ids)


def test_never_deletes_everything():
    ids = sequence(3)
    for seed in range(20):
        out = corrupt(ids, NoiseConfig(drop_prob=0.99, shuffle_window=2, rng=np.random.default_rng(seed)))
        assert len(out) >= 1


def test_special_tokens_survive_deletion():
    ids = IdSequence.plain([1, 5, 6, 7, 2], Lang.TGT)
    out = corrupt(ids, NoiseConfig(drop_prob=0.9, shuffle_window=0, rng=np.random.default_rng(4)))
    assert out.ids[0] == 1 and out.ids[-1] == 2


def test_anchor_flags_travel_with_tokens():
    ids = sequence(12, anchored={0, 5, 9})
    out = corrupt(ids, NoiseConfig(drop_prob=0.2, shuffle_window=3, rng=np.random.default_rng(7)))
    for token, flagged in zip(out.ids, out.anchor_mask):
        assert flagged == (token - 5 in {0, 5, 9})
    assert out.lang == Lang.SRC


def test_empty_sequence_passes_through():
    empty = IdSequence.plain([], Lang.SRC)
    assert corrupt(empty, NoiseConfig()) is empty


def test_same_seed_same_corruption():
    ids = sequence(15)
    a = corrupt(ids, NoiseConfig(rng=np.random.default_rng(3)))
    b = corrupt(ids, NoiseConfig(rng=np.random.default_rng(3)))
    assert a == b


def test_invalid_settings():
    with pytest.raises(UsageError):
        NoiseConfig(drop_prob=1.0)
    with pytest.raises(UsageError):
        NoiseConfig(shuffle_window=-1)


def test_from_config_reads_noise_section():
    config = ExperimentConfig({'noise.drop_prob': 0.25, 'noise.shuffle_window': 1})
    cfg = NoiseConfig.from_config(config)
    assert cfg.drop_prob == 0.25 and cfg.shuffle_window == 1
