"""Tests for config resolution, coercion and named random streams."""

import json

import numpy as np
import pytest

from config import DEFAULTS, ExperimentConfig, model_preset, named_rng, parse_overrides
from errors import UsageError


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv('ANCHORMT_SEED', raising=False)
    monkeypatch.delenv('ANCHORMT_JOBS', raising=False)


def write_json(path, values):
    path.write_text(json.dumps(values), encoding='utf-8')
    return path


def test_defaults_and_nested_values():
    config = ExperimentConfig({'at': {'batch_size': 8}, 'model.dropout': 0.0})
    assert config['at.batch_size'] == 8
    assert config['model.dropout'] == 0.0
    assert config['model.model_dim'] == DEFAULTS['model.model_dim']
    assert config.section('at')['batch_size'] == 8


def test_unknown_keys_are_rejected():
    with pytest.raises(UsageError, match="at.bogus"):
        ExperimentConfig({'at.bogus': 1})
    with pytest.raises(UsageError):
        ExperimentConfig()['nope']


@pytest.mark.parametrize("key, raw, expected", [
    ('at.batch_size', '16', 16),
    ('at.anchoring', 'false', False),
    ('optim.lr', 1, 1.0),
    ('optim.lr', '2e-4', 2e-4),
    ('eval.ks', '[1, 3]', [1, 3]),
    ('corpus.max_sentences', '100', 100),
    ('model.preset', 'base', 'base'),
])
def test_values_are_coerced_to_default_types(key, raw, expected):
    assert ExperimentConfig({key: raw})[key] == expected


@pytest.mark.parametrize("key, raw", [
    ('at.batch_size', 1.5),
    ('at.batch_size', True),
    ('at.anchoring', 1),
    ('optim.lr', 'fast'),
    ('eval.ks', 3),
])
def test_bad_values_are_usage_errors(key, raw):
    with pytest.raises(UsageError):
        ExperimentConfig({key: raw})


def test_load_precedence(tmp_path, monkeypatch):
    path = write_json(tmp_path / "exp.json", {'model': {'preset': 'base', 'num_heads': 4}, 'seed': 5})
    monkeypatch.setenv('ANCHORMT_JOBS', '3')

    config = ExperimentConfig.load(path, {'seed': '9'})
    assert config['model.model_dim'] == 512
    assert config['model.num_heads'] == 4
    assert config['optim.warmup_steps'] == 4000
    assert config['seed'] == 9
    assert config['jobs'] == 3


def test_config_file_beats_environment(tmp_path, monkeypatch):
    monkeypatch.setenv('ANCHORMT_SEED', '99')
    assert ExperimentConfig.load()['seed'] == 99
    path = write_json(tmp_path / "exp.json", {'seed': 5})
    assert ExperimentConfig.load(path)['seed'] == 5


def test_load_errors(tmp_path):
    with pytest.raises(UsageError):
        ExperimentConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding='utf-8')
    with pytest.raises(UsageError, match="not valid JSON"):
        ExperimentConfig.load(bad)
    with pytest.raises(UsageError, match="Unknown model preset"):
        ExperimentConfig.load(overrides={'model.preset': 'huge'})


def test_presets():
    assert model_preset('desk')['model.model_dim'] == 64
    assert model_preset('large')['model.num_layers'] == 6
    preset = model_preset('base')
    preset['model.model_dim'] = 1
    assert model_preset('base')['model.model_dim'] == 512


def test_parse_overrides():
    assert parse_overrides(['at.batch_size=8', ' seed = 3 ', 'x=a=b']) == {
        'at.batch_size': '8', 'seed': '3', 'x': 'a=b'
    }
    assert parse_overrides(None) == {}
    with pytest.raises(UsageError):
        parse_overrides(['seed'])


def test_with_overrides_copies():
    base = ExperimentConfig()
    changed = base.with_overrides(optim__lr=0.01, at__batch_size=4)
    assert changed['optim.lr'] == 0.01 and changed['at.batch_size'] == 4
    assert base['optim.lr'] == DEFAULTS['optim.lr']


def test_named_streams_are_stable_and_independent():
    config = ExperimentConfig({'seed': 3})
    a = config.rng("at.tgt_view.batches").integers(0, 1 << 30, size=5)
    b = config.rng("at.tgt_view.batches").integers(0, 1 << 30, size=5)
    c = config.rng("at.src_view.batches").integers(0, 1 << 30, size=5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    np.testing.assert_array_equal(
        named_rng(3, "at.tgt_view.batches").integers(0, 1 << 30, size=5), a
    )
    assert not np.array_equal(named_rng(4, "at.tgt_view.batches").integers(0, 1 << 30, size=5), a)


def test_to_dict_is_sorted_and_json_ready():
    values = ExperimentConfig().to_dict()
    assert list(values) == sorted(values)
    json.dumps(values)
