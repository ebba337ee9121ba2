"""Tests for the model checkpoint store."""

import json

import numpy as np
import pytest

from checkpoints import CheckpointStore, sidecar_path
from errors import DataError, UsageError
from numerics import AdamState
from subword import IdSequence
from text_corpus import Lang
from transformer import SeqModel, ShareSpec, TrainingPair, train_step


def trained_optimizer(model):
    state = AdamState(lr=0.01, warmup_steps=0)
    example = TrainingPair(
        source=IdSequence.plain([5, 6, 7], Lang.SRC),
        target=IdSequence.plain([8, 9], Lang.TGT),
        input_lang=Lang.SRC,
        output_lang=Lang.TGT,
    )
    train_step(model, [example], state)
    return state


def test_model_survives_save_and_load(tmp_path, tiny_model):
    store = CheckpointStore(tmp_path)
    path = store.save_model(tiny_model, "models/at.bin", extra={'view': 'tgt_view'})
    assert path == tmp_path / "models" / "at.bin"

    loaded = store.load_model("models/at.bin", expected_kind="seq_model")
    assert loaded.config == tiny_model.config
    original = tiny_model.state_dict()
    for name, array in loaded.state_dict().items():
        assert np.array_equal(array, original[name])
    assert loaded.encoder_layers[Lang.SRC][1] is loaded.encoder_layers[Lang.TGT][1]
    assert store.read_sidecar(path)['extra'] == {'view': 'tgt_view'}


def test_optimizer_moments_ride_along(tmp_path, tiny_model):
    state = trained_optimizer(tiny_model)
    store = CheckpointStore(tmp_path)
    store.save_model(tiny_model, "at.bin", optimizer=state)

    restored = store.load_optimizer("at.bin")
    assert restored.step == 1 and restored.lr == 0.01
    assert set(restored.first_moment) == set(state.first_moment)
    name = next(iter(state.second_moment))
    assert np.array_equal(restored.second_moment[name], state.second_moment[name])
    # moments are not mistaken for model tensors
    store.load_model("at.bin")


def test_no_optimizer_gives_none(tmp_path, tiny_model):
    store = CheckpointStore(tmp_path)
    store.save_model(tiny_model, "at.bin")
    assert store.load_optimizer("at.bin") is None


def test_kind_checks(tmp_path, tiny_model):
    store = CheckpointStore(tmp_path)
    with pytest.raises(UsageError):
        store.save_model(tiny_model, "x.bin", kind="other")
    store.save_model(tiny_model, "enc.bin", kind="acp_encoder")
    with pytest.raises(DataError, match="acp_encoder"):
        store.load_model("enc.bin", expected_kind="seq_model")


def test_sidecar_errors(tmp_path, tiny_model):
    store = CheckpointStore(tmp_path)
    with pytest.raises(DataError):
        store.load_model("missing.bin")

    path = store.save_model(tiny_model, "at.bin")
    side = sidecar_path(path)
    data = json.loads(side.read_text(encoding='utf-8'))
    data['format_version'] = 99
    side.write_text(json.dumps(data), encoding='utf-8')
    with pytest.raises(DataError, match="format_version"):
        store.load_model("at.bin")


def test_share_spec_mismatch_is_reported(tmp_path, model_config, tiny_model):
    store = CheckpointStore(tmp_path)
    path = store.save_model(tiny_model, "at.bin")
    model_config.share_spec = ShareSpec(enabled=False)
    private = SeqModel(model_config, np.random.default_rng(0))
    arrays, _ = store.load_arrays(path)
    with pytest.raises(DataError, match="missing tensor"):
        private.load_state_dict(arrays)


def test_list_checkpoints_skips_other_json(tmp_path, tiny_model):
    store = CheckpointStore(tmp_path)
    store.save_model(tiny_model, "b/at.bin")
    store.save_model(tiny_model, "a/enc.bin", kind="acp_encoder")
    (tmp_path / "config.json").write_text('{"seed": 1}', encoding='utf-8')
    entries = store.list_checkpoints()
    assert [e['kind'] for e in entries] == ["acp_encoder", "seq_model"]
    assert entries[1]['path'] == str(tmp_path / "b" / "at.bin")
