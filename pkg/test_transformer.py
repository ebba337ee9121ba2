"""Tests for the shared-layer encoder-decoder model."""

import numpy as np
import pytest

from errors import DataError, UsageError
from numerics import AdamState, backward, no_grad, precision, zero_grads
from subword import IdSequence, apply_bpe
from text_corpus import Lang
from transformer import (
    ModelConfig,
    SeqModel,
    ShareSpec,
    TrainingPair,
    build_model,
    decode_greedy,
    encode,
    greedy_decode_batch,
    loss_on_batch,
    pad_batch,
    train_step,
)


def pair(src_ids, tgt_ids, in_lang=Lang.SRC, out_lang=Lang.TGT, weight=1.0):
    return TrainingPair(
        source=IdSequence.plain(src_ids, in_lang),
        target=IdSequence.plain(tgt_ids, out_lang),
        input_lang=in_lang,
        output_lang=out_lang,
        weight=weight,
    )


# ==================== STRUCTURE ====================

def test_shared_layers_are_one_object(tiny_model):
    enc = tiny_model.encoder_layers
    dec = tiny_model.decoder_layers
    assert enc[Lang.SRC][0] is not enc[Lang.TGT][0]
    assert enc[Lang.SRC][1] is enc[Lang.TGT][1]
    assert dec[Lang.SRC][0] is dec[Lang.TGT][0]
    assert dec[Lang.SRC][1] is not dec[Lang.TGT][1]


def test_mutating_shared_layer_through_src_path_changes_tgt_output(tiny_model):
    ids = IdSequence.plain([5, 6, 7, 8], Lang.TGT)
    before = encode(tiny_model, ids, Lang.TGT)[-1]
    tiny_model.encoder_layers[Lang.SRC][1].feed_forward.outer.weight.data += 0.5
    after = encode(tiny_model, ids, Lang.TGT)[-1]
    assert not np.allclose(before, after)


def test_private_layer_does_not_touch_other_language(tiny_model):
    ids = IdSequence.plain([5, 6, 7], Lang.TGT)
    before = encode(tiny_model, ids, Lang.TGT)[0]
    tiny_model.encoder_layers[Lang.SRC][0].feed_forward.outer.weight.data += 0.5
    after = encode(tiny_model, ids, Lang.TGT)[0]
    np.testing.assert_array_equal(before, after)


def test_embeddings_are_tied(tiny_model):
    assert tiny_model.output_weight is tiny_model.embedding
    tiny_model.embedding.data[7, 0] = 3.25
    assert tiny_model.output_weight.data[7, 0] == 3.25


def test_named_parameters_list_each_tensor_once(tiny_model):
    params = tiny_model.named_parameters()
    assert len({id(p) for p in params.values()}) == len(params)
    assert 'encoder.layers.1.attention.query.weight' in params
    assert 'encoder.src.layers.0.attention.query.weight' in params
    assert 'decoder.tgt.layers.1.feed_forward.inner.weight' in params


def test_disabling_sharing_gives_more_parameters(model_config):
    shared = SeqModel(model_config, np.random.default_rng(0))
    model_config.share_spec = ShareSpec(enabled=False)
    private = SeqModel(model_config, np.random.default_rng(0))
    assert len(private.parameters()) > len(shared.parameters())
    assert private.encoder_layers[Lang.SRC][1] is not private.encoder_layers[Lang.TGT][1]


def test_encoder_parameters_exclude_decoder(tiny_model):
    names = tiny_model.encoder_parameters()
    assert 'embedding' in names and 'lang_embedding' in names
    assert not any(name.startswith('decoder.') for name in names)


def test_same_seed_same_weights(model_config):
    a = SeqModel(model_config, np.random.default_rng(3)).state_dict()
    b = SeqModel(model_config, np.random.default_rng(3)).state_dict()
    assert list(a) == list(b)
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_config_validation():
    with pytest.raises(UsageError):
        ModelConfig(vocab_size=10, model_dim=10, num_heads=3).validate()
    with pytest.raises(UsageError):
        ModelConfig(vocab_size=10, num_layers=2, share_spec=ShareSpec(encoder_private_bottom=3)).validate()


def test_model_config_round_trip_and_from_config(tiny_config):
    config = ModelConfig.from_config(tiny_config, vocab_size=50)
    assert config.num_layers == 2 and config.model_dim == 16
    assert ModelConfig.from_dict(config.to_dict()) == config
    assert build_model(tiny_config, 50, np.random.default_rng(0)).config.vocab_size == 50


# ==================== STATE ====================

def test_load_state_dict_reports_every_mismatch(tiny_model):
    arrays = tiny_model.state_dict()
    arrays['embedding'] = np.zeros((3, 3))
    del arrays['lang_embedding']
    arrays['extra'] = np.zeros(1)
    with pytest.raises(DataError) as info:
        tiny_model.load_state_dict(arrays)
    message = str(info.value)
    assert "'embedding'" in message and "lang_embedding" in message and "extra" in message


def test_snapshot_is_independent_and_keeps_sharing(tiny_model):
    copy = tiny_model.snapshot()
    assert copy.encoder_layers[Lang.SRC][1] is copy.encoder_layers[Lang.TGT][1]
    copy.embedding.data += 1.0
    assert not np.array_equal(copy.embedding.data, tiny_model.embedding.data)


def test_pad_batch():
    ids, is_pad = pad_batch([[5, 6, 7], [8]], pad_id=0)
    assert ids.tolist() == [[5, 6, 7], [8, 0, 0]]
    assert is_pad.tolist() == [[False, False, False], [False, True, True]]


# ==================== ENCODE / DECODE ====================

def test_encode_returns_one_state_per_layer(tiny_model):
    states = encode(tiny_model, IdSequence.plain([5, 6, 7], Lang.SRC), Lang.SRC)
    assert len(states) == 2
    assert all(s.shape == (3, 16) for s in states)


def test_encode_errors(tiny_model):
    with pytest.raises(DataError):
        encode(tiny_model, IdSequence.plain([], Lang.SRC), Lang.SRC)
    with pytest.raises(DataError):
        encode(tiny_model, IdSequence.plain([5] * 30, Lang.SRC), Lang.SRC)
    with pytest.raises(DataError):
        encode(tiny_model, IdSequence.plain([tiny_model.config.vocab_size], Lang.SRC), Lang.SRC)


def test_greedy_decode_never_emits_pad_bos_or_mask(tiny_model):
    s = tiny_model.special_ids
    sources = [IdSequence.plain([5, 6, 7, 8], Lang.SRC), IdSequence.plain([9, 10], Lang.SRC)]
    outputs = greedy_decode_batch(tiny_model, sources, Lang.SRC, Lang.TGT, max_out=10)
    for out in outputs:
        assert out.lang == Lang.TGT
        assert len(out) <= 10
        assert not {s.pad, s.bos, s.mask} & set(out.ids)


def test_batch_decode_matches_single_decode(tiny_model):
    sources = [IdSequence.plain([5, 6, 7, 8], Lang.SRC), IdSequence.plain([9, 10], Lang.SRC)]
    batched = greedy_decode_batch(tiny_model, sources, Lang.SRC, Lang.TGT, max_out=6)
    singles = [decode_greedy(tiny_model, src, Lang.SRC, Lang.TGT, max_out=6) for src in sources]
    assert [b.ids for b in batched] == [s.ids for s in singles]


def test_empty_source_decodes_to_empty(tiny_model):
    out = decode_greedy(tiny_model, IdSequence.plain([], Lang.SRC), Lang.SRC, Lang.TGT)
    assert out.ids == ()


# ==================== TRAINING ====================

def test_random_init_loss_near_log_vocab():
    vocab = 4000
    config = ModelConfig(vocab_size=vocab, num_layers=2, model_dim=16, ff_dim=32, num_heads=2, max_len=16, dropout=0.0)
    model = SeqModel(config, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    batch = [pair(rng.integers(5, vocab, size=8), rng.integers(5, vocab, size=8)) for _ in range(8)]
    assert loss_on_batch(model, batch) == pytest.approx(np.log(vocab), rel=0.1)


def test_train_step_overfits_single_pair(tiny_model, codec, src_corpus, tgt_corpus):
    example = TrainingPair(
        source=apply_bpe(codec, src_corpus[0]),
        target=apply_bpe(codec, tgt_corpus[0]),
        input_lang=Lang.SRC,
        output_lang=Lang.TGT,
    )
    state = AdamState(lr=0.02, warmup_steps=0)
    first = loss_on_batch(tiny_model, [example])
    for _ in range(100):
        train_step(tiny_model, [example], state)
    assert state.step == 100
    assert loss_on_batch(tiny_model, [example]) < min(0.05, first)


def test_train_step_mixes_directions_and_weights(tiny_model):
    batch = [
        pair([5, 6, 7], [8, 9]),
        pair([10, 11], [12, 13, 14], Lang.TGT, Lang.SRC, weight=0.5),
    ]
    state = AdamState(lr=0.01, warmup_steps=0)
    loss = train_step(tiny_model, batch, state)
    assert np.isfinite(loss) and loss > 0
    assert state.step == 1


def test_train_step_skips_non_finite(tiny_model):
    tiny_model.embedding.data[5] = np.inf
    state = AdamState(lr=0.01, warmup_steps=0)
    loss = train_step(tiny_model, [pair([5, 6], [7, 8])], state)
    assert np.isnan(loss)
    assert state.skipped_steps == 1
    assert state.step == 0


def test_empty_batch_is_rejected(tiny_model):
    with pytest.raises(UsageError):
        train_step(tiny_model, [], AdamState())
    with pytest.raises(UsageError):
        loss_on_batch(tiny_model, [])


def test_empty_source_in_training_is_rejected(tiny_model):
    with pytest.raises(DataError):
        loss_on_batch(tiny_model, [pair([], [5])])


def test_micro_model_gradients_match_finite_differences():
    """End-to-end check on sampled entries of a 2-layer, dim-8 model."""
    eps = 1e-6
    with precision(np.float64):
        config = ModelConfig(vocab_size=12, num_layers=2, model_dim=8, ff_dim=16, num_heads=2, max_len=8, dropout=0.0)
        model = SeqModel(config, np.random.default_rng(0))
        batch = [pair([5, 6, 7], [8, 9, 10]), pair([11, 5], [6, 7], Lang.TGT, Lang.SRC)]
        params = model.named_parameters()
        zero_grads(params.values())
        total, _ = model.batch_loss(batch)
        backward(total, params.values())

        rng = np.random.default_rng(1)
        names = [
            'embedding',
            'encoder.layers.1.attention.query.weight',
            'encoder.src.layers.0.feed_forward.inner.weight',
            'decoder.layers.0.cross_attention.value.weight',
            'decoder.tgt.layers.1.feed_forward.outer.weight',
        ]
        for name in names:
            p = params[name]
            flat = p.data.reshape(-1)
            picks = rng.choice(flat.size, size=min(12, flat.size), replace=False)
            analytic = p.grad.reshape(-1)[picks]
            numeric = np.zeros(len(picks))
            for j, i in enumerate(picks):
                saved = flat[i]
                flat[i] = saved + eps
                with no_grad():
                    plus = model.batch_loss(batch)[0].item()
                flat[i] = saved - eps
                with no_grad():
                    minus = model.batch_loss(batch)[0].item()
                flat[i] = saved
                numeric[j] = (plus - minus) / (2 * eps)
            error = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
            assert error < 1e-3, name
