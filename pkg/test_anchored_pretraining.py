"""Tests for anchored masked-LM pretraining and encoder transfer."""

import numpy as np
import pytest

from anchored_pretraining import (
    AcpConfig,
    acp_dictionary,
    build_acp_corpus,
    init_at_from_acp,
    mask_batch,
    mlm_loss,
    mlm_step,
    pretrain_mlm,
)
from errors import DataError, UsageError
from numerics import AdamState, no_grad
from subword import IdSequence
from text_corpus import Lang
from training_state import TrainingPhase
from transformer import ModelConfig, SeqModel, ShareSpec


@pytest.fixture
def acp_corpus(corpora, toy_dict, codec):
    return build_acp_corpus(corpora, toy_dict, codec, np.random.default_rng(0), max_len=24)


def test_acp_config_validation_and_from_config(tiny_config):
    cfg = AcpConfig.from_config(tiny_config)
    assert (cfg.steps, cfg.batch_size, cfg.pivot, cfg.anchored_lang) == (3, 4, Lang.TGT, Lang.SRC)
    with pytest.raises(UsageError):
        AcpConfig(mask_prob=0.0)
    with pytest.raises(UsageError):
        AcpConfig(split_mask=0.5, split_random=0.1, split_keep=0.1)


def test_corpus_is_anchored_src_plus_genuine_tgt(acp_corpus):
    assert len(acp_corpus) == 12
    src = [s for s in acp_corpus if s.lang == Lang.SRC]
    tgt = [s for s in acp_corpus if s.lang == Lang.TGT]
    assert len(src) == 6 and len(tgt) == 6
    assert all(any(s.anchor_mask) for s in src)
    assert not any(any(t.anchor_mask) for t in tgt)


def test_corpus_order_is_seeded(corpora, toy_dict, codec):
    a = build_acp_corpus(corpora, toy_dict, codec, np.random.default_rng(5))
    b = build_acp_corpus(corpora, toy_dict, codec, np.random.default_rng(5))
    assert [s.ids for s in a] == [s.ids for s in b]


def test_corpus_errors(corpora, toy_dict, codec):
    with pytest.raises(UsageError):
        build_acp_corpus(corpora, toy_dict, codec, np.random.default_rng(0), pivot=Lang.SRC)
    with pytest.raises(DataError):
        build_acp_corpus({Lang.SRC: corpora[Lang.SRC]}, toy_dict, codec, np.random.default_rng(0))


def test_source_pivot_corpus_uses_inverted_dictionary(corpora, toy_dict, codec):
    corpus = build_acp_corpus(corpora, toy_dict.inverted(), codec, np.random.default_rng(0), pivot=Lang.SRC)
    assert all(any(s.anchor_mask) for s in corpus if s.lang == Lang.TGT)


# ==================== MASKING ====================

def test_every_sentence_gets_a_masked_position(tiny_model):
    cfg = AcpConfig(mask_prob=1e-6)
    batch = [IdSequence.plain([5, 6, 7, 8], Lang.SRC), IdSequence.plain([9, 10], Lang.SRC)]
    masked = mask_batch(batch, cfg, tiny_model, np.random.default_rng(0))
    assert ((masked.targets != -1).sum(axis=1) >= 1).all()
    assert masked.selected == 2


def test_targets_hold_originals_and_unselected_positions_are_untouched(tiny_model):
    cfg = AcpConfig(mask_prob=0.5, split_mask=1.0, split_random=0.0, split_keep=0.0)
    ids = [5, 6, 7, 8, 9, 10, 11, 12]
    masked = mask_batch([IdSequence.plain(ids, Lang.TGT)], cfg, tiny_model, np.random.default_rng(3))
    for pos, original in enumerate(ids):
        if masked.targets[0, pos] == -1:
            assert masked.inputs[0, pos] == original
        else:
            assert masked.targets[0, pos] == original
            assert masked.inputs[0, pos] == tiny_model.special_ids.mask
    assert masked.lang == Lang.TGT


def test_random_replacements_are_regular_units(tiny_model):
    cfg = AcpConfig(mask_prob=0.9, split_mask=0.0, split_random=1.0, split_keep=0.0)
    batch = [IdSequence.plain(list(range(5, 25)), Lang.SRC)]
    masked = mask_batch(batch, cfg, tiny_model, np.random.default_rng(2))
    chosen = masked.inputs[masked.targets != -1]
    assert ((chosen >= 5) & (chosen < tiny_model.config.vocab_size)).all()


def test_padding_is_never_a_target(tiny_model):
    batch = [IdSequence.plain([5, 6, 7, 8, 9], Lang.SRC), IdSequence.plain([10], Lang.SRC)]
    masked = mask_batch(batch, AcpConfig(mask_prob=0.9), tiny_model, np.random.default_rng(1))
    assert (masked.targets[masked.is_pad] == -1).all()


def test_empty_sentence_is_rejected(tiny_model):
    with pytest.raises(DataError):
        mask_batch([IdSequence.plain([], Lang.SRC)], AcpConfig(), tiny_model, np.random.default_rng(0))


# ==================== LOSS AND UPDATES ====================

def test_random_init_mlm_loss_near_log_vocab():
    vocab = 4000
    config = ModelConfig(vocab_size=vocab, num_layers=2, model_dim=16, ff_dim=32, num_heads=2, max_len=16, dropout=0.0)
    model = SeqModel(config, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    batch = [IdSequence.plain(rng.integers(5, vocab, size=12), Lang.SRC) for _ in range(8)]
    masked = mask_batch(batch, AcpConfig(mask_prob=0.3), model, rng)
    with no_grad():
        loss = mlm_loss(model, masked, training=False).item() / masked.selected
    assert loss == pytest.approx(np.log(vocab), rel=0.1)


def test_mlm_step_updates_only_encoder_and_embeddings(tiny_model, acp_corpus):
    before = tiny_model.state_dict()
    optimizer = AdamState(lr=0.01, warmup_steps=0)
    loss = mlm_step(tiny_model, acp_corpus[:6], AcpConfig(), optimizer, np.random.default_rng(0))
    assert np.isfinite(loss)
    assert optimizer.step == 1

    after = tiny_model.state_dict()
    encoder_names = set(tiny_model.encoder_parameters())
    for name in before:
        changed = not np.array_equal(before[name], after[name])
        if name.startswith('decoder.'):
            assert not changed, name
    assert not np.array_equal(before['embedding'], after['embedding'])
    assert not np.array_equal(before['encoder.layers.1.attention.query.weight'], after['encoder.layers.1.attention.query.weight'])
    assert 'embedding' in encoder_names


def test_mlm_step_skips_non_finite(tiny_model, acp_corpus):
    tiny_model.embedding.data[:] = np.inf
    optimizer = AdamState(warmup_steps=0)
    assert np.isnan(mlm_step(tiny_model, acp_corpus[:4], AcpConfig(), optimizer, np.random.default_rng(0)))
    assert optimizer.skipped_steps == 1 and optimizer.step == 0


def test_pretrain_mlm_runs_configured_steps(tiny_model, acp_corpus, tiny_config):
    cfg = AcpConfig.from_config(tiny_config)
    result = pretrain_mlm(tiny_model, acp_corpus, cfg, tiny_config)
    assert len(result.losses) == 3
    assert [r['step'] for r in result.log.records] == [1, 2, 3]
    assert result.state.phase == TrainingPhase.ACP_PRETRAIN
    assert result.state.optimizer.step == 3
    assert result.model is tiny_model


def test_pretrain_mlm_is_reproducible(model_config, acp_corpus, tiny_config):
    cfg = AcpConfig.from_config(tiny_config)
    first = pretrain_mlm(SeqModel(model_config, np.random.default_rng(0)), acp_corpus, cfg, tiny_config)
    second = pretrain_mlm(SeqModel(model_config, np.random.default_rng(0)), acp_corpus, cfg, tiny_config)
    assert first.losses == second.losses


def test_pretrain_mlm_loss_decreases(tiny_model, acp_corpus, tiny_config):
    cfg = AcpConfig(steps=120, batch_size=12)
    config = tiny_config.with_overrides(optim__lr=0.01)
    losses = pretrain_mlm(tiny_model, acp_corpus, cfg, config).losses
    assert np.mean(losses[-20:]) < np.mean(losses[:20])


def test_pretrain_mlm_rejects_empty_corpus(tiny_model, tiny_config):
    with pytest.raises(DataError):
        pretrain_mlm(tiny_model, [IdSequence.plain([], Lang.SRC)], AcpConfig(), tiny_config)


# ==================== TRANSFER ====================

def test_init_at_from_acp_copies_encoder_only(model_config):
    acp_model = SeqModel(model_config, np.random.default_rng(1))
    at_model = SeqModel(model_config, np.random.default_rng(2))
    decoder_before = {k: v for k, v in at_model.state_dict().items() if k.startswith('decoder.')}

    init_at_from_acp(at_model, acp_model)
    pretrained = acp_model.state_dict()
    after = at_model.state_dict()
    for name in at_model.encoder_parameters():
        assert np.array_equal(after[name], pretrained[name])
    for name, array in decoder_before.items():
        assert np.array_equal(after[name], array)
    assert at_model.output_weight is at_model.embedding


def test_init_at_from_acp_lists_mismatches(model_config):
    acp_model = SeqModel(model_config, np.random.default_rng(1))
    model_config.share_spec = ShareSpec(enabled=False)
    at_model = SeqModel(model_config, np.random.default_rng(2))
    with pytest.raises(DataError, match="missing 'encoder.src.layers.1"):
        init_at_from_acp(at_model, acp_model)


def test_acp_dictionary_respects_anchoring(toy_dict):
    assert acp_dictionary(toy_dict, AcpConfig()) is toy_dict
    empty = acp_dictionary(toy_dict, AcpConfig(anchoring=False))
    assert empty.entry_count == 0 and empty.direction == (Lang.SRC, Lang.TGT)
    assert acp_dictionary(None, AcpConfig(pivot=Lang.SRC)).direction == (Lang.TGT, Lang.SRC)
