"""Shared fixtures: tiny corpora, a codec learned on them and tiny model configs."""

import numpy as np
import pytest

from bilingual_dictionary import BilingualDictionary
from config import ExperimentConfig
from numerics import precision
from subword import learn_bpe
from text_corpus import Lang, SentenceTokens
from transformer import ModelConfig, SeqModel, ShareSpec

SRC_LINES = [
    "the cat sat on the mat",
    "a dog ran to the park",
    "the cat saw a dog",
    "a bird sat on a tree",
    "the dog saw the bird",
    "a cat ran to a tree",
]

TGT_LINES = [
    "le chat voit un chien",
    "un oiseau est sur un arbre",
    "le chien court au parc",
    "le chat est sur le tapis",
    "un chien voit le oiseau",
    "le oiseau court au arbre",
]

TOY_PAIRS = {
    "the": "le",
    "cat": "chat",
    "dog": "chien",
    "a": "un",
    "bird": "oiseau",
    "tree": "arbre",
}


def sentences(lines, lang):
    return [SentenceTokens(tuple(line.split()), lang) for line in lines]


@pytest.fixture
def src_corpus():
    return sentences(SRC_LINES, Lang.SRC)


@pytest.fixture
def tgt_corpus():
    return sentences(TGT_LINES, Lang.TGT)


@pytest.fixture
def corpora(src_corpus, tgt_corpus):
    return {Lang.SRC: src_corpus, Lang.TGT: tgt_corpus}


@pytest.fixture
def toy_dict():
    return BilingualDictionary(dict(TOY_PAIRS), (Lang.SRC, Lang.TGT))


@pytest.fixture
def codec(src_corpus, tgt_corpus, toy_dict):
    return learn_bpe([src_corpus, tgt_corpus], 40, toy_dict.target_words(), max_len=24)


@pytest.fixture
def tiny_config():
    return ExperimentConfig({
        'model.num_layers': 2,
        'model.model_dim': 16,
        'model.ff_dim': 32,
        'model.num_heads': 2,
        'model.max_len': 24,
        'model.dropout': 0.0,
        'bpe.max_len': 24,
        'optim.lr': 0.003,
        'optim.warmup_steps': 0,
        'at.batch_size': 4,
        'at.max_steps': 3,
        'at.eval_every': 2,
        'at.biview_max_rounds': 2,
        'at.biview_gen_batch_multiplier': 2,
        'acp.steps': 3,
        'acp.batch_size': 4,
        'seed': 11,
    })


@pytest.fixture
def model_config(codec):
    return ModelConfig(
        vocab_size=codec.vocab_size,
        num_layers=2,
        model_dim=16,
        ff_dim=32,
        num_heads=2,
        max_len=24,
        dropout=0.0,
        share_spec=ShareSpec(),
    )


@pytest.fixture
def tiny_model(model_config):
    return SeqModel(model_config, np.random.default_rng(0))


@pytest.fixture
def float64():
    with precision(np.float64):
        yield
