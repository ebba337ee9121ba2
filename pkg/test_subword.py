"""Tests for joint BPE learning, segmentation and detokenization."""

from collections import Counter

import pytest

from errors import DataError
from subword import (
    END_OF_WORD,
    SPECIAL_TOKENS,
    BpeCodec,
    IdSequence,
    SpecialIds,
    apply_bpe,
    detokenize,
    learn_bpe,
    load_codec,
    save_codec,
    units_to_text,
    write_vocab_dump,
)
from text_corpus import Lang, SentenceTokens


def reference_merges(words, num_merges):
    """Naive learner: recount every pair after each merge."""
    vocab = {tuple(w[:-1]) + (w[-1] + END_OF_WORD,): f for w, f in words.items()}
    merges = []
    for _ in range(num_merges):
        stats = Counter()
        for symbols, freq in vocab.items():
            for pair in zip(symbols[:-1], symbols[1:]):
                stats[pair] += freq
        if not stats:
            break
        top = max(stats.values())
        best = min(p for p, c in stats.items() if c == top)
        merges.append(best)
        merged = {}
        for symbols, freq in vocab.items():
            out = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best:
                    out.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            merged[tuple(out)] = merged.get(tuple(out), 0) + freq
        vocab = merged
    return merges


TOY_LINES = ["low low low low low", "lower lower", "newest newest newest newest newest newest", "widest widest widest"]


def toy_corpus():
    return [SentenceTokens(tuple(line.split()), Lang.SRC) for line in TOY_LINES]


def test_merges_match_reference_learner():
    corpus = toy_corpus()
    words = Counter(t for s in corpus for t in s.tokens)
    codec = learn_bpe([corpus], 10)
    assert list(codec.merges) == reference_merges(words, 10)


def test_merges_match_reference_on_bilingual_corpus(src_corpus, tgt_corpus):
    words = Counter(t for s in src_corpus + tgt_corpus for t in s.tokens)
    codec = learn_bpe([src_corpus, tgt_corpus], 30)
    assert list(codec.merges) == reference_merges(words, 30)


def test_first_merge_is_most_frequent_pair():
    codec = learn_bpe([toy_corpus()], 1)
    # "e","s" occurs in newest x6 and widest x3
    assert codec.merges == (("e", "s"),)


def test_learning_stops_when_no_pairs_left():
    corpus = [SentenceTokens(("ab",), Lang.SRC)]
    codec = learn_bpe([corpus], 50)
    assert len(codec.merges) == 1


def test_empty_corpora_rejected():
    with pytest.raises(DataError):
        learn_bpe([[], []], 10)


def test_vocab_layout(codec):
    assert codec.units[:5] == list(SPECIAL_TOKENS)
    assert codec.vocab["<pad>"] == 0 and codec.vocab["<mask>"] == 4
    for ch in codec.chars:
        assert ch in codec.vocab and ch + END_OF_WORD in codec.vocab


def test_segmentation_reassembles_word(codec):
    for word in ("the", "chat", "oiseau", "park", "zebra"):
        pieces = codec.segment(word)
        assert "".join(pieces).replace(END_OF_WORD, "") == word
        assert pieces[-1].endswith(END_OF_WORD)


def test_shared_string_gets_same_ids(codec):
    src = apply_bpe(codec, SentenceTokens(("le",), Lang.SRC, (True,)))
    tgt = apply_bpe(codec, SentenceTokens(("le",), Lang.TGT))
    assert src.ids == tgt.ids


def test_anchor_flags_propagate_to_units(codec):
    s = SentenceTokens(("oiseau", "sat"), Lang.SRC, (True, False))
    ids = apply_bpe(codec, s)
    n = len(codec.word_ids("oiseau"))
    assert ids.anchor_mask == (True,) * n + (False,) * (len(ids) - n)


def test_unseen_character_becomes_single_unk(codec):
    assert codec.word_ids("été") == [SpecialIds().unk]
    ids = apply_bpe(codec, SentenceTokens(("été", "cat"), Lang.SRC))
    assert ids.ids[0] == SpecialIds().unk
    assert detokenize(codec, ids).tokens == ("cat",)


def test_truncation(codec):
    s = SentenceTokens(tuple(["the"] * 40), Lang.SRC)
    assert len(apply_bpe(codec, s, max_len=7)) == 7


def test_detokenize_inverts_apply(codec, src_corpus, tgt_corpus):
    for s in src_corpus + tgt_corpus:
        back = detokenize(codec, apply_bpe(codec, s))
        assert back.tokens == s.tokens
        assert back.lang is s.lang


def test_detokenize_strips_specials(codec):
    cat = codec.word_ids("cat")
    ids = [1] + cat + [2, 0, 0]
    assert detokenize(codec, ids, Lang.SRC).tokens == ("cat",)


@pytest.mark.parametrize("ids", [[3], [1, 3, 3, 2], [4, 4], [1, 2, 0, 0], []])
def test_only_specials_give_empty_sentence(codec, ids):
    assert detokenize(codec, ids).tokens == ()


def test_unk_splits_words(codec):
    cat = codec.word_ids("cat")
    dog = codec.word_ids("dog")
    assert detokenize(codec, cat + [3] + dog).tokens == ("cat", "dog")


def test_detokenize_invalid_id(codec):
    with pytest.raises(DataError):
        detokenize(codec, [codec.vocab_size + 3])


def test_id_sequence_mask_checks():
    assert IdSequence.plain([5, 6], Lang.SRC).anchor_mask == (False, False)
    with pytest.raises(DataError):
        IdSequence((5, 6), (True,), Lang.SRC)


def test_codec_save_load(tmp_path, codec):
    path = tmp_path / "codec.json"
    save_codec(codec, path)
    loaded = load_codec(path)
    assert loaded.units == codec.units
    assert loaded.segment("oiseau") == codec.segment("oiseau")


def test_vocab_dump_and_display(tmp_path, codec):
    path = tmp_path / "vocab.tsv"
    assert write_vocab_dump(codec, path) == codec.vocab_size
    rows = path.read_text(encoding="utf-8").splitlines()
    assert rows[0].split("\t")[:2] == ["<pad>", "0"]
    rendered = units_to_text(codec, codec.word_ids("oiseau"))
    assert rendered.replace("@@ ", "") == "oiseau"


def test_codec_from_explicit_merges():
    codec = BpeCodec(merges=(("l", "o"), ("lo", "w</w>")), chars=("l", "o", "w"))
    assert codec.segment("low") == ("low</w>",)
    assert codec.segment("lol") == ("lo", "l</w>")
