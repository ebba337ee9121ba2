"""Tests for corpus loading, writing and frequency tables."""

from collections import Counter

import pytest

from errors import CorpusFormatError, DataError
from text_corpus import (
    Lang,
    SentenceTokens,
    build_freq_table,
    corpus_vocabulary,
    load_corpus,
    load_parallel,
    sentences_from_lines,
    write_corpus,
)


def test_load_corpus_skips_blank_lines(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("a b c\n\n  \nd  e\n", encoding="utf-8")
    corpus = load_corpus(path, Lang.SRC)
    assert [s.tokens for s in corpus] == [("a", "b", "c"), ("d", "e")]
    assert all(s.lang is Lang.SRC for s in corpus)
    assert all(s.anchor_count == 0 for s in corpus)


def test_load_corpus_max_sentences(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("a\nb\nc\n", encoding="utf-8")
    assert len(load_corpus(path, Lang.TGT, max_sentences=2)) == 2
    assert load_corpus(path, Lang.TGT, max_sentences=0) == []
    with pytest.raises(CorpusFormatError):
        load_corpus(path, Lang.TGT, max_sentences=-1)


def test_invalid_utf8_reports_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_bytes(b"good line\nbad \xff byte\n")
    with pytest.raises(CorpusFormatError) as info:
        load_corpus(path, Lang.SRC)
    assert info.value.line_number == 2
    assert isinstance(info.value, DataError)


def test_missing_file_is_data_error(tmp_path):
    with pytest.raises(DataError):
        load_corpus(tmp_path / "nope.txt", Lang.SRC)


def test_write_then_load_preserves_tokens(tmp_path, src_corpus):
    path = tmp_path / "out" / "c.txt"
    assert write_corpus(src_corpus, path) == len(src_corpus)
    assert [s.tokens for s in load_corpus(path, Lang.SRC)] == [s.tokens for s in src_corpus]


def test_freq_table_matches_counter(src_corpus):
    table = build_freq_table(src_corpus)
    expected = Counter(token for s in src_corpus for token in s.tokens)
    assert table.counts == dict(expected)
    assert table.total_tokens == sum(expected.values())
    assert table["unseen"] == 0
    # "a" and "the" both occur 6 times; ties rank alphabetically
    assert table.most_common(2) == [("a", 6), ("the", 6)]


def test_sentence_mask_length_checked():
    with pytest.raises(CorpusFormatError):
        SentenceTokens(("a", "b"), Lang.SRC, (True,))
    s = SentenceTokens(("a", "b"), Lang.SRC, (True, False))
    assert s.anchor_count == 1
    assert s.without_anchors().anchor_mask == (False, False)


def test_lang_parse_and_other():
    assert Lang.parse("SRC") is Lang.SRC
    assert Lang.SRC.other() is Lang.TGT
    with pytest.raises(CorpusFormatError):
        Lang.parse("fr")


def test_vocabulary_and_lines():
    corpus = sentences_from_lines(["b a", "", "c a"], Lang.TGT)
    assert len(corpus) == 2
    assert corpus_vocabulary(corpus) == ["a", "b", "c"]


def test_load_parallel(tmp_path):
    (tmp_path / "v.src").write_text("a b\nc\n", encoding="utf-8")
    (tmp_path / "v.tgt").write_text("x\ny z\n", encoding="utf-8")
    pairs = load_parallel(tmp_path / "v.src", tmp_path / "v.tgt")
    assert [(s.text, t.text) for s, t in pairs] == [("a b", "x"), ("c", "y z")]
    assert pairs[0][1].lang is Lang.TGT


def test_load_parallel_length_mismatch(tmp_path):
    (tmp_path / "v.src").write_text("a\nb\n", encoding="utf-8")
    (tmp_path / "v.tgt").write_text("x\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError):
        load_parallel(tmp_path / "v.src", tmp_path / "v.tgt")
