"""
Monolingual Corpus Ingestion

Reads one-sentence-per-line UTF-8 corpora, splits tokens at whitespace and
builds the word frequency tables used for dictionary sense resolution.
Corpora are expected to be pre-tokenized (segmentation for languages such as
Chinese happens upstream).
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from errors import CorpusFormatError

logger = logging.getLogger(__name__)


class Lang(Enum):
    """The two languages of an experiment."""
    SRC = "src"
    TGT = "tgt"

    def other(self) -> 'Lang':
        return Lang.TGT if self is Lang.SRC else Lang.SRC

    @classmethod
    def parse(cls, value: Union[str, 'Lang']) -> 'Lang':
        if isinstance(value, Lang):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise CorpusFormatError(f"Unknown language tag: {value!r} (expected 'src' or 'tgt')")


@dataclass(frozen=True)
class SentenceTokens:
    """
    A tokenized sentence.

    anchor_mask[i] is True only when token i was substituted through the
    bilingual dictionary; raw corpus sentences carry an all-false mask.
    """
    tokens: Tuple[str, ...]
    lang: Lang
    anchor_mask: Tuple[bool, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'tokens', tuple(self.tokens))
        mask = tuple(bool(m) for m in self.anchor_mask) if self.anchor_mask else (False,) * len(self.tokens)
        if len(mask) != len(self.tokens):
            raise CorpusFormatError(
                f"anchor_mask length {len(mask)} does not match {len(self.tokens)} tokens"
            )
        object.__setattr__(self, 'anchor_mask', mask)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    @property
    def anchor_count(self) -> int:
        return sum(self.anchor_mask)

    def without_anchors(self) -> 'SentenceTokens':
        return SentenceTokens(self.tokens, self.lang)


@dataclass
class FreqTable:
    """Word occurrence counts; absent words count 0."""
    counts: Dict[str, int] = field(default_factory=dict)
    total_tokens: int = 0

    def __getitem__(self, word: str) -> int:
        return self.counts.get(word, 0)

    def __len__(self) -> int:
        return len(self.counts)

    def most_common(self, n: Optional[int] = None) -> List[Tuple[str, int]]:
        ranked = sorted(self.counts.items(), key=lambda item: (-item[1], item[0]))
        return ranked if n is None else ranked[:n]


class CorpusReader:
    """
    Decodes corpus files line by line.

    Invalid UTF-8 is reported with its 1-based line number rather than
    replaced, so a bad byte never silently becomes a token.
    """

    def read_lines(self, path: Union[str, Path]) -> List[str]:
        """
        Read and decode a corpus file.

        Args:
            path: UTF-8 text file, one sentence per line

        Returns:
            Decoded lines without line terminators
        """
        filepath = Path(path)
        try:
            with open(filepath, 'rb') as f:
                content = f.read()
        except OSError as e:
            raise CorpusFormatError(f"Cannot read corpus: {e}", path=str(filepath))

        lines = []
        for line_number, raw in enumerate(content.splitlines(), start=1):
            try:
                lines.append(raw.decode('utf-8'))
            except UnicodeDecodeError as e:
                raise CorpusFormatError(
                    f"invalid UTF-8 at byte {e.start}",
                    path=str(filepath),
                    line_number=line_number
                )
        logger.debug(f"[CORPUS] Decoded {len(lines)} lines from {filepath}")
        return lines

    def clean_line(self, line: str) -> List[str]:
        """Split on Unicode whitespace; an empty list means a blank line."""
        return line.replace('\x00', '').split()

    def load(
        self,
        path: Union[str, Path],
        lang: Lang,
        max_sentences: Optional[int] = None
    ) -> List[SentenceTokens]:
        lines = self.read_lines(path)
        sentences: List[SentenceTokens] = []
        blank = 0

        for line in lines:
            if max_sentences is not None and len(sentences) >= max_sentences:
                break
            tokens = self.clean_line(line)
            if not tokens:
                blank += 1
                continue
            sentences.append(SentenceTokens(tuple(tokens), lang))

        token_count = sum(len(s) for s in sentences)
        logger.info(
            f"[CORPUS] Loaded {len(sentences)} {lang.value} sentences from {path} "
            f"({token_count} tokens, {blank} blank lines skipped)"
        )
        return sentences


def load_corpus(
    path: Union[str, Path],
    lang: Lang,
    max_sentences: Optional[int] = None
) -> List[SentenceTokens]:
    """
    Load a monolingual corpus in file order.

    Blank lines are skipped; ``max_sentences`` keeps the first N sentences.
    """
    if max_sentences is not None and max_sentences < 0:
        raise CorpusFormatError(f"max_sentences must be non-negative, got {max_sentences}")
    return CorpusReader().load(path, lang, max_sentences)


def write_corpus(sentences: Iterable[SentenceTokens], path: Union[str, Path]) -> int:
    """Write sentences one per line, tokens joined by single spaces."""
    count = 0
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'w', encoding='utf-8') as f:
        for sentence in sentences:
            f.write(sentence.text + "\n")
            count += 1
    logger.info(f"[CORPUS] Wrote {count} sentences to {filepath}")
    return count


def build_freq_table(corpus: Iterable[SentenceTokens]) -> FreqTable:
    """Exact token multiplicities over a corpus."""
    counts: Counter = Counter()
    for sentence in corpus:
        counts.update(sentence.tokens)
    table = FreqTable(counts=dict(counts), total_tokens=sum(counts.values()))
    logger.debug(f"[CORPUS] Frequency table: {len(table)} types, {table.total_tokens} tokens")
    return table


def corpus_vocabulary(corpus: Iterable[SentenceTokens]) -> List[str]:
    """Distinct words of a corpus, sorted."""
    return sorted({token for sentence in corpus for token in sentence.tokens})


def sentences_from_lines(lines: Sequence[str], lang: Lang) -> List[SentenceTokens]:
    """Tokenize in-memory lines the way load_corpus does."""
    reader = CorpusReader()
    result = []
    for line in lines:
        tokens = reader.clean_line(line)
        if tokens:
            result.append(SentenceTokens(tuple(tokens), lang))
    return result


def load_parallel(
    src_path: Union[str, Path],
    tgt_path: Union[str, Path],
    max_sentences: Optional[int] = None
) -> List[Tuple[SentenceTokens, SentenceTokens]]:
    """
    Line-aligned held-out pairs (src line i translates to tgt line i).

    Blank lines are not skipped here; a blank on either side is an error
    because it would shift the alignment.
    """
    reader = CorpusReader()
    src_lines = reader.read_lines(src_path)
    tgt_lines = reader.read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise CorpusFormatError(
            f"Parallel files differ in length: {len(src_lines)} vs {len(tgt_lines)} lines",
            path=str(tgt_path),
        )
    pairs = []
    for line_number, (src_line, tgt_line) in enumerate(zip(src_lines, tgt_lines), start=1):
        if max_sentences is not None and len(pairs) >= max_sentences:
            break
        src_tokens = reader.clean_line(src_line)
        tgt_tokens = reader.clean_line(tgt_line)
        if not src_tokens or not tgt_tokens:
            raise CorpusFormatError("blank line in parallel data", path=str(src_path), line_number=line_number)
        pairs.append((SentenceTokens(tuple(src_tokens), Lang.SRC), SentenceTokens(tuple(tgt_tokens), Lang.TGT)))
    logger.info(f"[CORPUS] Loaded {len(pairs)} parallel pairs from {src_path} / {tgt_path}")
    return pairs
