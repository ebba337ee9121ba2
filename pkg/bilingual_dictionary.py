"""
Bilingual Dictionary Handling

Loads MUSE-format ground-truth dictionaries, resolves multi-sense entries by
target-side corpus frequency, applies the anchoring transform and reports
coverage statistics.

Matching is exact string on words, before BPE segmentation. Anchoring is
one-to-one and length preserving: a covered word is replaced by its single
translation and flagged in the sentence's anchor mask.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from errors import DataError, DictionaryFormatError, UsageError
from text_corpus import FreqTable, Lang, SentenceTokens

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RawDictionary:
    """Dictionary entries in file order; a source word may repeat with different targets."""
    entries: Tuple[Tuple[str, str], ...]
    direction: Tuple[Lang, Lang] = (Lang.SRC, Lang.TGT)

    def __len__(self) -> int:
        return len(self.entries)

    def candidates(self) -> Dict[str, List[str]]:
        grouped: Dict[str, List[str]] = {}
        for source, target in self.entries:
            grouped.setdefault(source, []).append(target)
        return grouped


@dataclass(frozen=True)
class BilingualDictionary:
    """
    One translation per source word.

    The mapping is read-only after construction. ``lowercase`` folds case on
    lookup only; stored words keep their original case.
    """
    mapping: Mapping[str, str]
    direction: Tuple[Lang, Lang] = (Lang.SRC, Lang.TGT)
    lowercase: bool = False

    def __post_init__(self):
        items = dict(self.mapping)
        if self.lowercase:
            items = {source.lower(): target for source, target in items.items()}
        object.__setattr__(self, 'mapping', MappingProxyType(items))

    @property
    def entry_count(self) -> int:
        return len(self.mapping)

    @property
    def source_lang(self) -> Lang:
        return self.direction[0]

    @property
    def target_lang(self) -> Lang:
        return self.direction[1]

    def __len__(self) -> int:
        return len(self.mapping)

    def __contains__(self, word: str) -> bool:
        return self._key(word) in self.mapping

    def _key(self, word: str) -> str:
        return word.lower() if self.lowercase else word

    def lookup(self, word: str):
        return self.mapping.get(self._key(word))

    def target_words(self) -> List[str]:
        return sorted(set(self.mapping.values()))

    def inverted(self) -> 'BilingualDictionary':
        """
        Reverse a one-to-one dictionary.

        Only valid when no two sources share a target; use
        reverse_raw_dictionary + resolve_senses otherwise.
        """
        reverse: Dict[str, str] = {}
        for source, target in self.mapping.items():
            if target in reverse:
                raise DataError(
                    f"Cannot invert: target '{target}' has several sources; resolve senses instead"
                )
            reverse[target] = source
        return BilingualDictionary(reverse, (self.direction[1], self.direction[0]), self.lowercase)


def empty_dictionary(direction: Tuple[Lang, Lang] = (Lang.SRC, Lang.TGT)) -> BilingualDictionary:
    return BilingualDictionary({}, direction)


@dataclass
class CoverageReport:
    entries: int
    coverage: float
    covered_tokens: int = 0
    total_tokens: int = 0

    @property
    def entry_count(self) -> int:
        return self.entries

    @property
    def covered_token_fraction(self) -> float:
        return self.coverage

    def to_json(self) -> str:
        return json.dumps({'entries': self.entries, 'coverage': self.coverage})

    def to_dict(self) -> dict:
        return {
            'entries': self.entries,
            'coverage': self.coverage,
            'covered_tokens': self.covered_tokens,
            'total_tokens': self.total_tokens,
        }


def load_raw_dictionary(
    path: Union[str, Path],
    direction: Tuple[Lang, Lang] = (Lang.SRC, Lang.TGT)
) -> RawDictionary:
    """
    Load a MUSE dictionary: one ``source target`` pair per line.

    Tab-separated lines whose target holds a space are multi-word entries;
    they are dropped with a warning. Any other line that does not split into
    exactly two fields is an error. Identical repeated pairs are kept once.
    """
    filepath = Path(path)
    try:
        with open(filepath, 'rb') as f:
            content = f.read()
    except OSError as e:
        raise DictionaryFormatError(f"Cannot read dictionary: {e}", path=str(filepath))

    entries: List[Tuple[str, str]] = []
    seen = set()
    dropped = 0

    for line_number, raw in enumerate(content.splitlines(), start=1):
        try:
            line = raw.decode('utf-8').strip()
        except UnicodeDecodeError as e:
            raise DictionaryFormatError(
                f"invalid UTF-8 at byte {e.start}", path=str(filepath), line_number=line_number
            )
        if not line:
            continue

        if '\t' in line:
            fields = [f.strip() for f in line.split('\t')]
            if len(fields) == 2 and fields[0] and len(fields[1].split()) > 1:
                dropped += 1
                logger.debug(f"[DICT] Dropping multi-word entry at line {line_number}: {line!r}")
                continue
        else:
            fields = line.split()

        if len(fields) != 2 or not fields[0] or not fields[1]:
            raise DictionaryFormatError(
                f"expected 2 fields, found {len(fields)}: {line!r}",
                path=str(filepath),
                line_number=line_number
            )

        pair = (fields[0], fields[1])
        if pair in seen:
            continue
        seen.add(pair)
        entries.append(pair)

    if dropped:
        logger.warning(f"[DICT] Dropped {dropped} multi-word entries from {filepath}")
    logger.info(
        f"[DICT] Loaded {len(entries)} pairs "
        f"({len({s for s, _ in entries})} source words) from {filepath}"
    )
    return RawDictionary(tuple(entries), direction)


def reverse_raw_dictionary(raw: RawDictionary) -> RawDictionary:
    """Swap the two sides of every entry."""
    entries = []
    seen = set()
    for source, target in raw.entries:
        if (target, source) not in seen:
            seen.add((target, source))
            entries.append((target, source))
    return RawDictionary(tuple(entries), (raw.direction[1], raw.direction[0]))


def resolve_senses(
    raw: RawDictionary,
    target_freq: FreqTable,
    lowercase: bool = False
) -> BilingualDictionary:
    """
    Pick one translation per source word.

    The chosen target has the highest count in the target-language corpus;
    ties (including all-zero counts) go to the lexicographically smallest
    target, so the result does not depend on entry order.
    """
    resolved: Dict[str, str] = {}
    multi_sense = 0
    for source, targets in raw.candidates().items():
        if len(targets) > 1:
            multi_sense += 1
        resolved[source] = min(targets, key=lambda t: (-target_freq[t], t))

    logger.info(
        f"[DICT] Resolved {len(resolved)} source words "
        f"({multi_sense} had several senses)"
    )
    return BilingualDictionary(resolved, raw.direction, lowercase)


def anchor_sentence(s: SentenceTokens, dictionary: BilingualDictionary) -> SentenceTokens:
    """
    Replace every dictionary-covered word by its translation.

    The result keeps the sentence's language tag and length; replaced
    positions are flagged in anchor_mask and other positions keep their
    previous flag.
    """
    if s.lang is not dictionary.source_lang:
        raise UsageError(
            f"Cannot anchor a {s.lang.value} sentence with a "
            f"{dictionary.source_lang.value}->{dictionary.target_lang.value} dictionary"
        )
    tokens = []
    mask = []
    for token, flagged in zip(s.tokens, s.anchor_mask):
        translation = dictionary.lookup(token)
        if translation is None:
            tokens.append(token)
            mask.append(flagged)
        else:
            tokens.append(translation)
            mask.append(True)
    return SentenceTokens(tuple(tokens), s.lang, tuple(mask))


def anchor_corpus(
    corpus: Sequence[SentenceTokens],
    dictionary: BilingualDictionary
) -> List[SentenceTokens]:
    return [anchor_sentence(s, dictionary) for s in corpus]


def coverage_stats(
    corpus: Sequence[SentenceTokens],
    dictionary: BilingualDictionary
) -> CoverageReport:
    """Fraction of corpus tokens with a dictionary hit."""
    total = 0
    covered = 0
    for sentence in corpus:
        if sentence.lang is not dictionary.source_lang:
            raise UsageError(
                f"Corpus language {sentence.lang.value} does not match dictionary "
                f"source language {dictionary.source_lang.value}"
            )
        total += len(sentence)
        covered += sum(1 for token in sentence.tokens if token in dictionary)

    if total == 0:
        raise DataError("Cannot compute coverage of an empty corpus")

    report = CoverageReport(
        entries=dictionary.entry_count,
        coverage=covered / total,
        covered_tokens=covered,
        total_tokens=total,
    )
    logger.info(
        f"[DICT] Coverage: {report.entries} entries cover {covered}/{total} tokens "
        f"({report.coverage * 100:.2f}%)"
    )
    return report


def split_dictionary(
    dictionary: BilingualDictionary,
    train_fraction: float,
    seed: int
) -> Tuple[BilingualDictionary, BilingualDictionary]:
    """
    Split source words into disjoint train/test dictionaries.

    The train side gets round(n * train_fraction) entries, clamped so both
    sides are non-empty. Deterministic for a given seed.
    """
    if not 0.0 < train_fraction < 1.0:
        raise UsageError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = dictionary.entry_count
    if n < 2:
        raise DataError(f"Cannot split a dictionary with {n} entries")

    sources = sorted(dictionary.mapping)
    order = np.random.default_rng(seed).permutation(n)
    train_count = min(max(int(round(n * train_fraction)), 1), n - 1)

    train_sources = [sources[i] for i in order[:train_count]]
    test_sources = [sources[i] for i in order[train_count:]]

    train = BilingualDictionary(
        {s: dictionary.mapping[s] for s in train_sources}, dictionary.direction, dictionary.lowercase
    )
    test = BilingualDictionary(
        {s: dictionary.mapping[s] for s in test_sources}, dictionary.direction, dictionary.lowercase
    )
    logger.info(f"[DICT] Split {n} entries into {len(train)} train / {len(test)} test (seed={seed})")
    return train, test


def subsample_dictionary(
    dictionary: BilingualDictionary,
    fraction: float,
    seed: int
) -> BilingualDictionary:
    """Random portion of a dictionary; fraction 1 returns it unchanged."""
    if fraction >= 1.0:
        return dictionary
    train, _ = split_dictionary(dictionary, fraction, seed)
    return train


def write_dictionary(dictionary: BilingualDictionary, path: Union[str, Path]) -> int:
    """Write MUSE format, one ``source target`` pair per line, sorted by source."""
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'w', encoding='utf-8') as f:
        for source in sorted(dictionary.mapping):
            f.write(f"{source} {dictionary.mapping[source]}\n")
    logger.info(f"[DICT] Wrote {dictionary.entry_count} entries to {filepath}")
    return dictionary.entry_count
