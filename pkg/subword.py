"""
Joint Byte-Pair Encoding

Learns one merge table over the concatenated corpora of both languages and
applies it to produce a single shared subword vocabulary, so a string used by
both languages (including every anchor) maps to the same ids.

Conventions:
- Internally a word is a tuple of symbols whose last symbol carries the
  end-of-word marker ``</w>``.
- In dumps and human-readable output, non-final units carry the ``@@``
  continuation suffix and final units are bare (``lo@@ ng`` for ``long``).
- Ids 0..4 are the special tokens; they are never produced by merges.
"""

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from errors import DataError
from text_corpus import Lang, SentenceTokens

logger = logging.getLogger(__name__)

END_OF_WORD = "</w>"
CONTINUATION = "@@"

SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>", "<mask>")


@dataclass(frozen=True)
class SpecialIds:
    pad: int = 0
    bos: int = 1
    eos: int = 2
    unk: int = 3
    mask: int = 4

    def as_set(self) -> Set[int]:
        return {self.pad, self.bos, self.eos, self.unk, self.mask}

    def to_dict(self) -> Dict[str, int]:
        return {'pad': self.pad, 'bos': self.bos, 'eos': self.eos, 'unk': self.unk, 'mask': self.mask}


@dataclass(frozen=True)
class IdSequence:
    """Subword ids of one sentence with word-level anchor flags propagated to units."""
    ids: Tuple[int, ...]
    anchor_mask: Tuple[bool, ...]
    lang: Lang

    def __post_init__(self):
        object.__setattr__(self, 'ids', tuple(int(i) for i in self.ids))
        mask = tuple(bool(m) for m in self.anchor_mask) if self.anchor_mask else (False,) * len(self.ids)
        if len(mask) != len(self.ids):
            raise DataError(f"anchor mask length {len(mask)} != {len(self.ids)} ids")
        object.__setattr__(self, 'anchor_mask', mask)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def anchor_mask_subword(self) -> Tuple[bool, ...]:
        return self.anchor_mask

    @classmethod
    def plain(cls, ids: Sequence[int], lang: Lang) -> 'IdSequence':
        return cls(tuple(ids), (), lang)


def word_to_symbols(word: str) -> Tuple[str, ...]:
    """Split a word into characters, marking the last one as word-final."""
    if not word:
        return ()
    return tuple(word[:-1]) + (word[-1] + END_OF_WORD,)


def merge_symbols(symbols: Sequence[str], pair: Tuple[str, str]) -> Tuple[str, ...]:
    """Merge every non-overlapping occurrence of pair, scanning left to right."""
    left, right = pair
    merged = []
    i = 0
    while i < len(symbols):
        if i < len(symbols) - 1 and symbols[i] == left and symbols[i + 1] == right:
            merged.append(left + right)
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return tuple(merged)


def display_unit(symbol: str) -> str:
    """Human-readable unit: final units bare, non-final units with '@@'."""
    if symbol in SPECIAL_TOKENS:
        return symbol
    if symbol.endswith(END_OF_WORD):
        return symbol[:-len(END_OF_WORD)]
    return symbol + CONTINUATION


@dataclass
class BpeCodec:
    """
    Learned merge table and the shared vocabulary derived from it.

    ``vocab`` maps internal symbols to dense ids: specials first, then the
    character inventory (sorted), then new symbols in merge order.
    """
    merges: Tuple[Tuple[str, str], ...]
    chars: Tuple[str, ...]
    max_len: int = 64
    special_ids: SpecialIds = field(default_factory=SpecialIds)
    frequencies: Dict[str, int] = field(default_factory=dict)
    vocab: Dict[str, int] = field(init=False)
    units: List[str] = field(init=False)

    def __post_init__(self):
        self.merges = tuple((str(l), str(r)) for l, r in self.merges)
        self.chars = tuple(self.chars)
        self.units = list(SPECIAL_TOKENS)
        for symbol in self.inventory():
            self.units.append(symbol)
        seen = set(self.units)
        for left, right in self.merges:
            symbol = left + right
            if symbol not in seen:
                seen.add(symbol)
                self.units.append(symbol)
        self.vocab = {symbol: i for i, symbol in enumerate(self.units)}
        self._ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self._cache: Dict[str, Tuple[str, ...]] = {}
        self._char_set = set(self.chars)

    def inventory(self) -> List[str]:
        """Initial symbols: every character in non-final and word-final form."""
        symbols = set()
        for ch in self.chars:
            symbols.add(ch)
            symbols.add(ch + END_OF_WORD)
        return sorted(symbols)

    def __len__(self) -> int:
        return len(self.units)

    @property
    def vocab_size(self) -> int:
        return len(self.units)

    def is_special(self, unit_id: int) -> bool:
        return unit_id < len(SPECIAL_TOKENS)

    def segment(self, word: str) -> Tuple[str, ...]:
        """Replay merges on one word by rank until no learned pair remains."""
        cached = self._cache.get(word)
        if cached is not None:
            return cached

        symbols = word_to_symbols(word)
        while len(symbols) > 1:
            candidates = [
                (self._ranks[pair], pair)
                for pair in zip(symbols[:-1], symbols[1:])
                if pair in self._ranks
            ]
            if not candidates:
                break
            _, best = min(candidates)
            symbols = merge_symbols(symbols, best)

        self._cache[word] = symbols
        return symbols

    def word_ids(self, word: str) -> List[int]:
        """Ids of one word; a word with an unseen character becomes a single unk."""
        if any(ch not in self._char_set for ch in word):
            return [self.special_ids.unk]
        return [self.vocab.get(symbol, self.special_ids.unk) for symbol in self.segment(word)]

    def to_dict(self) -> dict:
        return {
            'merges': [list(pair) for pair in self.merges],
            'chars': list(self.chars),
            'specials': self.special_ids.to_dict(),
            'max_len': self.max_len,
            'frequencies': self.frequencies,
        }


def _pair_counts(symbols: Sequence[str]) -> Counter:
    return Counter(zip(symbols[:-1], symbols[1:]))


def learn_bpe(
    corpora: Iterable[Sequence[SentenceTokens]],
    num_merges: int,
    extra_words: Iterable[str] = (),
    max_len: int = 64
) -> BpeCodec:
    """
    Learn a joint merge table.

    Args:
        corpora: Sentence collections of both languages
        num_merges: Maximum number of merges (stops early when no pair is left)
        extra_words: Words added once each, e.g. dictionary targets, so every
            anchor is encodable
        max_len: Truncation length stored in the codec

    Returns:
        BpeCodec with merges in learning order. Ties between equally frequent
        pairs go to the lexicographically smallest pair.
    """
    if num_merges < 0:
        raise DataError(f"num_merges must be >= 0, got {num_merges}")

    word_freq: Counter = Counter()
    for corpus in corpora:
        for sentence in corpus:
            word_freq.update(sentence.tokens)
    for word in extra_words:
        word_freq[word] += 1

    if not word_freq:
        raise DataError("Cannot learn BPE from empty corpora")

    chars = sorted({ch for word in word_freq for ch in word})
    words = sorted(word_freq)
    symbols: List[Tuple[str, ...]] = [word_to_symbols(w) for w in words]
    freqs = [word_freq[w] for w in words]

    stats: Counter = Counter()
    index: Dict[Tuple[str, str], Set[int]] = defaultdict(set)
    for wi, syms in enumerate(symbols):
        for pair, count in _pair_counts(syms).items():
            stats[pair] += count * freqs[wi]
            index[pair].add(wi)

    merges: List[Tuple[str, str]] = []
    for step in range(num_merges):
        if not stats:
            logger.info(f"[BPE] No pairs left after {step} merges")
            break
        best_count = max(stats.values())
        best = min(pair for pair, count in stats.items() if count == best_count)
        merges.append(best)

        for wi in sorted(index.pop(best, ())):
            old = symbols[wi]
            new = merge_symbols(old, best)
            if new == old:
                continue
            old_pairs = _pair_counts(old)
            new_pairs = _pair_counts(new)
            for pair, count in old_pairs.items():
                stats[pair] -= count * freqs[wi]
                if stats[pair] <= 0:
                    del stats[pair]
            for pair, count in new_pairs.items():
                stats[pair] += count * freqs[wi]
                index[pair].add(wi)
            for pair in set(old_pairs) - set(new_pairs):
                if pair in index:
                    index[pair].discard(wi)
            symbols[wi] = new

        stats.pop(best, None)

        if (step + 1) % 500 == 0:
            logger.debug(f"[BPE] {step + 1} merges learned")

    frequencies: Counter = Counter()
    for wi, syms in enumerate(symbols):
        for symbol in syms:
            frequencies[symbol] += freqs[wi]

    codec = BpeCodec(
        merges=tuple(merges),
        chars=tuple(chars),
        max_len=max_len,
        frequencies=dict(frequencies),
    )
    logger.info(
        f"[BPE] Learned {len(merges)} merges over {len(words)} word types; "
        f"vocabulary size {codec.vocab_size}"
    )
    return codec


def apply_bpe(
    codec: BpeCodec,
    s: SentenceTokens,
    max_len: Optional[int] = None
) -> IdSequence:
    """
    Segment a sentence into subword ids.

    Every unit of an anchored word is flagged. Output longer than max_len
    (codec default) drops its trailing units.
    """
    limit = codec.max_len if max_len is None else max_len
    ids: List[int] = []
    mask: List[bool] = []
    for word, flagged in zip(s.tokens, s.anchor_mask):
        word_ids = codec.word_ids(word)
        ids.extend(word_ids)
        mask.extend([flagged] * len(word_ids))
    if limit is not None and len(ids) > limit:
        ids = ids[:limit]
        mask = mask[:limit]
    return IdSequence(tuple(ids), tuple(mask), s.lang)


def detokenize(codec: BpeCodec, ids: Union[IdSequence, Sequence[int]], lang: Optional[Lang] = None) -> SentenceTokens:
    """
    Rebuild words from subword ids.

    Every special id is stripped, so a sequence of specials alone gives an
    empty sentence. An unk still closes the word being built. A word is
    anchored when any of its units is flagged. A trailing unit without the
    end-of-word marker (from truncation) still closes a word.
    """
    if isinstance(ids, IdSequence):
        id_list = ids.ids
        flags = ids.anchor_mask
        lang = ids.lang if lang is None else lang
    else:
        id_list = tuple(int(i) for i in ids)
        flags = (False,) * len(id_list)
    if lang is None:
        lang = Lang.TGT

    special = codec.special_ids
    words: List[str] = []
    word_flags: List[bool] = []
    current = ""
    current_flag = False

    for unit_id, flag in zip(id_list, flags):
        if unit_id < 0 or unit_id >= codec.vocab_size:
            raise DataError(f"Invalid subword id {unit_id} (vocabulary size {codec.vocab_size})")
        if codec.is_special(unit_id):
            if unit_id == special.unk and current:
                words.append(current)
                word_flags.append(current_flag)
                current, current_flag = "", False
            continue

        symbol = codec.units[unit_id]
        current_flag = current_flag or flag
        if symbol.endswith(END_OF_WORD):
            current += symbol[:-len(END_OF_WORD)]
            words.append(current)
            word_flags.append(current_flag)
            current, current_flag = "", False
        else:
            current += symbol

    if current:
        words.append(current)
        word_flags.append(current_flag)

    return SentenceTokens(tuple(words), lang, tuple(word_flags))


def encode_word_units(codec: BpeCodec, word: str) -> List[int]:
    """Subword ids of a single word."""
    return codec.word_ids(word)


def units_to_text(codec: BpeCodec, ids: Sequence[int]) -> str:
    """Space-joined '@@' rendering of ids, for inspection."""
    return " ".join(display_unit(codec.units[i]) for i in ids)


def save_codec(codec: BpeCodec, path: Union[str, Path]):
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(codec.to_dict(), f, ensure_ascii=False, indent=1)
    logger.info(f"[BPE] Saved codec ({len(codec.merges)} merges) to {filepath}")


def load_codec(path: Union[str, Path]) -> BpeCodec:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"Cannot load codec {path}: {e}")
    specials = SpecialIds(**data.get('specials', {}))
    if specials != SpecialIds():
        raise DataError(f"Codec {path} uses non-standard special ids {specials.to_dict()}")
    return BpeCodec(
        merges=tuple(tuple(pair) for pair in data['merges']),
        chars=tuple(data['chars']),
        max_len=int(data.get('max_len', 64)),
        frequencies=dict(data.get('frequencies', {})),
    )


def write_vocab_dump(codec: BpeCodec, path: Union[str, Path]) -> int:
    """TSV of (subword, id, frequency)."""
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'w', encoding='utf-8') as f:
        for unit_id, symbol in enumerate(codec.units):
            f.write(f"{display_unit(symbol)}\t{unit_id}\t{codec.frequencies.get(symbol, 0)}\n")
    return codec.vocab_size
