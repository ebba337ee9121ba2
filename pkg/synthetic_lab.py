"""
Synthetic Language Pair

Deterministic cipher languages with known ground truth. A latent sentence is
a sequence of word ids drawn from a Zipf distribution; its source form spells
each id with source letters, its target form spells it with target letters
and then locally reorders the words. The two training corpora come from
disjoint halves of the latent sentences, so they share no sentence. The
full cipher is the exact dictionary; partial dictionaries are sampled by
word type until they cover the requested share of source tokens.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from bilingual_dictionary import BilingualDictionary, coverage_stats, write_dictionary
from config import ExperimentConfig, named_rng
from errors import DataError, UsageError
from text_corpus import Lang, SentenceTokens, build_freq_table, write_corpus

logger = logging.getLogger(__name__)

SOURCE_LETTERS = "abcdefghijklm"
TARGET_LETTERS = "nopqrstuvwxyz"
WORD_LENGTHS = (3, 7)
COVERAGE_TOLERANCE = 0.01

ParallelPair = Tuple[SentenceTokens, SentenceTokens]


@dataclass
class SynthSpec:
    vocab_size: int = 500
    sentence_count: int = 20000
    min_len: int = 5
    max_len: int = 15
    reorder_window: int = 2
    dict_coverage: float = 0.5
    zipf_s: float = 1.1
    heldout_count: int = 500
    seed: int = 1234

    def __post_init__(self):
        if self.vocab_size < 2:
            raise UsageError(f"synth.vocab_size must be at least 2, got {self.vocab_size}")
        if self.sentence_count <= 0 or self.heldout_count < 0:
            raise UsageError("synth.sentence_count must be positive and synth.heldout_count >= 0")
        if not 1 <= self.min_len <= self.max_len:
            raise UsageError(f"Need 1 <= min_len <= max_len, got {self.min_len}..{self.max_len}")
        if self.reorder_window < 0:
            raise UsageError(f"synth.reorder_window must be >= 0, got {self.reorder_window}")
        if not 0.0 < self.dict_coverage <= 1.0:
            raise UsageError(f"synth.dict_coverage must be in (0, 1], got {self.dict_coverage}")
        if self.zipf_s <= 0:
            raise UsageError(f"synth.zipf_s must be positive, got {self.zipf_s}")

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> 'SynthSpec':
        synth = config.section('synth')
        return cls(
            vocab_size=int(synth['vocab_size']),
            sentence_count=int(synth['sentence_count']),
            min_len=int(synth['min_len']),
            max_len=int(synth['max_len']),
            reorder_window=int(synth['reorder_window']),
            dict_coverage=float(synth['dict_coverage']),
            zipf_s=float(synth['zipf_s']),
            heldout_count=int(synth['heldout_count']),
            seed=int(config['seed']),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthPair:
    spec: SynthSpec
    src_corpus: List[SentenceTokens]
    tgt_corpus: List[SentenceTokens]
    full_dict: BilingualDictionary
    partial_dict: BilingualDictionary
    valid: List[ParallelPair]
    test: List[ParallelPair]
    src_latent_ids: List[int] = field(default_factory=list)
    tgt_latent_ids: List[int] = field(default_factory=list)
    stats: Dict = field(default_factory=dict)

    @property
    def corpora(self) -> Dict[Lang, List[SentenceTokens]]:
        return {Lang.SRC: self.src_corpus, Lang.TGT: self.tgt_corpus}


# ==================== GENERATION ====================

def make_words(count: int, letters: str, rng: np.random.Generator) -> List[str]:
    """count distinct random spellings over an alphabet."""
    words: List[str] = []
    seen = set()
    low, high = WORD_LENGTHS
    attempts = 0
    while len(words) < count:
        attempts += 1
        if attempts > count * 100:
            raise DataError(f"Could not spell {count} distinct words over '{letters}'")
        length = int(rng.integers(low, high + 1))
        word = "".join(letters[i] for i in rng.integers(0, len(letters), size=length))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def zipf_probabilities(vocab_size: int, s: float) -> np.ndarray:
    ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
    weights = ranks ** -s
    return weights / weights.sum()


def reorder(words: Sequence[str], window: int, rng: np.random.Generator) -> List[str]:
    """Local permutation; every word moves at most ``window`` positions."""
    if window == 0 or len(words) < 2:
        return list(words)
    keys = np.arange(len(words)) + rng.uniform(0.0, window + 1.0, size=len(words))
    return [words[i] for i in np.argsort(keys, kind='stable')]


def sample_partial_dictionary(
    full_dict: BilingualDictionary,
    corpus: Sequence[SentenceTokens],
    coverage: float,
    rng: np.random.Generator
) -> BilingualDictionary:
    """
    Add word types in random order while the source-token coverage stays
    at or below coverage + tolerance, stopping once it reaches coverage.
    """
    if coverage >= 1.0:
        return full_dict
    freq = build_freq_table(corpus)
    total = freq.total_tokens
    if total == 0:
        raise DataError("Cannot sample a dictionary against an empty corpus")

    sources = sorted(full_dict.mapping)
    chosen: Dict[str, str] = {}
    covered = 0
    for index in rng.permutation(len(sources)):
        word = sources[index]
        count = freq[word]
        if (covered + count) / total > coverage + COVERAGE_TOLERANCE:
            continue
        chosen[word] = full_dict.mapping[word]
        covered += count
        if covered / total >= coverage:
            break

    if not chosen or abs(covered / total - coverage) > COVERAGE_TOLERANCE:
        raise DataError(
            f"Vocabulary too small to reach {coverage:.2%} token coverage "
            f"(best {covered / total:.2%} with {len(chosen)} entries)"
        )
    return BilingualDictionary(chosen, full_dict.direction)


def generate_pair(spec: SynthSpec) -> SynthPair:
    """
    Build corpora, dictionaries and held-out parallel sets for a spec.

    Regenerating with the same spec gives identical output.
    """
    rng = named_rng(spec.seed, "synth.pair")
    src_words = make_words(spec.vocab_size, SOURCE_LETTERS, named_rng(spec.seed, "synth.src_words"))
    tgt_words = make_words(spec.vocab_size, TARGET_LETTERS, named_rng(spec.seed, "synth.tgt_words"))
    full_dict = BilingualDictionary(dict(zip(src_words, tgt_words)), (Lang.SRC, Lang.TGT))

    probs = zipf_probabilities(spec.vocab_size, spec.zipf_s)
    latent_count = 2 * spec.sentence_count + 2 * spec.heldout_count
    latent: List[np.ndarray] = []
    for _ in range(latent_count):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        latent.append(rng.choice(spec.vocab_size, size=length, p=probs))

    def source_side(ids: np.ndarray) -> SentenceTokens:
        return SentenceTokens(tuple(src_words[i] for i in ids), Lang.SRC)

    def target_side(ids: np.ndarray) -> SentenceTokens:
        return SentenceTokens(tuple(reorder([tgt_words[i] for i in ids], spec.reorder_window, rng)), Lang.TGT)

    n, h = spec.sentence_count, spec.heldout_count
    src_ids = list(range(0, n))
    tgt_ids = list(range(n, 2 * n))
    src_corpus = [source_side(latent[i]) for i in src_ids]
    tgt_corpus = [target_side(latent[i]) for i in tgt_ids]
    valid = [(source_side(latent[i]), target_side(latent[i])) for i in range(2 * n, 2 * n + h)]
    test = [(source_side(latent[i]), target_side(latent[i])) for i in range(2 * n + h, 2 * n + 2 * h)]

    partial = sample_partial_dictionary(full_dict, src_corpus, spec.dict_coverage, named_rng(spec.seed, "synth.dict"))
    report = coverage_stats(src_corpus, partial)
    stats = {
        'full_entries': full_dict.entry_count,
        'partial_entries': partial.entry_count,
        'type_fraction': partial.entry_count / spec.vocab_size,
        'token_coverage': report.coverage,
    }
    logger.info(
        f"[SYNTH] {n} sentences per side, {h} valid / {h} test pairs, "
        f"dictionary {partial.entry_count}/{spec.vocab_size} types covering {report.coverage:.2%} of tokens"
    )
    return SynthPair(
        spec=spec,
        src_corpus=src_corpus,
        tgt_corpus=tgt_corpus,
        full_dict=full_dict,
        partial_dict=partial,
        valid=valid,
        test=test,
        src_latent_ids=src_ids,
        tgt_latent_ids=tgt_ids,
        stats=stats,
    )


# ==================== FILES ====================

PAIR_FILES = {
    'train_src': 'train.src',
    'train_tgt': 'train.tgt',
    'dict': 'dict.src-tgt.txt',
    'dict_rev': 'dict.tgt-src.txt',
    'full_dict': 'dict.full.src-tgt.txt',
    'full_dict_rev': 'dict.full.tgt-src.txt',
    'valid_src': 'valid.src',
    'valid_tgt': 'valid.tgt',
    'test_src': 'test.src',
    'test_tgt': 'test.tgt',
    'spec': 'spec.json',
}


def write_pair(pair: SynthPair, out_dir: Union[str, Path]) -> Dict[str, str]:
    """Write every artifact of a generated pair; returns name -> path."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    paths = {name: root / filename for name, filename in PAIR_FILES.items()}
    existing = load_spec(paths['spec'])
    if existing is not None and existing != pair.spec:
        raise UsageError(f"{root} already holds a synthetic pair generated with different settings")

    write_corpus(pair.src_corpus, paths['train_src'])
    write_corpus(pair.tgt_corpus, paths['train_tgt'])
    write_dictionary(pair.partial_dict, paths['dict'])
    write_dictionary(pair.partial_dict.inverted(), paths['dict_rev'])
    write_dictionary(pair.full_dict, paths['full_dict'])
    write_dictionary(pair.full_dict.inverted(), paths['full_dict_rev'])
    for split in ('valid', 'test'):
        pairs = getattr(pair, split)
        write_corpus([s for s, _ in pairs], paths[f'{split}_src'])
        write_corpus([t for _, t in pairs], paths[f'{split}_tgt'])

    with open(paths['spec'], 'w', encoding='utf-8') as f:
        json.dump({'spec': pair.spec.to_dict(), 'stats': pair.stats}, f, indent=2, sort_keys=True)

    logger.info(f"[SYNTH] Wrote synthetic pair to {root}")
    return {name: str(path) for name, path in paths.items()}


def load_spec(path: Union[str, Path]) -> Optional[SynthSpec]:
    """Read the spec.json written next to a pair; None when absent."""
    filepath = Path(path)
    if not filepath.exists():
        return None
    try:
        with open(filepath, 'r', encoding='utf-8') as f:
            return SynthSpec(**json.load(f)['spec'])
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DataError(f"Invalid synthetic spec file {filepath}: {e}")
