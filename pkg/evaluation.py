"""
Evaluation Module

BLEU (sacrebleu, configured to the multi-bleu conventions: no extra
tokenization, no smoothing, 0 when any n-gram order has no match),
bilingual lexicon induction precision@k, per-layer sentence cosine
similarity and embedding export for external plotting.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from sacrebleu.metrics import BLEU

from baselines import EmbeddingSpace, csls_neighbors
from bilingual_dictionary import BilingualDictionary
from errors import DataError, UsageError
from subword import BpeCodec, IdSequence, encode_word_units
from text_corpus import Lang, SentenceTokens
from transformer import SeqModel, encode

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 10)


@dataclass
class BleuReport:
    bleu: float
    ngram_precisions: List[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int

    def to_dict(self) -> dict:
        return {
            'bleu': self.bleu,
            'ngram_precisions': list(self.ngram_precisions),
            'brevity_penalty': self.brevity_penalty,
            'hyp_len': self.hyp_len,
            'ref_len': self.ref_len,
        }


@dataclass
class PrecisionReport:
    p_at: Dict[int, float]
    num_queries: int
    oov_queries: int = 0

    def to_dict(self) -> dict:
        return {
            'p_at': {str(k): v for k, v in sorted(self.p_at.items())},
            'num_queries': self.num_queries,
            'oov_queries': self.oov_queries,
        }


class BleuScorer:
    """Corpus BLEU on already tokenized text."""

    def __init__(self):
        self.metric = BLEU(tokenize='none', smooth_method='none', effective_order=False, force=True)

    def score(self, hypotheses: Sequence[str], references: Sequence[str]) -> BleuReport:
        result = self.metric.corpus_score(list(hypotheses), [list(references)])
        return BleuReport(
            bleu=float(result.score),
            ngram_precisions=[float(p) for p in result.precisions],
            brevity_penalty=float(result.bp),
            hyp_len=int(result.sys_len),
            ref_len=int(result.ref_len),
        )


bleu_scorer = BleuScorer()


def _as_text(sentence: Union[str, SentenceTokens]) -> str:
    """Retokenize with the corpus tokenizer (whitespace)."""
    if isinstance(sentence, SentenceTokens):
        return sentence.text
    return " ".join(str(sentence).split())


def bleu(
    hypotheses: Sequence[Union[str, SentenceTokens]],
    references: Sequence[Union[str, SentenceTokens]]
) -> BleuReport:
    """
    Corpus-level 4-gram BLEU with brevity penalty, as a percentage.

    Args:
        hypotheses: System outputs
        references: One reference per hypothesis
    """
    if len(hypotheses) != len(references):
        raise DataError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise DataError("Cannot compute BLEU of an empty corpus")
    report = bleu_scorer.score([_as_text(h) for h in hypotheses], [_as_text(r) for r in references])
    logger.debug(f"[EVAL] BLEU {report.bleu:.2f} over {len(hypotheses)} sentences")
    return report


def bli_precision(
    test_dict: BilingualDictionary,
    src_space: EmbeddingSpace,
    tgt_space: EmbeddingSpace,
    ks: Iterable[int] = DEFAULT_KS,
    knn: int = 10
) -> PrecisionReport:
    """
    Precision@k of CSLS retrieval for the test dictionary's source words.

    Queries whose source or gold target is missing from its space are
    excluded and counted in ``oov_queries``.
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise UsageError(f"ks must be positive integers, got {ks}")

    usable = []
    oov = 0
    for source in sorted(test_dict.mapping):
        gold = test_dict.mapping[source]
        if source in src_space and gold in tgt_space:
            usable.append((source, gold))
        else:
            oov += 1
    if not usable:
        raise DataError(f"No usable BLI queries ({oov} out of vocabulary)")

    top_k = min(ks[-1], len(tgt_space))
    queries = src_space.rows([s for s, _ in usable])
    neighbours = csls_neighbors(queries, tgt_space, top_k, query_space=src_space.matrix, knn=knn)

    p_at = {}
    for k in ks:
        hits = sum(1 for (_, gold), ranked in zip(usable, neighbours) if gold in ranked[:k])
        p_at[k] = 100.0 * hits / len(usable)

    report = PrecisionReport(p_at=p_at, num_queries=len(usable), oov_queries=oov)
    logger.info(
        f"[EVAL] BLI over {len(usable)} queries ({oov} OOV): "
        + ", ".join(f"p@{k}={v:.2f}" for k, v in p_at.items())
    )
    return report


def layer_cosine(
    model: SeqModel,
    pairs: Sequence[Tuple[IdSequence, IdSequence]],
    layers: Optional[Iterable[int]] = None
) -> Dict[int, float]:
    """
    Mean cosine between max-pooled encoder states of parallel sentences.

    Each side is encoded through its own language path (IdSequence.lang).

    Returns:
        Layer number (1 = bottom) -> mean cosine over pairs
    """
    if not pairs:
        raise DataError("layer_cosine needs at least one sentence pair")
    num_layers = model.config.num_layers
    selected = sorted(set(layers)) if layers is not None else list(range(1, num_layers + 1))
    for layer in selected:
        if not 1 <= layer <= num_layers:
            raise UsageError(f"Layer {layer} outside 1..{num_layers}")

    sums = {layer: 0.0 for layer in selected}
    for left, right in pairs:
        left_states = encode(model, left, left.lang)
        right_states = encode(model, right, right.lang)
        for layer in selected:
            a = left_states[layer - 1].max(axis=0).astype(np.float64)
            b = right_states[layer - 1].max(axis=0).astype(np.float64)
            sums[layer] += float(a @ b / max(np.linalg.norm(a) * np.linalg.norm(b), 1e-12))

    means = {layer: sums[layer] / len(pairs) for layer in selected}
    logger.info(
        "[EVAL] Layer cosine: " + ", ".join(f"L{layer}={value:.4f}" for layer, value in means.items())
    )
    return means


# ==================== EMBEDDINGS ====================

def word_vector(model: SeqModel, codec: BpeCodec, word: str) -> np.ndarray:
    """Embedding of a word: mean of its subword rows."""
    units = encode_word_units(codec, word)
    return model.embedding.data[units].mean(axis=0)


def model_embedding_space(model: SeqModel, codec: BpeCodec, words: Sequence[str]) -> EmbeddingSpace:
    """Rows of the shared table for the given words."""
    unique = list(dict.fromkeys(words))
    if not unique:
        raise DataError("model_embedding_space needs at least one word")
    matrix = np.stack([word_vector(model, codec, w) for w in unique])
    return EmbeddingSpace(unique, matrix)


def _format_value(value, dtype) -> str:
    return format(float(value), '.9g' if dtype == np.float32 else '.17g')


def export_embeddings(
    model: SeqModel,
    codec: BpeCodec,
    words: Sequence[Tuple[str, Lang]],
    path: Union[str, Path]
) -> int:
    """
    Write ``word<TAB>lang<TAB>v1,...,vd`` rows, one per requested word.

    Values are printed with enough digits to read back bit-exactly.
    """
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    dtype = model.embedding.data.dtype
    with open(filepath, 'w', encoding='utf-8') as f:
        for word, lang in words:
            vector = word_vector(model, codec, word)
            values = ",".join(_format_value(v, dtype) for v in vector)
            f.write(f"{word}\t{Lang.parse(lang).value}\t{values}\n")
    logger.info(f"[EVAL] Exported {len(words)} embeddings to {filepath}")
    return len(words)


def import_embeddings(path: Union[str, Path], dtype=np.float32) -> List[Tuple[str, Lang, np.ndarray]]:
    """Read rows written by export_embeddings."""
    rows = []
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise DataError(f"Cannot read embedding export {path}: {e}")
    for line_number, line in enumerate(lines, start=1):
        if not line:
            continue
        fields = line.split('\t')
        if len(fields) != 3:
            raise DataError(f"{path}:{line_number}: expected 3 tab-separated fields")
        word, lang, values = fields
        vector = np.array([float(v) for v in values.split(',')], dtype=dtype)
        rows.append((word, Lang.parse(lang), vector))
    return rows


def sample_uncovered_neighbors(
    model: SeqModel,
    codec: BpeCodec,
    dictionary: BilingualDictionary,
    tgt_words: Sequence[str],
    src_words: Sequence[str],
    n: int,
    k: int,
    rng: np.random.Generator,
    knn: int = 10
) -> List[Dict]:
    """
    Pick n target words the dictionary does not produce and list their k
    nearest source-language words in the shared embedding table. The CSLS
    hubness penalty of each source word is taken over the whole target
    vocabulary, so the lists match what csls_neighbors gives on the exported
    vectors.
    """
    covered = set(dictionary.mapping.values())
    candidates = sorted(w for w in set(tgt_words) if w not in covered)
    if not candidates:
        raise DataError("Every target word is covered by the dictionary")
    chosen = [candidates[i] for i in sorted(rng.choice(len(candidates), size=min(n, len(candidates)), replace=False))]

    src_space = model_embedding_space(model, codec, sorted(set(src_words)))
    tgt_space = model_embedding_space(model, codec, sorted(set(tgt_words)))
    queries = tgt_space.rows(chosen)
    neighbours = csls_neighbors(queries, src_space, min(k, len(src_space)), tgt_space.matrix, knn)
    return [{'word': word, 'neighbors': ranked} for word, ranked in zip(chosen, neighbours)]
