"""
Dictionary Baselines and Embedding Alignment

Word-by-word translation through the ground-truth dictionary, skip-gram
word embeddings (gensim), the supervised orthogonal map between two
embedding spaces (SWET) and CSLS nearest-neighbour retrieval.

The SWET map is the closed-form Procrustes solution over dictionary pairs:
with X and Y the normalized, centered source and target rows, W = U Vᵀ where
U S Vᵀ = svd(XᵀY), so that X W ≈ Y.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from gensim.models import KeyedVectors, Word2Vec

from bilingual_dictionary import BilingualDictionary, anchor_sentence
from errors import DataError, ShapeError, UsageError
from subword import BpeCodec, encode_word_units
from text_corpus import SentenceTokens
from transformer import SeqModel

logger = logging.getLogger(__name__)

ORTHOGONALITY_TOLERANCE = 1e-4


# ==================== TYPES ====================

@dataclass
class EmbeddingSpace:
    """Word vectors, one row per word of ``words``."""
    words: List[str]
    matrix: np.ndarray
    unit_normalized: bool = False
    vocab: Dict[str, int] = field(init=False)

    def __post_init__(self):
        self.words = list(self.words)
        self.matrix = np.asarray(self.matrix)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.words):
            raise ShapeError(
                f"Embedding matrix {self.matrix.shape} does not match {len(self.words)} words"
            )
        if not np.all(np.isfinite(self.matrix)):
            raise DataError("Embedding matrix has non-finite values")
        if self.unit_normalized and len(self.words):
            norms = np.linalg.norm(self.matrix, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-6:
                raise DataError("Embedding space flagged unit_normalized has rows with norm != 1")
        self.vocab = {word: i for i, word in enumerate(self.words)}
        if len(self.vocab) != len(self.words):
            raise DataError("Embedding space has duplicate words")

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.vocab

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def vector(self, word: str) -> np.ndarray:
        return self.matrix[self.vocab[word]]

    def rows(self, words: Sequence[str]) -> np.ndarray:
        return self.matrix[[self.vocab[w] for w in words]]

    def subset(self, words: Sequence[str]) -> 'EmbeddingSpace':
        kept = [w for w in words if w in self.vocab]
        return EmbeddingSpace(kept, self.rows(kept), self.unit_normalized)

    def normalized(self, center: bool = True) -> 'EmbeddingSpace':
        """Unit length, then mean-centered, then unit length again."""
        matrix = _unit_rows(self.matrix.astype(np.float64))
        if center:
            matrix = _unit_rows(matrix - matrix.mean(axis=0, keepdims=True))
        return EmbeddingSpace(self.words, matrix, unit_normalized=True)


@dataclass
class LinearMap:
    """Row-vector map: a source row x goes to x @ W."""
    W: np.ndarray
    orthogonal: bool = True

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
            raise ShapeError(f"LinearMap needs a square matrix, got {self.W.shape}")
        if self.orthogonal and self.orthogonality_error() >= ORTHOGONALITY_TOLERANCE:
            raise DataError(f"Map flagged orthogonal has error {self.orthogonality_error():.2e}")

    def orthogonality_error(self) -> float:
        return float(np.max(np.abs(self.W.T @ self.W - np.eye(self.W.shape[0]))))

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        return np.asarray(matrix, dtype=np.float64) @ self.W

    def apply_space(self, space: EmbeddingSpace) -> EmbeddingSpace:
        mapped = self.apply(space.matrix)
        return EmbeddingSpace(space.words, mapped, space.unit_normalized and self.orthogonal)


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / np.maximum(norms, 1e-12)


# ==================== WORD BY WORD ====================

def word_by_word(sentence: SentenceTokens, dictionary: BilingualDictionary) -> SentenceTokens:
    """Dictionary substitution, uncovered words copied, no reordering."""
    anchored = anchor_sentence(sentence, dictionary)
    return SentenceTokens(anchored.tokens, dictionary.target_lang)


# ==================== SKIP-GRAM ====================

def _stable_hash(text: str) -> int:
    """Process-independent replacement for hash() in gensim's vector seeding."""
    return int(hashlib.md5(text.encode('utf-8')).hexdigest()[:8], 16)


def train_embeddings(
    corpus: Sequence[SentenceTokens],
    dim: int,
    cfg: Optional[Mapping] = None,
    seed: int = 1234
) -> EmbeddingSpace:
    """
    Skip-gram with negative sampling over one language's corpus.

    Args:
        corpus: Tokenized sentences
        dim: Vector size
        cfg: ``swet`` config section (window, negative, min_count, epochs)
        seed: Seed for gensim; a single worker keeps training deterministic

    Returns:
        EmbeddingSpace with one row per word reaching min_count
    """
    if dim <= 0:
        raise UsageError(f"Embedding dim must be positive, got {dim}")
    if not corpus:
        raise DataError("Cannot train embeddings on an empty corpus")
    cfg = dict(cfg or {})

    sentences = [list(s.tokens) for s in corpus]
    model = Word2Vec(
        vector_size=dim,
        window=int(cfg.get('window', 5)),
        min_count=int(cfg.get('min_count', 2)),
        negative=int(cfg.get('negative', 5)),
        sg=1,
        hs=0,
        workers=1,
        seed=seed,
        hashfxn=_stable_hash,
    )
    try:
        model.build_vocab(sentences)
    except RuntimeError as e:
        raise DataError(f"Cannot build skip-gram vocabulary: {e}")
    if len(model.wv) == 0:
        raise DataError(f"No word reaches min_count={cfg.get('min_count', 2)}")
    model.train(sentences, total_examples=model.corpus_count, epochs=int(cfg.get('epochs', 5)))

    words = list(model.wv.index_to_key)
    space = EmbeddingSpace(words, np.array(model.wv.vectors, dtype=np.float64))
    logger.info(f"[SWET] Trained {dim}-dim skip-gram embeddings for {len(words)} words")
    return space


def save_embeddings(space: EmbeddingSpace, path: Union[str, Path]):
    """word2vec text format: header ``V d`` then ``word v1 ... vd``."""
    kv = KeyedVectors(vector_size=space.dim)
    kv.add_vectors(space.words, space.matrix.astype(np.float32))
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    kv.save_word2vec_format(str(filepath), binary=False)
    logger.info(f"[SWET] Saved {len(space)} vectors to {filepath}")


def load_embeddings(path: Union[str, Path]) -> EmbeddingSpace:
    try:
        kv = KeyedVectors.load_word2vec_format(str(path), binary=False)
    except (OSError, ValueError) as e:
        raise DataError(f"Cannot read embeddings {path}: {e}")
    return EmbeddingSpace(list(kv.index_to_key), np.array(kv.vectors, dtype=np.float64))


# ==================== SWET ====================

def dictionary_pairs(
    src: EmbeddingSpace,
    tgt: EmbeddingSpace,
    dictionary: BilingualDictionary
) -> List[tuple]:
    """Dictionary pairs with both words in vocabulary, sorted."""
    return sorted((s, t) for s, t in dictionary.mapping.items() if s in src and t in tgt)


def fit_swet(src: EmbeddingSpace, tgt: EmbeddingSpace, dictionary: BilingualDictionary) -> LinearMap:
    """
    Orthogonal Procrustes map from src to tgt over dictionary pairs.

    Both spaces go through ``normalized()`` (unit length, centered, unit
    length) before the dictionary rows are taken, which is the geometry
    ``swet_initialize`` applies the map in. Pairs are sorted so the result
    does not depend on dictionary order.
    """
    if src.dim != tgt.dim:
        raise ShapeError(f"Embedding dimensions differ: {src.dim} vs {tgt.dim}")
    pairs = dictionary_pairs(src, tgt, dictionary)
    if len(pairs) < src.dim:
        raise DataError(
            f"SWET needs at least {src.dim} dictionary pairs in both vocabularies, found {len(pairs)}"
        )

    X = src.normalized().rows([s for s, _ in pairs])
    Y = tgt.normalized().rows([t for _, t in pairs])
    U, S, Vt = np.linalg.svd(X.T @ Y)
    rank = int(np.sum(S > S[0] * 1e-10)) if S.size and S[0] > 0 else 0
    if rank < src.dim:
        logger.warning(f"[SWET] Cross-covariance is rank deficient ({rank}/{src.dim}); map is not unique")

    linear_map = LinearMap(U @ Vt, orthogonal=True)
    residual = float(np.mean(np.linalg.norm(X @ linear_map.W - Y, axis=1)))
    logger.info(f"[SWET] Fitted map on {len(pairs)} pairs (mean residual {residual:.4f})")
    return linear_map


# ==================== CSLS ====================

def _mean_topk(similarities: np.ndarray, k: int) -> np.ndarray:
    """Mean of the k largest values in each row."""
    if k <= 0 or similarities.shape[1] == 0:
        return np.zeros(similarities.shape[0])
    k = min(k, similarities.shape[1])
    top = np.partition(similarities, similarities.shape[1] - k, axis=1)[:, -k:]
    return top.mean(axis=1)


def csls_scores(
    queries: np.ndarray,
    candidates: EmbeddingSpace,
    query_space: np.ndarray,
    knn: int = 10
) -> np.ndarray:
    """
    CSLS(x, y) = 2 cos(x, y) - r(x) - r(y).

    r(x) is the mean cosine of x to its knn nearest candidates; r(y) is the
    mean cosine of y to its knn nearest rows of the query space, the whole
    vocabulary of the language the queries come from.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != candidates.dim:
        raise ShapeError(f"Query dim {queries.shape[1]} != candidate dim {candidates.dim}")
    source = np.atleast_2d(np.asarray(query_space, dtype=np.float64))
    if source.shape[1] != candidates.dim:
        raise ShapeError(f"Query space dim {source.shape[1]} != candidate dim {candidates.dim}")

    q = _unit_rows(queries)
    c = _unit_rows(candidates.matrix.astype(np.float64))
    s = _unit_rows(source)

    cos = q @ c.T
    r_query = _mean_topk(cos, min(knn, c.shape[0]))
    r_candidate = _mean_topk(c @ s.T, min(knn, s.shape[0]))
    return 2 * cos - r_query[:, None] - r_candidate[None, :]


def csls_neighbors(
    query: np.ndarray,
    candidates: EmbeddingSpace,
    k: int,
    query_space: np.ndarray,
    knn: int = 10
) -> List[List[str]]:
    """
    Top-k candidate words per query row by CSLS, ties broken by word order.

    Args:
        query: One (d,) row or an (n, d) matrix
        candidates: Space to search
        k: Neighbours per query; must not exceed the candidate vocabulary
        query_space: Full vocabulary of the query language, used for the
            candidates' hubness penalty
        knn: Penalty neighbourhood size (capped by the space sizes)
    """
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    if k > len(candidates):
        raise UsageError(f"k={k} exceeds candidate vocabulary of {len(candidates)} words")

    scores = csls_scores(query, candidates, query_space, knn)
    word_rank = np.empty(len(candidates), dtype=np.int64)
    word_rank[np.argsort(np.array(candidates.words, dtype=object), kind='stable')] = np.arange(len(candidates))

    ranked = []
    for row in scores:
        order = np.lexsort((word_rank, -row))[:k]
        ranked.append([candidates.words[i] for i in order])
    return ranked


# ==================== UNMT + SWET ====================

def swet_initialize(
    model: SeqModel,
    codec: BpeCodec,
    src_space: EmbeddingSpace,
    tgt_space: EmbeddingSpace,
    linear_map: LinearMap
) -> int:
    """
    Write aligned word vectors into a model's shared embedding table.

    Source vectors are mapped into the target space; words appearing in both
    spaces get the mean of their two vectors. Only words that are a single
    subword unit are written. Rows are rescaled to the table's mean row norm.

    Returns:
        Number of embedding rows written
    """
    if src_space.dim != model.config.model_dim or tgt_space.dim != model.config.model_dim:
        raise ShapeError(
            f"Embedding dim ({src_space.dim}/{tgt_space.dim}) != model_dim {model.config.model_dim}"
        )

    src_norm = src_space.normalized()
    tgt_norm = tgt_space.normalized()
    mapped = linear_map.apply_space(src_norm)

    vectors: Dict[str, List[np.ndarray]] = {}
    for space in (mapped, tgt_norm):
        for word, row in zip(space.words, space.matrix):
            vectors.setdefault(word, []).append(row)

    table = model.embedding.data
    target_norm = float(np.mean(np.linalg.norm(table, axis=1)))
    written = 0
    for word in sorted(vectors):
        units = encode_word_units(codec, word)
        if len(units) != 1 or units[0] == codec.special_ids.unk:
            continue
        vector = np.mean(vectors[word], axis=0)
        vector = vector / max(np.linalg.norm(vector), 1e-12) * target_norm
        table[units[0]] = vector.astype(table.dtype)
        written += 1

    logger.info(f"[SWET] Initialized {written} embedding rows from aligned word vectors")
    return written
