"""
Encoder-Decoder Transformer with Partial Layer Sharing

Pre-LN transformer built on the numerics core. Both languages use one model:
the bottom encoder layer and the top decoder layer are private to each
language, and every other layer is one object referenced by both language
paths. Token embeddings are a single table shared by both languages and
tied to the output projection. A learned language embedding is added to
the input of both stacks.

Layout for 4 layers with the default ShareSpec:

    encoder: [private, shared, shared, shared]
    decoder: [shared, shared, shared, private]
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import DataError, NonFiniteError, UsageError
from numerics import (
    AdamState,
    Tensor,
    adam_step,
    add,
    backward,
    cross_entropy,
    dropout,
    embedding_lookup,
    layer_norm,
    matmul,
    masked_fill,
    no_grad,
    parameter,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
    zero_grads,
)
from subword import IdSequence, SpecialIds
from text_corpus import Lang

logger = logging.getLogger(__name__)

LANG_INDEX = {Lang.SRC: 0, Lang.TGT: 1}
MASKED_SCORE = -1e9


# ==================== CONFIG ====================

@dataclass
class ShareSpec:
    """Which layers are private to a language; ``enabled=False`` makes every layer private."""
    encoder_private_bottom: int = 1
    decoder_private_top: int = 1
    enabled: bool = True

    def validate(self, num_layers: int):
        if not 0 <= self.encoder_private_bottom <= num_layers:
            raise UsageError(
                f"encoder_private_bottom={self.encoder_private_bottom} outside [0, {num_layers}]"
            )
        if not 0 <= self.decoder_private_top <= num_layers:
            raise UsageError(
                f"decoder_private_top={self.decoder_private_top} outside [0, {num_layers}]"
            )

    def encoder_shared(self, layer: int) -> bool:
        return self.enabled and layer >= self.encoder_private_bottom

    def decoder_shared(self, layer: int, num_layers: int) -> bool:
        return self.enabled and layer < num_layers - self.decoder_private_top

    def to_dict(self) -> Dict:
        return {
            'encoder_private_bottom': self.encoder_private_bottom,
            'decoder_private_top': self.decoder_private_top,
            'enabled': self.enabled,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> 'ShareSpec':
        return cls(
            encoder_private_bottom=int(data.get('encoder_private_bottom', 1)),
            decoder_private_top=int(data.get('decoder_private_top', 1)),
            enabled=bool(data.get('enabled', True)),
        )


@dataclass
class ModelConfig:
    vocab_size: int
    num_layers: int = 4
    model_dim: int = 64
    ff_dim: int = 256
    num_heads: int = 4
    max_len: int = 64
    dropout: float = 0.1
    length_penalty: float = 1.0
    share_spec: ShareSpec = field(default_factory=ShareSpec)

    def validate(self):
        if self.vocab_size <= 0:
            raise UsageError(f"vocab_size must be positive, got {self.vocab_size}")
        if self.num_layers <= 0:
            raise UsageError(f"num_layers must be positive, got {self.num_layers}")
        if self.model_dim % self.num_heads != 0:
            raise UsageError(
                f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError(f"dropout must be in [0, 1), got {self.dropout}")
        self.share_spec.validate(self.num_layers)

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @classmethod
    def from_config(cls, config, vocab_size: int) -> 'ModelConfig':
        """Build from an ExperimentConfig's ``model`` namespace."""
        model = config.section('model')
        return cls(
            vocab_size=vocab_size,
            num_layers=int(model['num_layers']),
            model_dim=int(model['model_dim']),
            ff_dim=int(model['ff_dim']),
            num_heads=int(model['num_heads']),
            max_len=int(model['max_len']),
            dropout=float(model['dropout']),
            length_penalty=float(model['length_penalty']),
            share_spec=ShareSpec(
                encoder_private_bottom=int(model['encoder_private_bottom']),
                decoder_private_top=int(model['decoder_private_top']),
                enabled=bool(model['share_layers']),
            ),
        )

    def to_dict(self) -> Dict:
        return {
            'vocab_size': self.vocab_size,
            'num_layers': self.num_layers,
            'model_dim': self.model_dim,
            'ff_dim': self.ff_dim,
            'num_heads': self.num_heads,
            'max_len': self.max_len,
            'dropout': self.dropout,
            'length_penalty': self.length_penalty,
            'share_spec': self.share_spec.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> 'ModelConfig':
        values = dict(data)
        share = ShareSpec.from_dict(values.pop('share_spec', {}))
        return cls(share_spec=share, **values)


# ==================== LAYERS ====================

class Linear:
    def __init__(self, prefix: str, fan_in: int, fan_out: int, rng: np.random.Generator):
        self.weight = parameter(rng.normal(0.0, fan_in ** -0.5, size=(fan_in, fan_out)), f"{prefix}.weight")
        self.bias = parameter(np.zeros(fan_out), f"{prefix}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]


class LayerNorm:
    def __init__(self, prefix: str, width: int):
        self.gamma = parameter(np.ones(width), f"{prefix}.gamma")
        self.beta = parameter(np.zeros(width), f"{prefix}.beta")

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)

    def parameters(self) -> List[Tensor]:
        return [self.gamma, self.beta]


class MultiHeadAttention:
    def __init__(self, prefix: str, config: ModelConfig, rng: np.random.Generator):
        d = config.model_dim
        self.num_heads = config.num_heads
        self.head_dim = config.head_dim
        self.query = Linear(f"{prefix}.query", d, d, rng)
        self.key = Linear(f"{prefix}.key", d, d, rng)
        self.value = Linear(f"{prefix}.value", d, d, rng)
        self.output = Linear(f"{prefix}.output", d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return transpose(reshape(x, (b, t, self.num_heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(
        self,
        x_query: Tensor,
        x_memory: Tensor,
        blocked: np.ndarray,
        p_drop: float,
        rng: Optional[np.random.Generator],
        training: bool
    ) -> Tensor:
        """blocked broadcasts to (B, heads, Tq, Tk); True positions get no attention."""
        b, tq, d = x_query.shape
        q = self._split(self.query(x_query))
        k = transpose(self._split(self.key(x_memory)), (0, 1, 3, 2))
        v = self._split(self.value(x_memory))

        scores = scale(matmul(q, k), self.head_dim ** -0.5)
        weights = softmax(masked_fill(scores, blocked, MASKED_SCORE))
        weights = dropout(weights, p_drop, rng, training)
        context = transpose(matmul(weights, v), (0, 2, 1, 3))
        return self.output(reshape(context, (b, tq, d)))

    def parameters(self) -> List[Tensor]:
        return [p for lin in (self.query, self.key, self.value, self.output) for p in lin.parameters()]


class FeedForward:
    def __init__(self, prefix: str, config: ModelConfig, rng: np.random.Generator):
        self.inner = Linear(f"{prefix}.inner", config.model_dim, config.ff_dim, rng)
        self.outer = Linear(f"{prefix}.outer", config.ff_dim, config.model_dim, rng)

    def __call__(self, x: Tensor, p_drop: float, rng, training: bool) -> Tensor:
        return self.outer(dropout(relu(self.inner(x)), p_drop, rng, training))

    def parameters(self) -> List[Tensor]:
        return self.inner.parameters() + self.outer.parameters()


class EncoderLayer:
    def __init__(self, prefix: str, config: ModelConfig, rng: np.random.Generator):
        self.prefix = prefix
        self.norm_attn = LayerNorm(f"{prefix}.norm_attn", config.model_dim)
        self.attention = MultiHeadAttention(f"{prefix}.attention", config, rng)
        self.norm_ff = LayerNorm(f"{prefix}.norm_ff", config.model_dim)
        self.feed_forward = FeedForward(f"{prefix}.feed_forward", config, rng)
        self.p_drop = config.dropout

    def __call__(self, x: Tensor, blocked: np.ndarray, rng, training: bool) -> Tensor:
        h = self.norm_attn(x)
        x = add(x, dropout(self.attention(h, h, blocked, self.p_drop, rng, training), self.p_drop, rng, training))
        h = self.norm_ff(x)
        return add(x, dropout(self.feed_forward(h, self.p_drop, rng, training), self.p_drop, rng, training))

    def parameters(self) -> List[Tensor]:
        return (
            self.norm_attn.parameters() + self.attention.parameters()
            + self.norm_ff.parameters() + self.feed_forward.parameters()
        )


class DecoderLayer:
    def __init__(self, prefix: str, config: ModelConfig, rng: np.random.Generator):
        self.prefix = prefix
        self.norm_self = LayerNorm(f"{prefix}.norm_self", config.model_dim)
        self.self_attention = MultiHeadAttention(f"{prefix}.self_attention", config, rng)
        self.norm_cross = LayerNorm(f"{prefix}.norm_cross", config.model_dim)
        self.cross_attention = MultiHeadAttention(f"{prefix}.cross_attention", config, rng)
        self.norm_ff = LayerNorm(f"{prefix}.norm_ff", config.model_dim)
        self.feed_forward = FeedForward(f"{prefix}.feed_forward", config, rng)
        self.p_drop = config.dropout

    def __call__(
        self,
        y: Tensor,
        memory: Tensor,
        self_blocked: np.ndarray,
        memory_blocked: np.ndarray,
        rng,
        training: bool
    ) -> Tensor:
        p = self.p_drop
        h = self.norm_self(y)
        y = add(y, dropout(self.self_attention(h, h, self_blocked, p, rng, training), p, rng, training))
        h = self.norm_cross(y)
        y = add(y, dropout(self.cross_attention(h, memory, memory_blocked, p, rng, training), p, rng, training))
        h = self.norm_ff(y)
        return add(y, dropout(self.feed_forward(h, p, rng, training), p, rng, training))

    def parameters(self) -> List[Tensor]:
        return (
            self.norm_self.parameters() + self.self_attention.parameters()
            + self.norm_cross.parameters() + self.cross_attention.parameters()
            + self.norm_ff.parameters() + self.feed_forward.parameters()
        )


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    positions = np.arange(length)[:, None]
    rates = np.power(10000.0, -(np.arange(0, width, 2) / width))
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: width // 2])
    return table


def pad_batch(sequences: Sequence[Sequence[int]], pad_id: int) -> Tuple[np.ndarray, np.ndarray]:
    """Right-pad to the longest sequence; returns (ids, is_pad)."""
    width = max((len(s) for s in sequences), default=0)
    ids = np.full((len(sequences), max(width, 1)), pad_id, dtype=np.int64)
    for row, seq in enumerate(sequences):
        ids[row, :len(seq)] = seq
    return ids, ids == pad_id


# ==================== MODEL ====================

@dataclass
class TrainingPair:
    """One teacher-forced example: source ids in input_lang, target ids in output_lang."""
    source: IdSequence
    target: IdSequence
    input_lang: Lang
    output_lang: Lang
    weight: float = 1.0

    @property
    def direction(self) -> Tuple[Lang, Lang]:
        return self.input_lang, self.output_lang


class SeqModel:
    """
    Shared-vocabulary translation model for both directions.

    ``encoder_layers[lang]`` and ``decoder_layers[lang]`` list the layers a
    language path runs through; a shared layer appears as the same object in
    both lists.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator, special_ids: Optional[SpecialIds] = None):
        config.validate()
        self.config = config
        self.special_ids = special_ids or SpecialIds()
        self.dropout_rng = np.random.default_rng(int(rng.integers(0, 2 ** 32)))

        d = config.model_dim
        self.embedding = parameter(rng.normal(0.0, d ** -0.5, size=(config.vocab_size, d)), "embedding")
        self.lang_embedding = parameter(rng.normal(0.0, 0.02, size=(2, d)), "lang_embedding")
        self.positions = Tensor(sinusoidal_positions(config.max_len + 2, d))

        share = config.share_spec
        n = config.num_layers
        self.encoder_layers: Dict[Lang, List[EncoderLayer]] = {Lang.SRC: [], Lang.TGT: []}
        self.decoder_layers: Dict[Lang, List[DecoderLayer]] = {Lang.SRC: [], Lang.TGT: []}

        for i in range(n):
            if share.encoder_shared(i):
                layer = EncoderLayer(f"encoder.layers.{i}", config, rng)
                for lang in Lang:
                    self.encoder_layers[lang].append(layer)
            else:
                for lang in Lang:
                    self.encoder_layers[lang].append(EncoderLayer(f"encoder.{lang.value}.layers.{i}", config, rng))

        for i in range(n):
            if share.decoder_shared(i, n):
                layer = DecoderLayer(f"decoder.layers.{i}", config, rng)
                for lang in Lang:
                    self.decoder_layers[lang].append(layer)
            else:
                for lang in Lang:
                    self.decoder_layers[lang].append(DecoderLayer(f"decoder.{lang.value}.layers.{i}", config, rng))

        if share.enabled:
            encoder_norm = LayerNorm("encoder.norm", d)
            decoder_norm = LayerNorm("decoder.norm", d)
            self.encoder_norm = {lang: encoder_norm for lang in Lang}
            self.decoder_norm = {lang: decoder_norm for lang in Lang}
        else:
            self.encoder_norm = {lang: LayerNorm(f"encoder.{lang.value}.norm", d) for lang in Lang}
            self.decoder_norm = {lang: LayerNorm(f"decoder.{lang.value}.norm", d) for lang in Lang}

        logger.info(
            f"[MODEL] Built {n}-layer model: dim={d}, ff={config.ff_dim}, heads={config.num_heads}, "
            f"vocab={config.vocab_size}, sharing={'on' if share.enabled else 'off'}, "
            f"{sum(p.size for p in self.parameters())} parameters"
        )

    # ---------- parameters ----------

    @property
    def output_weight(self) -> Tensor:
        """The output projection; the same tensor as the input embedding."""
        return self.embedding

    def named_parameters(self) -> Dict[str, Tensor]:
        """Every distinct parameter once, in a stable order."""
        named: Dict[str, Tensor] = {}
        seen = set()

        def collect(tensors: Iterable[Tensor]):
            for t in tensors:
                if id(t) not in seen:
                    seen.add(id(t))
                    named[t.name] = t

        collect([self.embedding, self.lang_embedding])
        for lang in Lang:
            for layer in self.encoder_layers[lang]:
                collect(layer.parameters())
            collect(self.encoder_norm[lang].parameters())
        for lang in Lang:
            for layer in self.decoder_layers[lang]:
                collect(layer.parameters())
            collect(self.decoder_norm[lang].parameters())
        return named

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    def encoder_parameters(self) -> Dict[str, Tensor]:
        """Embeddings, language embeddings and both encoder paths."""
        return {
            name: p for name, p in self.named_parameters().items()
            if name.startswith('encoder.') or name in ('embedding', 'lang_embedding')
        }

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, arrays: Mapping[str, np.ndarray], strict: bool = True):
        """Copy arrays into parameters by name; mismatches are listed in one error."""
        params = self.named_parameters()
        problems = []
        for name, array in arrays.items():
            if name not in params:
                if strict:
                    problems.append(f"unexpected tensor '{name}'")
                continue
            if tuple(array.shape) != params[name].shape:
                problems.append(f"'{name}': checkpoint {tuple(array.shape)} vs model {params[name].shape}")
        if strict:
            problems.extend(f"missing tensor '{name}'" for name in params if name not in arrays)
        if problems:
            raise DataError("Checkpoint does not fit model: " + "; ".join(problems))
        for name, array in arrays.items():
            if name in params:
                params[name].data = np.array(array, dtype=params[name].data.dtype)

    def snapshot(self) -> 'SeqModel':
        """Independent deep copy; sharing between language paths is preserved."""
        return copy.deepcopy(self)

    # ---------- forward ----------

    def _embed(self, ids: np.ndarray, lang: Lang) -> Tensor:
        _, t = ids.shape
        d = self.config.model_dim
        x = scale(embedding_lookup(self.embedding, ids), d ** 0.5)
        x = add(x, Tensor(self.positions.data[:t]))
        lang_vector = reshape(embedding_lookup(self.lang_embedding, np.array([LANG_INDEX[lang]])), (d,))
        return add(x, lang_vector)

    def encode_batch(
        self,
        ids: np.ndarray,
        is_pad: np.ndarray,
        lang: Lang,
        training: bool = False
    ) -> Tuple[Tensor, List[Tensor]]:
        """Returns (final normalized states, per-layer outputs) for a padded batch."""
        rng = self.dropout_rng if training else None
        blocked = is_pad[:, None, None, :]
        x = dropout(self._embed(ids, lang), self.config.dropout, rng, training)
        states = []
        for layer in self.encoder_layers[lang]:
            x = layer(x, blocked, rng, training)
            states.append(x)
        return self.encoder_norm[lang](x), states

    def decode_batch(
        self,
        memory: Tensor,
        memory_pad: np.ndarray,
        dec_ids: np.ndarray,
        dec_pad: np.ndarray,
        lang: Lang,
        training: bool = False
    ) -> Tensor:
        """Logits (B, T, vocab) for teacher-forced decoder input."""
        rng = self.dropout_rng if training else None
        t = dec_ids.shape[1]
        causal = np.triu(np.ones((t, t), dtype=bool), k=1)
        self_blocked = causal[None, None, :, :] | dec_pad[:, None, None, :]
        memory_blocked = memory_pad[:, None, None, :]

        y = dropout(self._embed(dec_ids, lang), self.config.dropout, rng, training)
        for layer in self.decoder_layers[lang]:
            y = layer(y, memory, self_blocked, memory_blocked, rng, training)
        y = self.decoder_norm[lang](y)
        return matmul(y, transpose(self.output_weight, (1, 0)))

    def check_ids(self, ids: Sequence[int], what: str = "input"):
        vocab = self.config.vocab_size
        for i in ids:
            if i < 0 or i >= vocab:
                raise DataError(f"{what} id {i} outside vocabulary range [0, {vocab})")

    def content_ids(self, ids: Sequence[int]) -> List[int]:
        """Drop pad/bos/eos; encoder inputs carry content tokens only."""
        s = self.special_ids
        return [i for i in ids if i not in (s.pad, s.bos, s.eos)]

    def _teacher_forcing(self, pairs: Sequence[TrainingPair]) -> Tuple[np.ndarray, ...]:
        s = self.special_ids
        limit = self.config.max_len
        sources = [self.content_ids(p.source.ids)[:limit] for p in pairs]
        targets = [self.content_ids(p.target.ids)[:limit] for p in pairs]
        for seq in sources:
            if not seq:
                raise DataError("Training pair has an empty source sequence")
            self.check_ids(seq, "source")
        for seq in targets:
            self.check_ids(seq, "target")
        src, src_pad = pad_batch(sources, s.pad)
        dec_in, dec_pad = pad_batch([[s.bos] + t for t in targets], s.pad)
        dec_pad[:, 0] = False
        gold, _ = pad_batch([t + [s.eos] for t in targets], s.pad)
        weights = np.array([p.weight for p in pairs], dtype=np.float64)
        return src, src_pad, dec_in, dec_pad, gold, weights

    def batch_loss(self, pairs: Sequence[TrainingPair], training: bool = False) -> Tuple[Tensor, int]:
        """
        Token-weighted summed cross entropy over a batch, grouped by direction.

        Returns:
            (loss tensor summed over target tokens, number of target tokens)
        """
        groups: Dict[Tuple[Lang, Lang], List[TrainingPair]] = {}
        for pair in pairs:
            groups.setdefault(pair.direction, []).append(pair)

        total: Optional[Tensor] = None
        tokens = 0
        for (in_lang, out_lang), group in sorted(groups.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
            by_weight: Dict[float, List[TrainingPair]] = {}
            for pair in group:
                by_weight.setdefault(float(pair.weight), []).append(pair)
            for weight, chunk in sorted(by_weight.items()):
                src, src_pad, dec_in, dec_pad, gold, _ = self._teacher_forcing(chunk)
                memory, _ = self.encode_batch(src, src_pad, in_lang, training)
                logits = self.decode_batch(memory, src_pad, dec_in, dec_pad, out_lang, training)
                flat = reshape(logits, (-1, self.config.vocab_size))
                loss = cross_entropy(flat, gold.reshape(-1), ignore_index=self.special_ids.pad, reduction="sum")
                if weight != 1.0:
                    loss = scale(loss, weight)
                tokens += int((gold != self.special_ids.pad).sum())
                total = loss if total is None else add(total, loss)
        return total, tokens


# ==================== OPERATIONS ====================

def build_model(config, vocab_size: int, rng: np.random.Generator) -> SeqModel:
    """Fresh SeqModel from an ExperimentConfig's model settings."""
    return SeqModel(ModelConfig.from_config(config, vocab_size), rng)


def encode(model: SeqModel, ids: IdSequence, lang: Lang) -> List[np.ndarray]:
    """
    Hidden states of every encoder layer for one sentence.

    Returns:
        One (len, model_dim) array per encoder layer, bottom first
    """
    content = model.content_ids(ids.ids)
    if not content or all(i in model.special_ids.as_set() for i in content):
        raise DataError("Cannot encode a sequence with no content tokens")
    if len(content) > model.config.max_len:
        raise DataError(f"Sequence length {len(content)} exceeds max_len {model.config.max_len}")
    model.check_ids(content)
    batch, is_pad = pad_batch([content], model.special_ids.pad)
    with no_grad():
        _, states = model.encode_batch(batch, is_pad, lang, training=False)
    return [state.data[0].copy() for state in states]


def greedy_decode_batch(
    model: SeqModel,
    sources: Sequence[IdSequence],
    src_lang: Lang,
    tgt_lang: Lang,
    max_out: Optional[int] = None
) -> List[IdSequence]:
    """
    Argmax decoding of several sentences at once.

    pad, bos and mask ids are never emitted. Decoding of a row stops at eos
    (not included in the output) or after max_out tokens. Empty sources
    decode to empty outputs.
    """
    s = model.special_ids
    limit = model.config.max_len if max_out is None else min(max_out, model.config.max_len)
    outputs: List[List[int]] = [[] for _ in sources]
    live = [i for i, src in enumerate(sources) if model.content_ids(src.ids)]
    if not live or limit <= 0:
        return [IdSequence.plain(out, tgt_lang) for out in outputs]

    contents = [model.content_ids(sources[i].ids)[:model.config.max_len] for i in live]
    for seq in contents:
        model.check_ids(seq)
    src, src_pad = pad_batch(contents, s.pad)
    banned = [s.pad, s.bos, s.mask]

    with no_grad():
        memory, _ = model.encode_batch(src, src_pad, src_lang, training=False)
        prefixes = np.full((len(live), 1), s.bos, dtype=np.int64)
        finished = np.zeros(len(live), dtype=bool)
        for _ in range(limit):
            logits = model.decode_batch(
                memory, src_pad, prefixes, np.zeros(prefixes.shape, dtype=bool), tgt_lang, training=False
            ).data[:, -1, :].copy()
            logits[:, banned] = -np.inf
            chosen = logits.argmax(axis=-1)
            chosen[finished] = s.pad
            for row, token in enumerate(chosen):
                if finished[row]:
                    continue
                if token == s.eos:
                    finished[row] = True
                else:
                    outputs[live[row]].append(int(token))
            if finished.all():
                break
            prefixes = np.concatenate([prefixes, chosen[:, None]], axis=1)

    return [IdSequence.plain(out, tgt_lang) for out in outputs]


def decode_greedy(
    model: SeqModel,
    src_ids: IdSequence,
    src_lang: Lang,
    tgt_lang: Lang,
    max_out: Optional[int] = None
) -> IdSequence:
    """
    Greedy translation of one sentence.

    The configured length penalty does not change argmax choices and is not
    applied.
    """
    return greedy_decode_batch(model, [src_ids], src_lang, tgt_lang, max_out)[0]


def train_step(model: SeqModel, batch: Sequence[TrainingPair], state: AdamState) -> float:
    """
    One Adam update on teacher-forced cross entropy.

    The loss is averaged over non-pad target tokens of the whole batch, with
    each pair's weight applied to its tokens.

    Returns:
        The pre-update mean loss; NaN when the step was skipped
    """
    if not batch:
        raise UsageError("train_step needs a non-empty batch")

    params = model.named_parameters()
    zero_grads(params.values())
    try:
        total, tokens = model.batch_loss(batch, training=True)
        loss = scale(total, 1.0 / max(tokens, 1))
    except NonFiniteError as e:
        state.skipped_steps += 1
        logger.warning(f"[MODEL] Skipping step: {e}")
        return float('nan')

    value = loss.item()
    backward(loss, params.values())
    adam_step(params, None, state)
    return value


def loss_on_batch(model: SeqModel, batch: Sequence[TrainingPair]) -> float:
    """Mean token loss without dropout or updates."""
    if not batch:
        raise UsageError("loss_on_batch needs a non-empty batch")
    with no_grad():
        total, tokens = model.batch_loss(batch, training=False)
    return total.item() / max(tokens, 1)
