"""
Anchored Cross-lingual Pretraining

Masked-language-model pretraining of the shared encoder on a view's
anchored corpus concatenated with the genuine pivot-language corpus. The
pretrained encoder (embeddings included) initializes the encoder of the
matching AT system.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from bilingual_dictionary import BilingualDictionary, anchor_sentence, empty_dictionary
from config import ExperimentConfig
from errors import DataError, NonFiniteError, UsageError
from numerics import AdamState, adam_step, backward, cross_entropy, matmul, reshape, scale, transpose, zero_grads
from subword import SPECIAL_TOKENS, BpeCodec, IdSequence, apply_bpe
from text_corpus import Lang, SentenceTokens
from training_log import TrainingLog
from training_state import TrainingPhase, TrainState
from transformer import SeqModel, pad_batch

logger = logging.getLogger(__name__)


@dataclass
class AcpConfig:
    mask_prob: float = 0.15
    split_mask: float = 0.8
    split_random: float = 0.1
    split_keep: float = 0.1
    steps: int = 2000
    batch_size: int = 32
    anchoring: bool = True
    log_every: int = 100
    pivot: Lang = Lang.TGT

    def __post_init__(self):
        if not 0.0 < self.mask_prob < 1.0:
            raise UsageError(f"acp.mask_prob must be in (0, 1), got {self.mask_prob}")
        splits = (self.split_mask, self.split_random, self.split_keep)
        if any(p < 0 for p in splits) or abs(sum(splits) - 1.0) > 1e-6:
            raise UsageError(f"acp mask/random/keep split must be non-negative and sum to 1, got {splits}")
        if self.steps < 0 or self.batch_size <= 0:
            raise UsageError("acp.steps must be >= 0 and acp.batch_size positive")

    @property
    def anchored_lang(self) -> Lang:
        return self.pivot.other()

    @classmethod
    def from_config(cls, config: ExperimentConfig, pivot: Lang = Lang.TGT) -> 'AcpConfig':
        acp = config.section('acp')
        return cls(
            mask_prob=float(acp['mask_prob']),
            split_mask=float(acp['split_mask']),
            split_random=float(acp['split_random']),
            split_keep=float(acp['split_keep']),
            steps=int(acp['steps']),
            batch_size=int(acp['batch_size']),
            anchoring=bool(acp['anchoring']),
            log_every=max(1, int(config['at.eval_every']) // 5),
            pivot=Lang.parse(pivot),
        )


@dataclass
class MaskedBatch:
    """Model input with masked positions and the originals to predict there."""
    inputs: np.ndarray
    is_pad: np.ndarray
    targets: np.ndarray
    lang: Lang

    @property
    def selected(self) -> int:
        return int((self.targets != -1).sum())


@dataclass
class AcpResult:
    model: SeqModel
    log: TrainingLog
    state: TrainState
    losses: List[float] = field(default_factory=list)


def build_acp_corpus(
    corpora: Mapping[Lang, Sequence[SentenceTokens]],
    dictionary: BilingualDictionary,
    codec: BpeCodec,
    rng: np.random.Generator,
    pivot: Lang = Lang.TGT,
    max_len: Optional[int] = None
) -> List[IdSequence]:
    """
    Anchored non-pivot corpus plus genuine pivot corpus, shuffled.

    Args:
        corpora: Monolingual corpora of both languages
        dictionary: Non-pivot -> pivot dictionary; an empty one gives the
            plain concatenated bilingual corpus
        codec: Joint BPE codec
        rng: Shuffle stream
        pivot: Language the anchors are written in

    Returns:
        |src| + |tgt| encoded sentences in a deterministic shuffled order
    """
    anchored_lang = pivot.other()
    if dictionary.direction != (anchored_lang, pivot):
        raise UsageError(
            f"ACP with pivot {pivot.value} needs a {anchored_lang.value}->{pivot.value} dictionary"
        )
    anchored = corpora.get(anchored_lang) or []
    genuine = corpora.get(pivot) or []
    if not anchored or not genuine:
        raise DataError("ACP needs non-empty corpora for both languages")

    corpus = [apply_bpe(codec, anchor_sentence(s, dictionary), max_len) for s in anchored]
    corpus.extend(apply_bpe(codec, s, max_len) for s in genuine)
    order = rng.permutation(len(corpus))
    logger.info(
        f"[ACP] Built corpus: {len(anchored)} anchored {anchored_lang.value} + "
        f"{len(genuine)} genuine {pivot.value} sentences"
    )
    return [corpus[i] for i in order]


def mask_batch(
    batch: Sequence[IdSequence],
    cfg: AcpConfig,
    model: SeqModel,
    rng: np.random.Generator
) -> MaskedBatch:
    """
    Cloze corruption of one same-language batch.

    Each content position is selected with probability mask_prob (at least
    one per sentence). Selected positions become <mask>, a random
    non-special unit, or stay unchanged per the configured split. Targets
    are -1 everywhere except selected positions.
    """
    s = model.special_ids
    protected = (s.pad, s.bos, s.eos)
    vocab = model.config.vocab_size
    first_regular = len(SPECIAL_TOKENS)
    sequences = [model.content_ids(seq.ids)[:model.config.max_len] for seq in batch]
    if any(not seq for seq in sequences):
        raise DataError("ACP batch contains an empty sentence")

    inputs, is_pad = pad_batch(sequences, s.pad)
    targets = np.full(inputs.shape, -1, dtype=np.int64)
    for row, seq in enumerate(sequences):
        eligible = np.array([i not in protected for i in seq], dtype=bool)
        if not eligible.any():
            continue
        chosen = (rng.random(len(seq)) < cfg.mask_prob) & eligible
        if not chosen.any():
            chosen[int(rng.choice(np.flatnonzero(eligible)))] = True
        for pos in np.flatnonzero(chosen):
            targets[row, pos] = seq[pos]
            draw = rng.random()
            if draw < cfg.split_mask:
                inputs[row, pos] = s.mask
            elif draw < cfg.split_mask + cfg.split_random and vocab > first_regular:
                inputs[row, pos] = int(rng.integers(first_regular, vocab))
    return MaskedBatch(inputs=inputs, is_pad=is_pad, targets=targets, lang=batch[0].lang)


def mlm_loss(model: SeqModel, masked: MaskedBatch, training: bool = True):
    """Summed cross entropy at selected positions through the tied projection."""
    states, _ = model.encode_batch(masked.inputs, masked.is_pad, masked.lang, training)
    logits = matmul(states, transpose(model.output_weight, (1, 0)))
    flat = reshape(logits, (-1, model.config.vocab_size))
    return cross_entropy(flat, masked.targets.reshape(-1), ignore_index=-1, reduction="sum")


def mlm_step(
    model: SeqModel,
    batch: Sequence[IdSequence],
    cfg: AcpConfig,
    optimizer: AdamState,
    rng: np.random.Generator
) -> float:
    """
    One Adam update of the encoder and embeddings on a mixed-language batch.

    Returns:
        Mean loss per selected position; NaN when the step was skipped
    """
    params = model.encoder_parameters()
    zero_grads(model.parameters())

    by_lang: Dict[Lang, List[IdSequence]] = {}
    for seq in batch:
        if len(seq):
            by_lang.setdefault(seq.lang, []).append(seq)
    if not by_lang:
        raise DataError("ACP batch has no content")

    try:
        total = None
        selected = 0
        for lang in sorted(by_lang, key=lambda l: l.value):
            masked = mask_batch(by_lang[lang], cfg, model, rng)
            loss = mlm_loss(model, masked)
            selected += masked.selected
            total = loss if total is None else total + loss
        mean = scale(total, 1.0 / max(selected, 1))
    except NonFiniteError as e:
        optimizer.skipped_steps += 1
        logger.warning(f"[ACP] Skipping step: {e}")
        return float('nan')

    value = mean.item()
    backward(mean, params.values())
    adam_step(params, None, optimizer)
    return value


def pretrain_mlm(
    model: SeqModel,
    corpus: Sequence[IdSequence],
    cfg: AcpConfig,
    config: ExperimentConfig,
    optimizer: Optional[AdamState] = None
) -> AcpResult:
    """
    Run cfg.steps masked-LM updates over the corpus.

    Args:
        model: Trained in place; only encoder paths and embeddings change
        corpus: Output of build_acp_corpus
        cfg: ACP settings
        config: Experiment config (optimizer settings and seed)
        optimizer: Adam state to continue from

    Returns:
        AcpResult with the per-step losses
    """
    corpus = [seq for seq in corpus if len(seq)]
    if not corpus:
        raise DataError("ACP corpus is empty")

    state = TrainState(
        phase=TrainingPhase.ACP_PRETRAIN,
        optimizer=optimizer if optimizer is not None else AdamState.from_config(config.section('optim')),
        rng=config.rng(f"acp.{cfg.pivot.value}.shuffle"),
        name=f"acp_{cfg.pivot.value}_view",
    )
    mask_rng = config.rng(f"acp.{cfg.pivot.value}.mask")
    log = TrainingLog(run_name=state.name, config=config.to_dict())
    losses: List[float] = []

    batch_size = min(cfg.batch_size, len(corpus))
    order = state.rng.permutation(len(corpus))
    position = 0
    logger.info(f"[ACP] Pretraining for {cfg.steps} steps on {len(corpus)} sentences")

    for step in range(1, cfg.steps + 1):
        state.round = step
        if position + batch_size > len(corpus):
            order = state.rng.permutation(len(corpus))
            position = 0
        batch = [corpus[i] for i in order[position:position + batch_size]]
        position += batch_size

        loss = mlm_step(model, batch, cfg, state.optimizer, mask_rng)
        losses.append(loss)
        log.record(step, mlm=loss)
        if step % cfg.log_every == 0:
            recent = [l for l in losses[-cfg.log_every:] if np.isfinite(l)]
            logger.info(f"[ACP] step {step}: mean mlm loss {np.mean(recent) if recent else float('nan'):.4f}")

    log.finish(converged=False)
    return AcpResult(model=model, log=log, state=state, losses=losses)


def init_at_from_acp(at_model: SeqModel, acp_model: SeqModel) -> SeqModel:
    """
    Copy the pretrained encoder stacks and embeddings into an AT model.

    The decoder keeps its fresh initialization apart from the tied
    embedding table. Any missing or differently shaped tensor is reported
    in a single DataError.
    """
    source = acp_model.encoder_parameters()
    target = at_model.encoder_parameters()
    problems = []
    for name, param in target.items():
        if name not in source:
            problems.append(f"missing '{name}'")
        elif source[name].shape != param.shape:
            problems.append(f"'{name}': pretrained {source[name].shape} vs model {param.shape}")
    if problems:
        raise DataError("Pretrained encoder does not fit the AT model: " + "; ".join(problems))

    for name, param in target.items():
        param.data = source[name].data.astype(param.data.dtype, copy=True)
    logger.info(f"[ACP] Initialized {len(target)} encoder tensors from pretrained weights")
    return at_model


def acp_dictionary(dictionary: Optional[BilingualDictionary], cfg: AcpConfig) -> BilingualDictionary:
    """The dictionary ACP anchors with; empty when anchoring is off."""
    if dictionary is None or not cfg.anchoring:
        return empty_dictionary((cfg.anchored_lang, cfg.pivot))
    return dictionary
