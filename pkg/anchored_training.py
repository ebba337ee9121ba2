"""
Anchored Training and Bi-view Anchored Training

A view fixes the pivot language P whose words serve as anchors; the other
language A is always fed to the model in anchored form (dictionary-covered
words replaced by their P translations). In the target-language view
P = tgt and A = src.

One AT round:
    1. generate pseudo-P from anchored A and pseudo-A from raw P, both with
       the parameters as they are at round start
    2. train P->A on (pseudo-P, anchored A) and A->P on (pseudo-A, raw P)
    3. one denoising step per language: corrupt(x) -> x

Bi-view AT trains both views, then keeps training two combined models:
    src->tgt, started from the target view, on pseudo pairs whose outputs
    are genuine tgt sentences from both views;
    tgt->src, started from the source view, on the mirror-image pairs.
Pseudo sentences produced by the opposite view are re-anchored through the
dictionary before use.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from bilingual_dictionary import (
    BilingualDictionary,
    anchor_sentence,
    coverage_stats,
    empty_dictionary,
)
from config import ExperimentConfig
from errors import DataError, UsageError
from evaluation import BleuReport, bleu
from noise_model import NoiseConfig, corrupt
from numerics import AdamState
from subword import BpeCodec, IdSequence, apply_bpe, detokenize
from text_corpus import Lang, SentenceTokens
from training_log import TrainingLog
from training_state import ConvergenceTracker, TrainingPhase, TrainState
from transformer import (
    SeqModel,
    TrainingPair,
    build_model,
    greedy_decode_batch,
    train_step,
)

logger = logging.getLogger(__name__)

ParallelPairs = Sequence[Tuple[SentenceTokens, SentenceTokens]]


# ==================== TYPES ====================

@dataclass(frozen=True)
class ViewSpec:
    """The pivot language anchors are written in."""
    pivot: Lang

    @property
    def anchored_lang(self) -> Lang:
        return self.pivot.other()

    @property
    def name(self) -> str:
        return f"{self.pivot.value}_view"

    @classmethod
    def target_view(cls) -> 'ViewSpec':
        return cls(Lang.TGT)

    @classmethod
    def source_view(cls) -> 'ViewSpec':
        return cls(Lang.SRC)

    def check_dictionary(self, dictionary: BilingualDictionary):
        if dictionary.direction != (self.anchored_lang, self.pivot):
            raise UsageError(
                f"{self.name} needs a {self.anchored_lang.value}->{self.pivot.value} dictionary, "
                f"got {dictionary.source_lang.value}->{dictionary.target_lang.value}"
            )


@dataclass
class PseudoPair:
    """A machine-generated input paired with a corpus (possibly anchored) output."""
    input: IdSequence
    output: IdSequence
    direction: Tuple[Lang, Lang]

    def to_training_pair(self, weight: float = 1.0) -> TrainingPair:
        return TrainingPair(self.input, self.output, self.direction[0], self.direction[1], weight)


@dataclass
class ATConfig:
    batch_size: int = 32
    max_len: int = 64
    denoise_weight: float = 1.0
    max_steps: int = 20000
    eval_every: int = 500
    patience: int = 5
    min_delta: float = 0.2
    biview_gen_batch_multiplier: int = 4
    biview_max_rounds: int = 2000
    biview_denoise: bool = True
    anchoring: bool = True

    def __post_init__(self):
        for name in ('batch_size', 'max_len', 'eval_every', 'biview_gen_batch_multiplier'):
            if getattr(self, name) <= 0:
                raise UsageError(f"at.{name} must be positive, got {getattr(self, name)}")
        if self.max_steps < 0 or self.biview_max_rounds < 0:
            raise UsageError("at.max_steps and at.biview_max_rounds must be >= 0")
        if self.denoise_weight < 0:
            raise UsageError(f"at.denoise_weight must be >= 0, got {self.denoise_weight}")
        if self.patience < 1:
            raise UsageError(f"at.patience must be >= 1, got {self.patience}")

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> 'ATConfig':
        at = config.section('at')
        return cls(
            batch_size=int(at['batch_size']),
            max_len=int(config['bpe.max_len']),
            denoise_weight=float(at['denoise_weight']),
            max_steps=int(at['max_steps']),
            eval_every=int(at['eval_every']),
            patience=int(at['patience']),
            min_delta=float(at['min_delta']),
            biview_gen_batch_multiplier=int(at['biview_gen_batch_multiplier']),
            biview_max_rounds=int(at['biview_max_rounds']),
            biview_denoise=bool(at['biview_denoise']),
            anchoring=bool(at['anchoring']),
        )


@dataclass
class RoundResult:
    bt_fwd: Optional[float]
    bt_bwd: Optional[float]
    denoise: Optional[float]
    pairs: List[PseudoPair] = field(default_factory=list)

    def losses(self) -> Dict[str, Optional[float]]:
        return {'bt_fwd': self.bt_fwd, 'bt_bwd': self.bt_bwd, 'denoise': self.denoise}


@dataclass
class ATResult:
    model: SeqModel
    log: TrainingLog
    state: TrainState
    best_val_bleu: Optional[float] = None


@dataclass
class BiviewResult:
    model_src2tgt: SeqModel
    model_tgt2src: SeqModel
    log: TrainingLog
    views: Dict[Lang, ATResult]


class BatchCursor:
    """Endless batches of indices; the order is reshuffled every epoch."""

    def __init__(self, size: int, batch_size: int, rng: np.random.Generator):
        if size <= 0:
            raise DataError("Cannot draw batches from an empty corpus")
        self.size = size
        self.batch_size = min(batch_size, size)
        self.rng = rng
        self.order = rng.permutation(size)
        self.position = 0
        self.epoch = 0

    def next(self) -> np.ndarray:
        if self.position + self.batch_size > self.size:
            self.order = self.rng.permutation(self.size)
            self.position = 0
            self.epoch += 1
        batch = self.order[self.position:self.position + self.batch_size]
        self.position += self.batch_size
        return batch


# ==================== HELPERS ====================

def _decode_limit(batch: Sequence[IdSequence], max_len: int) -> int:
    longest = max((len(s) for s in batch), default=0)
    return max(1, min(max_len, int(1.5 * longest) + 4))


def _mean(values: Sequence[float]) -> Optional[float]:
    finite = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(finite)) if finite else None


def _train_chunks(
    model: SeqModel,
    pairs: Sequence[TrainingPair],
    optimizer: AdamState,
    batch_size: int
) -> Optional[float]:
    losses = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        if chunk:
            losses.append(train_step(model, chunk, optimizer))
    return _mean(losses)


def make_pseudo_pairs(
    inputs: Sequence[IdSequence],
    outputs: Sequence[IdSequence],
    direction: Tuple[Lang, Lang]
) -> List[PseudoPair]:
    """Pair generated inputs with corpus outputs, dropping empty generations."""
    pairs = [
        PseudoPair(generated, genuine, direction)
        for generated, genuine in zip(inputs, outputs)
        if len(generated) > 0 and len(genuine) > 0
    ]
    dropped = len(inputs) - len(pairs)
    if dropped:
        logger.debug(f"[AT] Dropped {dropped} empty pseudo pairs for {direction[0].value}->{direction[1].value}")
    return pairs


def denoise_step(
    model: SeqModel,
    batch: Sequence[IdSequence],
    lang: Lang,
    noise: NoiseConfig,
    optimizer: AdamState,
    weight: float
) -> Optional[float]:
    """Train lang->lang on (corrupt(x), x)."""
    pairs = [
        TrainingPair(corrupt(x, noise), x, lang, lang, weight)
        for x in batch if len(x) > 0
    ]
    if not pairs:
        return None
    return train_step(model, pairs, optimizer)


# ==================== AT ====================

def at_round(
    model: SeqModel,
    anchored_batch: Sequence[IdSequence],
    pivot_batch: Sequence[IdSequence],
    cfg: ATConfig,
    optimizer: AdamState,
    noise: NoiseConfig
) -> RoundResult:
    """
    One round of anchored back-translation plus denoising.

    Args:
        model: Trained in place
        anchored_batch: Anchored sentences of the non-pivot language A
        pivot_batch: Raw sentences of the pivot language P
        cfg: Round settings (max_len, denoise_weight)
        optimizer: Adam state, updated in place
        noise: Corruption settings for denoising

    Returns:
        RoundResult with bt_fwd (A->P), bt_bwd (P->A), denoise (None when
        skipped) and the pseudo pairs used
    """
    if not anchored_batch or not pivot_batch:
        raise DataError("at_round needs non-empty batches for both languages")
    a_lang = anchored_batch[0].lang
    p_lang = pivot_batch[0].lang
    if a_lang is p_lang:
        raise UsageError("at_round batches must be in different languages")

    pseudo_pivot = greedy_decode_batch(
        model, anchored_batch, a_lang, p_lang, _decode_limit(anchored_batch, cfg.max_len)
    )
    pseudo_anchored = greedy_decode_batch(
        model, pivot_batch, p_lang, a_lang, _decode_limit(pivot_batch, cfg.max_len)
    )

    bwd_pairs = make_pseudo_pairs(pseudo_pivot, anchored_batch, (p_lang, a_lang))
    fwd_pairs = make_pseudo_pairs(pseudo_anchored, pivot_batch, (a_lang, p_lang))

    bt_bwd = train_step(model, [p.to_training_pair() for p in bwd_pairs], optimizer) if bwd_pairs else None
    bt_fwd = train_step(model, [p.to_training_pair() for p in fwd_pairs], optimizer) if fwd_pairs else None

    denoise = None
    if cfg.denoise_weight > 0:
        denoise = _mean([
            denoise_step(model, anchored_batch, a_lang, noise, optimizer, cfg.denoise_weight),
            denoise_step(model, pivot_batch, p_lang, noise, optimizer, cfg.denoise_weight),
        ])

    return RoundResult(bt_fwd=bt_fwd, bt_bwd=bt_bwd, denoise=denoise, pairs=bwd_pairs + fwd_pairs)


def encode_view_corpora(
    view: ViewSpec,
    corpora: Mapping[Lang, Sequence[SentenceTokens]],
    dictionary: BilingualDictionary,
    codec: BpeCodec,
    max_len: int
) -> Tuple[List[IdSequence], List[IdSequence]]:
    """(anchored A ids, raw P ids) with empty encodings removed."""
    anchored = [apply_bpe(codec, anchor_sentence(s, dictionary), max_len) for s in corpora[view.anchored_lang]]
    pivot = [apply_bpe(codec, s, max_len) for s in corpora[view.pivot]]
    return [s for s in anchored if len(s)], [s for s in pivot if len(s)]


def translate(
    model: SeqModel,
    sentence: SentenceTokens,
    dictionary: Optional[BilingualDictionary],
    codec: BpeCodec,
    max_out: Optional[int] = None,
    anchoring: bool = True
) -> SentenceTokens:
    """anchor_sentence -> apply_bpe -> decode_greedy -> detokenize."""
    return translate_batch(model, [sentence], dictionary, codec, max_out, anchoring)[0]


def translate_batch(
    model: SeqModel,
    sentences: Sequence[SentenceTokens],
    dictionary: Optional[BilingualDictionary],
    codec: BpeCodec,
    max_out: Optional[int] = None,
    anchoring: bool = True,
    batch_size: int = 64
) -> List[SentenceTokens]:
    if not sentences:
        return []
    src_lang = sentences[0].lang
    tgt_lang = src_lang.other()
    if any(s.lang is not src_lang for s in sentences):
        raise UsageError("translate_batch needs sentences of a single language")
    if dictionary is None or not anchoring:
        dictionary = empty_dictionary((src_lang, tgt_lang))

    encoded = [apply_bpe(codec, anchor_sentence(s, dictionary), model.config.max_len) for s in sentences]
    outputs: List[SentenceTokens] = []
    for start in range(0, len(encoded), batch_size):
        chunk = encoded[start:start + batch_size]
        limit = max_out if max_out is not None else _decode_limit(chunk, model.config.max_len)
        for ids in greedy_decode_batch(model, chunk, src_lang, tgt_lang, limit):
            outputs.append(detokenize(codec, ids))
    return outputs


def evaluate_direction(
    model: SeqModel,
    pairs: ParallelPairs,
    dictionary: Optional[BilingualDictionary],
    codec: BpeCodec,
    anchoring: bool = True
) -> BleuReport:
    """BLEU of translating each pair's first sentence against its second."""
    if not pairs:
        raise DataError("evaluate_direction needs at least one sentence pair")
    hypotheses = translate_batch(model, [s for s, _ in pairs], dictionary, codec, anchoring=anchoring)
    return bleu(hypotheses, [r for _, r in pairs])


def orient_pairs(pairs: ParallelPairs, source_lang: Lang) -> List[Tuple[SentenceTokens, SentenceTokens]]:
    """Order each parallel pair so its first sentence is in source_lang."""
    oriented = []
    for a, b in pairs:
        oriented.append((a, b) if a.lang is source_lang else (b, a))
    return oriented


def train_at(
    view: ViewSpec,
    corpora: Mapping[Lang, Sequence[SentenceTokens]],
    dictionary: BilingualDictionary,
    cfg: ATConfig,
    codec: BpeCodec,
    config: ExperimentConfig,
    init_model: Optional[SeqModel] = None,
    validation: Optional[ParallelPairs] = None,
    optimizer: Optional[AdamState] = None
) -> ATResult:
    """
    Anchored training under one view until validation BLEU plateaus or
    max_steps rounds have run.

    Args:
        view: Pivot language
        corpora: Monolingual corpora of both languages
        dictionary: Anchored-language -> pivot dictionary
        cfg: AT settings
        codec: Joint BPE codec
        config: Experiment config (model, optim, noise settings and seed)
        init_model: Starting model; a fresh one is built when None
        validation: Parallel pairs, evaluated in the anchored -> pivot direction
        optimizer: Adam state to continue from

    Returns:
        ATResult; with validation, the model is the best-scoring snapshot
    """
    view.check_dictionary(dictionary)
    for lang in Lang:
        if not corpora.get(lang):
            raise DataError(f"The {lang.value} corpus is empty")

    if not cfg.anchoring:
        dictionary = empty_dictionary(dictionary.direction)
        logger.info(f"[AT] {view.name}: anchoring disabled")
    else:
        report = coverage_stats(corpora[view.anchored_lang], dictionary)
        logger.info(f"[AT] {view.name}: dictionary coverage {report.to_json()}")
        if report.covered_tokens == 0:
            logger.warning(
                f"[AT] {view.name}: dictionary covers no {view.anchored_lang.value} tokens; "
                f"training proceeds without anchors"
            )

    model = init_model if init_model is not None else build_model(config, codec.vocab_size, config.rng(f"model.{view.name}"))
    state = TrainState(
        phase=TrainingPhase.MONO_VIEW,
        optimizer=optimizer if optimizer is not None else AdamState.from_config(config.section('optim')),
        rng=config.rng(f"at.{view.name}.shuffle"),
        convergence=ConvergenceTracker(cfg.patience, cfg.min_delta),
        name=view.name,
    )
    noise = NoiseConfig.from_config(config, config.rng(f"at.{view.name}.noise"))
    log = TrainingLog(run_name=f"at_{view.name}", config=config.to_dict())

    if cfg.max_steps == 0:
        log.finish(converged=False)
        return ATResult(model, log, state)

    anchored_ids, pivot_ids = encode_view_corpora(view, corpora, dictionary, codec, cfg.max_len)
    anchored_cursor = BatchCursor(len(anchored_ids), cfg.batch_size, state.rng)
    pivot_cursor = BatchCursor(len(pivot_ids), cfg.batch_size, state.rng)
    valid_pairs = orient_pairs(validation, view.anchored_lang) if validation else None

    best_model = None
    logger.info(
        f"[AT] {view.name}: {len(anchored_ids)} anchored {view.anchored_lang.value} / "
        f"{len(pivot_ids)} {view.pivot.value} sentences, up to {cfg.max_steps} rounds"
    )

    for step in range(1, cfg.max_steps + 1):
        state.round = step
        result = at_round(
            model,
            [anchored_ids[i] for i in anchored_cursor.next()],
            [pivot_ids[i] for i in pivot_cursor.next()],
            cfg,
            state.optimizer,
            noise,
        )
        if result.bt_fwd is None and result.bt_bwd is None:
            state.skipped_rounds += 1

        val_bleu = None
        if valid_pairs and (step % cfg.eval_every == 0 or step == cfg.max_steps):
            val_bleu = evaluate_direction(model, valid_pairs, dictionary, codec).bleu
            if state.convergence.update(val_bleu):
                best_model = model.snapshot()
            logger.info(
                f"[AT] {view.name} round {step}: bt_fwd={result.bt_fwd} bt_bwd={result.bt_bwd} "
                f"denoise={result.denoise} val_bleu={val_bleu:.2f} (best {state.convergence.best:.2f})"
            )
        elif step % cfg.eval_every == 0:
            logger.info(
                f"[AT] {view.name} round {step}: bt_fwd={result.bt_fwd} bt_bwd={result.bt_bwd} denoise={result.denoise}"
            )

        log.record(step, **result.losses(), val_bleu=val_bleu)
        if state.convergence.converged:
            logger.info(f"[AT] {view.name} converged after {step} rounds")
            break

    converged = state.convergence.converged
    if converged:
        state.transition_to(TrainingPhase.CONVERGED)
    log.finish(converged=converged)
    return ATResult(best_model or model, log, state, state.convergence.best)


# ==================== BI-VIEW ====================

ViewRunner = Callable[[Dict[Lang, BilingualDictionary]], Dict[Lang, ATResult]]


def _reanchor(
    codec: BpeCodec,
    generated: Sequence[IdSequence],
    dictionary: BilingualDictionary,
    max_len: int
) -> List[IdSequence]:
    """Detokenize machine output and anchor it through the dictionary."""
    result = []
    for ids in generated:
        sentence = detokenize(codec, ids, dictionary.source_lang)
        result.append(apply_bpe(codec, anchor_sentence(sentence, dictionary), max_len) if len(sentence) else ids)
    return result


def biview_round(
    model_src2tgt: SeqModel,
    model_tgt2src: SeqModel,
    src_batch: Sequence[SentenceTokens],
    tgt_batch: Sequence[SentenceTokens],
    dict_fwd: BilingualDictionary,
    dict_bwd: BilingualDictionary,
    codec: BpeCodec,
    cfg: ATConfig,
    optimizers: Dict[str, AdamState],
    noise: NoiseConfig
) -> RoundResult:
    """
    One generation + training pass of the view combination.

    The src->tgt model (target-view lineage) and the tgt->src model
    (source-view lineage) both generate before either trains.
    """
    max_len = cfg.max_len
    s_raw = [apply_bpe(codec, s, max_len) for s in src_batch]
    t_raw = [apply_bpe(codec, t, max_len) for t in tgt_batch]
    s_anchored = [apply_bpe(codec, anchor_sentence(s, dict_fwd), max_len) for s in src_batch]
    t_anchored = [apply_bpe(codec, anchor_sentence(t, dict_bwd), max_len) for t in tgt_batch]

    # generation, parameters frozen for the whole round
    t_view_pseudo_src = greedy_decode_batch(model_src2tgt, t_raw, Lang.TGT, Lang.SRC, _decode_limit(t_raw, max_len))
    s_view_pseudo_src = greedy_decode_batch(model_tgt2src, t_anchored, Lang.TGT, Lang.SRC, _decode_limit(t_anchored, max_len))
    s_view_pseudo_tgt = greedy_decode_batch(model_tgt2src, s_raw, Lang.SRC, Lang.TGT, _decode_limit(s_raw, max_len))
    t_view_pseudo_tgt = greedy_decode_batch(model_src2tgt, s_anchored, Lang.SRC, Lang.TGT, _decode_limit(s_anchored, max_len))

    solid = (
        make_pseudo_pairs(t_view_pseudo_src, t_raw, (Lang.SRC, Lang.TGT))
        + make_pseudo_pairs(_reanchor(codec, s_view_pseudo_src, dict_fwd, max_len), t_raw, (Lang.SRC, Lang.TGT))
    )
    dashed = (
        make_pseudo_pairs(s_view_pseudo_tgt, s_raw, (Lang.TGT, Lang.SRC))
        + make_pseudo_pairs(_reanchor(codec, t_view_pseudo_tgt, dict_bwd, max_len), s_raw, (Lang.TGT, Lang.SRC))
    )

    order_rng = noise.rng
    solid_order = order_rng.permutation(len(solid))
    dashed_order = order_rng.permutation(len(dashed))
    bt_fwd = _train_chunks(
        model_src2tgt, [solid[i].to_training_pair() for i in solid_order], optimizers['src2tgt'], cfg.batch_size
    )
    bt_bwd = _train_chunks(
        model_tgt2src, [dashed[i].to_training_pair() for i in dashed_order], optimizers['tgt2src'], cfg.batch_size
    )

    denoise = None
    if cfg.biview_denoise and cfg.denoise_weight > 0:
        losses = []
        for start in range(0, len(src_batch), cfg.batch_size):
            end = start + cfg.batch_size
            losses.append(denoise_step(model_src2tgt, s_anchored[start:end], Lang.SRC, noise, optimizers['src2tgt'], cfg.denoise_weight))
            losses.append(denoise_step(model_src2tgt, t_raw[start:end], Lang.TGT, noise, optimizers['src2tgt'], cfg.denoise_weight))
            losses.append(denoise_step(model_tgt2src, t_anchored[start:end], Lang.TGT, noise, optimizers['tgt2src'], cfg.denoise_weight))
            losses.append(denoise_step(model_tgt2src, s_raw[start:end], Lang.SRC, noise, optimizers['tgt2src'], cfg.denoise_weight))
        denoise = _mean(losses)

    return RoundResult(bt_fwd=bt_fwd, bt_bwd=bt_bwd, denoise=denoise, pairs=solid + dashed)


def train_views_serially(
    corpora: Mapping[Lang, Sequence[SentenceTokens]],
    dictionaries: Dict[Lang, BilingualDictionary],
    cfg: ATConfig,
    codec: BpeCodec,
    config: ExperimentConfig,
    init_models: Optional[Dict[Lang, SeqModel]] = None,
    validation: Optional[ParallelPairs] = None
) -> Dict[Lang, ATResult]:
    """Mono-view AT for each pivot in dictionaries, one after the other."""
    results = {}
    for pivot, dictionary in dictionaries.items():
        init = (init_models or {}).get(pivot)
        results[pivot] = train_at(ViewSpec(pivot), corpora, dictionary, cfg, codec, config, init, validation)
    return results


def train_biview(
    corpora: Mapping[Lang, Sequence[SentenceTokens]],
    dict_fwd: BilingualDictionary,
    dict_bwd: BilingualDictionary,
    cfg: ATConfig,
    codec: BpeCodec,
    config: ExperimentConfig,
    init_models: Optional[Dict[Lang, SeqModel]] = None,
    validation: Optional[ParallelPairs] = None,
    view_runner: Optional[ViewRunner] = None
) -> BiviewResult:
    """
    Bi-view AT.

    Args:
        corpora: Monolingual corpora of both languages
        dict_fwd: src -> tgt dictionary (target view, re-anchoring src text)
        dict_bwd: tgt -> src dictionary (source view, re-anchoring tgt text)
        cfg: AT settings; biview_max_rounds bounds the combination phase
        codec: Joint BPE codec
        config: Experiment config
        init_models: Optional starting models keyed by view pivot
        validation: Parallel pairs for convergence checks
        view_runner: Replaces serial phase-1 training (parallel workers)

    Returns:
        BiviewResult with the combined src->tgt and tgt->src models
    """
    if dict_fwd.direction != (Lang.SRC, Lang.TGT) or dict_bwd.direction != (Lang.TGT, Lang.SRC):
        raise UsageError("train_biview needs a src->tgt and a tgt->src dictionary")
    if not cfg.anchoring:
        dict_fwd = empty_dictionary(dict_fwd.direction)
        dict_bwd = empty_dictionary(dict_bwd.direction)

    dictionaries = {Lang.TGT: dict_fwd, Lang.SRC: dict_bwd}
    if view_runner is not None:
        views = view_runner(dictionaries)
    else:
        views = train_views_serially(corpora, dictionaries, cfg, codec, config, init_models, validation)

    log = TrainingLog(run_name="biview", config=config.to_dict())
    for pivot in (Lang.TGT, Lang.SRC):
        log.extend(views[pivot].log, phase=TrainingPhase.MONO_VIEW.value, view=ViewSpec(pivot).name)

    model_src2tgt = views[Lang.TGT].model.snapshot()
    model_tgt2src = views[Lang.SRC].model.snapshot()
    if cfg.biview_max_rounds == 0:
        log.finish(converged=False)
        return BiviewResult(model_src2tgt, model_tgt2src, log, views)

    optimizers = {
        'src2tgt': views[Lang.TGT].state.optimizer.copy(),
        'tgt2src': views[Lang.SRC].state.optimizer.copy(),
    }
    state = TrainState(
        phase=TrainingPhase.MONO_VIEW,
        rng=config.rng("biview.shuffle"),
        convergence=ConvergenceTracker(cfg.patience, cfg.min_delta),
        name="biview",
    )
    state.transition_to(TrainingPhase.BIVIEW_COMBINE)
    noise = NoiseConfig.from_config(config, config.rng("biview.noise"))

    src_corpus = [s for s in corpora[Lang.SRC] if len(s)]
    tgt_corpus = [t for t in corpora[Lang.TGT] if len(t)]
    gen_size = cfg.batch_size * cfg.biview_gen_batch_multiplier
    src_cursor = BatchCursor(len(src_corpus), gen_size, state.rng)
    tgt_cursor = BatchCursor(len(tgt_corpus), gen_size, state.rng)
    forward_pairs = orient_pairs(validation, Lang.SRC) if validation else None
    backward_pairs = orient_pairs(validation, Lang.TGT) if validation else None
    best = None

    logger.info(f"[BIVIEW] Combining views: up to {cfg.biview_max_rounds} rounds, generation batch {gen_size}")
    for step in range(1, cfg.biview_max_rounds + 1):
        state.round = step
        result = biview_round(
            model_src2tgt,
            model_tgt2src,
            [src_corpus[i] for i in src_cursor.next()],
            [tgt_corpus[i] for i in tgt_cursor.next()],
            dict_fwd,
            dict_bwd,
            codec,
            cfg,
            optimizers,
            noise,
        )

        val_bleu = val_bleu_rev = None
        if forward_pairs and (step % cfg.eval_every == 0 or step == cfg.biview_max_rounds):
            val_bleu = evaluate_direction(model_src2tgt, forward_pairs, dict_fwd, codec).bleu
            val_bleu_rev = evaluate_direction(model_tgt2src, backward_pairs, dict_bwd, codec).bleu
            if state.convergence.update((val_bleu + val_bleu_rev) / 2):
                best = (model_src2tgt.snapshot(), model_tgt2src.snapshot())
            logger.info(
                f"[BIVIEW] round {step}: bt_fwd={result.bt_fwd} bt_bwd={result.bt_bwd} "
                f"denoise={result.denoise} val_bleu={val_bleu:.2f}/{val_bleu_rev:.2f}"
            )

        log.record(
            step, **result.losses(), val_bleu=val_bleu, val_bleu_rev=val_bleu_rev,
            phase=TrainingPhase.BIVIEW_COMBINE.value
        )
        if state.convergence.converged:
            logger.info(f"[BIVIEW] Converged after {step} rounds")
            break

    converged = state.convergence.converged
    if converged:
        state.transition_to(TrainingPhase.CONVERGED)
    log.finish(converged=converged)
    if best is not None:
        model_src2tgt, model_tgt2src = best
    return BiviewResult(model_src2tgt, model_tgt2src, log, views)
