"""
anchormt Command Line

Batch entry point for the whole pipeline. Every subcommand prints one JSON
object (result plus the resolved config) on stdout, or writes it to --out;
logs go to stderr. Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.

Usage:
    python cli.py [global flags] <subcommand> [flags]
    python cli.py --set at.max_steps=200 train-at --src train.src --tgt train.tgt ...
"""

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from functools import wraps
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from dotenv import load_dotenv

from anchored_pretraining import AcpConfig, acp_dictionary, build_acp_corpus, init_at_from_acp, pretrain_mlm
from anchored_training import (
    ATConfig,
    ATResult,
    ViewSpec,
    evaluate_direction,
    train_at,
    train_biview,
    translate_batch,
)
from baselines import (
    fit_swet,
    load_embeddings,
    save_embeddings,
    swet_initialize,
    train_embeddings,
    word_by_word,
)
from bilingual_dictionary import (
    BilingualDictionary,
    anchor_corpus,
    coverage_stats,
    load_raw_dictionary,
    resolve_senses,
    reverse_raw_dictionary,
    split_dictionary,
    subsample_dictionary,
    write_dictionary,
)
from checkpoints import CheckpointStore
from config import ExperimentConfig, parse_overrides
from errors import AnchorMTError, DataError, NumericError, UsageError
from evaluation import (
    bleu,
    bli_precision,
    export_embeddings,
    layer_cosine,
    model_embedding_space,
    sample_uncovered_neighbors,
)
from subword import apply_bpe, learn_bpe, load_codec, save_codec, units_to_text, write_vocab_dump
from synthetic_lab import SynthSpec, generate_pair, write_pair
from text_corpus import (
    CorpusReader,
    Lang,
    build_freq_table,
    corpus_vocabulary,
    load_corpus,
    load_parallel,
    write_corpus,
)
from training_log import list_runs, load_training_log, summarize_log
from training_state import TrainState
from transformer import build_model
from view_workers import view_worker_manager

env_path = Path(__file__).parent / '.env'
load_dotenv(dotenv_path=env_path)

logger = logging.getLogger(__name__)

LOG_FORMAT = '[%(asctime)s] [%(name)s] [%(levelname)s] %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'


# ==================== COMMAND REGISTRY ====================

@dataclass
class Command:
    name: str
    help: str
    handler: Callable
    arguments: List[Tuple[Tuple, Dict]] = field(default_factory=list)


COMMANDS: Dict[str, Command] = {}


def arg(*flags, **kwargs) -> Tuple[Tuple, Dict]:
    return flags, kwargs


def _unexpected_exit_code(e: Exception) -> int:
    if isinstance(e, OSError):
        return DataError.exit_code
    if isinstance(e, ArithmeticError):
        return NumericError.exit_code
    return UsageError.exit_code


def command(name: str, help: str, arguments: Sequence[Tuple[Tuple, Dict]] = ()):
    """
    Register a subcommand handler.

    The wrapped handler takes (args, config) and returns a JSON-ready dict.
    anchormt errors are logged and turned into their exit code. Anything
    else is logged with its traceback: OSError exits like a data error,
    ArithmeticError like a numeric failure, the rest like a usage error.
    """
    def decorator(f):
        @wraps(f)
        def decorated_function(args, config):
            try:
                return 0, f(args, config)
            except AnchorMTError as e:
                logger.error(f"[CLI] {name} failed: {e}")
                logger.debug(f"[CLI] {name} traceback", exc_info=True)
                return e.exit_code, {'error': str(e), 'error_type': type(e).__name__}
            except Exception as e:
                logger.exception(f"[CLI] {name} unexpected error: {e}")
                return _unexpected_exit_code(e), {'error': str(e), 'error_type': type(e).__name__}
        COMMANDS[name] = Command(name, help, decorated_function, list(arguments))
        return decorated_function
    return decorator


# ==================== SHARED LOADERS ====================

def _corpus(path: str, lang: Lang, config: ExperimentConfig):
    return load_corpus(path, lang, config['corpus.max_sentences'])


def _dictionary(
    path: str,
    direction: Tuple[Lang, Lang],
    target_corpus,
    config: ExperimentConfig
) -> BilingualDictionary:
    """Load a MUSE file and resolve senses against the target-side corpus."""
    raw = load_raw_dictionary(path, direction)
    return resolve_senses(raw, build_freq_table(target_corpus or []), config['corpus.lowercase'])


def _reverse_dictionary(args, corpora, config: ExperimentConfig) -> BilingualDictionary:
    """tgt->src dictionary from --dict-rev, or by reversing --dict."""
    if getattr(args, 'dict_rev', None):
        return _dictionary(args.dict_rev, (Lang.TGT, Lang.SRC), corpora[Lang.SRC], config)
    raw = reverse_raw_dictionary(load_raw_dictionary(args.dict, (Lang.SRC, Lang.TGT)))
    return resolve_senses(raw, build_freq_table(corpora[Lang.SRC]), config['corpus.lowercase'])


def _view_dictionary(args, pivot: Lang, corpora, config: ExperimentConfig) -> BilingualDictionary:
    if pivot is Lang.TGT:
        return _dictionary(args.dict, (Lang.SRC, Lang.TGT), corpora[Lang.TGT], config)
    return _reverse_dictionary(args, corpora, config)


def _validation(args):
    if getattr(args, 'valid_src', None) and getattr(args, 'valid_tgt', None):
        return load_parallel(args.valid_src, args.valid_tgt)
    return None


def _store() -> CheckpointStore:
    return CheckpointStore(".")


# ==================== DATA COMMANDS ====================

@command('synth-gen', 'Generate a synthetic cipher language pair', [
    arg('--out-dir', required=True, help='Directory for corpora, dictionaries and held-out sets'),
])
def synth_gen(args, config):
    pair = generate_pair(SynthSpec.from_config(config))
    paths = write_pair(pair, args.out_dir)
    return {'files': paths, 'stats': pair.stats}


@command('learn-bpe', 'Learn a joint BPE codec on both corpora', [
    arg('--src', required=True),
    arg('--tgt', required=True),
    arg('--dict', help='Dictionary whose target words must be encodable'),
    arg('--codec', required=True, help='Output codec JSON'),
    arg('--vocab-dump', help='Optional TSV of (subword, id, frequency)'),
])
def learn_bpe_command(args, config):
    src = _corpus(args.src, Lang.SRC, config)
    tgt = _corpus(args.tgt, Lang.TGT, config)
    extra: List[str] = []
    if args.dict:
        extra = sorted(_dictionary(args.dict, (Lang.SRC, Lang.TGT), tgt, config).target_words())
    codec = learn_bpe([src, tgt], config['bpe.num_merges'], extra, config['bpe.max_len'])
    save_codec(codec, args.codec)
    if args.vocab_dump:
        write_vocab_dump(codec, args.vocab_dump)
    return {'codec': args.codec, 'vocab_size': codec.vocab_size, 'merges': len(codec.merges)}


@command('apply-bpe', 'Segment a corpus into subword units', [
    arg('--codec', required=True),
    arg('--input', required=True),
    arg('--lang', default='src', choices=['src', 'tgt']),
    arg('--output', required=True),
])
def apply_bpe_command(args, config):
    codec = load_codec(args.codec)
    corpus = _corpus(args.input, Lang.parse(args.lang), config)
    encoded = [apply_bpe(codec, s, config['bpe.max_len']) for s in corpus]
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    with open(args.output, 'w', encoding='utf-8') as f:
        for ids in encoded:
            f.write(units_to_text(codec, ids.ids) + "\n")
    return {'sentences': len(encoded), 'units': sum(len(ids) for ids in encoded)}


@command('dict-stats', 'Dictionary entry count and token coverage', [
    arg('--dict', required=True),
    arg('--corpus', required=True, help='Corpus in the dictionary source language'),
    arg('--lang', default='src', choices=['src', 'tgt'], help='Dictionary source language'),
    arg('--target-corpus', help='Target-language corpus for sense resolution'),
])
def dict_stats(args, config):
    lang = Lang.parse(args.lang)
    corpus = _corpus(args.corpus, lang, config)
    target = _corpus(args.target_corpus, lang.other(), config) if args.target_corpus else []
    dictionary = _dictionary(args.dict, (lang, lang.other()), target, config)
    return coverage_stats(corpus, dictionary).to_dict()


@command('anchor', 'Replace dictionary-covered words by their translations', [
    arg('--dict', required=True),
    arg('--input', required=True),
    arg('--lang', default='src', choices=['src', 'tgt']),
    arg('--output', required=True),
    arg('--target-corpus', help='Target-language corpus for sense resolution'),
])
def anchor_command(args, config):
    lang = Lang.parse(args.lang)
    corpus = _corpus(args.input, lang, config)
    target = _corpus(args.target_corpus, lang.other(), config) if args.target_corpus else []
    dictionary = _dictionary(args.dict, (lang, lang.other()), target, config)
    anchored = anchor_corpus(corpus, dictionary)
    write_corpus(anchored, args.output)
    return {'sentences': len(anchored), 'anchors': sum(s.anchor_count for s in anchored)}


# ==================== TRAINING COMMANDS ====================

TRAINING_ARGS = [
    arg('--src', required=True),
    arg('--tgt', required=True),
    arg('--dict', required=True, help='src->tgt MUSE dictionary'),
    arg('--dict-rev', help='tgt->src MUSE dictionary (default: reverse of --dict)'),
    arg('--dict-fraction', type=float, default=1.0, help='Keep this share of dictionary entries'),
    arg('--codec', required=True),
]


def _training_inputs(args, config, pivot: Lang):
    corpora = {Lang.SRC: _corpus(args.src, Lang.SRC, config), Lang.TGT: _corpus(args.tgt, Lang.TGT, config)}
    dictionary = _view_dictionary(args, pivot, corpora, config)
    if args.dict_fraction < 1.0:
        dictionary = subsample_dictionary(dictionary, args.dict_fraction, config['seed'])
    return corpora, dictionary, load_codec(args.codec)


@command('pretrain-acp', 'Anchored masked-LM pretraining of the encoder', TRAINING_ARGS + [
    arg('--pivot', default='tgt', choices=['src', 'tgt']),
    arg('--save-model', required=True),
    arg('--log'),
])
def pretrain_acp(args, config):
    pivot = Lang.parse(args.pivot)
    corpora, dictionary, codec = _training_inputs(args, config, pivot)
    cfg = AcpConfig.from_config(config, pivot)
    corpus = build_acp_corpus(
        corpora, acp_dictionary(dictionary, cfg), codec, config.rng(f"acp.{pivot.value}.corpus"), pivot,
        config['bpe.max_len']
    )
    model = build_model(config, codec.vocab_size, config.rng(f"model.acp.{pivot.value}"))
    result = pretrain_mlm(model, corpus, cfg, config)
    _store().save_model(model, args.save_model, kind='acp_encoder', extra={'pivot': pivot.value})
    if args.log:
        result.log.save(args.log)
    finite = [l for l in result.losses if l == l]
    return {
        'model': args.save_model,
        'steps': len(result.losses),
        'first_loss': finite[0] if finite else None,
        'final_loss': finite[-1] if finite else None,
        'skipped_steps': result.state.optimizer.skipped_steps,
    }


def _init_model(path: Optional[str], config, vocab_size: int, stream: str):
    """Fresh model, or one initialized from an ACP or seq_model checkpoint."""
    if not path:
        return None
    store = _store()
    kind = store.read_sidecar(path).get('kind')
    if kind == 'acp_encoder':
        model = build_model(config, vocab_size, config.rng(stream))
        return init_at_from_acp(model, store.load_model(path, 'acp_encoder'))
    return store.load_model(path, 'seq_model')


@command('train-at', 'Anchored Training under one view', TRAINING_ARGS + [
    arg('--pivot', default='tgt', choices=['src', 'tgt'], help='Language the anchors are written in'),
    arg('--valid-src'),
    arg('--valid-tgt'),
    arg('--init', help='ACP or seq_model checkpoint to start from'),
    arg('--save-model', required=True),
    arg('--log'),
])
def train_at_command(args, config):
    view = ViewSpec(Lang.parse(args.pivot))
    corpora, dictionary, codec = _training_inputs(args, config, view.pivot)
    init = _init_model(args.init, config, codec.vocab_size, f"model.{view.name}")
    result = train_at(
        view, corpora, dictionary, ATConfig.from_config(config), codec, config, init, _validation(args)
    )
    _store().save_model(
        result.model, args.save_model, optimizer=result.state.optimizer,
        extra={'view': view.name, 'best_val_bleu': result.best_val_bleu}
    )
    if args.log:
        result.log.save(args.log)
    return {'model': args.save_model, 'view': view.name, 'state': result.state.to_dict(), 'log': summarize_log(result.log)}


def _worker_view_runner(args) -> Callable:
    """Bi-view phase 1 as two ``train-at`` subprocesses."""
    def run(dictionaries: Dict[Lang, BilingualDictionary]) -> Dict[Lang, ATResult]:
        workdir = Path(tempfile.mkdtemp(prefix="anchormt_views_"))
        base = ['--seed', str(args.seed_value)]
        if args.config:
            base += ['--config', args.config]
        for override in args.set or []:
            base += ['--set', override]
        if args.log_level:
            base += ['--log-level', args.log_level]

        jobs = {}
        for pivot in dictionaries:
            name = ViewSpec(pivot).name
            job = base + [
                'train-at', '--src', args.src, '--tgt', args.tgt, '--dict', args.dict,
                '--codec', args.codec, '--pivot', pivot.value,
                '--dict-fraction', str(args.dict_fraction),
                '--save-model', str(workdir / f"{name}.bin"), '--log', str(workdir / f"{name}.jsonl"),
                '--out', str(workdir / f"{name}.result.json"),
            ]
            if args.dict_rev:
                job += ['--dict-rev', args.dict_rev]
            if args.valid_src and args.valid_tgt:
                job += ['--valid-src', args.valid_src, '--valid-tgt', args.valid_tgt]
            init = args.init_tgt_view if pivot is Lang.TGT else args.init_src_view
            if init:
                job += ['--init', init]
            jobs[name] = job
        view_worker_manager.run_views(jobs)

        store = _store()
        results = {}
        for pivot in dictionaries:
            name = ViewSpec(pivot).name
            path = workdir / f"{name}.bin"
            optimizer = store.load_optimizer(path)
            state = TrainState(optimizer=optimizer, name=name) if optimizer is not None else TrainState(name=name)
            extra = store.read_sidecar(path).get('extra', {})
            results[pivot] = ATResult(
                model=store.load_model(path, 'seq_model'),
                log=load_training_log(workdir / f"{name}.jsonl"),
                state=state,
                best_val_bleu=extra.get('best_val_bleu'),
            )
        return results
    return run


@command('train-biview', 'Bi-view Anchored Training', TRAINING_ARGS + [
    arg('--valid-src'),
    arg('--valid-tgt'),
    arg('--init-tgt-view', help='Checkpoint initializing the target-view model'),
    arg('--init-src-view', help='Checkpoint initializing the source-view model'),
    arg('--save-src2tgt', required=True),
    arg('--save-tgt2src', required=True),
    arg('--log'),
])
def train_biview_command(args, config):
    corpora = {Lang.SRC: _corpus(args.src, Lang.SRC, config), Lang.TGT: _corpus(args.tgt, Lang.TGT, config)}
    dict_fwd = _view_dictionary(args, Lang.TGT, corpora, config)
    dict_bwd = _view_dictionary(args, Lang.SRC, corpora, config)
    if args.dict_fraction < 1.0:
        dict_fwd = subsample_dictionary(dict_fwd, args.dict_fraction, config['seed'])
        dict_bwd = subsample_dictionary(dict_bwd, args.dict_fraction, config['seed'])
    codec = load_codec(args.codec)

    view_runner = None
    init_models = None
    if int(config['jobs']) >= 2:
        view_runner = _worker_view_runner(args)
    else:
        init_models = {
            Lang.TGT: _init_model(args.init_tgt_view, config, codec.vocab_size, "model.tgt_view"),
            Lang.SRC: _init_model(args.init_src_view, config, codec.vocab_size, "model.src_view"),
        }
        init_models = {lang: m for lang, m in init_models.items() if m is not None}

    result = train_biview(
        corpora, dict_fwd, dict_bwd, ATConfig.from_config(config), codec, config,
        init_models=init_models, validation=_validation(args), view_runner=view_runner
    )
    store = _store()
    store.save_model(result.model_src2tgt, args.save_src2tgt, extra={'direction': 'src2tgt'})
    store.save_model(result.model_tgt2src, args.save_tgt2src, extra={'direction': 'tgt2src'})
    if args.log:
        result.log.save(args.log)
    return {
        'src2tgt': args.save_src2tgt,
        'tgt2src': args.save_tgt2src,
        'views': {ViewSpec(p).name: summarize_log(r.log) for p, r in result.views.items()},
        'log': summarize_log(result.log),
    }


# ==================== TRANSLATION / BASELINES ====================

@command('translate', 'Translate a corpus with a trained model', [
    arg('--model', required=True),
    arg('--codec', required=True),
    arg('--input', required=True),
    arg('--output', required=True),
    arg('--direction', default='src2tgt', choices=['src2tgt', 'tgt2src']),
    arg('--dict', help='Dictionary from the input language (anchoring)'),
    arg('--target-corpus', help='Output-language corpus for sense resolution'),
    arg('--no-anchor', action='store_true', help='Skip the anchoring preprocessing'),
])
def translate_command(args, config):
    src_lang = Lang.SRC if args.direction == 'src2tgt' else Lang.TGT
    model = _store().load_model(args.model, 'seq_model')
    codec = load_codec(args.codec)
    corpus = _corpus(args.input, src_lang, config)
    dictionary = None
    if args.dict and not args.no_anchor:
        target = _corpus(args.target_corpus, src_lang.other(), config) if args.target_corpus else []
        dictionary = _dictionary(args.dict, (src_lang, src_lang.other()), target, config)
    outputs = translate_batch(model, corpus, dictionary, codec, anchoring=not args.no_anchor)
    write_corpus(outputs, args.output)
    return {'sentences': len(outputs), 'anchoring': dictionary is not None, 'output': args.output}


@command('baseline-wbw', 'Word-by-word dictionary translation', [
    arg('--dict', required=True),
    arg('--input', required=True),
    arg('--output', required=True),
    arg('--lang', default='src', choices=['src', 'tgt']),
    arg('--target-corpus'),
    arg('--reference', help='Reference file; adds BLEU to the result'),
])
def baseline_wbw(args, config):
    lang = Lang.parse(args.lang)
    corpus = _corpus(args.input, lang, config)
    target = _corpus(args.target_corpus, lang.other(), config) if args.target_corpus else []
    dictionary = _dictionary(args.dict, (lang, lang.other()), target, config)
    outputs = [word_by_word(s, dictionary) for s in corpus]
    write_corpus(outputs, args.output)
    result = {'sentences': len(outputs), 'output': args.output}
    if args.reference:
        result['bleu'] = bleu(outputs, _corpus(args.reference, lang.other(), config)).to_dict()
    return result


@command('baseline-swet', 'Skip-gram + Procrustes embeddings written into a fresh model', TRAINING_ARGS + [
    arg('--save-model', required=True),
    arg('--emb-prefix', help='Write <prefix>.src.vec and <prefix>.tgt.vec'),
])
def baseline_swet(args, config):
    corpora, dictionary, codec = _training_inputs(args, config, Lang.TGT)
    dim = int(config['model.model_dim'])
    swet = config.section('swet')
    src_space = train_embeddings(corpora[Lang.SRC], dim, swet, config['seed'])
    tgt_space = train_embeddings(corpora[Lang.TGT], dim, swet, config['seed'] + 1)
    if args.emb_prefix:
        save_embeddings(src_space, f"{args.emb_prefix}.src.vec")
        save_embeddings(tgt_space, f"{args.emb_prefix}.tgt.vec")
    linear_map = fit_swet(src_space, tgt_space, dictionary)
    model = build_model(config, codec.vocab_size, config.rng("model.swet"))
    written = swet_initialize(model, codec, src_space, tgt_space, linear_map)
    _store().save_model(model, args.save_model, extra={'swet_rows': written})
    return {
        'model': args.save_model,
        'rows_written': written,
        'orthogonality_error': linear_map.orthogonality_error(),
    }


# ==================== EVALUATION ====================

@command('eval-bleu', 'Corpus BLEU of a hypothesis file', [
    arg('--hyp', required=True),
    arg('--ref', required=True),
])
def eval_bleu(args, config):
    reader = CorpusReader()
    hyps = reader.read_lines(args.hyp)
    refs = reader.read_lines(args.ref)
    return bleu(hyps, refs).to_dict()


@command('eval-bli', 'CSLS precision@k on a test dictionary', [
    arg('--test-dict', required=True, help='src->tgt dictionary of held-out pairs'),
    arg('--model', help='Use the model embedding table'),
    arg('--codec'),
    arg('--src', help='Source corpus (query vocabulary, model mode)'),
    arg('--tgt', help='Target corpus (candidate vocabulary, model mode)'),
    arg('--src-emb', help='word2vec text file (embedding mode)'),
    arg('--tgt-emb'),
    arg('--train-dict', help='Fit a SWET map on this dictionary first (embedding mode)'),
])
def eval_bli(args, config):
    test_dict = resolve_senses(load_raw_dictionary(args.test_dict), build_freq_table([]))
    if args.model:
        if not (args.codec and args.src and args.tgt):
            raise UsageError("eval-bli with --model needs --codec, --src and --tgt")
        model = _store().load_model(args.model, 'seq_model')
        codec = load_codec(args.codec)
        src_space = model_embedding_space(model, codec, corpus_vocabulary(_corpus(args.src, Lang.SRC, config)))
        tgt_space = model_embedding_space(model, codec, corpus_vocabulary(_corpus(args.tgt, Lang.TGT, config)))
    elif args.src_emb and args.tgt_emb:
        src_space = load_embeddings(args.src_emb)
        tgt_space = load_embeddings(args.tgt_emb)
        if args.train_dict:
            train_dict = resolve_senses(load_raw_dictionary(args.train_dict), build_freq_table([]))
            src_space = fit_swet(src_space, tgt_space, train_dict).apply_space(src_space.normalized())
    else:
        raise UsageError("eval-bli needs --model or both --src-emb and --tgt-emb")
    report = bli_precision(
        test_dict, src_space.normalized(), tgt_space.normalized(), config['eval.ks'], config['eval.csls_knn']
    )
    return report.to_dict()


@command('eval-cosine', 'Per-layer cosine similarity of parallel sentences', [
    arg('--model', required=True),
    arg('--codec', required=True),
    arg('--valid-src', required=True),
    arg('--valid-tgt', required=True),
])
def eval_cosine(args, config):
    model = _store().load_model(args.model, 'seq_model')
    codec = load_codec(args.codec)
    limit = model.config.max_len
    pairs = [
        (apply_bpe(codec, s, limit), apply_bpe(codec, t, limit))
        for s, t in load_parallel(args.valid_src, args.valid_tgt)
    ]
    pairs = [(s, t) for s, t in pairs if len(s) and len(t)]
    scores = layer_cosine(model, pairs, config['eval.layers'])
    return {'layers': {str(layer): value for layer, value in scores.items()}, 'pairs': len(pairs)}


@command('export-emb', 'Export model word embeddings for plotting', [
    arg('--model', required=True),
    arg('--codec', required=True),
    arg('--src', required=True),
    arg('--tgt', required=True),
    arg('--output', required=True),
    arg('--dict', help='With --neighbors, sample target words this dictionary does not cover'),
    arg('--neighbors', type=int, default=0, help='Number of uncovered target words to inspect'),
])
def export_emb(args, config):
    model = _store().load_model(args.model, 'seq_model')
    codec = load_codec(args.codec)
    src_corpus = _corpus(args.src, Lang.SRC, config)
    tgt_corpus = _corpus(args.tgt, Lang.TGT, config)
    words = [(w, Lang.SRC) for w in corpus_vocabulary(src_corpus)]
    words += [(w, Lang.TGT) for w in corpus_vocabulary(tgt_corpus)]
    count = export_embeddings(model, codec, words, args.output)
    result = {'output': args.output, 'rows': count}
    if args.neighbors > 0:
        if not args.dict:
            raise UsageError("--neighbors needs --dict")
        dictionary = _dictionary(args.dict, (Lang.SRC, Lang.TGT), tgt_corpus, config)
        result['uncovered_neighbors'] = sample_uncovered_neighbors(
            model, codec, dictionary, corpus_vocabulary(tgt_corpus), corpus_vocabulary(src_corpus),
            args.neighbors, 5, config.rng("eval.neighbors"), config['eval.csls_knn']
        )
    return result


# ==================== RUNS ====================

@command('pipeline', 'synth-gen -> learn-bpe -> train-at -> eval-bleu in one directory', [
    arg('--out-dir', required=True),
])
def pipeline(args, config):
    root = Path(args.out_dir)
    pair = generate_pair(SynthSpec.from_config(config))
    files = write_pair(pair, root / "data")

    extra = sorted(pair.partial_dict.target_words())
    codec = learn_bpe([pair.src_corpus, pair.tgt_corpus], config['bpe.num_merges'], extra, config['bpe.max_len'])
    save_codec(codec, root / "codec.json")

    view = ViewSpec.target_view()
    result = train_at(
        view, pair.corpora, pair.partial_dict, ATConfig.from_config(config), codec, config,
        validation=pair.valid or None
    )
    _store().save_model(result.model, root / "at_model.bin", optimizer=result.state.optimizer)
    result.log.save(root / "runs" / "at_tgt_view.jsonl")

    scores = {}
    if pair.test:
        scores['at'] = evaluate_direction(result.model, pair.test, pair.partial_dict, codec).to_dict()
        scores['word_by_word'] = bleu(
            [word_by_word(s, pair.partial_dict) for s, _ in pair.test], [t for _, t in pair.test]
        ).to_dict()
    return {'files': files, 'stats': pair.stats, 'log': summarize_log(result.log), 'test_bleu': scores}


@command('list-runs', 'List saved training logs and checkpoints', [
    arg('--dir', default='.', help='Directory to scan'),
])
def list_runs_command(args, config):
    return {'runs': list_runs(args.dir), 'checkpoints': CheckpointStore(args.dir).list_checkpoints()}


@command('split-dict', 'Split a dictionary into train/test parts for BLI', [
    arg('--dict', required=True),
    arg('--train-out', required=True),
    arg('--test-out', required=True),
])
def split_dict_command(args, config):
    dictionary = resolve_senses(load_raw_dictionary(args.dict), build_freq_table([]))
    train, test = split_dictionary(dictionary, config['eval.dict_train_fraction'], config['seed'])
    write_dictionary(train, args.train_out)
    write_dictionary(test, args.test_out)
    return {'train_entries': train.entry_count, 'test_entries': test.entry_count}


# ==================== ENTRY POINT ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='anchormt', description=__doc__.strip().splitlines()[0])
    parser.add_argument('--config', help='JSON config file')
    parser.add_argument('--set', action='append', metavar='KEY=VALUE', help='Config override (repeatable)')
    parser.add_argument('--seed', type=int, help='Master seed')
    parser.add_argument('--out', help='Write the JSON result here instead of stdout')
    parser.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR')
    parser.add_argument('--jobs', type=int, help='Parallel view workers for train-biview')

    subparsers = parser.add_subparsers(dest='command', metavar='<subcommand>')
    for name, spec in COMMANDS.items():
        sub = subparsers.add_parser(name, help=spec.help)
        for flags, kwargs in spec.arguments:
            sub.add_argument(*flags, **kwargs)
        # global flags may also follow the subcommand
        sub.add_argument('--out', dest='sub_out', help=argparse.SUPPRESS)
    return parser


def configure_logging(level_name: Optional[str]):
    level_name = (level_name or os.getenv('ANCHORMT_LOG_LEVEL') or 'INFO').upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        raise UsageError(f"Unknown log level '{level_name}'")
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=LOG_DATEFMT, stream=sys.stderr, force=True)


def emit(payload: Dict, out: Optional[str]):
    text = json.dumps(payload, indent=2, sort_keys=True, default=str)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding='utf-8')
    else:
        sys.stdout.write(text + "\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help(sys.stderr)
        return 1
    out = getattr(args, 'sub_out', None) or args.out

    try:
        configure_logging(args.log_level)
        overrides = parse_overrides(args.set)
        if args.seed is not None:
            overrides['seed'] = args.seed
        if args.jobs is not None:
            overrides['jobs'] = args.jobs
        config = ExperimentConfig.load(args.config, overrides)
    except AnchorMTError as e:
        logger.error(f"[CLI] {e}")
        emit({'command': args.command, 'error': str(e), 'error_type': type(e).__name__}, out)
        return e.exit_code

    args.seed_value = config['seed']
    logger.info(f"[CLI] {args.command} with config {json.dumps(config.to_dict(), sort_keys=True, default=str)}")
    code, result = COMMANDS[args.command].handler(args, config)
    emit({'command': args.command, 'result': result, 'config': config.to_dict()}, out)
    return code


if __name__ == '__main__':
    sys.exit(main())
