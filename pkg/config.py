"""
anchormt Experiment Configuration

Centralized defaults for every pipeline stage, organized by namespace.
Keys are flat and dotted (``model.model_dim``); a JSON config file may use
the same flat form or nested objects. Precedence, lowest first:

    DEFAULTS -> model preset -> environment (.env) -> config file -> --set flags
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import numpy as np
from dotenv import load_dotenv

from errors import UsageError

logger = logging.getLogger(__name__)

env_path = Path(__file__).parent / '.env'
load_dotenv(dotenv_path=env_path)


# ==================== DEFAULTS ====================

DEFAULTS: Dict[str, Any] = {
    # corpus
    'corpus.max_sentences': None,
    'corpus.lowercase': False,

    # joint BPE
    'bpe.num_merges': 2000,
    'bpe.max_len': 64,

    # transformer
    'model.preset': 'desk',
    'model.num_layers': 4,
    'model.model_dim': 64,
    'model.ff_dim': 256,
    'model.num_heads': 4,
    'model.max_len': 64,
    'model.dropout': 0.1,
    'model.share_layers': True,
    'model.encoder_private_bottom': 1,
    'model.decoder_private_top': 1,
    'model.length_penalty': 1.0,

    # Adam
    'optim.lr': 5e-4,
    'optim.beta1': 0.9,
    'optim.beta2': 0.98,
    'optim.eps': 1e-9,
    'optim.warmup_steps': 400,

    # denoising noise
    'noise.drop_prob': 0.1,
    'noise.shuffle_window': 3,

    # anchored training
    'at.anchoring': True,
    'at.batch_size': 32,
    'at.max_steps': 20000,
    'at.eval_every': 500,
    'at.patience': 5,
    'at.min_delta': 0.2,
    'at.denoise_weight': 1.0,
    'at.biview_gen_batch_multiplier': 4,
    'at.biview_max_rounds': 2000,
    'at.biview_denoise': True,

    # anchored cross-lingual pretraining
    'acp.mask_prob': 0.15,
    'acp.split_mask': 0.8,
    'acp.split_random': 0.1,
    'acp.split_keep': 0.1,
    'acp.steps': 2000,
    'acp.batch_size': 32,
    'acp.anchoring': True,

    # skip-gram embeddings + SWET
    'swet.dim': 64,
    'swet.window': 5,
    'swet.negative': 5,
    'swet.min_count': 2,
    'swet.epochs': 5,

    # evaluation
    'eval.csls_knn': 10,
    'eval.ks': [1, 5, 10],
    'eval.layers': None,
    'eval.dict_train_fraction': 0.8,

    # synthetic language pair
    'synth.vocab_size': 500,
    'synth.sentence_count': 20000,
    'synth.min_len': 5,
    'synth.max_len': 15,
    'synth.reorder_window': 2,
    'synth.dict_coverage': 0.5,
    'synth.zipf_s': 1.1,
    'synth.heldout_count': 500,

    # run
    'seed': 1234,
    'jobs': 1,
}


# ==================== MODEL PRESETS ====================

MODEL_PRESETS: Dict[str, Dict[str, Any]] = {
    # 4-layer sharing topology at tiny width
    'desk': {
        'model.num_layers': 4,
        'model.model_dim': 64,
        'model.ff_dim': 256,
        'model.num_heads': 4,
        'model.max_len': 64,
    },
    # full-width AT / Bi-view AT without pretraining
    'base': {
        'model.num_layers': 4,
        'model.model_dim': 512,
        'model.ff_dim': 2048,
        'model.num_heads': 8,
        'model.max_len': 100,
        'bpe.max_len': 100,
        'optim.lr': 1e-4,
        'optim.warmup_steps': 4000,
    },
    # deeper, wider model for ACP + AT
    'large': {
        'model.num_layers': 6,
        'model.model_dim': 1024,
        'model.ff_dim': 4096,
        'model.num_heads': 8,
        'model.max_len': 100,
        'bpe.max_len': 100,
        'optim.lr': 1e-4,
        'optim.warmup_steps': 4000,
    },
}

# Environment variables that sit beneath the config file
ENV_KEYS = {
    'ANCHORMT_SEED': 'seed',
    'ANCHORMT_JOBS': 'jobs',
}


def model_preset(name: str) -> Dict[str, Any]:
    """Return the config values of a named model preset."""
    if name not in MODEL_PRESETS:
        raise UsageError(
            f"Unknown model preset '{name}'. Available: {', '.join(sorted(MODEL_PRESETS))}"
        )
    return dict(MODEL_PRESETS[name])


def flatten(values: Dict[str, Any], prefix: str = '') -> Dict[str, Any]:
    """Flatten nested config objects into dotted keys."""
    flat = {}
    for key, value in values.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, prefix=f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def _coerce(key: str, raw: Any) -> Any:
    """Coerce a value (often a flag string) to the type of its default."""
    default = DEFAULTS[key]
    value = raw
    if isinstance(raw, str) and not isinstance(default, str):
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            raise UsageError(f"Cannot parse value for {key}: {raw!r}")

    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise UsageError(f"{key} expects true/false, got {raw!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise UsageError(f"{key} expects an integer, got {raw!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise UsageError(f"{key} expects a number, got {raw!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise UsageError(f"{key} expects a list, got {raw!r}")
        return value
    if isinstance(default, str):
        return str(value)
    return value


def _check_keys(values: Dict[str, Any], origin: str):
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"Unknown config keys in {origin}: {', '.join(unknown)}")


def parse_overrides(pairs: Optional[Iterable[str]]) -> Dict[str, str]:
    """Parse repeated ``key=value`` flags."""
    overrides = {}
    for pair in pairs or []:
        if '=' not in pair:
            raise UsageError(f"Override must look like key=value, got {pair!r}")
        key, value = pair.split('=', 1)
        overrides[key.strip()] = value.strip()
    return overrides


class ExperimentConfig:
    """
    Resolved experiment configuration.

    All randomness in a run flows from ``seed`` through named streams
    (see ``rng``), so adding a stream never shifts another one.
    """

    def __init__(self, values: Optional[Dict[str, Any]] = None):
        values = flatten(values or {})
        _check_keys(values, 'config')
        self.values: Dict[str, Any] = dict(DEFAULTS)
        for key, value in values.items():
            self.values[key] = _coerce(key, value)

    @classmethod
    def load(
        cls,
        path: Optional[Union[str, Path]] = None,
        overrides: Optional[Dict[str, Any]] = None
    ) -> 'ExperimentConfig':
        """
        Build a config from an optional JSON file plus flag overrides.

        Args:
            path: JSON config file (flat dotted keys or nested objects)
            overrides: Values from the command line; these win

        Returns:
            Resolved ExperimentConfig
        """
        file_values: Dict[str, Any] = {}
        if path:
            try:
                with open(path, 'r', encoding='utf-8') as f:
                    file_values = flatten(json.load(f))
            except OSError as e:
                raise UsageError(f"Cannot read config file {path}: {e}")
            except json.JSONDecodeError as e:
                raise UsageError(f"Config file {path} is not valid JSON: {e}")
            _check_keys(file_values, str(path))

        overrides = dict(overrides or {})
        _check_keys(overrides, 'command line')

        preset_name = overrides.get('model.preset', file_values.get('model.preset', DEFAULTS['model.preset']))
        merged: Dict[str, Any] = model_preset(str(preset_name))

        for env_name, key in ENV_KEYS.items():
            env_value = os.getenv(env_name)
            if env_value:
                merged[key] = env_value

        merged.update(file_values)
        merged.update(overrides)

        config = cls(merged)
        logger.debug(f"[CONFIG] Resolved {len(config.values)} keys (preset={preset_name})")
        return config

    def __getitem__(self, key: str) -> Any:
        if key not in self.values:
            raise UsageError(f"Unknown config key: {key}")
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def section(self, namespace: str) -> Dict[str, Any]:
        """Return one namespace with the prefix stripped (``at`` -> batch_size, ...)."""
        prefix = f"{namespace}."
        return {
            key[len(prefix):]: value
            for key, value in self.values.items()
            if key.startswith(prefix)
        }

    def with_overrides(self, **dotted: Any) -> 'ExperimentConfig':
        """Copy with some keys replaced; keyword names use '__' for '.'."""
        values = dict(self.values)
        for name, value in dotted.items():
            values[name.replace('__', '.')] = value
        return ExperimentConfig(values)

    def rng(self, stream: str) -> np.random.Generator:
        """Independent generator for a named stream under the master seed."""
        return named_rng(int(self.values['seed']), stream)

    def to_dict(self) -> Dict[str, Any]:
        return dict(sorted(self.values.items()))


def named_rng(seed: int, stream: str) -> np.random.Generator:
    """
    Derive a generator from (seed, stream name).

    The stream name is hashed with MD5 so the derivation is stable across
    processes and Python versions.
    """
    digest = hashlib.md5(stream.encode('utf-8')).hexdigest()
    stream_id = int(digest[:8], 16)
    return np.random.default_rng(np.random.SeedSequence([seed, stream_id]))
