"""
Model Checkpoint Store

Saves a SeqModel as a numerics parameter file plus a JSON sidecar
(``<path>.json``) describing what the parameters are:

    {kind, config, share_spec, format_version, special_ids, extra}

``kind`` is ``seq_model`` for translation models and ``acp_encoder`` for
pretrained encoders. Optimizer moments can ride along in the same parameter
file under ``optim.m/<name>`` and ``optim.v/<name>``.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from errors import DataError, UsageError
from numerics import AdamState, load_parameters, save_parameters
from subword import SpecialIds
from transformer import ModelConfig, SeqModel

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
CHECKPOINT_KINDS = ('seq_model', 'acp_encoder')

FIRST_MOMENT_PREFIX = "optim.m/"
SECOND_MOMENT_PREFIX = "optim.v/"


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


class CheckpointStore:
    """
    Reads and writes model checkpoints under a root directory.

    Relative paths are resolved against ``root``; absolute paths are used
    as given.
    """

    def __init__(self, root: Union[str, Path] = "."):
        self.root = Path(root)

    def resolve(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.root / path

    def save_model(
        self,
        model: SeqModel,
        path: Union[str, Path],
        kind: str = "seq_model",
        optimizer: Optional[AdamState] = None,
        extra: Optional[Dict[str, Any]] = None
    ) -> Path:
        """
        Write parameters and sidecar.

        Args:
            model: Model to save
            path: Parameter file path
            kind: One of CHECKPOINT_KINDS
            optimizer: Optional Adam state stored alongside
            extra: Free-form JSON-ready values (view, training summary, ...)

        Returns:
            Resolved parameter file path
        """
        if kind not in CHECKPOINT_KINDS:
            raise UsageError(f"Unknown checkpoint kind '{kind}'. Available: {', '.join(CHECKPOINT_KINDS)}")

        filepath = self.resolve(path)
        arrays = model.state_dict()
        if optimizer is not None:
            for name, moment in optimizer.first_moment.items():
                arrays[FIRST_MOMENT_PREFIX + name] = moment
            for name, moment in optimizer.second_moment.items():
                arrays[SECOND_MOMENT_PREFIX + name] = moment
        save_parameters(filepath, arrays)

        config = model.config.to_dict()
        sidecar = {
            'kind': kind,
            'format_version': FORMAT_VERSION,
            'config': {k: v for k, v in config.items() if k != 'share_spec'},
            'share_spec': config['share_spec'],
            'special_ids': model.special_ids.to_dict(),
            'optimizer': optimizer.to_dict() if optimizer is not None else None,
            'extra': extra or {},
        }
        with open(sidecar_path(filepath), 'w', encoding='utf-8') as f:
            json.dump(sidecar, f, indent=2, ensure_ascii=False)

        logger.info(f"[CKPT] Saved {kind} checkpoint ({len(arrays)} tensors) to {filepath}")
        return filepath

    def read_sidecar(self, path: Union[str, Path]) -> Dict[str, Any]:
        side = sidecar_path(self.resolve(path))
        try:
            with open(side, 'r', encoding='utf-8') as f:
                sidecar = json.load(f)
        except OSError as e:
            raise DataError(f"Cannot read checkpoint sidecar {side}: {e}")
        except json.JSONDecodeError as e:
            raise DataError(f"Checkpoint sidecar {side} is not valid JSON: {e}")
        if sidecar.get('format_version') != FORMAT_VERSION:
            raise DataError(
                f"Checkpoint sidecar {side} has format_version {sidecar.get('format_version')}, "
                f"expected {FORMAT_VERSION}"
            )
        return sidecar

    def load_arrays(self, path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
        """Split a parameter file into (model arrays, optimizer arrays)."""
        arrays = load_parameters(self.resolve(path))
        model_arrays = {}
        optim_arrays = {}
        for name, array in arrays.items():
            if name.startswith(FIRST_MOMENT_PREFIX) or name.startswith(SECOND_MOMENT_PREFIX):
                optim_arrays[name] = array
            else:
                model_arrays[name] = array
        return model_arrays, optim_arrays

    def load_model(
        self,
        path: Union[str, Path],
        expected_kind: Optional[str] = None,
        rng: Optional[np.random.Generator] = None
    ) -> SeqModel:
        """Rebuild a SeqModel from a checkpoint."""
        sidecar = self.read_sidecar(path)
        kind = sidecar.get('kind')
        if expected_kind is not None and kind != expected_kind:
            raise DataError(f"Checkpoint {path} is a '{kind}' checkpoint, expected '{expected_kind}'")

        config = ModelConfig.from_dict({**sidecar['config'], 'share_spec': sidecar['share_spec']})
        model = SeqModel(config, rng or np.random.default_rng(0), SpecialIds(**sidecar.get('special_ids', {})))
        model_arrays, _ = self.load_arrays(path)
        model.load_state_dict(model_arrays)
        logger.info(f"[CKPT] Loaded {kind} checkpoint from {self.resolve(path)}")
        return model

    def load_optimizer(self, path: Union[str, Path]) -> Optional[AdamState]:
        """Adam state stored with a checkpoint, or None."""
        sidecar = self.read_sidecar(path)
        settings = sidecar.get('optimizer')
        if not settings:
            return None
        _, optim_arrays = self.load_arrays(path)
        state = AdamState.from_config(settings)
        state.step = int(settings.get('step', 0))
        state.skipped_steps = int(settings.get('skipped_steps', 0))
        for name, array in optim_arrays.items():
            if name.startswith(FIRST_MOMENT_PREFIX):
                state.first_moment[name[len(FIRST_MOMENT_PREFIX):]] = array
            else:
                state.second_moment[name[len(SECOND_MOMENT_PREFIX):]] = array
        return state

    def list_checkpoints(self) -> List[Dict[str, Any]]:
        """Every sidecar under root with its kind and config, sorted by path."""
        entries = []
        if not self.root.exists():
            return entries
        for side in sorted(self.root.rglob("*.json")):
            try:
                with open(side, 'r', encoding='utf-8') as f:
                    sidecar = json.load(f)
            except (OSError, json.JSONDecodeError):
                continue
            if not isinstance(sidecar, dict) or sidecar.get('kind') not in CHECKPOINT_KINDS:
                continue
            entries.append({
                'path': str(side.with_name(side.name[:-len(".json")])),
                'kind': sidecar['kind'],
                'config': sidecar.get('config', {}),
            })
        return entries
