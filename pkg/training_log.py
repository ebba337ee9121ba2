"""
Training Log Module

Keeps per-round training records in memory and persists them as JSON lines,
one record per round, with a sidecar ``<log>.meta.json`` holding run
metadata. Records carry only values computed from the run itself so two runs
with the same seed produce identical log files; wall-clock data lives in the
metadata file.
"""

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Union

from errors import DataError

logger = logging.getLogger(__name__)

LOSS_FIELDS = ('bt_fwd', 'bt_bwd', 'denoise')


@dataclass
class RunMetadata:
    """Metadata for a saved training run."""
    run_id: str
    run_name: str
    started_at: str
    finished_at: str = ""
    elapsed_seconds: float = 0.0
    rounds: int = 0
    converged: bool = False
    config: Dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def generate_run_id(run_name: str, timestamp: Optional[float] = None) -> str:
    """MD5 of run name and start time, shortened to 16 hex digits."""
    if timestamp is None:
        timestamp = time.time()
    return hashlib.md5(f"{run_name}_{timestamp}".encode()).hexdigest()[:16]


class TrainingLog:
    """
    Ordered round records of one training run.

    Each record holds ``step`` plus any of bt_fwd, bt_bwd, denoise (None when
    that step was skipped), val_bleu on evaluation rounds, and free-form
    tags such as ``phase`` or ``view``.
    """

    def __init__(self, run_name: str = "run", config: Optional[Dict] = None):
        self.run_name = run_name
        self.config = dict(config or {})
        self.records: List[Dict] = []
        self.converged = False
        self._started = time.time()
        self.metadata = RunMetadata(
            run_id=generate_run_id(run_name, self._started),
            run_name=run_name,
            started_at=datetime.now().isoformat(),
            config=self.config,
        )

    def __len__(self) -> int:
        return len(self.records)

    def record(self, step: int, **fields) -> Dict:
        """Append one round record and return it."""
        entry = {'step': int(step)}
        for key, value in fields.items():
            entry[key] = None if value is None else _plain(value)
        self.records.append(entry)
        logger.debug(f"[LOG] {self.run_name} {entry}")
        return entry

    def extend(self, other: 'TrainingLog', **tags):
        """Append another log's records, adding tags to each."""
        for entry in other.records:
            self.records.append({**entry, **tags})

    def validation_scores(self) -> List[float]:
        return [r['val_bleu'] for r in self.records if r.get('val_bleu') is not None]

    def finish(self, converged: bool = False):
        self.converged = converged
        self.metadata.finished_at = datetime.now().isoformat()
        self.metadata.elapsed_seconds = round(time.time() - self._started, 3)
        self.metadata.rounds = len(self.records)
        self.metadata.converged = converged

    def save(self, path: Union[str, Path]) -> Path:
        """Write records as JSON lines plus ``<path>.meta.json``."""
        filepath = Path(path)
        filepath.parent.mkdir(parents=True, exist_ok=True)
        with open(filepath, 'w', encoding='utf-8') as f:
            for entry in self.records:
                f.write(json.dumps(entry, sort_keys=True) + "\n")

        if not self.metadata.finished_at:
            self.finish(self.converged)
        meta = self.metadata.to_dict()
        meta['log_file'] = filepath.name
        meta['summary'] = summarize_log(self)
        with open(meta_path(filepath), 'w', encoding='utf-8') as f:
            json.dump(meta, f, indent=2, ensure_ascii=False)

        logger.info(f"[LOG] Saved {len(self.records)} records to {filepath}")
        return filepath


def meta_path(log_path: Union[str, Path]) -> Path:
    log_path = Path(log_path)
    return log_path.with_name(log_path.name + ".meta.json")


def _plain(value):
    """numpy scalars and tuples to JSON-native values."""
    if hasattr(value, 'item'):
        return value.item()
    if isinstance(value, tuple):
        return list(value)
    return value


def load_training_log(path: Union[str, Path]) -> TrainingLog:
    """Read a JSON-lines log and its metadata file if present."""
    filepath = Path(path)
    try:
        with open(filepath, 'r', encoding='utf-8') as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise DataError(f"Cannot read training log {filepath}: {e}")

    records = []
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise DataError(f"{filepath}:{line_number}: invalid JSON record: {e}")

    log = TrainingLog(run_name=filepath.stem)
    log.records = records
    meta_file = meta_path(filepath)
    if meta_file.exists():
        with open(meta_file, 'r', encoding='utf-8') as f:
            meta = json.load(f)
        log.run_name = meta.get('run_name', log.run_name)
        log.config = meta.get('config', {})
        log.converged = bool(meta.get('converged', False))
        log.metadata = RunMetadata(
            run_id=meta.get('run_id', ''),
            run_name=log.run_name,
            started_at=meta.get('started_at', ''),
            finished_at=meta.get('finished_at', ''),
            elapsed_seconds=meta.get('elapsed_seconds', 0.0),
            rounds=meta.get('rounds', len(records)),
            converged=log.converged,
            config=log.config,
        )
    return log


def summarize_log(log: TrainingLog) -> Dict:
    """Rounds, best validation BLEU and the last value of each loss."""
    final = {}
    for name in LOSS_FIELDS:
        values = [r[name] for r in log.records if r.get(name) is not None]
        final[name] = values[-1] if values else None
    scores = log.validation_scores()
    return {
        'rounds': len(log.records),
        'best_val_bleu': max(scores) if scores else None,
        'evaluations': len(scores),
        'final': final,
        'converged': log.converged,
    }


def list_runs(directory: Union[str, Path]) -> List[Dict]:
    """
    Summaries of every saved run under a directory, newest first.

    Unreadable metadata files are listed with an ``error`` entry instead of
    aborting the listing.
    """
    dir_path = Path(directory)
    runs = []
    if not dir_path.exists():
        logger.warning(f"[LOG] Run directory not found: {dir_path}")
        return runs

    for meta_file in sorted(dir_path.rglob("*.meta.json")):
        try:
            with open(meta_file, 'r', encoding='utf-8') as f:
                meta = json.load(f)
            runs.append({
                'run_id': meta.get('run_id', ''),
                'run_name': meta.get('run_name', ''),
                'log_file': str(meta_file.with_name(meta.get('log_file', ''))),
                'started_at': meta.get('started_at', ''),
                'elapsed_seconds': meta.get('elapsed_seconds', 0.0),
                'rounds': meta.get('rounds', 0),
                'converged': meta.get('converged', False),
                'best_val_bleu': meta.get('summary', {}).get('best_val_bleu'),
            })
        except (OSError, json.JSONDecodeError) as e:
            logger.warning(f"[LOG] Error reading {meta_file}: {e}")
            runs.append({'log_file': str(meta_file), 'error': str(e)})

    runs.sort(key=lambda r: r.get('started_at', '') or '', reverse=True)
    logger.info(f"[LOG] Found {len(runs)} runs under {dir_path}")
    return runs
