"""Tests for round records, JSON-lines persistence and run listing."""

import json

import numpy as np
import pytest

from errors import DataError
from training_log import TrainingLog, list_runs, load_training_log, meta_path, summarize_log


def sample_log(name="tgt_view"):
    log = TrainingLog(run_name=name, config={'seed': 7})
    log.record(1, bt_fwd=np.float32(2.5), bt_bwd=2.25, denoise=None)
    log.record(2, bt_fwd=2.0, bt_bwd=1.75, denoise=1.5, val_bleu=12.5)
    log.record(3, bt_fwd=1.5, bt_bwd=1.25, denoise=1.0, val_bleu=14.0)
    return log


def test_records_are_json_native():
    log = sample_log()
    assert log.records[0] == {'step': 1, 'bt_fwd': 2.5, 'bt_bwd': 2.25, 'denoise': None}
    assert type(log.records[0]['bt_fwd']) is float
    assert log.validation_scores() == [12.5, 14.0]


def test_summary_picks_best_and_last_values():
    summary = summarize_log(sample_log())
    assert summary['rounds'] == 3
    assert summary['best_val_bleu'] == 14.0
    assert summary['evaluations'] == 2
    assert summary['final'] == {'bt_fwd': 1.5, 'bt_bwd': 1.25, 'denoise': 1.0}


def test_save_and_load(tmp_path):
    log = sample_log()
    log.finish(converged=True)
    path = log.save(tmp_path / "runs" / "tgt_view.jsonl")

    lines = path.read_text(encoding='utf-8').splitlines()
    assert len(lines) == 3
    assert json.loads(lines[1])['val_bleu'] == 12.5
    meta = json.loads(meta_path(path).read_text(encoding='utf-8'))
    assert meta['converged'] is True and meta['rounds'] == 3

    loaded = load_training_log(path)
    assert loaded.records == log.records
    assert loaded.run_name == "tgt_view"
    assert loaded.converged
    assert loaded.config == {'seed': 7}


def test_identical_runs_write_identical_records(tmp_path):
    a = sample_log().save(tmp_path / "a.jsonl")
    b = sample_log().save(tmp_path / "b.jsonl")
    assert a.read_bytes() == b.read_bytes()


def test_extend_adds_tags():
    combined = TrainingLog("biview")
    combined.extend(sample_log(), view="tgt_view")
    assert len(combined) == 3
    assert all(r['view'] == "tgt_view" for r in combined.records)


def test_load_errors(tmp_path):
    with pytest.raises(DataError):
        load_training_log(tmp_path / "missing.jsonl")
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"step": 1}\nnot json\n', encoding='utf-8')
    with pytest.raises(DataError, match=":2:"):
        load_training_log(bad)


def test_list_runs_reports_unreadable_metadata(tmp_path):
    sample_log("one").save(tmp_path / "one.jsonl")
    sample_log("two").save(tmp_path / "nested" / "two.jsonl")
    (tmp_path / "broken.jsonl.meta.json").write_text("{", encoding='utf-8')

    runs = list_runs(tmp_path)
    assert len(runs) == 3
    assert sorted(r['run_name'] for r in runs if 'error' not in r) == ["one", "two"]
    assert sum('error' in r for r in runs) == 1
    assert list_runs(tmp_path / "absent") == []
