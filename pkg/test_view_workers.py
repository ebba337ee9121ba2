"""Tests for the subprocess view worker manager."""

import subprocess

import pytest

from errors import AnchorMTError, UsageError
from view_workers import ViewWorkerManager


class RunningProcess:
    pid = 4242

    def __init__(self):
        self.terminated = False

    def poll(self):
        return 0 if self.terminated else None

    def terminate(self):
        self.terminated = True

    def wait(self, timeout=None):
        return 0

    def kill(self):
        self.terminated = True


class StuckProcess(RunningProcess):
    def wait(self, timeout=None):
        if not self.terminated:
            raise subprocess.TimeoutExpired("anchormt", timeout)
        return 0


def test_concurrency_limit_and_duplicate_views():
    manager = ViewWorkerManager(max_workers=1)
    manager.active_workers['tgt_view'] = RunningProcess()
    with pytest.raises(UsageError, match="already running"):
        manager.spawn_view('tgt_view', ['list-runs'])
    with pytest.raises(UsageError, match="Max concurrent"):
        manager.spawn_view('src_view', ['list-runs'])


def test_terminate_and_status():
    manager = ViewWorkerManager(max_workers=2)
    process = RunningProcess()
    manager.active_workers['src_view'] = process
    assert manager.get_worker_status('src_view') == 'running'

    manager.cleanup_all_workers()
    assert process.terminated
    assert manager.get_worker_status('src_view') is None
    manager.terminate_worker('src_view')


def test_run_views_collects_exit_codes(tmp_path):
    manager = ViewWorkerManager(max_workers=2)
    codes = manager.run_views({
        'tgt_view': ['list-runs', '--dir', str(tmp_path)],
        'src_view': ['list-runs', '--dir', str(tmp_path)],
    }, timeout=120)
    assert codes == {'tgt_view': 0, 'src_view': 0}
    assert manager.active_workers == {}


def test_failed_worker_raises(tmp_path):
    manager = ViewWorkerManager(max_workers=2)
    missing = str(tmp_path / "missing.txt")
    with pytest.raises(AnchorMTError, match=r"bad_view \(exit 2\)"):
        manager.run_views({'bad_view': ['eval-bleu', '--hyp', missing, '--ref', missing]}, timeout=120)


def test_timeout_names_running_views_and_cleans_up():
    manager = ViewWorkerManager(max_workers=2)
    stuck = StuckProcess()
    manager.active_workers['tgt_view'] = stuck
    with pytest.raises(AnchorMTError, match="still running after 0.01s: tgt_view"):
        manager.wait_all(timeout=0.01)
    assert stuck.terminated
    assert manager.active_workers == {}
