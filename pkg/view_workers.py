"""
View Worker Manager

Runs the two mono-view trainings of Bi-view AT phase 1 as separate
``cli.py train-at`` subprocesses. Each worker's output is forwarded line by
line into this process's logger by a daemon thread. Used only when
``jobs >= 2``; serial in-process training is the reference mode.
"""

import os
import subprocess
import sys
import threading
import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from errors import AnchorMTError, UsageError

logger = logging.getLogger(__name__)


def _log_subprocess_output(process: subprocess.Popen, view_name: str):
    """Read worker stdout/stderr and forward to the parent logger."""
    try:
        for line in iter(process.stdout.readline, ''):
            if line:
                logger.info(f"[WORKER-{view_name}] {line.rstrip()}")
    except (OSError, ValueError) as e:
        logger.error(f"[WORKER] Error reading output of {view_name}: {e}")


class ViewWorkerManager:
    def __init__(self, max_workers: Optional[int] = None):
        self.active_workers: Dict[str, subprocess.Popen] = {}
        self.log_threads: Dict[str, threading.Thread] = {}
        self.cli_script = str(Path(__file__).parent / 'cli.py')
        self.max_workers = max_workers or int(os.getenv('ANCHORMT_JOBS', '2') or 2)

    def spawn_view(self, view_name: str, args: Sequence[str], env: Optional[Dict[str, str]] = None) -> int:
        """
        Start ``cli.py <args>`` for one view.

        Args:
            view_name: Label used in logs and as the worker key
            args: Command-line arguments after the script name
            env: Extra environment variables

        Returns:
            PID of the worker
        """
        if view_name in self.active_workers and self.active_workers[view_name].poll() is None:
            raise UsageError(f"A worker for view '{view_name}' is already running")
        running = sum(1 for p in self.active_workers.values() if p.poll() is None)
        if running >= self.max_workers:
            raise UsageError(f"Max concurrent view workers ({self.max_workers}) reached")

        worker_env = os.environ.copy()
        worker_env.update(env or {})
        worker_env['PYTHONUNBUFFERED'] = '1'

        command = [sys.executable, self.cli_script, *args]
        logger.info(f"[WORKER] Spawning {view_name}: {' '.join(command[1:])}")
        process = subprocess.Popen(
            command,
            env=worker_env,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            bufsize=1,
            universal_newlines=True
        )
        self.active_workers[view_name] = process

        log_thread = threading.Thread(
            target=_log_subprocess_output,
            args=(process, view_name),
            daemon=True
        )
        log_thread.start()
        self.log_threads[view_name] = log_thread

        logger.info(f"[WORKER] {view_name} started (PID: {process.pid})")
        return process.pid

    def wait_all(self, timeout: Optional[float] = None) -> Dict[str, int]:
        """
        Wait for every active worker.

        Returns:
            Exit code per view name

        Raises:
            AnchorMTError: a worker failed or the timeout expired (remaining
                workers are terminated)
        """
        deadline = None if timeout is None else time.time() + timeout
        codes: Dict[str, int] = {}
        for view_name, process in list(self.active_workers.items()):
            remaining = None if deadline is None else max(deadline - time.time(), 0.0)
            try:
                codes[view_name] = process.wait(timeout=remaining)
            except subprocess.TimeoutExpired:
                running = [name for name in self.active_workers if self.get_worker_status(name) == 'running']
                self.cleanup_all_workers()
                raise AnchorMTError(f"View workers still running after {timeout}s: {', '.join(running)}")
            thread = self.log_threads.pop(view_name, None)
            if thread is not None:
                thread.join(timeout=5)
            logger.info(f"[WORKER] {view_name} finished with exit code {codes[view_name]}")
        self.active_workers.clear()

        failed = {name: code for name, code in codes.items() if code != 0}
        if failed:
            raise AnchorMTError(
                "View workers failed: " + ", ".join(f"{name} (exit {code})" for name, code in failed.items())
            )
        return codes

    def run_views(self, jobs: Dict[str, List[str]], timeout: Optional[float] = None) -> Dict[str, int]:
        """Spawn every job, then wait for all of them."""
        try:
            for view_name, args in jobs.items():
                self.spawn_view(view_name, args)
        except Exception:
            self.cleanup_all_workers()
            raise
        return self.wait_all(timeout)

    def terminate_worker(self, view_name: str):
        """Terminate one worker, killing it if it ignores SIGTERM."""
        process = self.active_workers.get(view_name)
        if process is None:
            logger.warning(f"[WORKER] No active worker for {view_name}")
            return

        if process.poll() is None:
            logger.info(f"[WORKER] Terminating {view_name} (PID: {process.pid})")
            process.terminate()
            try:
                process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                logger.warning(f"[WORKER] {view_name} did not terminate gracefully, forcing kill")
                process.kill()
                process.wait()

        del self.active_workers[view_name]

    def cleanup_all_workers(self):
        logger.info(f"[WORKER] Cleaning up {len(self.active_workers)} active workers")
        for view_name in list(self.active_workers):
            self.terminate_worker(view_name)

    def get_worker_status(self, view_name: str) -> Optional[str]:
        process = self.active_workers.get(view_name)
        if process is None:
            return None
        return 'running' if process.poll() is None else 'terminated'


# Global view worker manager instance
view_worker_manager = ViewWorkerManager()
