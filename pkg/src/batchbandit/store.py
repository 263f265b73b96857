"""Experiment stores with per-experiment mutual exclusion.

A mutation holds the experiment's lock for the whole load-apply-save
cycle. A second mutation of the same experiment while the lock is held is
rejected with ``ConcurrentModification`` rather than queued, so callers
never observe interleaved partial updates. Different experiments do not
contend.
"""

from __future__ import annotations

import contextlib
import os
import re
import tempfile
import threading
from pathlib import Path
from typing import Callable, Iterator, TypeVar

import filelock

from . import engine
from .engine import ExperimentState
from .errors import ConcurrentModification, DuplicateExperiment, UnknownExperiment, ValidationError

T = TypeVar("T")
_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]{0,127}$")


def check_id(exp_id: str) -> str:
    if not isinstance(exp_id, str) or not _ID_RE.match(exp_id):
        raise ValidationError(f"invalid experiment id {exp_id!r}")
    return exp_id


class MemoryStore:
    """Keeps canonical snapshot text in a dict; each load restores a fresh copy."""

    def __init__(self) -> None:
        self._docs: dict[str, str] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def _lock_for(self, exp_id: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(exp_id, threading.Lock())

    @contextlib.contextmanager
    def locked(self, exp_id: str) -> Iterator[None]:
        lock = self._lock_for(exp_id)
        if not lock.acquire(blocking=False):
            raise ConcurrentModification(f"experiment {exp_id!r} is being modified")
        try:
            yield
        finally:
            lock.release()

    def _read(self, exp_id: str) -> str | None:
        return self._docs.get(exp_id)

    def _write(self, exp_id: str, text: str) -> None:
        self._docs[exp_id] = text

    def __contains__(self, exp_id: str) -> bool:
        return self._read(exp_id) is not None

    def load(self, exp_id: str) -> ExperimentState:
        text = self._read(check_id(exp_id))
        if text is None:
            raise UnknownExperiment(f"no experiment {exp_id!r}")
        return engine.loads(text)

    def create(self, state: ExperimentState) -> None:
        exp_id = check_id(state.config.id)
        with self.locked(exp_id):
            if self._read(exp_id) is not None:
                raise DuplicateExperiment(f"experiment {exp_id!r} already exists")
            self._write(exp_id, engine.dumps(state))

    def update(self, exp_id: str, fn: Callable[[ExperimentState], tuple[ExperimentState, T]]) -> T:
        """Apply ``fn`` under the experiment's lock and persist its new state.

        Nothing is written if ``fn`` raises.
        """
        check_id(exp_id)
        with self.locked(exp_id):
            state = self.load(exp_id)
            new_state, result = fn(state)
            self._write(exp_id, engine.dumps(new_state))
            return result

    def snapshot_text(self, exp_id: str) -> str:
        text = self._read(check_id(exp_id))
        if text is None:
            raise UnknownExperiment(f"no experiment {exp_id!r}")
        return text


class DirectoryStore(MemoryStore):
    """One ``<id>.json`` snapshot per experiment, guarded by ``<id>.lock``.

    File locks make the exclusion hold across processes (CLI invocations and
    a running service can share a directory).
    """

    def __init__(self, root: str | os.PathLike) -> None:
        super().__init__()
        # created on first mutation so read-only commands leave no trace
        self.root = Path(root)

    def path(self, exp_id: str) -> Path:
        return self.root / f"{check_id(exp_id)}.json"

    @contextlib.contextmanager
    def locked(self, exp_id: str) -> Iterator[None]:
        with super().locked(exp_id):
            self.root.mkdir(parents=True, exist_ok=True)
            lock = filelock.FileLock(str(self.root / f"{exp_id}.lock"), timeout=0)
            try:
                lock.acquire()
            except filelock.Timeout as exc:
                raise ConcurrentModification(f"experiment {exp_id!r} is being modified") from exc
            try:
                yield
            finally:
                lock.release()

    def _read(self, exp_id: str) -> str | None:
        try:
            return self.path(exp_id).read_text()
        except FileNotFoundError:
            return None

    def _write(self, exp_id: str, text: str) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{exp_id}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            os.replace(tmp, self.path(exp_id))
        except BaseException:
            with contextlib.suppress(FileNotFoundError):
                os.unlink(tmp)
            raise
