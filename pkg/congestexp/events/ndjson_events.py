import json
import os
import threading
import time
from typing import Callable, List, Optional, Tuple, Union

from .models import EventData


class StreamWriteError(Exception):
    pass


class InvalidEventError(Exception):
    pass


class StreamReadError(Exception):
    pass


# -----------------------------
# Co-located TTL Lockfile Helpers
# -----------------------------

# Lock configuration (ms)
_LOCK_TTL_MS = 2000
_LOCK_POLL_MS = 25
_LOCK_MAX_WAIT_MS = 15000

_LOCK_KEY_PID = "pid"
_LOCK_KEY_EXPIRES = "expiresAtMs"


def _lock_path(path: str) -> str:
    return f"{path}.lock"


def _now_ms() -> int:
    return int(time.time() * 1000)


def _lock_json(pid: int, ttl_ms: int) -> bytes:
    return json.dumps(
        {_LOCK_KEY_PID: pid, _LOCK_KEY_EXPIRES: _now_ms() + int(ttl_ms)},
        separators=(",", ":"),
    ).encode("utf-8")


def _read_lock(lock_path: str) -> Tuple[Optional[int], int]:
    try:
        with open(lock_path, "rb") as f:
            obj = json.loads(f.read().decode("utf-8"))
    except (OSError, ValueError):
        return (None, 0)
    if not isinstance(obj, dict):
        return (None, 0)
    pid = obj.get(_LOCK_KEY_PID)
    exp = obj.get(_LOCK_KEY_EXPIRES)
    return (pid if isinstance(pid, int) else None, exp if isinstance(exp, int) else 0)


def _try_create_lock(lock_path: str, pid: int, ttl_ms: int) -> bool:
    try:
        with open(lock_path, "xb") as f:  # atomic exclusive create
            f.write(_lock_json(pid, ttl_ms))
            f.flush()
        return True
    except FileExistsError:
        return False


def _acquire_lock(
    path: str,
    ttl_ms: int = _LOCK_TTL_MS,
    poll_ms: int = _LOCK_POLL_MS,
    max_wait_ms: int = _LOCK_MAX_WAIT_MS,
) -> int:
    lock_path = _lock_path(path)
    pid = os.getpid()
    start = _now_ms()
    while True:
        if _try_create_lock(lock_path, pid, ttl_ms):
            return pid
        now = _now_ms()
        if now - start > max_wait_ms:
            raise StreamWriteError(f"Lock acquire timeout for {path}")
        owner_pid, exp = _read_lock(lock_path)
        if owner_pid is None:
            # unreadable lock: stale only once older than the ttl
            try:
                exp = int(os.path.getmtime(lock_path) * 1000) + int(ttl_ms)
            except FileNotFoundError:
                continue
        if exp <= now:
            # stale: take it over by removing and racing on exclusive create again
            try:
                os.remove(lock_path)
            except FileNotFoundError:
                pass
            continue
        time.sleep(max(0.0, poll_ms / 1000.0))


def _release_lock(path: str, pid: int) -> None:
    lock_path = _lock_path(path)
    owner_pid, _ = _read_lock(lock_path)
    if owner_pid != pid:
        return
    try:
        os.remove(lock_path)
    except FileNotFoundError:
        pass
    except OSError as e:
        raise StreamWriteError(f"Failed to release lock {lock_path}: {e}") from e


# threads of one process share a pid, so they queue here before the lockfile
_PROCESS_LOCK = threading.RLock()


def _with_store_lock(event_path: str, fn: Callable):
    with _PROCESS_LOCK:
        pid = _acquire_lock(event_path)
        try:
            return fn()
        finally:
            _release_lock(event_path, pid)


class NDJSONWriter:
    """
    Appends one JSON event per line. Appenders in different processes (sweep
    workers) are serialized by the ``<path>.lock`` file beside the log.
    """

    def __init__(self, path: str):
        self._path = path
        self._lock = threading.Lock()

    @property
    def path(self) -> str:
        return self._path

    def purge(self) -> None:
        os.makedirs(os.path.dirname(self._path) or ".", exist_ok=True)

        def _run():
            with self._lock:
                with open(self._path, "wb") as f:
                    f.write(b"")

        _with_store_lock(self._path, _run)

    def append(self, event: Union[EventData, dict]) -> int:
        """Append a single event; returns the new EOF offset."""
        if not isinstance(event, dict):
            raise InvalidEventError("event must be dict or EventData")
        try:
            ev = event if isinstance(event, EventData) else EventData(event)
        except Exception as e:
            raise InvalidEventError(f"Invalid event: {e}") from e
        payload = (json.dumps(ev.to_safe_dict(), sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")
        try:
            os.makedirs(os.path.dirname(self._path) or ".", exist_ok=True)
        except OSError as e:
            raise StreamWriteError(f"Failed ensuring directory for {self._path}: {e}") from e

        def _run():
            with self._lock:
                with open(self._path, "ab") as f:
                    f.write(payload)
                    f.flush()
                    return f.tell()

        return _with_store_lock(self._path, _run)


class NDJSONReader:
    def __init__(self, path: str):
        self._path = path

    def _parse(self, raw: bytes, lineno: int) -> Optional[EventData]:
        line = raw.decode("utf-8").strip()
        if not line:
            return None
        try:
            data = json.loads(line)
        except ValueError as e:
            raise StreamReadError(f"Malformed JSON at line {lineno}: {e}") from e
        try:
            return EventData(data)
        except Exception as e:
            raise StreamReadError(f"Schema violation at line {lineno}: {e}") from e

    def read_all(self) -> List[EventData]:
        events, _ = self.read_from_offset(0)
        return events

    def read_from_offset(self, offset: int) -> Tuple[List[EventData], int]:
        if not isinstance(offset, int) or offset < 0:
            raise ValueError("offset must be a non-negative int")
        if not os.path.exists(self._path):
            return [], offset

        def _run():
            out: List[EventData] = []
            with open(self._path, "rb") as f:
                f.seek(offset)
                lineno = 0
                for raw in f:
                    lineno += 1
                    ev = self._parse(raw, lineno)
                    if ev is not None:
                        out.append(ev)
                return out, f.tell()

        return _with_store_lock(self._path, _run)

    def search(self, kind: Optional[str] = None, **labels) -> List[EventData]:
        found = []
        for ev in self.read_all():
            if kind is not None and ev.kind != kind:
                continue
            if any(ev.labels.get(k) != v for k, v in labels.items()):
                continue
            found.append(ev)
        return found
