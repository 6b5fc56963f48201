"""Client for the external judge protocol (line-delimited JSON).

Request::

    {"kind": "sufficient"|"thinking", "question": str, "trajectory": str,
     "gold": str, "request_id": str}

Reply::

    {"request_id": str, "score": number}

The transport is either a spawned subprocess (``cmd:<command line>``) or a
TCP socket (``tcp://host:port`` or ``host:port``).  Requests may be issued
from several threads; replies are matched by ``request_id``.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import shlex
import socket
import subprocess
import threading
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0


class JudgeError(RuntimeError):
    """The external judge failed: transport error, timeout or malformed reply."""


class ExternalJudge:
    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT, max_in_flight: int = 8):
        self.endpoint = endpoint
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._write_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._connect_lock = threading.Lock()
        self._pending: dict[str, Future] = {}
        self._ids = itertools.count()
        self._proc = None
        self._sock = None
        self._rfile = None
        self._wfile = None
        self._reader = None
        self._dead: str | None = None

    # -- transport --------------------------------------------------------

    def _connect(self) -> None:
        with self._connect_lock:
            if self._wfile is None:
                self._open()

    def _open(self) -> None:
        ep = self.endpoint
        try:
            if ep.startswith("cmd:"):
                self._proc = subprocess.Popen(
                    shlex.split(ep[4:]), stdin=subprocess.PIPE, stdout=subprocess.PIPE
                )
                self._rfile, self._wfile = self._proc.stdout, self._proc.stdin
            else:
                hostport = ep[len("tcp://"):] if ep.startswith("tcp://") else ep
                host, _, port = hostport.rpartition(":")
                self._sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=self.timeout)
                self._sock.settimeout(None)
                self._rfile = self._sock.makefile("rb")
                self._wfile = self._sock.makefile("wb")
        except (OSError, ValueError) as exc:
            raise JudgeError(f"cannot reach judge at {ep!r}: {exc}") from exc
        self._reader = threading.Thread(target=self._read_loop, name="judge-reader", daemon=True)
        self._reader.start()

    def _fail_all(self, reason: str) -> None:
        with self._state_lock:
            self._dead = reason
            pending, self._pending = self._pending, {}
        for fut in pending.values():
            fut.set_exception(JudgeError(reason))

    def _read_loop(self) -> None:
        for raw in self._rfile:
            try:
                reply = json.loads(raw.decode("utf-8"))
                rid = str(reply["request_id"])
            except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError):
                log.error("malformed judge reply: %r", raw[:200])
                self._fail_all(f"malformed judge reply: {raw[:200]!r}")
                return
            with self._state_lock:
                fut = self._pending.pop(rid, None)
            if fut is None:
                log.warning("judge reply for unknown request %s", rid)
            else:
                fut.set_result(reply)
        self._fail_all("judge closed the connection")

    def close(self) -> None:
        # Unblock the reader before closing its file, which would otherwise wait on the reader's lock.
        if self._wfile is not None:
            try:
                self._wfile.close()
            except OSError:
                pass
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        if self._proc is not None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        if self._reader is not None:
            self._reader.join(timeout=5)
        if self._rfile is not None:
            try:
                self._rfile.close()
            except OSError:
                pass
        if self._sock is not None:
            self._sock.close()
        self._wfile = self._rfile = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- requests ---------------------------------------------------------

    def request(self, kind: str, question: str, trajectory: str, gold: str) -> float:
        with self._slots:
            self._connect()
            rid = f"r{next(self._ids)}"
            fut: Future = Future()
            with self._state_lock:
                if self._dead:
                    raise JudgeError(self._dead)
                self._pending[rid] = fut
            line = json.dumps(
                {"kind": kind, "question": question, "trajectory": trajectory, "gold": gold, "request_id": rid}
            )
            try:
                with self._write_lock:
                    self._wfile.write(line.encode("utf-8") + b"\n")
                    self._wfile.flush()
            except OSError as exc:
                with self._state_lock:
                    self._pending.pop(rid, None)
                raise JudgeError(f"judge write failed: {exc}") from exc
            try:
                reply = fut.result(timeout=self.timeout)
            except FutureTimeout:
                with self._state_lock:
                    self._pending.pop(rid, None)
                raise JudgeError(f"judge timed out after {self.timeout}s on {kind} request") from None
        score = reply.get("score")
        if isinstance(score, bool):
            score = float(score)
        if not isinstance(score, (int, float)) or not math.isfinite(score):
            raise JudgeError(f"judge reply has no numeric score: {reply!r}")
        return float(score)

    def sufficient(self, question: str, trajectory: str, gold: str) -> int:
        score = self.request("sufficient", question, trajectory, gold)
        if score not in (0.0, 1.0):
            raise JudgeError(f"sufficient score must be 0 or 1, got {score}")
        return int(score)

    def thinking(self, question: str, trajectory: str, gold: str) -> float:
        score = self.request("thinking", question, trajectory, gold)
        if not 0.0 <= score <= 1.0:
            log.warning("thinking score %s outside [0, 1]; clamped", score)
            score = min(1.0, max(0.0, score))
        return score
