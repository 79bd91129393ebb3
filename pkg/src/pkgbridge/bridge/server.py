"""Privileged bridge service on a Unix stream socket.

Any number of clients may connect, but requests reach the package
manager one at a time, in arrival order, through a single worker thread.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import signal
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..fakepm import Connector
from .core import (
    DEFAULT_PROBES,
    BridgeError,
    Mapping,
    discover,
    install,
    remove,
)
from .protocol import BridgeMessage, ProtocolError, decode, encode

__all__ = ["AuditRecord", "BridgeServer", "SocketBindError", "peer_credentials", "serve"]

log = logging.getLogger(__name__)


class SocketBindError(OSError):
    pass


@dataclass(frozen=True)
class AuditRecord:
    request_id: int
    op: str
    args: tuple[str, ...]
    pid: int | None
    uid: int | None


def peer_credentials(sock: socket.socket) -> tuple[int | None, int | None]:
    """(pid, uid) of the process on the other end, where the OS tells us."""
    opt = getattr(socket, "SO_PEERCRED", None)
    if opt is None:
        return None, None
    try:
        raw = sock.getsockopt(socket.SOL_SOCKET, opt, struct.calcsize("3i"))
    except OSError:
        return None, None
    pid, uid, _gid = struct.unpack("3i", raw)
    return pid, uid


@dataclass
class _Job:
    msg: BridgeMessage
    pid: int | None
    uid: int | None
    send: object
    done: threading.Event


class _Handler(socketserver.StreamRequestHandler):
    server: _UnixServer

    def handle(self) -> None:
        bridge = self.server.bridge
        pid, uid = peer_credentials(self.connection)
        write_lock = threading.Lock()

        def send(msg: BridgeMessage) -> None:
            with write_lock:
                try:
                    self.wfile.write(encode(msg))
                    self.wfile.flush()
                except OSError:
                    log.debug("client %s went away", pid)

        for line in self.rfile:
            if not line.strip():
                continue
            try:
                msg = decode(line)
                if msg.kind != "Request":
                    raise ProtocolError("expected a Request")
            except ProtocolError as exc:
                log.warning("malformed message from pid %s: %s", pid, exc)
                send(BridgeMessage.failure(_guess_id(line), "malformed"))
                continue
            job = _Job(msg, pid, uid, send, threading.Event())
            bridge.submit(job)
            job.done.wait()


def _guess_id(line: bytes) -> int:
    try:
        rid = json.loads(line).get("request_id")
    except Exception:
        return 0
    return rid if isinstance(rid, int) and not isinstance(rid, bool) else 0


class _UnixServer(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
    daemon_threads = True
    bridge: BridgeServer


class BridgeServer:
    """Owns the socket, the FIFO queue and the worker holding the backend."""

    def __init__(
        self,
        socket_path: str | os.PathLike,
        backend: Connector,
        mapping: Mapping | None = None,
        *,
        probes: Sequence[str] = DEFAULT_PROBES,
        admin: tuple[dict, frozenset] | None = None,
        poll_interval: float = 0.5,
    ):
        self.socket_path = Path(socket_path)
        self.backend = backend
        self.mapping = mapping
        self.preset = mapping is not None
        self.probes = tuple(probes)
        self.admin = admin
        self.poll_interval = poll_interval
        self.audit: list[AuditRecord] = []
        self._queue: queue.Queue[_Job | None] = queue.Queue()
        self._server: _UnixServer | None = None
        self._threads: list[threading.Thread] = []

    # -- lifecycle

    def _bind(self) -> _UnixServer:
        path = self.socket_path
        if path.exists() or path.is_symlink():
            probe = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            try:
                probe.connect(str(path))
            except OSError:
                path.unlink()  # stale socket from a crashed service
            else:
                raise SocketBindError(f"{path}: another service is listening")
            finally:
                probe.close()
        try:
            server = _UnixServer(str(path), _Handler)
        except OSError as exc:
            raise SocketBindError(f"cannot bind {path}: {exc}") from exc
        server.bridge = self
        return server

    def start(self) -> BridgeServer:
        self._server = self._bind()
        worker = threading.Thread(target=self._work, name="bridge-worker", daemon=True)
        listener = threading.Thread(
            target=self._server.serve_forever, args=(self.poll_interval,),
            name="bridge-listener", daemon=True,
        )
        self._threads = [worker, listener]
        worker.start()
        listener.start()
        log.info("listening on %s", self.socket_path)
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        self._queue.put(None)
        for t in self._threads:
            t.join(timeout=5)
        self._threads = []
        try:
            self.socket_path.unlink()
        except FileNotFoundError:
            pass

    def __enter__(self) -> BridgeServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- request processing

    def submit(self, job: _Job) -> None:
        self._queue.put(job)

    def _current_mapping(self) -> Mapping:
        if self.mapping is None:
            self.mapping = self._discover()
        return self.mapping

    def _discover(self) -> Mapping:
        mapping = discover(self.backend, self.probes)
        if self.admin is not None:
            mapping = mapping.with_admin(*self.admin)
        return mapping

    def _work(self) -> None:
        while True:
            job = self._queue.get()
            if job is None:
                return
            try:
                job.send(self._execute(job))
            finally:
                job.done.set()

    def _execute(self, job: _Job) -> BridgeMessage:
        msg = job.msg
        args = msg.args or ()
        self.audit.append(AuditRecord(msg.request_id, msg.op, args, job.pid, job.uid))
        log.info("request %d: %s %s from pid %s (uid %s)",
                 msg.request_id, msg.op, " ".join(args), job.pid, job.uid)

        def progress(text: str) -> None:
            job.send(BridgeMessage.progress(msg.request_id, msg.op, text))

        try:
            if msg.op == "discover":
                if not self.preset:
                    self.mapping = self._discover()
                return BridgeMessage.ok(
                    msg.request_id, "discover", [self.mapping.prefix, self.mapping.transform.value]
                )
            run = install if msg.op == "install" else remove
            result = run(list(args), self._current_mapping(), self.backend, progress)
            return BridgeMessage.ok(msg.request_id, msg.op, result.changed, result.not_found)
        except (BridgeError, ValueError) as exc:
            return BridgeMessage.failure(msg.request_id, str(exc), msg.op)
        except Exception as exc:
            # A crashing backend fails the request, not the service.
            log.exception("backend crashed on request %d", msg.request_id)
            return BridgeMessage.failure(msg.request_id, f"backend crashed: {exc}", msg.op)


def serve(
    socket_path: str | os.PathLike,
    backend: Connector,
    mapping: Mapping | None = None,
    **kwargs,
) -> int:
    """Run the service until SIGTERM or SIGINT; returns the exit code."""
    server = BridgeServer(socket_path, backend, mapping, **kwargs)
    stop = threading.Event()

    def on_signal(signum, frame):
        log.info("signal %d, shutting down", signum)
        stop.set()

    previous = {s: signal.signal(s, on_signal) for s in (signal.SIGTERM, signal.SIGINT)}
    server.start()
    try:
        while not stop.wait(0.2):
            pass
    finally:
        server.stop()
        for s, handler in previous.items():
            signal.signal(s, handler)
    return 0

