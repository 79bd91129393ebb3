"""Blocking client for the bridge service."""

from __future__ import annotations

import itertools
import os
import socket
from typing import Callable, Sequence

from ..recipegen import NameTransform
from .core import BridgeError, ClientConfig, Mapping, OpResult
from .protocol import BridgeMessage, ProtocolError, decode, encode

__all__ = ["BridgeClient", "RemoteError", "SOCKET_ENV"]

SOCKET_ENV = "PKGBRIDGE_SOCKET"


class RemoteError(BridgeError):
    """The service answered a request with status Error."""


class BridgeClient:
    """One connection to the service; use one client per thread."""

    def __init__(
        self,
        socket_path: str | os.PathLike | None = None,
        config: ClientConfig | None = None,
        timeout: float | None = 60.0,
    ):
        path = socket_path or os.environ.get(SOCKET_ENV)
        if not path:
            raise BridgeError(f"no socket path given and {SOCKET_ENV} is unset")
        self.socket_path = os.fspath(path)
        self.config = config or ClientConfig()
        self.timeout = timeout
        self._ids = itertools.count(1)
        self._sock: socket.socket | None = None
        self._rfile = None

    def _connect(self) -> None:
        if self._sock is not None:
            return
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        sock.settimeout(self.timeout)
        sock.connect(self.socket_path)
        self._sock = sock
        self._rfile = sock.makefile("rb")

    def close(self) -> None:
        if self._sock is not None:
            self._rfile.close()
            self._sock.close()
            self._sock = self._rfile = None

    def __enter__(self) -> BridgeClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def request(
        self, op: str, args: Sequence[str] = (), on_progress: Callable[[str], None] | None = None
    ) -> BridgeMessage:
        """Send one request and block until its response arrives."""
        self._connect()
        rid = next(self._ids)
        self._sock.sendall(encode(BridgeMessage.request(rid, op, args)))
        return self._await(rid, on_progress)

    def send_raw(self, line: bytes) -> BridgeMessage:
        """Send an arbitrary line and return the next response (for diagnostics)."""
        self._connect()
        self._sock.sendall(line if line.endswith(b"\n") else line + b"\n")
        return self._await(None, None)

    def _await(self, rid, on_progress) -> BridgeMessage:
        while True:
            line = self._rfile.readline()
            if not line:
                raise BridgeError("connection closed by the service")
            try:
                msg = decode(line)
            except ProtocolError as exc:
                raise BridgeError(f"garbled reply: {exc}") from exc
            if msg.kind == "Progress" and (rid is None or msg.request_id == rid):
                if on_progress is not None and msg.text is not None:
                    on_progress(msg.text)
            elif msg.kind == "Response" and (rid is None or msg.request_id == rid):
                return msg

    def _op(self, op: str, names: Sequence[str], on_progress) -> OpResult:
        if not names:
            raise ValueError(f"{op} needs at least one package name")
        if not self.config.enabled:
            return self.config.passthrough(op, names)
        msg = self.request(op, names, on_progress)
        if msg.status != "Ok":
            raise RemoteError(msg.error or "unknown error")
        return OpResult(op, msg.args or (), msg.not_found or ())

    def discover(self) -> Mapping:
        msg = self.request("discover")
        if msg.status != "Ok":
            raise RemoteError(msg.error or "unknown error")
        prefix, transform = msg.args
        return Mapping(prefix, NameTransform(transform))

    def install(self, names: Sequence[str], on_progress=None) -> OpResult:
        return self._op("install", names, on_progress)

    def remove(self, names: Sequence[str], on_progress=None) -> OpResult:
        return self._op("remove", names, on_progress)
