"""Newline-delimited JSON messages exchanged over the bridge socket.

Each line holds one object with a subset of the fields ``kind``,
``request_id``, ``op``, ``args``, ``text``, ``status``, ``not_found`` and
``error``; absent fields are omitted rather than sent as null.

Requests carry the R package names in ``args``.  Responses to install and
remove carry the changed system package names in ``args``; a discover
response carries ``[prefix, transform]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

__all__ = [
    "BridgeMessage",
    "KINDS",
    "OPS",
    "ProtocolError",
    "STATUSES",
    "decode",
    "encode",
]

KINDS = ("Request", "Progress", "Response")
OPS = ("discover", "install", "remove")
STATUSES = ("Ok", "Error")
FIELDS = ("kind", "request_id", "op", "args", "text", "status", "not_found", "error")


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class BridgeMessage:
    kind: str
    request_id: int
    op: str | None = None
    args: tuple[str, ...] | None = None
    text: str | None = None
    status: str | None = None
    not_found: tuple[str, ...] | None = None
    error: str | None = None

    @classmethod
    def request(cls, request_id: int, op: str, args=()) -> BridgeMessage:
        return cls("Request", request_id, op=op, args=tuple(args))

    @classmethod
    def progress(cls, request_id: int, op: str, text: str) -> BridgeMessage:
        return cls("Progress", request_id, op=op, text=text)

    @classmethod
    def ok(cls, request_id: int, op: str, args=(), not_found=None) -> BridgeMessage:
        if op == "discover":
            not_found = None
        elif not_found is None:
            not_found = ()
        return cls(
            "Response", request_id, op=op, args=tuple(args), status="Ok",
            not_found=None if not_found is None else tuple(not_found),
        )

    @classmethod
    def failure(cls, request_id: int, error: str, op: str | None = None) -> BridgeMessage:
        return cls("Response", request_id, op=op, status="Error", error=error)

    def to_dict(self) -> dict:
        out = {}
        for name in FIELDS:
            value = getattr(self, name)
            if value is not None:
                out[name] = list(value) if isinstance(value, tuple) else value
        return out


def encode(msg: BridgeMessage) -> bytes:
    return (json.dumps(msg.to_dict(), separators=(",", ":")) + "\n").encode("utf-8")


def _str_list(data: dict, key: str) -> tuple[str, ...] | None:
    value = data.get(key)
    if value is None:
        return None
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ProtocolError(f"{key} must be a list of strings")
    return tuple(value)


def decode(line: bytes | str) -> BridgeMessage:
    """Parse and validate one message line."""
    try:
        data = json.loads(line)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"not JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ProtocolError("message must be a JSON object")
    unknown = set(data) - set(FIELDS)
    if unknown:
        raise ProtocolError(f"unknown fields {sorted(unknown)}")
    kind = data.get("kind")
    if kind not in KINDS:
        raise ProtocolError(f"bad kind {kind!r}")
    rid = data.get("request_id")
    if not isinstance(rid, int) or isinstance(rid, bool):
        raise ProtocolError("request_id must be an integer")
    op = data.get("op")
    if op is not None and op not in OPS:
        raise ProtocolError(f"bad op {op!r}")
    if kind == "Request" and op is None:
        raise ProtocolError("request without op")
    status = data.get("status")
    if status is not None and status not in STATUSES:
        raise ProtocolError(f"bad status {status!r}")
    if kind == "Response" and status is None:
        raise ProtocolError("response without status")
    for key in ("text", "error"):
        if key in data and not isinstance(data[key], str):
            raise ProtocolError(f"{key} must be a string")
    return BridgeMessage(
        kind=kind,
        request_id=rid,
        op=op,
        args=_str_list(data, "args"),
        text=data.get("text"),
        status=status,
        not_found=_str_list(data, "not_found"),
        error=data.get("error"),
    )
