"""Bridge between unprivileged clients and the system package manager."""

from .client import BridgeClient, RemoteError, SOCKET_ENV
from .core import (
    BackendFailure,
    BridgeError,
    ClientConfig,
    DirectBridge,
    Mapping,
    NoMappingFound,
    OpResult,
    call_direct,
    default_probes,
    discover,
    discover_candidates,
    install,
    load_presets,
    remove,
)
from .protocol import BridgeMessage, ProtocolError, decode, encode
from .server import BridgeServer, SocketBindError, serve

__all__ = [
    "BackendFailure",
    "BridgeClient",
    "BridgeError",
    "BridgeMessage",
    "BridgeServer",
    "ClientConfig",
    "DirectBridge",
    "Mapping",
    "NoMappingFound",
    "OpResult",
    "ProtocolError",
    "RemoteError",
    "SOCKET_ENV",
    "SocketBindError",
    "call_direct",
    "decode",
    "default_probes",
    "discover",
    "discover_candidates",
    "encode",
    "install",
    "load_presets",
    "remove",
    "serve",
]
