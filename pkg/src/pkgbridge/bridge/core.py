"""Name translation and the discover/install/remove operations.

Both the socket service and direct mode run these functions; the
service only adds queuing and transport.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping as MappingT, Sequence

from ..depgraph import STATS_FIELDS, build_graph
from ..fakepm import Connector, PackageManagerError
from ..metadata import PackageRecord
from ..recipegen import NameTransform, system_name

__all__ = [
    "BackendFailure",
    "BridgeError",
    "ClientConfig",
    "DirectBridge",
    "DEFAULT_PROBES",
    "Mapping",
    "NoMappingFound",
    "OpResult",
    "call_direct",
    "default_probes",
    "discover",
    "discover_candidates",
    "install",
    "load_presets",
    "remove",
]

log = logging.getLogger(__name__)

DEFAULT_PROBES = ("MASS", "Rcpp")

Progress = Callable[[str], None]


class BridgeError(Exception):
    pass


class NoMappingFound(BridgeError):
    pass


class BackendFailure(BridgeError):
    pass


@dataclass(frozen=True)
class Mapping:
    prefix: str
    transform: NameTransform = NameTransform.IDENTITY
    exclusions: frozenset[str] = frozenset()
    presets: MappingT[str, str] = field(default_factory=dict)

    def translate(self, r_name: str) -> str | None:
        """System package name for ``r_name``, or None if excluded."""
        if r_name in self.exclusions:
            return None
        if r_name in self.presets:
            return self.presets[r_name]
        return system_name(r_name, self.prefix, self.transform)

    def reverse(self, sys_name: str, candidates: Iterable[str] = ()) -> str | None:
        """R name behind ``sys_name``; None when it is not an R package.

        Lowercase names cannot be inverted on their own, so ``candidates``
        (e.g. the requested names) are matched case-insensitively first.
        """
        for r_name, target in self.presets.items():
            if target == sys_name:
                return r_name
        if not sys_name.startswith(self.prefix):
            return None
        stem = sys_name[len(self.prefix):]
        if self.transform is NameTransform.LOWERCASE:
            for cand in candidates:
                if cand.lower() == stem:
                    return cand
        return stem or None

    def with_admin(self, presets: MappingT[str, str], exclusions: Iterable[str]) -> Mapping:
        return replace(
            self,
            presets={**self.presets, **presets},
            exclusions=self.exclusions | frozenset(exclusions),
        )


def load_presets(text: str) -> tuple[dict[str, str], frozenset[str]]:
    """Parse the admin file: ``r_name<TAB>system_name`` or ``r_name<TAB>EXCLUDE``."""
    presets: dict[str, str] = {}
    exclusions: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 2 or not cols[0] or not cols[1]:
            raise ValueError(f"line {lineno}: expected r_name<TAB>system_name|EXCLUDE")
        if cols[1] == "EXCLUDE":
            exclusions.add(cols[0])
        else:
            presets[cols[0]] = cols[1]
    return presets, frozenset(exclusions)


def default_probes(db: Iterable[PackageRecord] = (), n: int = 20) -> list[str]:
    """The ``n`` most depended-upon packages in ``db``, plus Rcpp and MASS."""
    graph = build_graph(db, STATS_FIELDS)
    counts = Counter(d for deps in graph.edges.values() for d in deps)
    top = [name for name, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n]]
    return sorted(set(top) | set(DEFAULT_PROBES))


@dataclass(frozen=True)
class Candidate:
    prefix: str
    transform: NameTransform
    coverage: int

    def sort_key(self):
        # Ties: longer prefix, then prefix text, then the lossless transform.
        return (-self.coverage, -len(self.prefix), self.prefix,
                self.transform is not NameTransform.IDENTITY)


def discover_candidates(available: Iterable[str], probes: Sequence[str] = DEFAULT_PROBES) -> list[Candidate]:
    """Rank every (prefix, transform) pair suggested by the repository names."""
    avail = set(available)
    pairs: set[tuple[str, NameTransform]] = set()
    for name in avail:
        for probe in probes:
            if name.endswith(probe):
                pairs.add((name[: len(name) - len(probe)], NameTransform.IDENTITY))
            if name.endswith(probe.lower()):
                pairs.add((name[: len(name) - len(probe)], NameTransform.LOWERCASE))
    ranked = []
    for prefix, transform in pairs:
        covered = sum(system_name(p, prefix, transform) in avail for p in probes)
        if covered:
            ranked.append(Candidate(prefix, transform, covered))
    return sorted(ranked, key=Candidate.sort_key)


def discover(backend: Connector, probes: Sequence[str] = DEFAULT_PROBES) -> Mapping:
    ranked = discover_candidates(backend.list_available(), probes)
    if not ranked:
        raise NoMappingFound(f"no repository package matches any of {list(probes)}")
    best = ranked[0]
    log.info("discovered prefix %r (%s), %d/%d probes", best.prefix,
             best.transform.value, best.coverage, len(probes))
    return Mapping(best.prefix, best.transform)


@dataclass(frozen=True)
class OpResult:
    """Outcome of install or remove: changed system names plus fallbacks."""

    op: str
    changed: tuple[str, ...]
    not_found: tuple[str, ...]

    @property
    def installed(self) -> tuple[str, ...]:
        return self.changed if self.op == "install" else ()

    @property
    def removed(self) -> tuple[str, ...]:
        return self.changed if self.op == "remove" else ()


def _dedupe(names: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(names))


def _split(names: Sequence[str], mapping: Mapping, present) -> tuple[list[str], list[str]]:
    found, not_found = [], []
    for r_name in _dedupe(names):
        target = mapping.translate(r_name)
        if target is None or not present(target):
            not_found.append(r_name)
        else:
            found.append(target)
    return found, not_found


def install(
    names: Sequence[str], mapping: Mapping, backend: Connector, progress: Progress | None = None
) -> OpResult:
    """Install what the repositories have; hand the rest back as not_found."""
    if not names:
        raise ValueError("install needs at least one package name")
    available = set(backend.list_available())
    found, not_found = _split(names, mapping, available.__contains__)
    changed: list[str] = []
    if found:
        try:
            changed = backend.install(found, progress=progress)
        except PackageManagerError as exc:
            raise BackendFailure(str(exc)) from exc
    return OpResult("install", tuple(changed), tuple(not_found))


def remove(
    names: Sequence[str], mapping: Mapping, backend: Connector, progress: Progress | None = None
) -> OpResult:
    if not names:
        raise ValueError("remove needs at least one package name")
    installed = backend.query_installed()
    found, not_found = _split(names, mapping, installed.__contains__)
    changed: list[str] = []
    if found:
        try:
            changed = backend.remove(found, autoremove=True, progress=progress)
        except PackageManagerError as exc:
            raise BackendFailure(str(exc)) from exc
    return OpResult("remove", tuple(changed), tuple(not_found))


def call_direct(
    op: str,
    names: Sequence[str],
    mapping: Mapping | None,
    backend: Connector,
    progress: Progress | None = None,
    probes: Sequence[str] = DEFAULT_PROBES,
) -> OpResult | Mapping:
    """Run one bridge operation in-process, without the service."""
    if op == "discover":
        return discover(backend, probes)
    if mapping is None:
        mapping = discover(backend, probes)
    if op == "install":
        return install(names, mapping, backend, progress)
    if op == "remove":
        return remove(names, mapping, backend, progress)
    raise ValueError(f"unknown operation {op!r}")


@dataclass
class ClientConfig:
    """Client-side switch: when disabled, nothing is forwarded to the bridge."""

    enabled: bool = True
    path: Path | None = None

    @classmethod
    def load(cls, path: str | Path) -> ClientConfig:
        path = Path(path)
        if not path.exists():
            return cls(True, path)
        data = json.loads(path.read_text("utf-8") or "{}")
        return cls(bool(data.get("enabled", True)), path)

    def save(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps({"enabled": self.enabled}) + "\n", "utf-8")

    def enable(self) -> bool:
        self.enabled = True
        self.save()
        return self.enabled

    def disable(self) -> bool:
        self.enabled = False
        self.save()
        return self.enabled

    def passthrough(self, op: str, names: Sequence[str]) -> OpResult:
        """Result reported while disabled: every name falls back to source."""
        return OpResult(op, (), tuple(_dedupe(names)))


class DirectBridge:
    """Same surface as :class:`~pkgbridge.bridge.client.BridgeClient`, run in-process."""

    def __init__(
        self,
        backend: Connector,
        mapping: Mapping | None = None,
        config: ClientConfig | None = None,
        probes: Sequence[str] = DEFAULT_PROBES,
    ):
        self.backend = backend
        self.mapping = mapping
        self.config = config or ClientConfig()
        self.probes = tuple(probes)

    def discover(self) -> Mapping:
        return discover(self.backend, self.probes)

    def _op(self, op: str, names: Sequence[str], on_progress) -> OpResult:
        if not names:
            raise ValueError(f"{op} needs at least one package name")
        if not self.config.enabled:
            return self.config.passthrough(op, names)
        if self.mapping is None:
            self.mapping = self.discover()
        return call_direct(op, names, self.mapping, self.backend, on_progress)

    def install(self, names: Sequence[str], on_progress=None) -> OpResult:
        return self._op("install", names, on_progress)

    def remove(self, names: Sequence[str], on_progress=None) -> OpResult:
        return self._op("remove", names, on_progress)
