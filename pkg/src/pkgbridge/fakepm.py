"""Deterministic in-memory system package manager.

Stands in for dnf/apt behind the connector interface the bridge talks
to.  Every transaction is journaled with a hash chain so tests can check
ordering and replay state.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol

__all__ = [
    "Catalog",
    "CatalogEntry",
    "Connector",
    "FakePackageManager",
    "InstalledPackage",
    "PackageManagerError",
    "ReentrantTransaction",
    "Transaction",
    "UnknownPackage",
    "load_catalog",
    "replay",
]

Progress = Callable[[str], None]
GENESIS = "0" * 64


class PackageManagerError(RuntimeError):
    pass


class UnknownPackage(PackageManagerError):
    pass


class ReentrantTransaction(PackageManagerError):
    pass


@dataclass(frozen=True)
class CatalogEntry:
    version: str
    depends: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Catalog:
    available: Mapping[str, CatalogEntry]

    def __post_init__(self) -> None:
        for name, entry in self.available.items():
            missing = entry.depends - self.available.keys()
            if missing:
                raise UnknownPackage(f"{name} depends on unknown {sorted(missing)}")

    def __contains__(self, name: str) -> bool:
        return name in self.available


def load_catalog(text: str) -> Catalog:
    """Read ``name<TAB>version<TAB>dep1,dep2`` lines."""
    available = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (2, 3):
            raise ValueError(f"line {lineno}: expected name<TAB>version<TAB>deps")
        deps = cols[2] if len(cols) == 3 else ""
        available[cols[0]] = CatalogEntry(
            cols[1], frozenset(d.strip() for d in deps.split(",") if d.strip())
        )
    return Catalog(available)


@dataclass(frozen=True)
class InstalledPackage:
    version: str
    explicit: bool


@dataclass(frozen=True)
class Transaction:
    seq: int
    op: str
    names: tuple[str, ...]
    changed: tuple[str, ...]
    autoremove: bool
    started_ns: int
    finished_ns: int
    state_hash: str
    prev_hash: str


class Connector(Protocol):
    """What the bridge needs from a system package manager."""

    def list_available(self) -> list[str]: ...

    def install(self, names: Iterable[str], progress: Progress | None = None) -> list[str]: ...

    def remove(
        self, names: Iterable[str], autoremove: bool = True, progress: Progress | None = None
    ) -> list[str]: ...

    def query_installed(self) -> dict[str, InstalledPackage]: ...

    def transaction_log(self) -> list[Transaction]: ...


def _state_digest(prev: str, op: str, names: Iterable[str], state: Mapping[str, InstalledPackage]) -> str:
    payload = json.dumps(
        [prev, op, sorted(names), sorted((n, p.version, p.explicit) for n, p in state.items())]
    )
    return hashlib.sha256(payload.encode()).hexdigest()


class FakePackageManager:
    def __init__(self, catalog: Catalog, step_delay: float = 0.0):
        self.catalog = catalog
        self.step_delay = step_delay
        self._installed: dict[str, InstalledPackage] = {}
        self._journal: list[Transaction] = []
        self._busy = threading.Lock()

    # -- queries

    def catalog_lookup(self, name: str) -> bool:
        return name in self.catalog

    def list_available(self) -> list[str]:
        return sorted(self.catalog.available)

    def query_installed(self) -> dict[str, InstalledPackage]:
        return dict(self._installed)

    def transaction_log(self) -> list[Transaction]:
        return list(self._journal)

    # -- transactions

    def _enter(self) -> None:
        if not self._busy.acquire(blocking=False):
            raise ReentrantTransaction("another transaction is in progress")

    def _record(self, op, names, changed, autoremove, started) -> None:
        prev = self._journal[-1].state_hash if self._journal else GENESIS
        self._journal.append(Transaction(
            seq=len(self._journal),
            op=op,
            names=tuple(sorted(names)),
            changed=tuple(changed),
            autoremove=autoremove,
            started_ns=started,
            finished_ns=time.monotonic_ns(),
            state_hash=_state_digest(prev, op, names, self._installed),
            prev_hash=prev,
        ))

    def _step(self, progress: Progress | None, verb: str, name: str, i: int, n: int) -> None:
        if self.step_delay:
            time.sleep(self.step_delay)
        if progress is not None:
            progress(f"{verb:<17}: {name}-{self.catalog.available[name].version} {i}/{n}")

    def install(self, names: Iterable[str], progress: Progress | None = None) -> list[str]:
        """Install ``names`` and their dependency closure, dependencies first."""
        names = set(names)
        self._enter()
        try:
            started = time.monotonic_ns()
            unknown = sorted(names - self.catalog.available.keys())
            if unknown:
                raise UnknownPackage(", ".join(unknown))
            closure: set[str] = set()
            stack = list(names)
            while stack:
                n = stack.pop()
                if n in closure or n in self._installed:
                    continue
                closure.add(n)
                stack.extend(self.catalog.available[n].depends)
            order = self._topological(closure, dependencies_first=True)
            for i, n in enumerate(order, start=1):
                self._step(progress, "Installing", n, i, len(order))
                self._installed[n] = InstalledPackage(self.catalog.available[n].version, False)
            for n in names:
                self._installed[n] = InstalledPackage(self._installed[n].version, True)
            self._record("install", names, order, False, started)
            return order
        finally:
            self._busy.release()

    def remove(
        self, names: Iterable[str], autoremove: bool = True, progress: Progress | None = None
    ) -> list[str]:
        """Remove ``names`` and anything requiring them, dependents first.

        With ``autoremove`` set, implicitly installed packages no longer
        reachable from an explicit one go too.
        """
        names = set(names)
        self._enter()
        try:
            started = time.monotonic_ns()
            doomed = names & self._installed.keys()
            # Packages requiring a removed one cannot stay.
            changed = True
            while changed:
                changed = False
                for n in self._installed.keys() - doomed:
                    if self.catalog.available[n].depends & doomed:
                        doomed.add(n)
                        changed = True
            if autoremove:
                keep: set[str] = set()
                stack = [n for n, p in self._installed.items() if p.explicit and n not in doomed]
                while stack:
                    n = stack.pop()
                    if n not in keep:
                        keep.add(n)
                        stack.extend(self.catalog.available[n].depends)
                doomed = set(self._installed) - keep
            order = self._topological(doomed, dependencies_first=False)
            for i, n in enumerate(order, start=1):
                self._step(progress, "Erasing", n, i, len(order))
                del self._installed[n]
            self._record("remove", names, order, autoremove, started)
            return order
        finally:
            self._busy.release()

    def _topological(self, names: set[str], dependencies_first: bool) -> list[str]:
        """Kahn's algorithm restricted to ``names``, ties broken by name."""
        deps = {n: self.catalog.available[n].depends & names for n in names}
        if dependencies_first:
            blockers = deps
        else:
            blockers = {n: set() for n in names}
            for n, ds in deps.items():
                for d in ds:
                    blockers[d].add(n)
        pending = {n: len(b) for n, b in blockers.items()}
        unblocks: dict[str, list[str]] = {n: [] for n in names}
        for n, b in blockers.items():
            for m in b:
                unblocks[m].append(n)
        ready = [n for n, c in pending.items() if c == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            n = heapq.heappop(ready)
            order.append(n)
            for m in unblocks[n]:
                pending[m] -= 1
                if pending[m] == 0:
                    heapq.heappush(ready, m)
        if len(order) != len(names):
            # Cyclic catalogs: fall back to name order for the remainder.
            order += sorted(names - set(order))
        return order

    # -- persistence for the CLI

    def dump_state(self) -> str:
        return json.dumps(
            {n: {"version": p.version, "explicit": p.explicit} for n, p in sorted(self._installed.items())},
            indent=1,
        )

    def load_state(self, text: str) -> None:
        data = json.loads(text) if text.strip() else {}
        self._installed = {
            n: InstalledPackage(v["version"], bool(v["explicit"])) for n, v in data.items()
        }

    def verify_journal(self) -> bool:
        """Check the hash chain and that transactions never overlapped."""
        prev = GENESIS
        last_end = -1
        for t in self._journal:
            if t.prev_hash != prev or t.started_ns < last_end:
                return False
            prev, last_end = t.state_hash, t.finished_ns
        return True


def replay(catalog: Catalog, journal: Iterable[Transaction]) -> FakePackageManager:
    """Rebuild a package manager by re-running a journal from an empty state."""
    pm = FakePackageManager(catalog)
    for t in journal:
        if t.op == "install":
            pm.install(t.names)
        else:
            pm.remove(t.names, autoremove=t.autoremove)
        if pm._journal[-1].state_hash != t.state_hash:
            raise PackageManagerError(f"journal diverges at transaction {t.seq}")
    return pm
