"""Daily synchronization and mass-rebuild planning.

The planner is stateless: it compares an upstream snapshot against the
binary repository state and says what to remove and what to build.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .depgraph import (
    BUILD_FIELDS,
    BatchPlan,
    ExclusionReason,
    batch_plan,
    build_graph,
)
from .metadata import Ordering, PackageRecord, VersionString, compare_versions

__all__ = [
    "BuildItem",
    "BuildReason",
    "MassRebuildPlan",
    "RepoEntry",
    "RepoState",
    "SyncPlan",
    "apply_plan",
    "load_repo_state",
    "plan_mass_rebuild",
    "plan_sync",
    "render_sync_plan",
    "save_repo_state",
]


class BuildReason(str, enum.Enum):
    NEW = "New"
    UPDATED = "Updated"
    FORCED_REBUILD = "ForcedRebuild"


@dataclass(frozen=True)
class RepoEntry:
    version: VersionString
    release: int = 1


@dataclass(frozen=True)
class RepoState:
    packages: Mapping[str, RepoEntry] = field(default_factory=dict)


@dataclass(frozen=True)
class BuildItem:
    name: str
    reason: BuildReason
    batch: int
    release: int


@dataclass(frozen=True)
class SyncPlan:
    removals: frozenset[str]
    builds: tuple[BuildItem, ...]
    unchanged: int

    @property
    def is_empty(self) -> bool:
        return not self.removals and not self.builds


def load_repo_state(text: str) -> RepoState:
    packages = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise ValueError(f"line {lineno}: expected name<TAB>version<TAB>release")
        name, version, release = cols
        if name in packages:
            raise ValueError(f"line {lineno}: duplicate package {name}")
        packages[name] = RepoEntry(VersionString(version), int(release))
    return RepoState(packages)


def save_repo_state(repo: RepoState) -> str:
    return "".join(
        f"{n}\t{e.version}\t{e.release}\n" for n, e in sorted(repo.packages.items())
    )


def _dependents_closure(graph, seeds: Iterable[str]) -> set[str]:
    rev = graph.reverse_edges()
    out: set[str] = set()
    stack = list(seeds)
    while stack:
        for up in rev.get(stack.pop(), ()):
            if up not in out:
                out.add(up)
                stack.append(up)
    return out


def plan_sync(
    upstream: Iterable[PackageRecord],
    repo: RepoState,
    excluded: Mapping[str, ExclusionReason] | None = None,
    *,
    rebuild_dependents: bool = False,
    hard_fields: Iterable[str] = BUILD_FIELDS,
) -> SyncPlan:
    """Diff ``upstream`` against ``repo``.

    Archived or excluded packages are removed; new packages and version
    changes (including downgrades) are built.  With ``rebuild_dependents``
    every repository package depending on an updated one is rebuilt too.
    Builds are ordered by batch over the set being built.
    """
    records = {r.name: r for r in upstream}
    excluded = excluded or {}
    removals = frozenset(
        n for n in repo.packages if n not in records or n in excluded
    )
    reasons: dict[str, BuildReason] = {}
    releases: dict[str, int] = {}
    unchanged: set[str] = set()
    for name, rec in records.items():
        if name in excluded:
            continue
        current = repo.packages.get(name)
        if current is None:
            reasons[name], releases[name] = BuildReason.NEW, 1
            continue
        order = compare_versions(rec.version, current.version)
        if order is Ordering.EQ:
            unchanged.add(name)
        elif order is Ordering.GT:
            reasons[name], releases[name] = BuildReason.UPDATED, 1
        else:
            # Downgrade: keep the release climbing so the new build supersedes.
            reasons[name], releases[name] = BuildReason.UPDATED, current.release + 1

    graph = build_graph(records.values(), hard_fields)
    if rebuild_dependents:
        updated = [n for n, r in reasons.items() if r is BuildReason.UPDATED]
        for name in sorted(_dependents_closure(graph, updated) & unchanged):
            reasons[name] = BuildReason.FORCED_REBUILD
            releases[name] = repo.packages[name].release + 1
            unchanged.discard(name)

    layers = batch_plan(graph.subgraph(reasons)).batch_of()
    builds = sorted(
        (BuildItem(n, reasons[n], layers[n], releases[n]) for n in reasons),
        key=lambda b: (b.batch, b.name),
    )
    return SyncPlan(removals, tuple(builds), len(unchanged))


def apply_plan(
    repo: RepoState, plan: SyncPlan, upstream: Iterable[PackageRecord]
) -> RepoState:
    """Project the repository state after every build in ``plan`` succeeds."""
    versions = {r.name: r.version for r in upstream}
    packages = {n: e for n, e in repo.packages.items() if n not in plan.removals}
    for item in plan.builds:
        packages[item.name] = RepoEntry(versions[item.name], item.release)
    return RepoState(packages)


def render_sync_plan(plan: SyncPlan) -> str:
    lines = [f"REMOVE {n}" for n in sorted(plan.removals)]
    lines += [f"BUILD {b.batch} {b.name} {b.reason.value}" for b in plan.builds]
    return "".join(line + "\n" for line in lines)


@dataclass(frozen=True)
class MassRebuildPlan:
    plan: BatchPlan
    releases: Mapping[str, int]

    def pairs(self) -> list[tuple[int, str]]:
        return self.plan.pairs()


def plan_mass_rebuild(
    upstream: Iterable[PackageRecord],
    excluded: Mapping[str, ExclusionReason] | None = None,
    repo: RepoState | None = None,
    *,
    hard_fields: Iterable[str] = BUILD_FIELDS,
    collapse_cycles: bool = True,
) -> MassRebuildPlan:
    """Batch every non-excluded package and bump each release number."""
    records = list(upstream)
    graph = build_graph(records, hard_fields)
    plan = batch_plan(graph, excluded or {}, collapse_cycles=collapse_cycles)
    known = repo.packages if repo is not None else {}
    releases = {}
    for _, name in plan.pairs():
        entry = known.get(name)
        releases[name] = entry.release + 1 if entry is not None else 1
    return MassRebuildPlan(plan, releases)
