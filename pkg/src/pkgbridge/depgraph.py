"""Hard-dependency graph, compilation statistics, exclusions and batch plans."""

from __future__ import annotations

import enum
import heapq
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from .metadata import PackageRecord

__all__ = [
    "BASE_PACKAGES",
    "BUILD_FIELDS",
    "BatchPlan",
    "CompilationStats",
    "CycleDetected",
    "DepGraph",
    "DuplicatePackage",
    "ExclusionKind",
    "ExclusionReason",
    "STATS_FIELDS",
    "batch_plan",
    "build_graph",
    "compilation_stats",
    "propagate_exclusions",
    "render_batch_plan",
]

# Packages shipped with R itself; always present in the build root.
BASE_PACKAGES = frozenset({
    "R", "base", "compiler", "datasets", "grDevices", "graphics", "grid",
    "methods", "parallel", "splines", "stats", "stats4", "tcltk", "tools",
    "utils",
})

STATS_FIELDS = frozenset({"depends", "imports"})
BUILD_FIELDS = frozenset({"depends", "imports", "linking_to"})


class DuplicatePackage(ValueError):
    pass


class CycleDetected(ValueError):
    def __init__(self, members: Iterable[str]):
        self.members = sorted(members)
        super().__init__("dependency cycle: " + ", ".join(self.members))


class ExclusionKind(str, enum.Enum):
    MISSING_UPSTREAM_DEP = "MissingUpstreamDep"
    UNSUPPORTED_SYSREQ = "UnsupportedSysreq"
    DEPENDS_ON_EXCLUDED = "DependsOnExcluded"


@dataclass(frozen=True)
class ExclusionReason:
    kind: ExclusionKind
    detail: str = ""


@dataclass(frozen=True)
class DepGraph:
    nodes: frozenset[str]
    edges: Mapping[str, frozenset[str]]
    external_refs: Mapping[str, frozenset[str]]

    def deps(self, name: str) -> frozenset[str]:
        return self.edges.get(name, frozenset())

    def reverse_edges(self) -> dict[str, set[str]]:
        rev: dict[str, set[str]] = {n: set() for n in self.nodes}
        for src, targets in self.edges.items():
            for t in targets:
                rev[t].add(src)
        return rev

    def subgraph(self, keep: Iterable[str]) -> DepGraph:
        """Induced subgraph; edges leaving ``keep`` are dropped."""
        keep = frozenset(keep) & self.nodes
        edges = {n: self.deps(n) & keep for n in keep}
        return DepGraph(keep, {n: e for n, e in edges.items() if e}, {})


def build_graph(
    db: Iterable[PackageRecord],
    hard_fields: Iterable[str] = STATS_FIELDS,
    ignore: Iterable[str] = BASE_PACKAGES,
) -> DepGraph:
    records = list(db)
    names: set[str] = set()
    for rec in records:
        if rec.name in names:
            raise DuplicatePackage(rec.name)
        names.add(rec.name)
    fields = sorted(hard_fields)
    ignored = frozenset(ignore) | {"R"}
    edges: dict[str, frozenset[str]] = {}
    external: dict[str, frozenset[str]] = {}
    for rec in records:
        deps = rec.dep_names(fields) - ignored - {rec.name}
        inside = frozenset(deps & names)
        outside = frozenset(deps - names)
        if inside:
            edges[rec.name] = inside
        if outside:
            external[rec.name] = outside
    return DepGraph(frozenset(names), edges, external)


@dataclass(frozen=True)
class CompilationStats:
    total: int
    direct: frozenset[str]
    indirect_only: frozenset[str]

    @property
    def either(self) -> frozenset[str]:
        return self.direct | self.indirect_only

    def _pct(self, subset: frozenset[str]) -> Fraction:
        return Fraction(100 * len(subset), self.total) if self.total else Fraction(0)

    @property
    def direct_pct(self) -> Fraction:
        return self._pct(self.direct)

    @property
    def indirect_only_pct(self) -> Fraction:
        return self._pct(self.indirect_only)

    @property
    def either_pct(self) -> Fraction:
        return self._pct(self.either)


def compilation_stats(
    db: Iterable[PackageRecord], hard_fields: Iterable[str] = STATS_FIELDS
) -> CompilationStats:
    """Share of packages needing compilation directly or through hard deps.

    Percentages are exact fractions over the whole corpus.
    """
    records = list(db)
    graph = build_graph(records, hard_fields)
    direct = frozenset(r.name for r in records if r.needs_compilation)
    # Walk reverse edges from compiled packages: anything reaching them is affected.
    rev = graph.reverse_edges()
    seen = set(direct)
    queue = deque(direct)
    while queue:
        for dependent in rev[queue.popleft()]:
            if dependent not in seen:
                seen.add(dependent)
                queue.append(dependent)
    return CompilationStats(len(records), direct, frozenset(seen - direct))


def propagate_exclusions(
    g: DepGraph, base_excluded: Mapping[str, ExclusionReason]
) -> dict[str, ExclusionReason]:
    """Close the exclusion set over reverse hard dependencies.

    Nodes with dependencies missing from the database are seeded as
    ``MissingUpstreamDep`` unless already excluded for another reason.
    A dependent excluded by propagation names its alphabetically first
    excluded direct dependency.
    """
    excluded = {n: r for n, r in base_excluded.items() if n in g.nodes}
    for name, missing in g.external_refs.items():
        excluded.setdefault(
            name,
            ExclusionReason(ExclusionKind.MISSING_UPSTREAM_DEP, ", ".join(sorted(missing))),
        )
    rev = g.reverse_edges()
    reached = set(excluded)
    queue = deque(sorted(excluded))
    while queue:
        for dependent in rev[queue.popleft()]:
            if dependent not in reached:
                reached.add(dependent)
                queue.append(dependent)
    for name in reached - excluded.keys():
        nearest = min(d for d in g.deps(name) if d in reached)
        excluded[name] = ExclusionReason(ExclusionKind.DEPENDS_ON_EXCLUDED, nearest)
    return excluded


@dataclass(frozen=True)
class BatchPlan:
    batches: tuple[tuple[str, ...], ...]
    excluded: Mapping[str, ExclusionReason] = field(default_factory=dict)

    def batch_of(self) -> dict[str, int]:
        """Map package name to its 1-based batch index."""
        return {n: i for i, batch in enumerate(self.batches, start=1) for n in batch}

    def pairs(self) -> list[tuple[int, str]]:
        return [(i, n) for i, batch in enumerate(self.batches, start=1) for n in batch]

    def __len__(self) -> int:
        return len(self.batches)


def strongly_connected_components(
    nodes: Iterable[str], edges: Mapping[str, Iterable[str]]
) -> list[frozenset[str]]:
    """Tarjan's algorithm, iterative to survive deep CRAN chains."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    components: list[frozenset[str]] = []
    counter = 0
    for root in sorted(nodes):
        if root in index:
            continue
        work = [(root, iter(sorted(edges.get(root, ()))))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, children = work[-1]
            advanced = False
            for child in children:
                if child not in index:
                    index[child] = low[child] = counter
                    counter += 1
                    stack.append(child)
                    on_stack.add(child)
                    work.append((child, iter(sorted(edges.get(child, ())))))
                    advanced = True
                    break
                if child in on_stack:
                    low[node] = min(low[node], index[child])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                members = set()
                while True:
                    top = stack.pop()
                    on_stack.discard(top)
                    members.add(top)
                    if top == node:
                        break
                components.append(frozenset(members))
    return components


def batch_plan(
    g: DepGraph,
    excluded: Mapping[str, ExclusionReason] | None = None,
    collapse_cycles: bool = True,
) -> BatchPlan:
    """Layer the non-excluded packages by longest dependency chain.

    Batch 1 holds packages without (non-excluded) hard deps; every other
    package sits one batch after its deepest dependency.  Dependency
    cycles are collapsed into a single batch, or rejected with
    :class:`CycleDetected` when ``collapse_cycles`` is false.
    """
    excluded = {n: r for n, r in (excluded or {}).items() if n in g.nodes}
    active = g.nodes - excluded.keys()
    edges = {n: g.deps(n) & active for n in active}

    comps = strongly_connected_components(active, edges)
    comp_of: dict[str, int] = {}
    for i, members in enumerate(comps):
        for m in members:
            comp_of[m] = i
    cyclic = [c for c in comps if len(c) > 1]
    if cyclic and not collapse_cycles:
        raise CycleDetected(min(cyclic, key=sorted))

    comp_deps = [set() for _ in comps]
    for n in active:
        for d in edges[n]:
            if comp_of[d] != comp_of[n]:
                comp_deps[comp_of[n]].add(comp_of[d])

    # Kahn over the condensation, dependencies first.
    dependents: list[set[int]] = [set() for _ in comps]
    for c, deps in enumerate(comp_deps):
        for d in deps:
            dependents[d].add(c)
    pending = [len(d) for d in comp_deps]
    layer = [1] * len(comps)
    ready = [c for c in range(len(comps)) if pending[c] == 0]
    heapq.heapify(ready)
    while ready:
        c = heapq.heappop(ready)
        for up in dependents[c]:
            layer[up] = max(layer[up], layer[c] + 1)
            pending[up] -= 1
            if pending[up] == 0:
                heapq.heappush(ready, up)

    depth = max(layer, default=0)
    batches: list[list[str]] = [[] for _ in range(depth)]
    for n in active:
        batches[layer[comp_of[n]] - 1].append(n)
    return BatchPlan(tuple(tuple(sorted(b)) for b in batches), excluded)


def render_batch_plan(plan: BatchPlan) -> str:
    lines = [f"{i}\t{name}" for i, name in plan.pairs()]
    for name in sorted(plan.excluded):
        reason = plan.excluded[name]
        lines.append(f"EXCLUDED\t{name}\t{reason.kind.value}\t{reason.detail}")
    return "".join(line + "\n" for line in lines)
