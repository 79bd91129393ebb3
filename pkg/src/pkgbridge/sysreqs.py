"""Curated database of system requirements, plus a scraper to bootstrap it.

The on-disk format is line-oriented TSV so that curation diffs stay
readable::

    # version: 3
    units	fedora	build:udunits2-devel	run:udunits2
    gifski	*	EXCLUDED:needs network at build

Columns are the R package, a distribution id (``*`` matches every
target) and tagged, comma-separated package lists.
"""

from __future__ import annotations

import enum
import fnmatch
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .depgraph import ExclusionKind, ExclusionReason
from .metadata import PackageRecord

__all__ = [
    "ANY_DISTRO",
    "Lookup",
    "MalformedLine",
    "NeedsCuration",
    "Requirements",
    "ScrapeResult",
    "SysreqsDB",
    "SysreqsEntry",
    "excluded_packages",
    "load_db",
    "requires_for",
    "save_db",
    "scrape",
    "tokenize",
]

ANY_DISTRO = "*"
PHASES = ("build", "run")

_VERSION_HEADER = re.compile(r"^#\s*version:\s*(\d+)\s*$")
_QUALIFIER = re.compile(r"(?:>=|<=|==|=|>|<)\s*v?\d[\w.\-]*")
_CHUNK_SPLIT = re.compile(r"[,;()\[\]\n]")


class MalformedLine(ValueError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class NeedsCuration(LookupError):
    """A package declares SystemRequirements that the database does not cover."""


class Lookup(enum.Enum):
    EXCLUDED = "Excluded"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class Requirements:
    build: frozenset[str] = frozenset()
    run: frozenset[str] = frozenset()

    def __or__(self, other: Requirements) -> Requirements:
        return Requirements(self.build | other.build, self.run | other.run)

    def phase(self, phase: str) -> frozenset[str]:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        return getattr(self, phase)


@dataclass(frozen=True)
class SysreqsEntry:
    r_package: str
    targets: Mapping[str, Requirements] = field(default_factory=dict)
    excluded: ExclusionReason | None = None

    def __post_init__(self) -> None:
        if self.excluded is not None and self.targets:
            raise ValueError(f"{self.r_package}: excluded entries carry no targets")
        for reqs in self.targets.values():
            if any(not name for name in reqs.build | reqs.run):
                raise ValueError(f"{self.r_package}: empty system package name")

    def for_distro(self, distro: str) -> Requirements | None:
        """Union of the exact and wildcard targets, or None if neither exists."""
        found = [self.targets[d] for d in (ANY_DISTRO, distro) if d in self.targets]
        if not found:
            return None
        out = Requirements()
        for reqs in found:
            out = out | reqs
        return out


@dataclass(frozen=True)
class SysreqsDB:
    entries: Mapping[str, SysreqsEntry] = field(default_factory=dict)
    version: int = 0

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def get(self, name: str) -> SysreqsEntry | None:
        return self.entries.get(name)


def _split_list(value: str) -> frozenset[str]:
    return frozenset(v.strip() for v in value.split(",") if v.strip())


def load_db(text: str) -> SysreqsDB:
    version = 0
    targets: dict[str, dict[str, Requirements]] = {}
    excluded: dict[str, ExclusionReason] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            m = _VERSION_HEADER.match(line)
            if m:
                version = int(m.group(1))
            continue
        cols = line.split("\t")
        if len(cols) < 2 or not cols[0].strip() or not cols[1].strip():
            raise MalformedLine(lineno, "expected r_package<TAB>distro<TAB>tags")
        pkg, distro = cols[0].strip(), cols[1].strip()
        tags: dict[str, str] = {}
        for col in cols[2:]:
            tag, sep, value = col.partition(":")
            if not sep or tag not in ("build", "run", "EXCLUDED"):
                raise MalformedLine(lineno, f"unknown column {col!r}")
            if tag in tags:
                raise MalformedLine(lineno, f"repeated tag {tag!r}")
            tags[tag] = value.strip()
        if "EXCLUDED" in tags:
            if len(tags) > 1:
                raise MalformedLine(lineno, "EXCLUDED cannot be combined with build/run")
            if pkg in targets or pkg in excluded:
                raise MalformedLine(lineno, f"{pkg} is both excluded and mapped")
            excluded[pkg] = ExclusionReason(ExclusionKind.UNSUPPORTED_SYSREQ, tags["EXCLUDED"])
            continue
        if pkg in excluded:
            raise MalformedLine(lineno, f"{pkg} is both excluded and mapped")
        per_pkg = targets.setdefault(pkg, {})
        if distro in per_pkg:
            raise MalformedLine(lineno, f"duplicate entry for {pkg}/{distro}")
        per_pkg[distro] = Requirements(
            _split_list(tags.get("build", "")), _split_list(tags.get("run", ""))
        )
    entries = {p: SysreqsEntry(p, t) for p, t in targets.items()}
    entries.update({p: SysreqsEntry(p, excluded=r) for p, r in excluded.items()})
    return SysreqsDB(dict(sorted(entries.items())), version)


def save_db(db: SysreqsDB) -> str:
    lines = []
    if db.version:
        lines.append(f"# version: {db.version}")
    for name in sorted(db.entries):
        entry = db.entries[name]
        if entry.excluded is not None:
            lines.append(f"{name}\t{ANY_DISTRO}\tEXCLUDED:{entry.excluded.detail}")
            continue
        for distro in sorted(entry.targets):
            reqs = entry.targets[distro]
            lines.append(
                f"{name}\t{distro}\tbuild:{','.join(sorted(reqs.build))}"
                f"\trun:{','.join(sorted(reqs.run))}"
            )
    return "".join(line + "\n" for line in lines)


def requires_for(
    db: SysreqsDB, r_package: str, distro: str, phase: str
) -> frozenset[str] | Lookup:
    entry = db.get(r_package)
    if entry is None:
        return Lookup.UNKNOWN
    if entry.excluded is not None:
        return Lookup.EXCLUDED
    reqs = entry.for_distro(distro)
    if reqs is None:
        return Lookup.UNKNOWN
    return reqs.phase(phase)


def resolve(db: SysreqsDB, record: PackageRecord, distro: str) -> Requirements | Lookup:
    """System requirements of ``record`` on ``distro``.

    A package absent from the database counts as requirement-free only
    when its SystemRequirements field is empty too; otherwise this raises
    :class:`NeedsCuration`.
    """
    entry = db.get(record.name)
    if entry is not None and entry.excluded is not None:
        return Lookup.EXCLUDED
    reqs = entry.for_distro(distro) if entry is not None else None
    if reqs is not None:
        return reqs
    if record.system_requirements:
        raise NeedsCuration(f"{record.name}: SystemRequirements not curated for {distro}")
    return Requirements()


def excluded_packages(db: SysreqsDB) -> dict[str, ExclusionReason]:
    return {n: e.excluded for n, e in db.entries.items() if e.excluded is not None}


def tokenize(raw: str) -> list[list[str]]:
    """Break a SystemRequirements string into chunks of words.

    Chunks end at commas, semicolons, brackets and newlines; version
    qualifiers such as ``>= 2.0`` are dropped before splitting.
    """
    stripped = _QUALIFIER.sub(" ", raw or "")
    chunks = (c.split() for c in _CHUNK_SPLIT.split(stripped))
    return [c for c in chunks if c]


@dataclass
class ScrapeResult:
    matched: dict[str, Requirements] = field(default_factory=dict)
    matches: list[tuple[str, str]] = field(default_factory=list)
    unmatched_tokens: list[str] = field(default_factory=list)


def scrape(raw: str, lexicon: Mapping[str, Mapping[str, Requirements]]) -> ScrapeResult:
    """Match SystemRequirements text against a lexicon of glob patterns.

    Patterns are case-insensitive shell globs matched against phrases of
    consecutive words in a chunk; the longest matching phrase wins.  Words
    left over are reported in ``unmatched_tokens`` so nothing is lost.
    """
    patterns = [(p, re.compile(fnmatch.translate(p.lower()))) for p in lexicon]
    result = ScrapeResult()
    for words in tokenize(raw):
        i = 0
        while i < len(words):
            hit = None
            for j in range(len(words), i, -1):
                phrase = " ".join(words[i:j])
                for pattern, rx in patterns:
                    if rx.match(phrase.lower()):
                        hit = (j, phrase, pattern)
                        break
                if hit:
                    break
            if hit is None:
                result.unmatched_tokens.append(words[i])
                i += 1
                continue
            j, phrase, pattern = hit
            result.matches.append((phrase, pattern))
            for distro, reqs in lexicon[pattern].items():
                result.matched[distro] = result.matched.get(distro, Requirements()) | reqs
            i = j
    return result


def lexicon_from_db(db: SysreqsDB) -> dict[str, dict[str, Requirements]]:
    """Reuse the database format for lexicons: first column holds the pattern."""
    return {name: dict(e.targets) for name, e in db.entries.items() if e.excluded is None}


def draft_entries(
    records: Iterable[PackageRecord], lexicon: Mapping[str, Mapping[str, Requirements]]
) -> tuple[SysreqsDB, dict[str, list[str]]]:
    """Bootstrap database entries for every record with SystemRequirements."""
    entries: dict[str, SysreqsEntry] = {}
    leftovers: dict[str, list[str]] = {}
    for rec in records:
        if not rec.system_requirements:
            continue
        res = scrape(rec.system_requirements, lexicon)
        if res.matched:
            entries[rec.name] = SysreqsEntry(rec.name, res.matched)
        if res.unmatched_tokens:
            leftovers[rec.name] = res.unmatched_tokens
    return SysreqsDB(dict(sorted(entries.items()))), leftovers
