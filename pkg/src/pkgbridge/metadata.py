"""DCF parsing, package records and R-style version ordering.

DESCRIPTION files and PACKAGES indices share the Debian control file
layout: ``Field: value`` lines, continuation lines starting with
whitespace, and stanzas separated by blank lines.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

__all__ = [
    "BadConstraint",
    "BadVersion",
    "DepSpec",
    "DuplicateField",
    "MalformedField",
    "MetadataError",
    "MissingField",
    "Ordering",
    "PackageRecord",
    "VersionString",
    "compare_versions",
    "parse_dcf",
    "parse_packages_index",
    "parse_record",
    "render_dcf",
]

DEPENDENCY_FIELDS = {
    "Depends": "depends",
    "Imports": "imports",
    "LinkingTo": "linking_to",
    "Suggests": "suggests",
}

RELATIONS = (">=", "<=", "==", ">", "<")

_VERSION_SPLIT = re.compile(r"[.-]")
_FIELD_NAME = re.compile(r"^[^\s:][^:]*$")
_DEP_ENTRY = re.compile(r"^(?P<name>[^\s()]+)\s*(?:\((?P<constraint>[^)]*)\))?$")
_CONSTRAINT = re.compile(r"^\s*(?P<rel>>=|<=|==|>|<)\s*(?P<version>\S*)\s*$")


class MetadataError(ValueError):
    """Base class for metadata parsing failures."""


class MalformedField(MetadataError):
    pass


class DuplicateField(MetadataError):
    pass


class MissingField(MetadataError):
    pass


class BadConstraint(MetadataError):
    pass


class BadVersion(MetadataError):
    pass


class Ordering(enum.IntEnum):
    LT = -1
    EQ = 0
    GT = 1


@dataclass(frozen=True)
class VersionString:
    """A version such as ``0.6-7``; '-' and '.' are equivalent separators."""

    raw: str
    components: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        parts = _VERSION_SPLIT.split(self.raw)
        if not self.raw or not all(p.isdigit() and p.isascii() for p in parts):
            raise BadVersion(f"invalid version string: {self.raw!r}")
        object.__setattr__(self, "components", tuple(int(p) for p in parts))

    def __str__(self) -> str:
        return self.raw

    @property
    def dotted(self) -> str:
        """The raw string with every '-' separator replaced by '.'."""
        return self.raw.replace("-", ".")

    def _key(self, width: int) -> tuple[int, ...]:
        return self.components + (0,) * (width - len(self.components))

    def __lt__(self, other: VersionString) -> bool:
        return compare_versions(self, other) is Ordering.LT

    def __le__(self, other: VersionString) -> bool:
        return compare_versions(self, other) is not Ordering.GT

    def __gt__(self, other: VersionString) -> bool:
        return compare_versions(self, other) is Ordering.GT

    def __ge__(self, other: VersionString) -> bool:
        return compare_versions(self, other) is not Ordering.LT


def _as_version(value: VersionString | str) -> VersionString:
    return value if isinstance(value, VersionString) else VersionString(value)


def compare_versions(a: VersionString | str, b: VersionString | str) -> Ordering:
    """Componentwise numeric comparison, padding the shorter side with zeros."""
    a, b = _as_version(a), _as_version(b)
    width = max(len(a.components), len(b.components))
    ka, kb = a._key(width), b._key(width)
    if ka < kb:
        return Ordering.LT
    if ka > kb:
        return Ordering.GT
    return Ordering.EQ


@dataclass(frozen=True)
class DepSpec:
    name: str
    relation: str | None = None
    version: VersionString | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise MetadataError("dependency name is empty")
        if (self.relation is None) != (self.version is None):
            raise BadConstraint(f"{self.name}: relation and version go together")
        if self.relation is not None and self.relation not in RELATIONS:
            raise BadConstraint(f"{self.name}: unknown relation {self.relation!r}")

    @classmethod
    def parse(cls, entry: str) -> DepSpec:
        """Parse ``name`` or ``name (rel version)``."""
        m = _DEP_ENTRY.match(entry.strip())
        if m is None:
            raise BadConstraint(f"cannot parse dependency {entry!r}")
        constraint = m.group("constraint")
        if constraint is None:
            return cls(m.group("name"))
        c = _CONSTRAINT.match(constraint)
        if c is None or not c.group("version"):
            raise BadConstraint(f"bad version constraint in {entry!r}")
        try:
            version = VersionString(c.group("version"))
        except BadVersion as exc:
            raise BadConstraint(f"bad version constraint in {entry!r}") from exc
        return cls(m.group("name"), c.group("rel"), version)

    def __str__(self) -> str:
        if self.relation is None:
            return self.name
        return f"{self.name} ({self.relation} {self.version})"


@dataclass(frozen=True)
class PackageRecord:
    name: str
    version: VersionString
    license: str = ""
    depends: tuple[DepSpec, ...] = ()
    imports: tuple[DepSpec, ...] = ()
    linking_to: tuple[DepSpec, ...] = ()
    suggests: tuple[DepSpec, ...] = ()
    needs_compilation: bool = False
    system_requirements: str | None = None

    def __post_init__(self) -> None:
        if not self.name or any(c.isspace() for c in self.name):
            raise MetadataError(f"invalid package name {self.name!r}")
        for attr in DEPENDENCY_FIELDS.values():
            if any(d.name == self.name for d in getattr(self, attr)):
                raise MetadataError(f"{self.name} lists itself in {attr}")

    def dep_names(self, fields: Iterable[str]) -> set[str]:
        """Names listed in the given dependency attributes (e.g. ``imports``)."""
        return {d.name for f in fields for d in getattr(self, f)}


def parse_dcf(text: str) -> list[dict[str, str]]:
    """Split DCF text into ordered field maps, one per stanza.

    Continuation lines are folded into the preceding field with a single
    space.  Field names keep their case.
    """
    stanzas: list[dict[str, str]] = []
    current: dict[str, list[str]] = {}
    last: str | None = None

    def flush() -> None:
        nonlocal current, last
        if current:
            stanzas.append({k: " ".join(p for p in v if p) for k, v in current.items()})
        current, last = {}, None

    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            flush()
            continue
        if line[0].isspace():
            if last is None:
                raise MalformedField(f"line {lineno}: continuation line without a field")
            current[last].append(line.strip())
            continue
        name, sep, value = line.partition(":")
        if not sep or not _FIELD_NAME.match(name):
            raise MalformedField(f"line {lineno}: expected 'Field: value', got {line!r}")
        if name in current:
            raise DuplicateField(f"line {lineno}: duplicate field {name!r}")
        current[name] = [value.strip()]
        last = name
    flush()
    return stanzas


def render_dcf(stanzas: Iterable[Mapping[str, str]]) -> str:
    """Inverse of :func:`parse_dcf` for single-line, stripped values."""
    blocks = []
    for stanza in stanzas:
        lines = [f"{k}: {v}" if v else f"{k}:" for k, v in stanza.items()]
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def _split_deps(value: str | None) -> tuple[DepSpec, ...]:
    if not value:
        return ()
    return tuple(DepSpec.parse(e) for e in value.split(",") if e.strip())


def parse_record(stanza: Mapping[str, str]) -> PackageRecord:
    for required in ("Package", "Version"):
        if not stanza.get(required):
            raise MissingField(required)
    try:
        version = VersionString(stanza["Version"])
    except BadVersion as exc:
        raise BadVersion(f"{stanza['Package']}: {exc}") from exc
    deps = {attr: _split_deps(stanza.get(f)) for f, attr in DEPENDENCY_FIELDS.items()}
    return PackageRecord(
        name=stanza["Package"],
        version=version,
        license=stanza.get("License", ""),
        needs_compilation=stanza.get("NeedsCompilation", "").strip().lower() == "yes",
        system_requirements=stanza.get("SystemRequirements") or None,
        **deps,
    )


def parse_packages_index(text: str) -> list[PackageRecord]:
    """Parse a whole PACKAGES index into records."""
    return [parse_record(s) for s in parse_dcf(text)]
