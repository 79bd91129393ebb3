"""Render SPEC-like build recipes from package metadata."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

from .depgraph import BASE_PACKAGES, ExclusionReason
from .metadata import PackageRecord
from .sysreqs import Requirements, SysreqsEntry, NeedsCuration

__all__ = [
    "DEFAULT_INSTALL_PREFIX",
    "DEFAULT_SOURCE_URL",
    "ExcludedPackage",
    "NameTransform",
    "Recipe",
    "RecipeError",
    "UnresolvedPlaceholder",
    "default_template",
    "generate",
    "system_name",
    "write_recipe",
]

DEFAULT_INSTALL_PREFIX = "/usr/local/lib/R/library"
DEFAULT_SOURCE_URL = "https://cran.r-project.org/src/contrib/{name}_{version}.tar.gz"

# Assumed present in every build root, so never emitted.
TOOLCHAIN = frozenset({
    "gcc", "gcc-c++", "gcc-gfortran", "g++", "gfortran", "make", "build-essential",
})

_PLACEHOLDER = re.compile(r"\{\{\s*([A-Za-z_]\w*)\s*\}\}")


class RecipeError(Exception):
    pass


class UnresolvedPlaceholder(RecipeError):
    pass


class ExcludedPackage(RecipeError):
    pass


class NameTransform(str, enum.Enum):
    IDENTITY = "identity"
    LOWERCASE = "lowercase"


def system_name(r_name: str, prefix: str, transform: NameTransform | str = NameTransform.IDENTITY) -> str:
    """``units`` -> ``R-CRAN-units`` (identity) or ``r-cran-units`` (lowercase)."""
    transform = NameTransform(transform)
    return prefix + (r_name.lower() if transform is NameTransform.LOWERCASE else r_name)


@dataclass(frozen=True)
class Recipe:
    system_name: str
    upstream_name: str
    version: str
    release: int
    license: str
    build_requires: tuple[str, ...]
    requires: tuple[str, ...]
    source_url_template: str
    install_prefix: str
    body: str

    @property
    def filename(self) -> str:
        return f"{self.system_name}.spec"


def default_template() -> str:
    return resources.files("pkgbridge").joinpath("templates/default.spec").read_text("utf-8")


def _render(template: str, values: dict[str, str]) -> str:
    def sub(m: re.Match) -> str:
        key = m.group(1)
        if key not in values:
            raise UnresolvedPlaceholder(f"unknown placeholder {{{{{key}}}}}")
        return values[key]

    return _PLACEHOLDER.sub(sub, template)


def generate(
    record: PackageRecord,
    sysreqs_entry: SysreqsEntry | None,
    template: str | None = None,
    prefix: str = "R-CRAN-",
    release: int = 1,
    *,
    distro: str = "fedora",
    transform: NameTransform | str = NameTransform.IDENTITY,
    install_prefix: str = DEFAULT_INSTALL_PREFIX,
    source_url_template: str = DEFAULT_SOURCE_URL,
    runtime_requires: Iterable[str] = ("R-core",),
    build_base: Iterable[str] = ("R-devel",),
    ignore: Iterable[str] = BASE_PACKAGES,
    exclusion: ExclusionReason | None = None,
) -> Recipe:
    """Render the recipe for one package.

    Hard R dependencies (Depends, Imports) become both build and runtime
    requirements; LinkingTo only a build requirement.  Files are claimed
    through the package's library directory, never listed one by one.
    """
    if exclusion is not None:
        raise ExcludedPackage(f"{record.name}: {exclusion.kind.value} {exclusion.detail}".rstrip())
    if sysreqs_entry is not None and sysreqs_entry.excluded is not None:
        raise ExcludedPackage(f"{record.name}: {sysreqs_entry.excluded.detail}")
    if release < 1:
        raise ValueError("release must be a positive integer")
    if not install_prefix.startswith("/usr/local/") or not install_prefix.rstrip("/").endswith("/lib/R/library"):
        raise ValueError(f"install prefix must be /usr/local/.../lib/R/library, got {install_prefix}")
    install_prefix = install_prefix.rstrip("/")

    reqs = sysreqs_entry.for_distro(distro) if sysreqs_entry is not None else None
    if reqs is None:
        if record.system_requirements:
            raise NeedsCuration(f"{record.name}: SystemRequirements not curated for {distro}")
        reqs = Requirements()

    ignored = frozenset(ignore) | {"R"}
    hard = record.dep_names(("depends", "imports")) - ignored
    linking = record.dep_names(("linking_to",)) - ignored
    hard_sys = {system_name(n, prefix, transform) for n in hard}
    link_sys = {system_name(n, prefix, transform) for n in linking}
    build_requires = tuple(sorted(
        set(build_base) | hard_sys | link_sys | (reqs.build - TOOLCHAIN)
    ))
    requires = tuple(sorted(set(runtime_requires) | hard_sys | (reqs.run - TOOLCHAIN)))

    sys_name = system_name(record.name, prefix, transform)
    version = record.version.dotted
    source = source_url_template.format(name=record.name, version=record.version.raw)
    body = _render(template if template is not None else default_template(), {
        "name": record.name,
        "system_name": sys_name,
        "version": version,
        "release": str(release),
        "license": record.license,
        "buildrequires": "\n".join(f"BuildRequires:    {r}" for r in build_requires),
        "requires": "\n".join(f"Requires:         {r}" for r in requires),
        "source": source,
        "prefix": install_prefix,
    })
    return Recipe(
        system_name=sys_name,
        upstream_name=record.name,
        version=version,
        release=release,
        license=record.license,
        build_requires=build_requires,
        requires=requires,
        source_url_template=source_url_template,
        install_prefix=install_prefix,
        body=body,
    )


def write_recipe(recipe: Recipe, outdir: str | Path) -> Path:
    """Write ``<system_name>.spec``; an identical file on disk is left untouched."""
    path = Path(outdir) / recipe.filename
    if path.exists() and path.read_text("utf-8") == recipe.body:
        return path
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(recipe.body, "utf-8")
    return path
