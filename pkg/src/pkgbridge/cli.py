"""Command-line entry point: ``pkgbridge <subcommand> ...``.

Data goes to stdout (TSV by default, ``--format json`` on request) and
diagnostics to stderr.  Exit status is 0 on success, 1 on domain errors
and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import depgraph, metadata, recipegen, sysreqs, syncer
from .bridge import (
    SOCKET_ENV,
    BridgeClient,
    BridgeError,
    ClientConfig,
    DirectBridge,
    Mapping,
    load_presets,
    serve,
)
from .fakepm import FakePackageManager, PackageManagerError, load_catalog
from .recipegen import NameTransform

log = logging.getLogger("pkgbridge")

SYSREQS_ENV = "PKGBRIDGE_SYSREQS"
EXCLUDE_ENV = "PKGBRIDGE_EXCLUDE"
CONFIG_ENV = "PKGBRIDGE_CONFIG"

DOMAIN_ERRORS = (
    metadata.MetadataError,
    depgraph.CycleDetected,
    depgraph.DuplicatePackage,
    sysreqs.MalformedLine,
    sysreqs.NeedsCuration,
    recipegen.RecipeError,
    BridgeError,
    PackageManagerError,
    OSError,
    ValueError,
)


class UsageError(Exception):
    pass


def _read(path: str | os.PathLike) -> str:
    return Path(path).read_text("utf-8")


def _require(args, *flags: str) -> None:
    missing = [f"--{f.replace('_', '-')}" for f in flags if not getattr(args, f, None)]
    if missing:
        raise UsageError(f"{args.command}: missing required flag(s): {', '.join(missing)}")


def _records(args) -> list[metadata.PackageRecord]:
    _require(args, "packages")
    return metadata.parse_packages_index(_read(args.packages))


def _sysreqs_db(args) -> sysreqs.SysreqsDB | None:
    path = getattr(args, "sysreqs", None) or os.environ.get(SYSREQS_ENV)
    return sysreqs.load_db(_read(path)) if path else None


def _exclusions(records, db) -> tuple[depgraph.DepGraph, dict]:
    graph = depgraph.build_graph(records, depgraph.BUILD_FIELDS)
    seeds = sysreqs.excluded_packages(db) if db is not None else {}
    return graph, depgraph.propagate_exclusions(graph, seeds)


def _emit(args, tsv: str, data) -> None:
    if getattr(args, "format", "tsv") == "json":
        sys.stdout.write(json.dumps(data, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(tsv)


def _reason_json(r: depgraph.ExclusionReason) -> dict:
    return {"kind": r.kind.value, "detail": r.detail}


# -- planning subcommands

def cmd_stats(args) -> int:
    stats = depgraph.compilation_stats(_records(args))
    rows = [
        ("direct", len(stats.direct), stats.direct_pct),
        ("indirect_only", len(stats.indirect_only), stats.indirect_only_pct),
        ("either", len(stats.either), stats.either_pct),
    ]
    tsv = "metric\tcount\tpercent\n" + "".join(
        f"{name}\t{count}\t{float(pct):.2f}\n" for name, count, pct in rows
    ) + f"total\t{stats.total}\t100.00\n"
    data = {name: {"count": count, "percent": float(pct)} for name, count, pct in rows}
    data["total"] = stats.total
    _emit(args, tsv, data)
    return 0


def cmd_batches(args) -> int:
    records = _records(args)
    graph, excluded = _exclusions(records, _sysreqs_db(args))
    plan = depgraph.batch_plan(graph, excluded)
    data = {
        "batches": [list(b) for b in plan.batches],
        "excluded": {n: _reason_json(r) for n, r in sorted(plan.excluded.items())},
    }
    _emit(args, depgraph.render_batch_plan(plan), data)
    return 0


def _render_one(job) -> tuple[str, str]:
    record, entry, template, opts = job
    recipe = recipegen.generate(record, entry, template, **opts)
    return recipe.filename, recipe.body


def cmd_recipe(args) -> int:
    records = {r.name: r for r in _records(args)}
    if not args.names and not args.all:
        raise UsageError("recipe: give package names or --all")
    db = _sysreqs_db(args) or sysreqs.SysreqsDB()
    template = _read(args.template) if args.template else recipegen.default_template()
    graph, excluded = _exclusions(records.values(), db)
    names = sorted(records) if args.all else args.names
    opts = dict(prefix=args.name_prefix, release=args.release, distro=args.distro,
                transform=args.transform)
    jobs = []
    uncurated: list[str] = []
    for name in names:
        if name not in records:
            raise metadata.MetadataError(f"{name}: not in the packages index")
        if args.all and name in excluded:
            log.warning("skipping %s (%s)", name, excluded[name].kind.value)
            continue
        if args.all:
            try:
                sysreqs.resolve(db, records[name], args.distro)
            except sysreqs.NeedsCuration:
                uncurated.append(name)
                continue
        jobs.append((records[name], db.get(name), template,
                     dict(opts, exclusion=excluded.get(name))))

    if uncurated:
        log.warning("skipping %d package(s) whose system requirements need curation: %s",
                    len(uncurated), " ".join(uncurated))

    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rendered = list(pool.map(_render_one, jobs))
    else:
        rendered = [_render_one(j) for j in jobs]

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for filename, body in rendered:
            path = out / filename
            if not path.exists() or path.read_text("utf-8") != body:
                path.write_text(body, "utf-8")
            print(path)
    else:
        for _, body in rendered:
            sys.stdout.write(body)
    return 0


def cmd_sync_plan(args) -> int:
    _require(args, "packages", "repo_state")
    records = _records(args)
    repo = syncer.load_repo_state(_read(args.repo_state))
    _, excluded = _exclusions(records, _sysreqs_db(args))
    plan = syncer.plan_sync(records, repo, excluded, rebuild_dependents=args.rebuild_dependents)
    data = {
        "removals": sorted(plan.removals),
        "builds": [
            {"batch": b.batch, "name": b.name, "reason": b.reason.value, "release": b.release}
            for b in plan.builds
        ],
        "unchanged": plan.unchanged,
    }
    _emit(args, syncer.render_sync_plan(plan), data)
    return 0


def cmd_scrape(args) -> int:
    _require(args, "lexicon")
    records = _records(args)
    lexicon = sysreqs.lexicon_from_db(sysreqs.load_db(_read(args.lexicon)))
    draft, leftovers = sysreqs.draft_entries(records, lexicon)
    if args.format == "json":
        _emit(args, "", {
            "entries": {
                n: {d: {"build": sorted(r.build), "run": sorted(r.run)} for d, r in e.targets.items()}
                for n, e in draft.entries.items()
            },
            "unmatched": leftovers,
        })
        return 0
    sys.stdout.write(sysreqs.save_db(draft))
    for name, tokens in sorted(leftovers.items()):
        sys.stdout.write(f"# {name}: unmatched: {', '.join(tokens)}\n")
    return 0


# -- bridge subcommands

def _socket(args) -> str:
    path = args.socket or os.environ.get(SOCKET_ENV)
    if not path:
        raise UsageError(f"{args.command}: missing required flag: --socket (or {SOCKET_ENV})")
    return path


def _backend(args) -> FakePackageManager:
    _require(args, "catalog")
    pm = FakePackageManager(load_catalog(_read(args.catalog)))
    if args.state and Path(args.state).exists():
        pm.load_state(_read(args.state))
    return pm


def _admin(args):
    path = getattr(args, "presets", None) or os.environ.get(EXCLUDE_ENV)
    return load_presets(_read(path)) if path else None


def _preset_mapping(args, admin) -> Mapping | None:
    if args.prefix is None:
        return None
    mapping = Mapping(args.prefix, NameTransform(args.transform))
    return mapping.with_admin(*admin) if admin else mapping


def _config(args) -> ClientConfig:
    path = args.config or os.environ.get(CONFIG_ENV) or (
        Path.home() / ".config" / "pkgbridge" / "client.json"
    )
    return ClientConfig.load(path)


def cmd_serve(args) -> int:
    backend = _backend(args)
    socket_path = _socket(args)
    admin = _admin(args)
    try:
        return serve(socket_path, backend, _preset_mapping(args, admin), admin=admin)
    finally:
        if args.state:
            Path(args.state).write_text(backend.dump_state(), "utf-8")


def _progress(text: str) -> None:
    print(text, file=sys.stderr, flush=True)


def cmd_bridge(args) -> int:
    if args.command != "discover" and not args.names:
        raise UsageError(f"{args.command}: give at least one package name")
    config = _config(args)
    if args.direct:
        backend = _backend(args)
        admin = _admin(args)
        mapping = _preset_mapping(args, admin)
        client = DirectBridge(backend, mapping, config)
        if mapping is None and admin and args.command != "discover" and config.enabled:
            client.mapping = client.discover().with_admin(*admin)
    else:
        backend = None
        client = BridgeClient(_socket(args), config)
    try:
        if args.command == "discover":
            mapping = client.discover()
            _emit(args, f"{mapping.prefix}\t{mapping.transform.value}\n",
                  {"prefix": mapping.prefix, "transform": mapping.transform.value})
            return 0
        op = client.install if args.command == "install" else client.remove
        result = op(args.names, on_progress=_progress)
    finally:
        if isinstance(client, BridgeClient):
            client.close()
        if backend is not None and args.state:
            Path(args.state).write_text(backend.dump_state(), "utf-8")
    label = "installed" if args.command == "install" else "removed"
    tsv = "".join(f"{label}\t{n}\n" for n in result.changed)
    tsv += "".join(f"not_found\t{n}\n" for n in result.not_found)
    _emit(args, tsv, {label: list(result.changed), "not_found": list(result.not_found)})
    return 0


def cmd_toggle(args) -> int:
    config = _config(args)
    state = config.enable() if args.command == "enable" else config.disable()
    print("enabled" if state else "disabled")
    return 0


# -- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pkgbridge", description="R binary repository tooling and package-manager bridge"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        return p

    def data_flags(p, sysreqs_flag=True):
        p.add_argument("--packages", help="PACKAGES index (DCF)")
        if sysreqs_flag:
            p.add_argument("--sysreqs", help=f"sysreqs TSV database (or ${SYSREQS_ENV})")
        p.add_argument("--format", choices=("tsv", "json"), default="tsv")

    p = add("stats", cmd_stats, "compilation statistics")
    data_flags(p, sysreqs_flag=False)

    p = add("batches", cmd_batches, "mass-rebuild batch plan")
    data_flags(p)

    p = add("recipe", cmd_recipe, "render build recipes")
    data_flags(p)
    p.add_argument("names", nargs="*")
    p.add_argument("--all", action="store_true", help="every non-excluded package")
    p.add_argument("--template")
    p.add_argument("--name-prefix", default="R-CRAN-")
    p.add_argument("--transform", choices=[t.value for t in NameTransform], default="identity")
    p.add_argument("--release", type=int, default=1)
    p.add_argument("--distro", default="fedora")
    p.add_argument("--out", help="write <system_name>.spec files here")
    p.add_argument("--jobs", type=int, default=1)

    p = add("sync-plan", cmd_sync_plan, "daily synchronization plan")
    data_flags(p)
    p.add_argument("--repo-state", help="TSV name<TAB>version<TAB>release")
    p.add_argument("--rebuild-dependents", action="store_true")

    p = add("scrape-sysreqs", cmd_scrape, "draft sysreqs entries from SystemRequirements")
    data_flags(p, sysreqs_flag=False)
    p.add_argument("--lexicon", help="lexicon TSV (sysreqs format, patterns in column 1)")

    def bridge_flags(p):
        p.add_argument("--socket", help=f"service socket (or ${SOCKET_ENV})")
        p.add_argument("--catalog", help="fake backend catalog seed TSV")
        p.add_argument("--state", help="JSON file persisting the fake backend's installed set")
        p.add_argument("--presets", help=f"admin preset/exclusion TSV (or ${EXCLUDE_ENV})")
        p.add_argument("--prefix", help="preset name prefix; skips discovery")
        p.add_argument("--transform", choices=[t.value for t in NameTransform], default="identity")

    p = add("serve", cmd_serve, "run the privileged bridge service")
    bridge_flags(p)

    for name in ("discover", "install", "remove"):
        p = add(name, cmd_bridge, f"{name} through the bridge")
        bridge_flags(p)
        if name != "discover":
            p.add_argument("names", nargs="*")
        else:
            p.set_defaults(names=[])
        p.add_argument("--direct", action="store_true", help="call the backend in-process")
        p.add_argument("--config", help=f"client config file (or ${CONFIG_ENV})")
        p.add_argument("--format", choices=("tsv", "json"), default="tsv")

    for name in ("enable", "disable"):
        p = add(name, cmd_toggle, f"{name} forwarding to the bridge")
        p.add_argument("--config", help=f"client config file (or ${CONFIG_ENV})")
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pkgbridge: error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"pkgbridge: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
