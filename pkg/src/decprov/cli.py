"""decprov command line.

Examples::

    decprov run fig2 -o out/
    decprov query lineage orgB:action-1 -d out/ --as regulator --format dot
    decprov query unexpected -d out/ --flows flows.json
    decprov verify out/
    decprov export -d out/ --format dot > federation.dot

Exit status: 0 ok, 1 usage error, 2 data error, 3 query target not found,
4 integrity failure found by ``verify``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Final, NoReturn, TextIO

from decprov import __version__
from decprov.errors import (
    ChainMismatch,
    DecProvError,
    InvalidIdentifier,
    MalformedRecord,
    UnknownRoot,
)
from decprov.export import federation_to_dot, federation_to_json, pipeline_to_dot
from decprov.model import ProvNode, QualifiedId
from decprov.query import (
    DEFAULT_DEPTH,
    DecisionPipeline,
    FlowDeclaration,
    data_inventory,
    erasure_set,
    impact,
    involved_agents,
    lineage,
    unexpected_flows,
)
from decprov.simulator import bundled_path, load_scenario_file, run
from decprov.store import LOG_SUFFIX, REGULATOR, Federation, Redacted, verify_log

EXIT_OK: Final = 0
EXIT_USAGE: Final = 1
EXIT_DATA: Final = 2
EXIT_NOT_FOUND: Final = 3
EXIT_INTEGRITY: Final = 4

REPORT_FILE: Final = "run-report.json"
FLOWS_FILE: Final = "flows.json"

QUERY_KINDS: Final = ("lineage", "impact", "inventory", "erasure", "unexpected")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Style:
    def __init__(self, stream: TextIO):
        setting = os.environ.get("DECPROV_COLOR")
        if setting is None:
            self.enabled = hasattr(stream, "isatty") and stream.isatty()
        else:
            self.enabled = setting == "1"

    def __call__(self, text: str, code: str) -> str:
        return f"\033[{code}m{text}\033[0m" if self.enabled else text


def _dump_json(data: Any, out: TextIO) -> None:
    json.dump(data, out, indent=2, ensure_ascii=False, sort_keys=False)
    out.write("\n")


def _load_federation(directory: str) -> Federation:
    try:
        return Federation.load(directory)
    except (MalformedRecord, ChainMismatch) as exc:
        raise CliError(EXIT_DATA, f"cannot import federation from {directory}: {exc}") from exc
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot read {directory}: {exc}") from exc


def _principal(args: argparse.Namespace, fed: Federation) -> str:
    if args.as_domain:
        return args.as_domain
    if args.regulator:
        return REGULATOR
    return fed.domains[0] if fed.domains else REGULATOR


# -- run -------------------------------------------------------------------------


def _resolve_scenario(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = bundled_path(name)
    if bundled.exists():
        return bundled
    raise CliError(EXIT_DATA, f"scenario not found: {name}")


def cmd_run(args: argparse.Namespace, out: TextIO) -> int:
    path = _resolve_scenario(args.scenario)
    try:
        scenario = load_scenario_file(path)
    except (DecProvError, OSError) as exc:
        raise CliError(EXIT_DATA, f"{path}: {exc}") from exc
    result = run(scenario)
    target = Path(args.output)
    try:
        written = result.federation.save(target)
        (target / FLOWS_FILE).write_text(json.dumps(scenario.flows.to_json(), indent=2) + "\n", encoding="utf-8")
        (target / REPORT_FILE).write_text(
            json.dumps(result.report(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot write to {target}: {exc}") from exc
    if args.format == "json":
        _dump_json(result.report(), out)
        return EXIT_OK
    style = _Style(out)
    for event in result.events:
        colour = {"ok": "32", "blocked": "31"}.get(event.outcome, "33")
        label = event.outcome if event.error is None or event.outcome == "blocked" else f"error({event.error})"
        line = f"[t={event.tick:>3}] {event.op:<12} {style(label, colour)}"
        if event.produced:
            line += "  " + " ".join(str(p) for p in event.produced)
        if event.detail:
            line += f"  {event.detail}"
        out.write(line + "\n")
    for path in written:
        out.write(f"wrote {path}\n")
    out.write(f"wrote {target / REPORT_FILE}\n")
    return EXIT_OK


# -- query -----------------------------------------------------------------------


def _pipeline_text(pipeline: DecisionPipeline, out: TextIO) -> None:
    style = _Style(out)
    out.write(f"{pipeline.direction} of {pipeline.root} as {pipeline.requesting_domain} "
              f"(depth <= {pipeline.max_depth})\n")
    for node in pipeline.nodes:
        payload = node.payload
        if isinstance(payload, ProvNode):
            desc = f"{payload.kind.value}:{payload.node_type}"
        elif isinstance(payload, Redacted):
            desc = style(f"{payload.kind.value}:redacted", "2")
        else:
            desc = style("unresolvable", "31")
        out.write(f"  {node.depth:>3}  {style(str(node.id), '1')}  {desc}\n")
    agents = involved_agents(pipeline)
    if agents:
        out.write("agents:\n")
        for agent in agents:
            out.write(f"  {agent.id}  ({agent.node_type or 'redacted'})\n")
    out.write(f"{len(pipeline.nodes)} nodes across {len(pipeline.domains)} domains")
    out.write(", truncated\n" if pipeline.truncated else "\n")


def _query_graph(args, fed, principal, out) -> int:
    if not args.target:
        raise CliError(EXIT_USAGE, f"query {args.kind} needs a node id")
    try:
        root = QualifiedId.parse(args.target)
    except InvalidIdentifier as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    fn = lineage if args.kind == "lineage" else impact
    try:
        pipeline = fn(fed, root, max_depth=args.depth, requesting_domain=principal)
    except UnknownRoot as exc:
        raise CliError(EXIT_NOT_FOUND, str(exc)) from exc
    if args.format == "dot":
        out.write(pipeline_to_dot(pipeline))
    elif args.format == "json":
        _dump_json(pipeline.to_dict(), out)
    else:
        _pipeline_text(pipeline, out)
    return EXIT_OK


def _query_subject(args, fed, principal, out) -> int:
    if not args.target:
        raise CliError(EXIT_USAGE, f"query {args.kind} needs a data subject")
    if not erasure_set(fed, args.target).entities:
        raise CliError(EXIT_NOT_FOUND, f"no entity about data subject {args.target!r}")
    if args.kind == "inventory":
        entries = data_inventory(fed, args.target, principal)
        if args.format == "json":
            _dump_json({"data_subject": args.target, "as": principal,
                        "entries": [e.to_dict() for e in entries]}, out)
            return EXIT_OK
        out.write(f"inventory for {args.target} as {principal}\n")
        for e in entries:
            line = f"  {e.entity}  {e.node_type}  purposes={','.join(sorted(e.purposes)) or '-'}"
            if e.alias_ancestors:
                line += "  copy of " + ",".join(str(a) for a in e.alias_ancestors)
            out.write(line + "\n")
        out.write(f"{len(entries)} entities\n")
        return EXIT_OK
    report = erasure_set(fed, args.target)
    if args.format == "json":
        _dump_json(report.to_dict(), out)
        return EXIT_OK
    out.write(f"erasure set for {args.target}\n")
    for entity in report.entities:
        out.write(f"  {entity}\n")
    if report.frontier:
        out.write("activities that used them:\n")
        for act in report.frontier:
            out.write(f"  {act}\n")
    return EXIT_OK


def _query_unexpected(args, fed, out) -> int:
    flows_path = Path(args.flows) if args.flows else Path(args.dir) / FLOWS_FILE
    try:
        declaration = FlowDeclaration.load(flows_path)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"cannot load flow declaration {flows_path}: {exc}") from exc
    findings = unexpected_flows(fed, declaration)
    if args.format == "json":
        _dump_json({"unexpected": [f.to_dict() for f in findings]}, out)
        return EXIT_OK
    for f in findings:
        out.write(f"{f.from_domain} -> {f.to_domain}  {f.node_type}  {f.source_entity} => "
                  f"{f.alias_entity}  via {f.transfer_activity} at t={f.at}\n")
    out.write(f"{len(findings)} undeclared transfers\n")
    return EXIT_OK


def cmd_query(args: argparse.Namespace, out: TextIO) -> int:
    if args.format == "dot" and args.kind not in ("lineage", "impact"):
        raise CliError(EXIT_USAGE, "--format dot is only available for lineage and impact")
    fed = _load_federation(args.dir)
    principal = _principal(args, fed)
    if args.kind in ("lineage", "impact"):
        return _query_graph(args, fed, principal, out)
    if args.kind in ("inventory", "erasure"):
        return _query_subject(args, fed, principal, out)
    return _query_unexpected(args, fed, out)


# -- verify / export ---------------------------------------------------------------


def cmd_verify(args: argparse.Namespace, out: TextIO) -> int:
    root = Path(args.directory or args.dir)
    if not root.is_dir():
        raise CliError(EXIT_DATA, f"{root} is not a directory")
    reports = []
    for path in sorted(root.glob(f"*{LOG_SUFFIX}")):
        try:
            reports.append((path.name, verify_log(path)))
        except MalformedRecord as exc:
            raise CliError(EXIT_DATA, f"{path.name}: {exc}") from exc
        except OSError as exc:
            raise CliError(EXIT_DATA, f"cannot read {path}: {exc}") from exc
    failed = [r for _, r in reports if not r.ok]
    if args.format == "json":
        _dump_json(
            {
                "stores": [
                    {"file": name, "domain": r.domain, "records": r.records,
                     "status": "ok" if r.ok else "first-corrupt", "first_corrupt": r.first_corrupt}
                    for name, r in reports
                ]
            },
            out,
        )
    else:
        style = _Style(out)
        for name, r in reports:
            if r.ok:
                out.write(f"{r.domain}: {style('Ok', '32')} ({r.records} records)\n")
            else:
                out.write(f"{r.domain}: {style('FirstCorrupt', '31')} at position {r.first_corrupt} "
                          f"of {r.records} ({name})\n")
        out.write(f"{len(reports)} stores checked, {len(failed)} corrupt\n")
    return EXIT_INTEGRITY if failed else EXIT_OK


def cmd_export(args: argparse.Namespace, out: TextIO) -> int:
    fed = _load_federation(args.dir)
    principal = _principal(args, fed)
    if args.format == "json":
        text = json.dumps(federation_to_json(fed, principal), indent=2, ensure_ascii=False) + "\n"
    else:
        text = federation_to_dot(fed, principal)
    if args.output:
        try:
            Path(args.output).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise CliError(EXIT_DATA, f"cannot write {args.output}: {exc}") from exc
    else:
        out.write(text)
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def _depth(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("depth must be non-negative")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("text", "json", "dot"), default="text")
    common.add_argument("--depth", type=_depth, default=DEFAULT_DEPTH, help="traversal depth (default %(default)s)")
    common.add_argument("--as", dest="as_domain", metavar="DOMAIN", help="requesting domain for visibility")
    common.add_argument("--regulator", action="store_true", help="query with regulator visibility")
    common.add_argument("-d", "--dir", default=".", help="federation directory (default: current)")

    parser = _Parser(prog="decprov", description="Decision provenance: capture, verify and query.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_run = sub.add_parser("run", parents=[common], help="run a scenario and export its stores")
    p_run.add_argument("scenario", help="scenario file or bundled scenario name")
    p_run.add_argument("-o", "--output", required=True, help="output directory")
    p_run.set_defaults(handler=cmd_run)

    p_query = sub.add_parser("query", parents=[common], help="accountability queries")
    p_query.add_argument("kind", choices=QUERY_KINDS)
    p_query.add_argument("target", nargs="?", help="node id (lineage/impact) or data subject")
    p_query.add_argument("--flows", help="flow declaration (default: DIR/flows.json)")
    p_query.set_defaults(handler=cmd_query)

    p_verify = sub.add_parser("verify", parents=[common], help="check hash chains")
    p_verify.add_argument("directory", nargs="?", help="federation directory")
    p_verify.set_defaults(handler=cmd_verify)

    p_export = sub.add_parser("export", parents=[common], help="export the federation graph")
    p_export.add_argument("-o", "--output", help="write to a file instead of standard output")
    p_export.set_defaults(handler=cmd_export)
    return parser


def main(argv: list[str] | None = None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    if args.command == "export" and args.format == "text":
        args.format = "dot"
    try:
        return args.handler(args, out)
    except CliError as exc:
        print(f"decprov: {exc}", file=sys.stderr)
        return exc.code
    except DecProvError as exc:
        print(f"decprov: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
