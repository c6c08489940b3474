"""DOT and JSON renderings of decision pipelines and whole federations."""

from __future__ import annotations

from collections.abc import Iterable
from typing import Any, Final

from decprov.model import NodeKind, ProvEdge, ProvNode, QualifiedId, record_to_dict
from decprov.query import DecisionPipeline
from decprov.store import Federation, FederationView, Redacted, Resolved, Unresolvable

# PROV's customary shapes.
SHAPES: Final = {NodeKind.ENTITY: "ellipse", NodeKind.ACTIVITY: "box", NodeKind.AGENT: "house"}


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def _node_line(node_id: QualifiedId, payload: Resolved) -> str:
    if isinstance(payload, Unresolvable):
        attrs = {"label": f"{node_id}\nunresolvable", "shape": "octagon", "style": "dotted"}
    elif isinstance(payload, Redacted):
        attrs = {"label": f"{node_id}\n{payload.kind.value}:redacted", "shape": SHAPES[payload.kind], "style": "dashed"}
    else:
        attrs = {"label": f"{node_id}\n{payload.kind.value}:{payload.node_type}", "shape": SHAPES[payload.kind]}
    body = ", ".join(f"{k}={_quote(v)}" for k, v in attrs.items())
    return f"    {_quote(str(node_id))} [{body}];"


def _edge_line(source: QualifiedId, target: QualifiedId, label: str, dashed: bool = False) -> str:
    style = ', style="dashed"' if dashed else ""
    return f"    {_quote(str(source))} -> {_quote(str(target))} [label={_quote(label)}{style}];"


def render_dot(
    name: str,
    nodes: Iterable[tuple[QualifiedId, Resolved]],
    edges: Iterable[ProvEdge],
    aliases: Iterable[tuple[QualifiedId, QualifiedId]] = (),
) -> str:
    """Graph-description text with one cluster per domain."""
    by_domain: dict[str, list[str]] = {}
    known: set[QualifiedId] = set()
    for node_id, payload in nodes:
        known.add(node_id)
        by_domain.setdefault(node_id.domain, []).append(_node_line(node_id, payload))
    lines = [f"digraph {_quote(name)} {{", "    rankdir=BT;", '    node [fontname="Helvetica"];']
    for index, domain in enumerate(sorted(by_domain)):
        lines.append(f"  subgraph cluster_{index} {{")
        lines.append(f"    label={_quote(domain)};")
        lines.extend(by_domain[domain])
        lines.append("  }")
    for edge in edges:
        if edge.source in known and edge.target in known:
            lines.append(_edge_line(edge.source, edge.target, edge.kind.value))
    for alias, source in aliases:
        if alias in known and source in known:
            lines.append(_edge_line(alias, source, "alias_of", dashed=True))
    lines.append("}")
    return "\n".join(lines) + "\n"


def pipeline_to_dot(pipeline: DecisionPipeline) -> str:
    return render_dot(
        f"{pipeline.direction} {pipeline.root}",
        ((n.id, n.payload) for n in pipeline.nodes),
        pipeline.edges,
        ((a.alias, a.source) for a in pipeline.alias_links),
    )


def _federation_graph(view: FederationView, requesting_domain: str):
    nodes: list[tuple[QualifiedId, Resolved]] = []
    edges: list[ProvEdge] = []
    aliases: list[tuple[QualifiedId, QualifiedId]] = []
    for domain in view.domains:
        snapshot = view.stores[domain]
        for record in snapshot.records():
            if isinstance(record, ProvNode):
                resolved = view.resolve(record.id, requesting_domain)
                nodes.append((record.id, resolved))
                if isinstance(resolved, ProvNode) and resolved.alias_of is not None:
                    aliases.append((record.id, resolved.alias_of))
            elif view.sees_full(domain, requesting_domain):
                edges.append(record)
    return nodes, edges, aliases


def federation_to_dot(federation: Federation | FederationView, requesting_domain: str) -> str:
    view = federation.snapshot()
    nodes, edges, aliases = _federation_graph(view, requesting_domain)
    return render_dot("federation", nodes, edges, aliases)


def federation_to_json(federation: Federation | FederationView, requesting_domain: str) -> dict[str, Any]:
    view = federation.snapshot()
    nodes, edges, _ = _federation_graph(view, requesting_domain)
    out_nodes = []
    for node_id, payload in nodes:
        if isinstance(payload, ProvNode):
            out_nodes.append({"status": "full", "record": record_to_dict(payload)})
        elif isinstance(payload, Redacted):
            out_nodes.append({"status": "redacted", "id": str(node_id), "kind": payload.kind.value})
        else:
            out_nodes.append({"status": "unresolvable", "id": str(node_id)})
    return {
        "as": requesting_domain,
        "domains": view.domains,
        "nodes": out_nodes,
        "edges": [record_to_dict(e) for e in edges],
    }
