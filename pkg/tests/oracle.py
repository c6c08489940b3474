"""Independent reference answers computed with networkx."""

from __future__ import annotations

import networkx as nx

from decprov.model import EdgeKind, NodeKind, ProvEdge, ProvNode
from decprov.store import Federation

_IMPACT_KINDS = {
    EdgeKind.USED,
    EdgeKind.WAS_DERIVED_FROM,
    EdgeKind.WAS_GENERATED_BY,
    EdgeKind.WAS_INFORMED_BY,
}


def graphs(fed: Federation) -> tuple[nx.DiGraph, nx.DiGraph, dict]:
    """(backward graph, forward graph, node table) of a whole federation."""
    back, fwd = nx.DiGraph(), nx.DiGraph()
    nodes = {}
    for store in fed:
        for record in store.records:
            if isinstance(record, ProvNode):
                nodes[record.id] = record
                back.add_node(record.id)
                fwd.add_node(record.id)
                if record.alias_of is not None:
                    back.add_edge(record.id, record.alias_of)
                    fwd.add_edge(record.alias_of, record.id)
    for store in fed:
        for record in store.records:
            if isinstance(record, ProvEdge):
                back.add_edge(record.source, record.target)
                if record.kind in _IMPACT_KINDS:
                    fwd.add_edge(record.target, record.source)
    return back, fwd, nodes


def reach(graph: nx.DiGraph, root, depth: int | None = None) -> dict:
    return nx.single_source_shortest_path_length(graph, root, cutoff=depth)


def truncated(graph: nx.DiGraph, depths: dict, depth: int) -> bool:
    return any(
        d == depth and any(n not in depths for n in graph.successors(node)) for node, d in depths.items()
    )


def erasure_closure(fed: Federation, subject: str) -> set:
    g = nx.DiGraph()
    seeds = set()
    for store in fed:
        for record in store.records:
            if isinstance(record, ProvNode):
                g.add_node(record.id)
                if record.kind is NodeKind.ENTITY and record.attributes.get("data_subject") == subject:
                    seeds.add(record.id)
                if record.alias_of is not None:
                    g.add_edge(record.alias_of, record.id)
            elif record.kind is EdgeKind.WAS_DERIVED_FROM:
                g.add_edge(record.target, record.source)
    out = set(seeds)
    for s in seeds:
        out |= nx.descendants(g, s)
    return out
