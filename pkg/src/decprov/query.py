"""Accountability queries over a federation snapshot.

Backward lineage and forward impact are breadth-first traversals over the
typed edges plus ``alias_of`` links (each alias hop costs one depth step).
Inventories, erasure sets and unexpected-flow findings build on the same
adjacency indexes.
"""

from __future__ import annotations

import json
from collections import deque
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Final, Union

from decprov.errors import UnknownRoot
from decprov.model import EdgeKind, NodeKind, ProvEdge, ProvNode, QualifiedId, as_id, record_to_dict
from decprov.store import REGULATOR, Federation, FederationView, Redacted, Resolved, Unresolvable

UNBOUNDED: Final = 2**31 - 1
DEFAULT_DEPTH: Final = 64

_FORWARD_FROM_ENTITY: Final = frozenset({EdgeKind.USED, EdgeKind.WAS_DERIVED_FROM})
_FORWARD_FROM_ACTIVITY: Final = frozenset({EdgeKind.WAS_GENERATED_BY, EdgeKind.WAS_INFORMED_BY})


@dataclass(frozen=True, slots=True)
class AliasLink:
    alias: QualifiedId
    source: QualifiedId


Link = Union[ProvEdge, AliasLink]


@dataclass(frozen=True, slots=True)
class PipelineNode:
    id: QualifiedId
    depth: int
    payload: Resolved

    @property
    def kind(self) -> NodeKind | None:
        return None if isinstance(self.payload, Unresolvable) else self.payload.kind

    @property
    def status(self) -> str:
        if isinstance(self.payload, Unresolvable):
            return "unresolvable"
        return "redacted" if isinstance(self.payload, Redacted) else "full"


@dataclass(frozen=True, slots=True)
class PipelineAgent:
    id: QualifiedId
    domain: str
    depth: int


@dataclass(frozen=True)
class DecisionPipeline:
    """Subgraph answering a lineage (backward) or impact (forward) query."""

    root: QualifiedId
    direction: str
    max_depth: int
    requesting_domain: str
    nodes: tuple[PipelineNode, ...]
    edges: tuple[ProvEdge, ...]
    alias_links: tuple[AliasLink, ...]
    agents: tuple[PipelineAgent, ...]
    truncated: bool

    def node_ids(self) -> frozenset[QualifiedId]:
        return frozenset(n.id for n in self.nodes)

    def depth_of(self, node_id: QualifiedId | str) -> int | None:
        node_id = as_id(node_id)
        for node in self.nodes:
            if node.id == node_id:
                return node.depth
        return None

    @property
    def domains(self) -> list[str]:
        return sorted({n.id.domain for n in self.nodes})

    def to_dict(self) -> dict[str, Any]:
        nodes = []
        for node in self.nodes:
            entry: dict[str, Any] = {"id": str(node.id), "depth": node.depth, "status": node.status}
            if isinstance(node.payload, ProvNode):
                entry["record"] = record_to_dict(node.payload)
            elif isinstance(node.payload, Redacted):
                entry["kind"] = node.payload.kind.value
            nodes.append(entry)
        return {
            "query": self.direction,
            "root": str(self.root),
            "max_depth": self.max_depth,
            "as": self.requesting_domain,
            "truncated": self.truncated,
            "nodes": nodes,
            "edges": [record_to_dict(e) for e in self.edges],
            "alias_links": [{"alias": str(a.alias), "source": str(a.source)} for a in self.alias_links],
            "agents": [{"id": str(a.id), "domain": a.domain, "depth": a.depth} for a in self.agents],
        }


StepFn = Callable[[FederationView, ProvNode], list[tuple[QualifiedId, Link]]]


def backward_steps(view: FederationView, node: ProvNode) -> list[tuple[QualifiedId, Link]]:
    # Every edge kind has a fixed source kind, so following all out-edges is
    # exactly the per-kind backward rule set.
    steps: list[tuple[QualifiedId, Link]] = [(e.target, e) for e in view.out_edges(node.id)]
    alias = node.alias_of
    if alias is not None:
        steps.append((alias, AliasLink(node.id, alias)))
    return steps


def forward_steps(view: FederationView, node: ProvNode) -> list[tuple[QualifiedId, Link]]:
    if node.kind is NodeKind.ENTITY:
        steps: list[tuple[QualifiedId, Link]] = [
            (e.source, e) for e in view.in_edges(node.id) if e.kind in _FORWARD_FROM_ENTITY
        ]
        steps.extend((a.id, AliasLink(a.id, node.id)) for a in view.aliases_of(node.id))
        return steps
    if node.kind is NodeKind.ACTIVITY:
        return [(e.source, e) for e in view.in_edges(node.id) if e.kind in _FORWARD_FROM_ACTIVITY]
    return []


def _traverse(
    federation: Federation | FederationView,
    root: QualifiedId | str,
    max_depth: int,
    requesting_domain: str,
    direction: str,
    steps_fn: StepFn,
) -> DecisionPipeline:
    if max_depth < 0:
        raise ValueError("max_depth must be non-negative")
    root = as_id(root)
    view = federation.snapshot()
    if view.node(root) is None:
        raise UnknownRoot(f"{root} does not resolve in the federation")

    depths: dict[QualifiedId, int] = {root: 0}
    queue = deque([root])
    edges: list[ProvEdge] = []
    alias_links: list[AliasLink] = []
    truncated = False
    while queue:
        current = queue.popleft()
        depth = depths[current]
        node = view.node(current)
        if node is None:
            truncated = True
            continue
        steps = steps_fn(view, node)
        if depth >= max_depth:
            if any(nxt not in depths for nxt, _ in steps):
                truncated = True
            continue
        for nxt, link in steps:
            if isinstance(link, AliasLink):
                alias_links.append(link)
            else:
                edges.append(link)
            if nxt not in depths:
                depths[nxt] = depth + 1
                queue.append(nxt)

    nodes = tuple(
        PipelineNode(nid, d, view.resolve(nid, requesting_domain))
        for nid, d in sorted(depths.items(), key=lambda item: (item[1], str(item[0])))
    )
    agents = tuple(
        PipelineAgent(n.id, n.id.domain, n.depth) for n in nodes if n.kind is NodeKind.AGENT
    )
    return DecisionPipeline(
        root=root,
        direction=direction,
        max_depth=max_depth,
        requesting_domain=requesting_domain,
        nodes=nodes,
        edges=tuple(sorted(edges, key=lambda e: (str(e.source), str(e.target), e.kind.value))),
        alias_links=tuple(sorted(alias_links, key=lambda a: (str(a.alias), str(a.source)))),
        agents=agents,
        truncated=truncated,
    )


def lineage(
    federation: Federation | FederationView,
    root: QualifiedId | str,
    max_depth: int = UNBOUNDED,
    requesting_domain: str = REGULATOR,
) -> DecisionPipeline:
    """Everything the decision or datum at ``root`` depends on, up to ``max_depth`` hops."""
    return _traverse(federation, root, max_depth, requesting_domain, "lineage", backward_steps)


def impact(
    federation: Federation | FederationView,
    source: QualifiedId | str,
    max_depth: int = UNBOUNDED,
    requesting_domain: str = REGULATOR,
) -> DecisionPipeline:
    """Flow-on closure: everything downstream of ``source``."""
    return _traverse(federation, source, max_depth, requesting_domain, "impact", forward_steps)


@dataclass(frozen=True, slots=True)
class InvolvedAgent:
    id: QualifiedId
    attributes: Mapping[str, Any]
    domain: str
    depth: int
    node_type: str | None = None


def involved_agents(pipeline: DecisionPipeline) -> list[InvolvedAgent]:
    out = []
    for node in pipeline.nodes:
        if node.kind is not NodeKind.AGENT:
            continue
        payload = node.payload
        if isinstance(payload, ProvNode):
            out.append(InvolvedAgent(node.id, payload.attributes, node.id.domain, node.depth, payload.node_type))
        else:
            out.append(InvolvedAgent(node.id, {}, node.id.domain, node.depth))
    return out


# -- data protection queries -----------------------------------------------------


@dataclass(frozen=True, slots=True)
class InventoryEntry:
    entity: QualifiedId
    domain: str
    node_type: str
    purposes: frozenset[str]
    alias_ancestors: tuple[QualifiedId, ...]
    alias_descendants: tuple[QualifiedId, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity": str(self.entity),
            "domain": self.domain,
            "node_type": self.node_type,
            "purposes": sorted(self.purposes),
            "alias_ancestors": [str(a) for a in self.alias_ancestors],
            "alias_descendants": [str(a) for a in self.alias_descendants],
        }


def _subject_entities(view: FederationView, data_subject: str, visible: Callable[[str], bool]):
    for domain in view.domains:
        if not visible(domain):
            continue
        for node in view.stores[domain].nodes():
            if node.kind is NodeKind.ENTITY and node.attributes.get("data_subject") == data_subject:
                yield node


def data_inventory(
    federation: Federation | FederationView, data_subject: str, requesting_domain: str = REGULATOR
) -> list[InventoryEntry]:
    """Every visible entity about ``data_subject``, with its alias relations."""
    view = federation.snapshot()

    def visible(domain: str) -> bool:
        return domain in view.stores and view.sees_full(domain, requesting_domain)

    entries = []
    for node in _subject_entities(view, data_subject, visible):
        ancestors: list[QualifiedId] = []
        cursor = node.alias_of
        while cursor is not None and cursor not in ancestors:
            ancestors.append(cursor)
            parent = view.node(cursor) if visible(cursor.domain) else None
            cursor = None if parent is None else parent.alias_of
        descendants: list[QualifiedId] = []
        frontier = [node.id]
        seen = {node.id}
        while frontier:
            nxt = []
            for nid in frontier:
                for alias in view.aliases_of(nid):
                    if alias.id not in seen and visible(alias.id.domain):
                        seen.add(alias.id)
                        descendants.append(alias.id)
                        nxt.append(alias.id)
            frontier = nxt
        entries.append(
            InventoryEntry(
                entity=node.id,
                domain=node.id.domain,
                node_type=node.node_type,
                purposes=frozenset(node.attributes.get("purpose", frozenset())),
                alias_ancestors=tuple(ancestors),
                alias_descendants=tuple(sorted(descendants, key=lambda q: (q.domain, str(q)))),
            )
        )
    entries.sort(key=lambda e: (e.domain, str(e.entity)))
    return entries


@dataclass(frozen=True, slots=True)
class ErasureReport:
    data_subject: str
    entities: tuple[QualifiedId, ...]
    frontier: tuple[QualifiedId, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "data_subject": self.data_subject,
            "entities": [{"entity": str(e), "domain": e.domain} for e in self.entities],
            "frontier": [str(a) for a in self.frontier],
        }


def erasure_set(federation: Federation | FederationView, data_subject: str) -> ErasureReport:
    """Entities to erase for ``data_subject``: its inventory plus everything derived or copied from it.

    The frontier lists activities that used those entities; they are leads
    for investigation, not erasure targets.
    """
    view = federation.snapshot()
    seeds = [node.id for node in _subject_entities(view, data_subject, lambda d: True)]
    members = set(seeds)
    queue = deque(seeds)
    while queue:
        current = queue.popleft()
        nxt = [e.source for e in view.in_edges(current) if e.kind is EdgeKind.WAS_DERIVED_FROM]
        nxt.extend(a.id for a in view.aliases_of(current))
        for nid in nxt:
            if nid not in members:
                members.add(nid)
                queue.append(nid)
    frontier = {
        e.source for m in members for e in view.in_edges(m) if e.kind is EdgeKind.USED
    }
    order = lambda q: (q.domain, str(q))  # noqa: E731
    return ErasureReport(data_subject, tuple(sorted(members, key=order)), tuple(sorted(frontier, key=order)))


# -- flow declarations -----------------------------------------------------------


@dataclass(frozen=True, slots=True)
class FlowTriple:
    from_domain: str
    to_domain: str
    node_type: str


@dataclass(frozen=True)
class FlowDeclaration:
    """Expected (from_domain, to_domain, node_type) transfers."""

    flows: frozenset[FlowTriple] = frozenset()

    def __contains__(self, item: object) -> bool:
        if isinstance(item, tuple):
            item = FlowTriple(*item)
        return item in self.flows

    def __len__(self) -> int:
        return len(self.flows)

    @classmethod
    def of(cls, triples: Iterable[tuple[str, str, str] | FlowTriple]) -> FlowDeclaration:
        return cls(frozenset(t if isinstance(t, FlowTriple) else FlowTriple(*t) for t in triples))

    @classmethod
    def from_json(cls, data: Any) -> FlowDeclaration:
        """Accepts a list of ``{"from", "to", "node_type"}`` objects or 3-element lists."""
        if isinstance(data, Mapping) and "flows" in data:
            data = data["flows"]
        if not isinstance(data, list):
            raise ValueError("flow declaration must be a list")
        triples = []
        for item in data:
            if isinstance(item, Mapping):
                try:
                    triple = (item["from"], item["to"], item["node_type"])
                except KeyError as exc:
                    raise ValueError(f"flow entry missing key {exc}") from None
            elif isinstance(item, (list, tuple)) and len(item) == 3:
                triple = tuple(item)
            else:
                raise ValueError(f"bad flow entry {item!r}")
            if not all(isinstance(x, str) and x for x in triple):
                raise ValueError(f"flow entry fields must be non-empty text: {item!r}")
            triples.append(triple)
        return cls.of(triples)

    @classmethod
    def load(cls, path: str | Path) -> FlowDeclaration:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_json(self) -> list[dict[str, str]]:
        return [
            {"from": f.from_domain, "to": f.to_domain, "node_type": f.node_type}
            for f in sorted(self.flows, key=lambda f: (f.from_domain, f.to_domain, f.node_type))
        ]


@dataclass(frozen=True, slots=True)
class FlowFinding:
    """An observed transfer, reconstructed from the alias entity it produced."""

    source_entity: QualifiedId
    alias_entity: QualifiedId
    transfer_activity: QualifiedId | None
    sender_agent: QualifiedId | None
    receiver_agent: QualifiedId | None
    at: int
    node_type: str

    @property
    def from_domain(self) -> str:
        return self.source_entity.domain

    @property
    def to_domain(self) -> str:
        return self.alias_entity.domain

    def to_dict(self) -> dict[str, Any]:
        opt = lambda q: None if q is None else str(q)  # noqa: E731
        return {
            "from": self.from_domain,
            "to": self.to_domain,
            "node_type": self.node_type,
            "source_entity": str(self.source_entity),
            "alias_entity": str(self.alias_entity),
            "transfer_activity": opt(self.transfer_activity),
            "sender_agent": opt(self.sender_agent),
            "receiver_agent": opt(self.receiver_agent),
            "at": self.at,
        }


def _first_target(edges: list[ProvEdge], kind: EdgeKind) -> QualifiedId | None:
    for edge in edges:
        if edge.kind is kind:
            return edge.target
    return None


def observed_transfers(federation: Federation | FederationView) -> list[FlowFinding]:
    view = federation.snapshot()
    found = []
    for domain in view.domains:
        for node in view.stores[domain].nodes():
            source = node.alias_of
            if source is None:
                continue
            out = view.out_edges(node.id)
            activity = _first_target(out, EdgeKind.WAS_GENERATED_BY)
            sender = None if activity is None else _first_target(
                view.out_edges(activity), EdgeKind.WAS_ASSOCIATED_WITH
            )
            found.append(
                FlowFinding(
                    source_entity=source,
                    alias_entity=node.id,
                    transfer_activity=activity,
                    sender_agent=sender,
                    receiver_agent=_first_target(out, EdgeKind.WAS_ATTRIBUTED_TO),
                    at=node.created_at,
                    node_type=node.node_type,
                )
            )
    found.sort(key=lambda f: (f.at, str(f.alias_entity), str(f.source_entity)))
    return found


def unexpected_flows(
    federation: Federation | FederationView, declaration: FlowDeclaration
) -> list[FlowFinding]:
    """Observed transfers whose (from, to, node_type) was never declared."""
    return [
        f
        for f in observed_transfers(federation)
        if FlowTriple(f.from_domain, f.to_domain, f.node_type) not in declaration.flows
    ]
