"""Disclosed provenance capture.

Application code calls a :class:`Recorder` at its data-exchange points. Each
call builds the records it needs, checks them, runs the policy rules, and
then appends everything in one atomic store write. A blocking rule appends a
single ``policy-alert`` entity instead and raises :class:`PolicyBlocked`.

Ordering rule: every edge a recorder writes points at a node appended
earlier in the same store, or, for foreign lineage targets, at a node with a
strictly smaller ``created_at``. This keeps the provenance graph acyclic.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, replace
from typing import Any, Final

from decprov.errors import (
    DuplicateId,
    KindConstraintViolation,
    PolicyBlocked,
    TemporalViolation,
    UnknownNode,
    ValidationFailed,
)
from decprov.model import (
    ALIAS_COPIED,
    EDGE_CONSTRAINTS,
    EdgeKind,
    NodeKind,
    ProvEdge,
    ProvNode,
    QualifiedId,
    Record,
    as_id,
    validate_edge,
)
from decprov.policy import (
    CaptureEvent,
    GraphContext,
    Outcome,
    PolicyRule,
    PolicyVerdict,
    RuleSet,
    Trigger,
    evaluate,
)
from decprov.store import Federation, ProvStore

log = logging.getLogger(__name__)

ALERT_NODE_TYPE: Final = "policy-alert"
TRANSFER_NODE_TYPE: Final = "transfer"

_ORDERED_FOREIGN: Final = frozenset({EdgeKind.USED, EdgeKind.WAS_DERIVED_FROM, EdgeKind.WAS_INFORMED_BY})


@dataclass(frozen=True, slots=True)
class TransferReceipt:
    source_entity: QualifiedId
    alias_entity: QualifiedId
    transfer_activity: QualifiedId
    sender_agent: QualifiedId
    receiver_agent: QualifiedId
    at: int


class Recorder:
    """Single-writer capture endpoint for one domain."""

    def __init__(
        self,
        store: ProvStore | str,
        rules: RuleSet | Iterable[PolicyRule] | None = (),
        federation: Federation | None = None,
        clock: int = 0,
    ):
        self.store = ProvStore(store) if isinstance(store, str) else store
        if federation is None:
            federation = Federation([self.store])
        elif self.store.domain not in federation:
            federation.add(self.store)
        self.federation = federation
        self.rules = rules if isinstance(rules, RuleSet) else RuleSet(rules or ())
        self.clock = clock
        self.alerts: list[QualifiedId] = []
        self.verdict_log: list[PolicyVerdict] = []
        self._counters: dict[str, int] = {}

    def __repr__(self) -> str:
        return f"Recorder({self.domain!r}, clock={self.clock})"

    @property
    def domain(self) -> str:
        return self.store.domain

    def advance(self, tick: int) -> None:
        if tick < self.clock:
            raise TemporalViolation(f"clock cannot move backwards from {self.clock} to {tick}")
        self.clock = tick

    # -- identifiers ---------------------------------------------------------

    def _peek(self, prefix: str) -> QualifiedId:
        n = self._counters.get(prefix, 0) + 1
        while QualifiedId(self.domain, f"{prefix}-{n}") in self.store:
            n += 1
        return QualifiedId(self.domain, f"{prefix}-{n}")

    def _claim(self, local: str | None, prefix: str) -> QualifiedId:
        if local is None:
            return self._peek(prefix)
        node_id = QualifiedId(self.domain, local)
        if node_id in self.store:
            raise DuplicateId(f"{node_id} already exists")
        return node_id

    def _bump(self, node_id: QualifiedId) -> None:
        prefix, _, n = node_id.local.rpartition("-")
        if prefix and n.isdigit() and int(n) > self._counters.get(prefix, 0):
            self._counters[prefix] = int(n)

    # -- lookups -------------------------------------------------------------

    def _local(self, node_id: QualifiedId | str, kind: NodeKind | None = None) -> ProvNode:
        node_id = as_id(node_id)
        node = self.store.node(node_id) if node_id.domain == self.domain else None
        if node is None:
            raise UnknownNode(f"{node_id} is not in store {self.domain!r}")
        if kind is not None and node.kind is not kind:
            raise KindConstraintViolation(f"{node_id} is a {node.kind.value}, expected {kind.value}")
        return node

    def _check_edge(self, edge: ProvEdge, source: ProvNode, exempt_order: bool = False) -> None:
        """Kind and ordering checks for an edge whose source is ``source``."""
        target_id = edge.target
        if target_id.domain == self.domain:
            target = self.store.node(target_id)
            if target is None:
                raise UnknownNode(f"{target_id} is not in store {self.domain!r}")
            validate_edge(edge, source.kind, target.kind)
            source_pos = self.store.snapshot().position(source.id)
            target_pos = self.store.snapshot().position(target_id)
            if target.created_at > source.created_at or (
                source_pos is not None and target_pos >= source_pos
            ):
                raise TemporalViolation(
                    f"{edge.kind.value} edge {source.id} -> {target_id} points forward in time"
                )
            return
        expected_source = EDGE_CONSTRAINTS[edge.kind][0]
        if source.kind is not expected_source:
            validate_edge(edge, source.kind, EDGE_CONSTRAINTS[edge.kind][1])
        target = self.federation.snapshot().node(target_id)
        if target is None:
            return  # cross-store reference, resolved lazily
        validate_edge(edge, source.kind, target.kind)
        if not exempt_order and edge.kind in _ORDERED_FOREIGN and target.created_at >= source.created_at:
            raise TemporalViolation(
                f"foreign {edge.kind.value} target {target_id} (t={target.created_at}) "
                f"must predate {source.id} (t={source.created_at})"
            )

    # -- commit path -----------------------------------------------------------

    def _evaluate(self, event: CaptureEvent, pending: Sequence[ProvNode]) -> list[PolicyVerdict]:
        if not self.rules:
            return []
        context = GraphContext(self.federation.snapshot(), pending)
        verdicts = evaluate(self.rules, event, context)
        self.verdict_log.extend(verdicts)
        blocked = next((v for v in verdicts if v.outcome is Outcome.BLOCKED), None)
        if blocked is not None:
            alert = self._append_alert(blocked, event)
            log.info("blocked %s in %s: %s", event.summary, self.domain, blocked.explanation)
            raise PolicyBlocked(blocked, alert)
        return verdicts

    def _annotate(self, records: list[Record], index: int, verdicts: Sequence[PolicyVerdict]) -> None:
        notes = dict(v.annotation for v in verdicts if v.outcome is Outcome.ANNOTATED)
        if notes:
            target = records[index]
            records[index] = replace(target, attributes={**target.attributes, **notes})

    def _write(self, records: list[Record], verdicts: Sequence[PolicyVerdict], event: CaptureEvent) -> None:
        self.store.extend(records)
        for record in records:
            if isinstance(record, ProvNode):
                self._bump(record.id)
        for verdict in verdicts:
            if verdict.outcome is Outcome.ALERTED:
                self._append_alert(verdict, event)

    def _commit(
        self, event: CaptureEvent, records: list[Record], annotate: int = 0
    ) -> list[PolicyVerdict]:
        pending = [r for r in records if isinstance(r, ProvNode)]
        verdicts = self._evaluate(event, pending)
        self._annotate(records, annotate, verdicts)
        self._write(records, verdicts, event)
        return verdicts

    def _append_alert(self, verdict: PolicyVerdict, event: CaptureEvent) -> QualifiedId:
        alert_id = self._peek("alert")
        attributes: dict[str, Any] = {
            "rule": verdict.rule_id,
            "outcome": verdict.outcome.value,
            "event": ",".join(sorted(t.value for t in event.triggers)),
            "subject": event.summary,
            "explanation": verdict.explanation,
        }
        if verdict.message:
            attributes["message"] = verdict.message
        self.store.append(ProvNode(alert_id, NodeKind.ENTITY, ALERT_NODE_TYPE, attributes, self.clock))
        self._bump(alert_id)
        self.alerts.append(alert_id)
        return alert_id

    # -- capture API -------------------------------------------------------------

    def register_agent(
        self,
        local: str,
        node_type: str = "organization",
        attributes: Mapping[str, Any] | None = None,
        on_behalf_of: QualifiedId | str | None = None,
    ) -> QualifiedId:
        agent_id = self._claim(local, "agent")
        node = ProvNode(agent_id, NodeKind.AGENT, node_type, attributes or {}, self.clock)
        records: list[Record] = [node]
        if on_behalf_of is not None:
            principal = self._local(on_behalf_of, NodeKind.AGENT)
            records.append(ProvEdge(agent_id, principal.id, EdgeKind.ACTED_ON_BEHALF_OF))
        event = CaptureEvent(frozenset({Trigger.NODE_APPEND}), self.domain, self.clock, f"agent {agent_id}", node=node)
        self._commit(event, records)
        return agent_id

    def begin_activity(
        self,
        agent: QualifiedId | str,
        node_type: str,
        attributes: Mapping[str, Any] | None = None,
        *,
        local: str | None = None,
    ) -> QualifiedId:
        """Append an Activity associated with ``agent``; returns its id."""
        agent_node = self._local(agent)
        activity_id = self._claim(local, "act")
        node = ProvNode(activity_id, NodeKind.ACTIVITY, node_type, attributes or {}, self.clock)
        edge = ProvEdge(activity_id, agent_node.id, EdgeKind.WAS_ASSOCIATED_WITH, {"at": self.clock})
        validate_edge(edge, NodeKind.ACTIVITY, agent_node.kind)
        event = CaptureEvent(
            frozenset({Trigger.NODE_APPEND}),
            self.domain,
            self.clock,
            f"activity {activity_id} ({node_type})",
            activity=node,
            node=node,
        )
        self._commit(event, [node, edge])
        return activity_id

    def record_generation(
        self,
        activity: QualifiedId | str,
        node_type: str,
        attributes: Mapping[str, Any] | None = None,
        *,
        local: str | None = None,
    ) -> QualifiedId:
        """Append an Entity generated by ``activity``; returns its id."""
        act = self._local(activity, NodeKind.ACTIVITY)
        entity_id = self._claim(local, "ent")
        node = ProvNode(entity_id, NodeKind.ENTITY, node_type, attributes or {}, self.clock)
        edge = ProvEdge(entity_id, act.id, EdgeKind.WAS_GENERATED_BY, {"at": self.clock})
        inputs = tuple(
            e.target for e in self.store.snapshot().out_edges(act.id) if e.kind is EdgeKind.USED
        )
        event = CaptureEvent(
            frozenset({Trigger.GENERATION, Trigger.NODE_APPEND}),
            self.domain,
            self.clock,
            f"generation of {node_type} by {act.id}",
            activity=act,
            node=node,
            inputs=inputs,
        )
        self._commit(event, [node, edge])
        return entity_id

    def record_use(
        self, activity: QualifiedId | str, entity: QualifiedId | str, *, role: str | None = None
    ) -> ProvEdge:
        act = self._local(activity, NodeKind.ACTIVITY)
        entity = as_id(entity)
        attributes: dict[str, Any] = {"at": self.clock}
        if role is not None:
            attributes["role"] = role
        edge = ProvEdge(act.id, entity, EdgeKind.USED, attributes)
        self._check_edge(edge, act)
        event = CaptureEvent(
            frozenset({Trigger.USE}),
            self.domain,
            self.clock,
            f"use of {entity} by {act.id}",
            activity=act,
            inputs=(entity,),
        )
        records: list[Record] = [edge]
        self._commit(event, records)
        return records[0]

    def record_derivation(
        self, derived: QualifiedId | str, sources: Iterable[QualifiedId | str]
    ) -> list[ProvEdge]:
        node = self._local(derived, NodeKind.ENTITY)
        edges = []
        for source in sources:
            edge = ProvEdge(node.id, as_id(source), EdgeKind.WAS_DERIVED_FROM, {"at": self.clock})
            self._check_edge(edge, node)
            edges.append(edge)
        if not edges:
            return []
        event = CaptureEvent(
            frozenset({Trigger.DERIVATION}),
            self.domain,
            self.clock,
            f"derivation of {node.id}",
            node=node,
            inputs=tuple(e.target for e in edges),
        )
        records: list[Record] = list(edges)
        self._commit(event, records)
        return records  # type: ignore[return-value]

    def record_edge(
        self,
        kind: EdgeKind | str,
        source: QualifiedId | str,
        target: QualifiedId | str,
        attributes: Mapping[str, Any] | None = None,
    ) -> ProvEdge:
        """Append a relation not covered by the dedicated calls (e.g. wasInformedBy).

        No policy trigger applies.
        """
        src = self._local(source)
        edge = ProvEdge(src.id, as_id(target), EdgeKind(kind), attributes or {})
        self._check_edge(edge, src)
        self.store.append(edge)
        return edge

    def transfer_to(
        self,
        receiver: Recorder,
        entity: QualifiedId | str,
        sender_agent: QualifiedId | str,
        receiver_agent: QualifiedId | str,
        *,
        purposes: Iterable[str] | None = None,
    ) -> TransferReceipt:
        return record_transfer(self, receiver, entity, sender_agent, receiver_agent, purposes=purposes)


def record_transfer(
    sender: Recorder,
    receiver: Recorder,
    entity: QualifiedId | str,
    sender_agent: QualifiedId | str,
    receiver_agent: QualifiedId | str,
    *,
    purposes: Iterable[str] | None = None,
) -> TransferReceipt:
    """Move ``entity`` across a domain boundary.

    The sender gains a transfer Activity; the receiver gains an alias Entity
    carrying ``alias_of`` and copies of the source's reserved attributes.
    ``purposes`` is the receiver's declared processing purpose set. Rules of
    both sides are evaluated before either store is written.
    """
    if sender.domain == receiver.domain:
        raise ValidationFailed("a transfer must cross a domain boundary")
    source = sender._local(entity, NodeKind.ENTITY)
    s_agent = sender._local(sender_agent, NodeKind.AGENT)
    r_agent = receiver._local(receiver_agent, NodeKind.AGENT)
    declared = None if purposes is None else frozenset(purposes)

    at = sender.clock
    receiver.advance(max(receiver.clock, at))
    transfer_id = sender._peek("act")
    alias_id = receiver._peek("ent")

    transfer_attrs: dict[str, Any] = {"to_domain": receiver.domain}
    if declared is not None:
        transfer_attrs["processing_purpose"] = declared
    transfer = ProvNode(transfer_id, NodeKind.ACTIVITY, TRANSFER_NODE_TYPE, transfer_attrs, at)
    sent: list[Record] = [
        transfer,
        ProvEdge(transfer_id, source.id, EdgeKind.USED, {"at": at, "role": "transferred"}),
        ProvEdge(transfer_id, s_agent.id, EdgeKind.WAS_ASSOCIATED_WITH, {"at": at}),
    ]

    alias_attrs: dict[str, Any] = {k: source.attributes[k] for k in ALIAS_COPIED if k in source.attributes}
    alias_attrs["alias_of"] = str(source.id)
    alias = ProvNode(alias_id, NodeKind.ENTITY, source.node_type, alias_attrs, receiver.clock)
    received: list[Record] = [
        alias,
        ProvEdge(alias_id, transfer_id, EdgeKind.WAS_GENERATED_BY, {"at": receiver.clock}),
        ProvEdge(alias_id, r_agent.id, EdgeKind.WAS_ATTRIBUTED_TO, {"at": receiver.clock}),
    ]

    summary = f"transfer of {source.id} to {receiver.domain}"
    sender_event = CaptureEvent(
        frozenset({Trigger.TRANSFER}),
        sender.domain,
        at,
        summary,
        activity=transfer,
        inputs=(source.id,),
        receiving_purposes=declared,
    )
    receiver_event = CaptureEvent(
        frozenset({Trigger.TRANSFER, Trigger.NODE_APPEND}),
        receiver.domain,
        receiver.clock,
        summary,
        activity=transfer,
        node=alias,
        inputs=(alias_id,),
        receiving_purposes=declared,
    )
    sender_verdicts = sender._evaluate(sender_event, [transfer])
    receiver_verdicts = receiver._evaluate(receiver_event, [alias, transfer])
    sender._annotate(sent, 0, sender_verdicts)
    receiver._annotate(received, 0, receiver_verdicts)
    sender._write(sent, sender_verdicts, sender_event)
    receiver._write(received, receiver_verdicts, receiver_event)
    return TransferReceipt(source.id, alias_id, transfer_id, s_agent.id, r_agent.id, at)
