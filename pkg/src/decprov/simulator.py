"""Deterministic system-of-systems scenario runner.

A scenario file (JSON) declares domains with their agent rosters, the
components each domain operates, the expected inter-domain flows, the policy
rules, and a timestamped script. :func:`run` replays the script through the
public :class:`~decprov.capture.Recorder` API, one recorder per domain.

Script operations::

    {"tick": 0, "op": "emit", "component": "sensor-1", "node_type": "sensor-reading",
     "attributes": {...}, "id": "reading-1"}
    {"tick": 3, "op": "process", "component": "model-a", "inputs": [<selector>, ...],
     "node_type": "inference", "attributes": {...}}
    {"tick": 5, "op": "transfer", "entity": <selector>, "from": "datastore", "to": "query"}
    {"tick": 6, "op": "inject_fault", "component": "sensor-1"}

A selector is ``{"entity": "orgA:reading-1"}`` or ``{"component": "sensor-1"}``
with an optional ``"node_type"``; the latter picks the component's most
recent output or received alias (highest created_at, then highest id text).
"""

from __future__ import annotations

import json
from bisect import bisect_left
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Final

from decprov.capture import Recorder, record_transfer
from decprov.errors import (
    DecProvError,
    InvalidIdentifier,
    NonMonotoneTimestamps,
    ParseError,
    PolicyBlocked,
    PolicyLoadError,
    TickOutOfRange,
    UnknownComponent,
    UnknownDomain,
    UnknownNode,
)
from decprov.model import QualifiedId, normalize_attributes
from decprov.policy import PolicyVerdict, RuleSet
from decprov.query import FlowDeclaration
from decprov.store import Federation, Visibility

COMPONENT_KINDS: Final = frozenset({"sensor", "model", "datastore", "process", "actuator", "human-input"})
OPS: Final = frozenset({"emit", "process", "transfer", "inject_fault"})
BUNDLED: Final = ("fig2", "purpose-violation", "faulty-sensor", "new-advertiser", "consent-gate")

_EMIT_ACTIVITY: Final = {
    "sensor": "sensing",
    "model": "training",
    "datastore": "ingest",
    "process": "input",
    "actuator": "actuation",
    "human-input": "manual-entry",
}
_PROCESS_ACTIVITY: Final = {
    "sensor": "sensing",
    "model": "inference",
    "datastore": "datastore-write",
    "process": "processing",
    "actuator": "actuation",
    "human-input": "manual-entry",
}
# Component attributes that describe its artifacts rather than its activities.
_ENTITY_ONLY: Final = frozenset({"accepted_sources"})
MODEL_NODE_TYPE: Final = "model"


@dataclass(frozen=True, slots=True)
class AgentSpec:
    id: str
    node_type: str = "organization"
    attributes: Mapping[str, Any] = field(default_factory=dict)
    on_behalf_of: str | None = None


@dataclass(frozen=True, slots=True)
class DomainSpec:
    name: str
    visibility: Visibility
    agents: tuple[AgentSpec, ...]


@dataclass(frozen=True, slots=True)
class ComponentSpec:
    id: str
    domain: str
    kind: str
    agent: str
    attributes: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True, slots=True)
class Selector:
    component: str | None = None
    node_type: str | None = None
    entity: QualifiedId | None = None

    def describe(self) -> str:
        if self.entity is not None:
            return str(self.entity)
        return f"latest {self.node_type or 'output'} of {self.component}"


@dataclass(frozen=True, slots=True)
class ScriptEvent:
    tick: int
    op: str
    component: str | None = None
    node_type: str | None = None
    attributes: Mapping[str, Any] = field(default_factory=dict)
    inputs: tuple[Selector, ...] = ()
    entity: Selector | None = None
    source: str | None = None
    target: str | None = None
    local: str | None = None
    activity_type: str | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    domains: tuple[DomainSpec, ...]
    components: tuple[ComponentSpec, ...]
    flows: FlowDeclaration
    rules: RuleSet
    script: tuple[ScriptEvent, ...]
    seed: int = 0

    def component(self, component_id: str) -> ComponentSpec:
        for comp in self.components:
            if comp.id == component_id:
                return comp
        raise UnknownComponent(f"unknown component {component_id!r}")


# -- loading -------------------------------------------------------------------------


def _require(obj: Mapping[str, Any], key: str, where: str, kind: type | tuple = str) -> Any:
    if key not in obj:
        raise ParseError(f"{where}: missing {key!r}")
    value = obj[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ParseError(f"{where}: {key!r} has the wrong type")
    return value


def _attrs(raw: Any, where: str) -> Mapping[str, Any]:
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise ParseError(f"{where}: attributes must be an object")
    try:
        return normalize_attributes(raw)
    except DecProvError as exc:
        raise ParseError(f"{where}: {exc}") from exc


def _selector(raw: Any, where: str, components: Mapping[str, ComponentSpec]) -> Selector:
    if isinstance(raw, str):
        raw = {"entity": raw} if ":" in raw else {"component": raw}
    if not isinstance(raw, Mapping):
        raise ParseError(f"{where}: selector must be an object")
    if "entity" in raw:
        try:
            return Selector(entity=QualifiedId.parse(raw["entity"]))
        except InvalidIdentifier as exc:
            raise ParseError(f"{where}: {exc}") from exc
    component = _require(raw, "component", where)
    if component not in components:
        raise UnknownComponent(f"{where}: unknown component {component!r}")
    node_type = raw.get("node_type")
    if node_type is not None and not isinstance(node_type, str):
        raise ParseError(f"{where}: node_type must be text")
    return Selector(component=component, node_type=node_type)


def _event(raw: Any, index: int, components: Mapping[str, ComponentSpec]) -> ScriptEvent:
    where = f"script[{index}]"
    if not isinstance(raw, Mapping):
        raise ParseError(f"{where}: event must be an object")
    tick = _require(raw, "tick", where, int)
    if tick < 0:
        raise ParseError(f"{where}: tick must be non-negative")
    op = _require(raw, "op", where)
    if op not in OPS:
        raise ParseError(f"{where}: unknown op {op!r}")

    def comp(key: str) -> str:
        name = _require(raw, key, where)
        if name not in components:
            raise UnknownComponent(f"{where}: unknown component {name!r}")
        return name

    local = raw.get("id")
    if local is not None and not isinstance(local, str):
        raise ParseError(f"{where}: id must be text")
    activity_type = raw.get("activity_type")
    if op == "emit":
        return ScriptEvent(
            tick, op, component=comp("component"), node_type=_require(raw, "node_type", where),
            attributes=_attrs(raw.get("attributes"), where), local=local, activity_type=activity_type,
        )
    if op == "process":
        inputs = raw.get("inputs", [])
        if not isinstance(inputs, list):
            raise ParseError(f"{where}: inputs must be a list")
        return ScriptEvent(
            tick, op, component=comp("component"), node_type=_require(raw, "node_type", where),
            attributes=_attrs(raw.get("attributes"), where),
            inputs=tuple(_selector(s, f"{where}.inputs", components) for s in inputs),
            local=local, activity_type=activity_type,
        )
    if op == "transfer":
        return ScriptEvent(
            tick, op, entity=_selector(raw.get("entity"), f"{where}.entity", components),
            source=comp("from"), target=comp("to"),
        )
    return ScriptEvent(tick, op, component=comp("component"))


def load_scenario(text: str, base_dir: str | Path | None = None, name: str = "scenario") -> Scenario:
    """Parse and fully validate a scenario document.

    ``rules`` may be an inline list or a path relative to ``base_dir``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from exc
    if not isinstance(doc, Mapping):
        raise ParseError("scenario must be a JSON object", 1)
    name = doc.get("name", name)

    domains = []
    for i, raw in enumerate(doc.get("domains", [])):
        where = f"domains[{i}]"
        if not isinstance(raw, Mapping):
            raise ParseError(f"{where}: domain must be an object")
        try:
            visibility = Visibility(raw.get("visibility", "full"))
            QualifiedId(_require(raw, "name", where), "_")
        except (ValueError, InvalidIdentifier) as exc:
            raise ParseError(f"{where}: {exc}") from exc
        agents = []
        for j, agent in enumerate(raw.get("agents", [])):
            awhere = f"{where}.agents[{j}]"
            if isinstance(agent, str):
                agent = {"id": agent}
            if not isinstance(agent, Mapping):
                raise ParseError(f"{awhere}: agent must be an object")
            agents.append(
                AgentSpec(
                    _require(agent, "id", awhere),
                    agent.get("node_type", "organization"),
                    _attrs(agent.get("attributes"), awhere),
                    agent.get("on_behalf_of"),
                )
            )
        domains.append(DomainSpec(raw["name"], visibility, tuple(agents)))
    domain_names = {d.name for d in domains}
    if len(domain_names) != len(domains):
        raise ParseError("duplicate domain names")
    rosters = {d.name: {a.id for a in d.agents} for d in domains}

    components: dict[str, ComponentSpec] = {}
    for i, raw in enumerate(doc.get("components", [])):
        where = f"components[{i}]"
        if not isinstance(raw, Mapping):
            raise ParseError(f"{where}: component must be an object")
        cid = _require(raw, "id", where)
        domain = _require(raw, "domain", where)
        if domain not in domain_names:
            raise UnknownDomain(f"{where}: unknown domain {domain!r}")
        kind = _require(raw, "kind", where)
        if kind not in COMPONENT_KINDS:
            raise ParseError(f"{where}: unknown component kind {kind!r}")
        roster = rosters[domain]
        agent = raw.get("agent") or (sorted(roster)[0] if roster else None)
        if agent is None or agent not in roster:
            raise ParseError(f"{where}: agent {agent!r} is not on the roster of {domain!r}")
        if cid in components:
            raise ParseError(f"{where}: duplicate component id {cid!r}")
        components[cid] = ComponentSpec(cid, domain, kind, agent, _attrs(raw.get("attributes"), where))

    try:
        flows = FlowDeclaration.from_json(doc.get("flows", []))
    except ValueError as exc:
        raise ParseError(f"flows: {exc}") from exc
    for flow in flows.flows:
        for d in (flow.from_domain, flow.to_domain):
            if d not in domain_names:
                raise UnknownDomain(f"flows: unknown domain {d!r}")

    rules_ref = doc.get("rules", [])
    try:
        if isinstance(rules_ref, str):
            rules = RuleSet.load(Path(base_dir or ".") / rules_ref)
        else:
            rules = RuleSet.from_json(rules_ref)
    except PolicyLoadError as exc:
        raise ParseError(f"rules: {exc}") from exc

    raw_script = doc.get("script", [])
    if not isinstance(raw_script, list):
        raise ParseError("script must be a list")
    script = tuple(_event(raw, i, components) for i, raw in enumerate(raw_script))
    for i in range(1, len(script)):
        if script[i].tick < script[i - 1].tick:
            raise NonMonotoneTimestamps(
                f"script[{i}] at tick {script[i].tick} follows tick {script[i - 1].tick}"
            )
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ParseError("seed must be an integer")
    return Scenario(name, tuple(domains), tuple(components.values()), flows, rules, script, seed)


def load_scenario_file(path: str | Path) -> Scenario:
    path = Path(path)
    return load_scenario(path.read_text(encoding="utf-8"), path.parent, path.name.split(".")[0])


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled scenario (``fig2`` or ``fig2.scenario``)."""
    stem = name[: -len(".scenario")] if name.endswith(".scenario") else name
    return Path(str(resources.files("decprov") / "scenarios" / f"{stem}.scenario"))


def load_bundled(name: str) -> Scenario:
    return load_scenario_file(bundled_path(name))


def inject_fault(scenario: Scenario, component: str, tick: int) -> Scenario:
    """Copy of ``scenario`` in which ``component`` emits faulty entities from ``tick`` on."""
    scenario.component(component)
    if isinstance(tick, bool) or not isinstance(tick, int) or tick < 0:
        raise TickOutOfRange(f"fault tick must be a non-negative integer, got {tick!r}")
    script = list(scenario.script)
    at = bisect_left([e.tick for e in script], tick)
    script.insert(at, ScriptEvent(tick, "inject_fault", component=component))
    return replace(scenario, script=tuple(script))


# -- running -------------------------------------------------------------------------


@dataclass(frozen=True)
class EventOutcome:
    index: int
    tick: int
    op: str
    outcome: str  # ok | blocked | error
    error: str | None = None
    detail: str | None = None
    produced: tuple[QualifiedId, ...] = ()
    alert: QualifiedId | None = None
    verdicts: tuple[PolicyVerdict, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "tick": self.tick,
            "op": self.op,
            "outcome": self.outcome,
            "error": self.error,
            "detail": self.detail,
            "produced": [str(p) for p in self.produced],
            "alert": None if self.alert is None else str(self.alert),
            "verdicts": [v.to_dict() for v in self.verdicts],
        }


@dataclass
class RunResult:
    scenario: Scenario
    federation: Federation
    events: list[EventOutcome]
    alerts: list[QualifiedId]

    def report(self) -> dict[str, Any]:
        return {
            "format": "decprov-run-report",
            "version": 1,
            "scenario": self.scenario.name,
            "seed": self.scenario.seed,
            "events": [e.to_dict() for e in self.events],
            "alerts": [str(a) for a in self.alerts],
            "heads": {s.domain: s.head_hash.hex() for s in self.federation},
        }


class _Runner:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.federation = Federation()
        self.recorders: dict[str, Recorder] = {}
        self.components = {c.id: c for c in scenario.components}
        self.outputs: dict[str, list[tuple[int, str, QualifiedId, str]]] = {c: [] for c in self.components}
        self.faulty_since: dict[str, int] = {}
        for declared in scenario.domains:
            recorder = Recorder(declared.name, scenario.rules, self.federation)
            self.federation.set_visibility(declared.name, declared.visibility)
            self.recorders[declared.name] = recorder
        for declared in scenario.domains:
            recorder = self.recorders[declared.name]
            for agent in declared.agents:
                principal = None if agent.on_behalf_of is None else QualifiedId(declared.name, agent.on_behalf_of)
                recorder.register_agent(agent.id, agent.node_type, agent.attributes, principal)

    def agent_of(self, comp: ComponentSpec) -> QualifiedId:
        return QualifiedId(comp.domain, comp.agent)

    def activity_attrs(self, comp: ComponentSpec, process: bool) -> dict[str, Any]:
        attrs = {k: v for k, v in comp.attributes.items() if k not in _ENTITY_ONLY}
        attrs.setdefault("component", comp.id)
        if process and comp.kind == "model":
            attrs.setdefault("automated_decision", True)
        return attrs

    def entity_attrs(self, comp: ComponentSpec, event: ScriptEvent) -> dict[str, Any]:
        attrs = dict(event.attributes)
        if comp.kind == "model" and event.node_type == MODEL_NODE_TYPE:
            for key in _ENTITY_ONLY & comp.attributes.keys():
                attrs.setdefault(key, comp.attributes[key])
        since = self.faulty_since.get(comp.id)
        if since is not None and event.tick >= since:
            attrs["faulty"] = True
        return attrs

    def remember(self, component: str, node_id: QualifiedId, created_at: int, node_type: str) -> None:
        self.outputs[component].append((created_at, str(node_id), node_id, node_type))

    def select(self, selector: Selector) -> QualifiedId:
        if selector.entity is not None:
            if self.federation.snapshot().node(selector.entity) is None:
                raise UnknownNode(f"selector {selector.describe()} does not resolve")
            return selector.entity
        candidates = [
            o for o in self.outputs[selector.component]
            if selector.node_type is None or o[3] == selector.node_type
        ]
        if not candidates:
            raise UnknownNode(f"selector {selector.describe()} matches nothing")
        return max(candidates, key=lambda o: (o[0], o[1]))[2]

    def latest_model(self, comp: ComponentSpec) -> QualifiedId | None:
        try:
            return self.select(Selector(component=comp.id, node_type=MODEL_NODE_TYPE))
        except UnknownNode:
            return None

    def emit(self, event: ScriptEvent) -> tuple[QualifiedId, ...]:
        comp = self.components[event.component]
        recorder = self.recorders[comp.domain]
        activity = recorder.begin_activity(
            self.agent_of(comp),
            event.activity_type or _EMIT_ACTIVITY[comp.kind],
            self.activity_attrs(comp, process=False),
        )
        entity = recorder.record_generation(
            activity, event.node_type, self.entity_attrs(comp, event), local=event.local
        )
        self.remember(comp.id, entity, event.tick, event.node_type)
        return activity, entity

    def process(self, event: ScriptEvent) -> tuple[QualifiedId, ...]:
        comp = self.components[event.component]
        recorder = self.recorders[comp.domain]
        inputs = [self.select(s) for s in event.inputs]
        model = self.latest_model(comp) if comp.kind == "model" else None
        activity = recorder.begin_activity(
            self.agent_of(comp),
            event.activity_type or _PROCESS_ACTIVITY[comp.kind],
            self.activity_attrs(comp, process=True),
        )
        if model is not None:
            recorder.record_use(activity, model, role="model")
        for input_id in inputs:
            recorder.record_use(activity, input_id, role="input")
        entity = recorder.record_generation(
            activity, event.node_type, self.entity_attrs(comp, event), local=event.local
        )
        self.remember(comp.id, entity, event.tick, event.node_type)
        recorder.record_derivation(entity, inputs)
        return activity, entity

    def transfer(self, event: ScriptEvent) -> tuple[QualifiedId, ...]:
        sender_comp = self.components[event.source]
        receiver_comp = self.components[event.target]
        entity = self.select(event.entity)
        purposes = receiver_comp.attributes.get("processing_purpose")
        receipt = record_transfer(
            self.recorders[sender_comp.domain],
            self.recorders[receiver_comp.domain],
            entity,
            self.agent_of(sender_comp),
            self.agent_of(receiver_comp),
            purposes=purposes,
        )
        self.remember(receiver_comp.id, receipt.alias_entity, receipt.at, self._node_type(entity))
        return receipt.transfer_activity, receipt.alias_entity

    def _node_type(self, node_id: QualifiedId) -> str:
        node = self.federation.snapshot().node(node_id)
        return "" if node is None else node.node_type

    def step(self, index: int, event: ScriptEvent) -> EventOutcome:
        for recorder in self.recorders.values():
            recorder.advance(max(recorder.clock, event.tick))
        marks = {d: (len(r.verdict_log), len(r.alerts)) for d, r in self.recorders.items()}

        def collected() -> tuple[tuple[PolicyVerdict, ...], list[QualifiedId]]:
            verdicts: list[PolicyVerdict] = []
            alerts: list[QualifiedId] = []
            for domain, recorder in self.recorders.items():
                verdicts.extend(recorder.verdict_log[marks[domain][0]:])
                alerts.extend(recorder.alerts[marks[domain][1]:])
            return tuple(verdicts), alerts

        try:
            if event.op == "inject_fault":
                self.faulty_since.setdefault(event.component, event.tick)
                produced: tuple[QualifiedId, ...] = ()
            else:
                produced = getattr(self, event.op)(event)
        except PolicyBlocked as exc:
            verdicts, alerts = collected()
            return EventOutcome(index, event.tick, event.op, "blocked", "PolicyBlocked",
                                exc.verdict.explanation, alert=exc.alert, verdicts=verdicts), alerts
        except DecProvError as exc:
            verdicts, alerts = collected()
            return EventOutcome(index, event.tick, event.op, "error", type(exc).__name__,
                                str(exc), verdicts=verdicts), alerts
        verdicts, alerts = collected()
        return EventOutcome(index, event.tick, event.op, "ok", produced=produced, verdicts=verdicts), alerts


def run(scenario: Scenario) -> RunResult:
    """Replay the script; capture failures become per-event outcomes, never aborts."""
    runner = _Runner(scenario)
    events: list[EventOutcome] = []
    alerts: list[QualifiedId] = []
    for index, event in enumerate(scenario.script):
        outcome, new_alerts = runner.step(index, event)
        events.append(outcome)
        alerts.extend(new_alerts)
    return RunResult(scenario, runner.federation, events, alerts)
