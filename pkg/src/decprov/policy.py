"""Event-condition-action rules evaluated synchronously at capture time.

A rule names the capture events it listens to, one built-in condition with
parameters, and an action: block the append, raise an alert, or annotate the
record. Rules run in lexicographic id order; the first Block short-circuits.
"""

from __future__ import annotations

import json
from collections import deque
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Final

from decprov.errors import DecProvError, PolicyLoadError, UnknownRoot, UnresolvableContext
from decprov.model import (
    AttrValue,
    EdgeKind,
    NodeKind,
    ProvNode,
    QualifiedId,
    normalize_value,
)
from decprov.query import lineage
from decprov.store import REGULATOR, FederationView, Unresolvable

AUTOMATED_DECISION_CONSENT: Final = "automated-decision"


class Trigger(str, Enum):
    NODE_APPEND = "node-append"
    USE = "use"
    DERIVATION = "derivation"
    TRANSFER = "transfer"
    GENERATION = "generation"


class Outcome(str, Enum):
    PASS = "pass"
    BLOCKED = "blocked"
    ALERTED = "alerted"
    ANNOTATED = "annotated"


@dataclass(frozen=True, slots=True)
class Action:
    kind: str  # block | alert | annotate
    message: str | None = None
    key: str | None = None
    value: AttrValue | None = None


@dataclass(frozen=True)
class PolicyRule:
    id: str
    triggers: frozenset[Trigger]
    condition: str
    action: Action
    params: Mapping[str, Any] = field(default_factory=dict)
    fail_closed: bool = True

    def to_json(self) -> dict[str, Any]:
        params: dict[str, Any] = {}
        if self.action.message is not None:
            params["message"] = self.action.message
        if self.action.key is not None:
            value = self.action.value
            params.update(key=self.action.key, value=sorted(value) if isinstance(value, frozenset) else value)
        return {
            "id": self.id,
            "trigger": sorted(t.value for t in self.triggers),
            "condition": {"name": self.condition, "params": dict(self.params)},
            "action": {"kind": self.action.kind, "params": params},
            "fail": "closed" if self.fail_closed else "open",
        }


@dataclass(frozen=True, slots=True)
class PolicyVerdict:
    rule_id: str
    outcome: Outcome
    explanation: str
    message: str | None = None
    annotation: tuple[str, AttrValue] | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"rule": self.rule_id, "outcome": self.outcome.value, "explanation": self.explanation}
        if self.message is not None:
            out["message"] = self.message
        return out


@dataclass(frozen=True)
class CaptureEvent:
    """What a capture call is about to append, as seen by the rules.

    ``inputs`` are the entities the event consumes: the used entity, the
    derivation sources, the transferred entity, or for a generation the
    entities its activity used.
    """

    triggers: frozenset[Trigger]
    domain: str
    now: int
    summary: str
    activity: ProvNode | None = None
    node: ProvNode | None = None
    inputs: tuple[QualifiedId, ...] = ()
    receiving_purposes: frozenset[str] | None = None


class GraphContext:
    """Read access for conditions: a federation snapshot plus not-yet-appended nodes."""

    def __init__(self, view: FederationView, pending: Iterable[ProvNode] = ()):
        self.view = view
        self.pending = {n.id: n for n in pending}

    def node(self, node_id: QualifiedId) -> ProvNode | None:
        return self.pending.get(node_id) or self.view.node(node_id)

    def require(self, node_id: QualifiedId) -> ProvNode:
        node = self.node(node_id)
        if node is None:
            raise UnresolvableContext(f"{node_id} cannot be resolved")
        return node

    def used_by(self, activity: QualifiedId) -> list[QualifiedId]:
        return [e.target for e in self.view.out_edges(activity) if e.kind is EdgeKind.USED]

    def _lineage(self, entity: QualifiedId):
        try:
            return lineage(self.view, entity, requesting_domain=REGULATOR)
        except UnknownRoot as exc:
            raise UnresolvableContext(str(exc)) from exc

    def _pending_only(self, entity: QualifiedId) -> ProvNode | None:
        node = self.pending.get(entity)
        return node if node is not None and self.view.node(entity) is None else None

    def lineage_ids(self, entity: QualifiedId) -> tuple[set[QualifiedId], bool]:
        """Node ids upstream of ``entity`` and whether any reference was unresolvable."""
        pending = self._pending_only(entity)
        if pending is not None:
            # A not-yet-appended node is only reachable through its alias link.
            ids, broken = {entity}, False
            if pending.alias_of is not None:
                try:
                    upstream, broken = self.lineage_ids(pending.alias_of)
                    ids |= upstream
                except UnresolvableContext:
                    broken = True
            return ids, broken
        pipeline = self._lineage(entity)
        ids = set(pipeline.node_ids())
        broken = any(isinstance(n.payload, Unresolvable) for n in pipeline.nodes)
        return ids, broken

    def lineage_roots(self, entity: QualifiedId) -> list[ProvNode]:
        """Entities upstream of ``entity`` whose own lineage holds no further entity."""
        pending = self._pending_only(entity)
        if pending is not None:
            return [pending] if pending.alias_of is None else self.lineage_roots(pending.alias_of)
        pipeline = self._lineage(entity)
        if any(isinstance(n.payload, Unresolvable) for n in pipeline.nodes):
            raise UnresolvableContext(f"lineage of {entity} crosses an unresolvable reference")
        # reverse adjacency over the traversed links: dependency -> dependents
        dependents: dict[QualifiedId, list[QualifiedId]] = {}
        for edge in pipeline.edges:
            dependents.setdefault(edge.target, []).append(edge.source)
        for link in pipeline.alias_links:
            dependents.setdefault(link.source, []).append(link.alias)
        entities = [n for n in pipeline.nodes if n.kind is NodeKind.ENTITY]
        reaches_entity: set[QualifiedId] = set()
        queue = deque(n.id for n in entities)
        while queue:
            current = queue.popleft()
            for dep in dependents.get(current, ()):
                if dep not in reaches_entity:
                    reaches_entity.add(dep)
                    queue.append(dep)
        return [n.payload for n in entities if n.id not in reaches_entity]


# -- built-in conditions ------------------------------------------------------------


def purpose_incompatible(entity: ProvNode, processing: frozenset[str] | None) -> bool:
    """True iff the declared processing purposes are not all among the entity's purposes."""
    if processing is None:
        raise UnresolvableContext("receiving context declares no processing purpose")
    if not processing:
        return False
    purposes = entity.attributes.get("purpose")
    if purposes is None:
        raise UnresolvableContext(f"{entity.id} carries no purpose set")
    return not processing <= purposes


def expired(entity: ProvNode, now: int) -> bool:
    expiry = entity.attributes.get("expiry")
    return expiry is not None and now > expiry


def untrusted_lineage(
    entity: QualifiedId, blacklist: Iterable[QualifiedId], context: GraphContext
) -> bool:
    blacklist = frozenset(blacklist)
    if not blacklist:
        return False
    ids, broken = context.lineage_ids(entity)
    if ids & blacklist:
        return True
    if broken:
        raise UnresolvableContext(f"lineage of {entity} crosses an unresolvable reference")
    return False


def consent_missing_for_automated_decision(entity: ProvNode, activity: ProvNode) -> bool:
    return (
        activity.attributes.get("automated_decision") is True
        and entity.attributes.get("personal_data") is True
        and AUTOMATED_DECISION_CONSENT not in entity.attributes.get("consented_purposes", frozenset())
    )


def model_admission_violation(entity: QualifiedId, model: ProvNode, context: GraphContext) -> bool:
    accepted = model.attributes.get("accepted_sources")
    if accepted is None:
        return False
    return any(root.node_type not in accepted for root in context.lineage_roots(entity))


# -- adapters from events to condition arguments --------------------------------------

ConditionFn = Callable[[CaptureEvent, GraphContext, Mapping[str, Any]], "str | None"]


def _processing_purposes(event: CaptureEvent, params: Mapping[str, Any]) -> frozenset[str] | None:
    if "purposes" in params:
        return frozenset(params["purposes"])
    if event.receiving_purposes is not None:
        return event.receiving_purposes
    if event.activity is not None:
        return event.activity.attributes.get("processing_purpose")
    return None


def _cond_purpose(event, context, params):
    processing = _processing_purposes(event, params)
    for input_id in event.inputs:
        entity = context.require(input_id)
        if purpose_incompatible(entity, processing):
            have = sorted(entity.attributes.get("purpose", ()))
            return f"{input_id} collected for {have}, processing declared for {sorted(processing)}"
    return None


def _cond_expired(event, context, params):
    for input_id in event.inputs:
        entity = context.require(input_id)
        if expired(entity, event.now):
            return f"{input_id} expired at {entity.attributes['expiry']}, now {event.now}"
    return None


def _cond_untrusted(event, context, params):
    blacklist = frozenset(QualifiedId.parse(a) for a in params["agents"])
    for input_id in event.inputs:
        if untrusted_lineage(input_id, blacklist, context):
            ids, _ = context.lineage_ids(input_id)
            hits = sorted(str(a) for a in ids & blacklist)
            return f"lineage of {input_id} passes through blacklisted {hits}"
    return None


def _require_activity(event: CaptureEvent) -> ProvNode:
    if event.activity is None:
        raise UnresolvableContext("event has no activity")
    return event.activity


def _cond_consent(event, context, params):
    activity = _require_activity(event)
    for input_id in event.inputs:
        entity = context.require(input_id)
        if consent_missing_for_automated_decision(entity, activity):
            return (
                f"{input_id} is personal data without '{AUTOMATED_DECISION_CONSENT}' consent, "
                f"used by automated decision {activity.id}"
            )
    return None


def _cond_model_admission(event, context, params):
    activity = _require_activity(event)
    models = []
    for used in context.used_by(activity.id):
        node = context.node(used)
        if node is not None and "accepted_sources" in node.attributes:
            models.append(node)
    for input_id in event.inputs:
        if any(m.id == input_id for m in models):
            continue
        for model in models:
            if model_admission_violation(input_id, model, context):
                roots = sorted({r.node_type for r in context.lineage_roots(input_id)})
                accepted = sorted(model.attributes["accepted_sources"])
                return f"{input_id} is rooted in {roots}; model {model.id} accepts {accepted}"
    return None


CONDITIONS: Final[Mapping[str, ConditionFn]] = {
    "purpose_incompatible": _cond_purpose,
    "expired": _cond_expired,
    "untrusted_lineage": _cond_untrusted,
    "consent_missing_for_automated_decision": _cond_consent,
    "model_admission_violation": _cond_model_admission,
}


# -- rule sets -----------------------------------------------------------------------


class _Template(dict):
    def __missing__(self, key: str) -> str:
        return "{" + key + "}"


class RuleSet:
    """Immutable, id-ordered collection of rules."""

    def __init__(self, rules: Iterable[PolicyRule] = ()):
        ordered = sorted(rules, key=lambda r: r.id)
        ids = [r.id for r in ordered]
        if len(set(ids)) != len(ids):
            raise PolicyLoadError(f"duplicate rule ids in {ids}")
        for rule in ordered:
            if rule.condition not in CONDITIONS:
                raise PolicyLoadError(f"rule {rule.id!r}: unknown condition {rule.condition!r}")
        self._rules = tuple(ordered)

    def __iter__(self):
        return iter(self._rules)

    def __len__(self) -> int:
        return len(self._rules)

    def __bool__(self) -> bool:
        return bool(self._rules)

    @classmethod
    def from_json(cls, data: Any) -> RuleSet:
        if not isinstance(data, list):
            raise PolicyLoadError("rule file must hold a list of rule objects")
        return cls(parse_rule(item) for item in data)

    @classmethod
    def load(cls, path: str | Path) -> RuleSet:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise PolicyLoadError(f"cannot read rule file {path}: {exc}") from exc
        return cls.from_json(data)

    def to_json(self) -> list[dict[str, Any]]:
        return [r.to_json() for r in self._rules]


def parse_rule(item: Any) -> PolicyRule:
    if not isinstance(item, Mapping):
        raise PolicyLoadError(f"rule must be an object, got {item!r}")
    rule_id = item.get("id")
    if not isinstance(rule_id, str) or not rule_id:
        raise PolicyLoadError(f"rule id must be non-empty text: {item!r}")
    try:
        triggers = frozenset(Trigger(t) for t in item["trigger"])
        cond = item["condition"]
        name = cond["name"]
        params = dict(cond.get("params") or {})
        act = item["action"]
        kind = act["kind"]
        act_params = dict(act.get("params") or {})
    except (KeyError, TypeError, ValueError) as exc:
        raise PolicyLoadError(f"rule {rule_id!r}: malformed ({exc})") from exc
    if not triggers:
        raise PolicyLoadError(f"rule {rule_id!r}: empty trigger set")
    if name not in CONDITIONS:
        raise PolicyLoadError(f"rule {rule_id!r}: unknown condition {name!r}")
    if name == "untrusted_lineage":
        agents = params.get("agents")
        if not isinstance(agents, list):
            raise PolicyLoadError(f"rule {rule_id!r}: untrusted_lineage needs an 'agents' list")
        try:
            [QualifiedId.parse(a) for a in agents]
        except DecProvError as exc:
            raise PolicyLoadError(f"rule {rule_id!r}: {exc}") from exc
    if "purposes" in params and not (
        isinstance(params["purposes"], list) and all(isinstance(p, str) for p in params["purposes"])
    ):
        raise PolicyLoadError(f"rule {rule_id!r}: 'purposes' must be a list of text")

    if kind == "block":
        action = Action("block")
    elif kind == "alert":
        action = Action("alert", message=str(act_params.get("message", "rule {rule} fired: {witness}")))
    elif kind == "annotate":
        key = act_params.get("key")
        if not isinstance(key, str) or not key or "value" not in act_params:
            raise PolicyLoadError(f"rule {rule_id!r}: annotate needs 'key' and 'value'")
        try:
            value = normalize_value(key, act_params["value"])
        except DecProvError as exc:
            raise PolicyLoadError(f"rule {rule_id!r}: {exc}") from exc
        action = Action("annotate", key=key, value=value)
    else:
        raise PolicyLoadError(f"rule {rule_id!r}: unknown action {kind!r}")

    fail = item.get("fail", "closed" if kind == "block" else "open")
    if fail not in ("open", "closed"):
        raise PolicyLoadError(f"rule {rule_id!r}: fail must be 'open' or 'closed'")
    return PolicyRule(rule_id, triggers, name, action, params, fail == "closed")


def rule(
    rule_id: str,
    condition: str,
    action: str = "block",
    triggers: Iterable[str] = ("use",),
    fail: str | None = None,
    **params: Any,
) -> PolicyRule:
    """Shorthand constructor, mainly for programmatic rule sets."""
    act_params: dict[str, Any] = {}
    for key in ("message", "key", "value"):
        if key in params:
            act_params[key] = params.pop(key)
    item: dict[str, Any] = {
        "id": rule_id,
        "trigger": list(triggers),
        "condition": {"name": condition, "params": params},
        "action": {"kind": action, "params": act_params},
    }
    if fail is not None:
        item["fail"] = fail
    return parse_rule(item)


def evaluate(rules: RuleSet | Iterable[PolicyRule], event: CaptureEvent, context: GraphContext) -> list[PolicyVerdict]:
    """Run every rule listening to the event, in id order, until the first Block."""
    if not isinstance(rules, RuleSet):
        rules = RuleSet(rules)
    verdicts: list[PolicyVerdict] = []
    for r in rules:
        if not (r.triggers & event.triggers):
            continue
        note = "condition false"
        try:
            witness = CONDITIONS[r.condition](event, context, r.params)
        except UnresolvableContext as exc:
            witness = note = f"unresolvable context ({exc}); rule fails {'closed' if r.fail_closed else 'open'}"
            if not r.fail_closed:
                witness = None
        if witness is None:
            verdicts.append(PolicyVerdict(r.id, Outcome.PASS, f"{r.condition}: {note}"))
            continue
        explanation = f"{r.condition}: {witness}"
        if r.action.kind == "block":
            verdicts.append(PolicyVerdict(r.id, Outcome.BLOCKED, explanation))
            break
        if r.action.kind == "alert":
            try:
                message = r.action.message.format_map(
                    _Template(rule=r.id, witness=witness, subject=event.summary, domain=event.domain)
                )
            except (ValueError, IndexError, AttributeError):
                message = r.action.message
            verdicts.append(PolicyVerdict(r.id, Outcome.ALERTED, explanation, message=message))
        else:
            verdicts.append(
                PolicyVerdict(r.id, Outcome.ANNOTATED, explanation, annotation=(r.action.key, r.action.value))
            )
    return verdicts
