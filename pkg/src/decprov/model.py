"""Typed provenance graph vocabulary (a PROV-DM compatible subset).

Three node kinds, seven edge kinds with fixed endpoint-kind constraints, a
closed set of attribute value types, and a canonical byte encoding that the
store hashes.
"""

from __future__ import annotations

import json
import re
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Final, Union

from decprov.errors import InvalidAttribute, InvalidIdentifier, KindConstraintViolation

_ID_PART: Final = re.compile(r"[^:\s]+")


@dataclass(frozen=True, slots=True)
class QualifiedId:
    """``domain:local`` identifier, unique across the federation."""

    domain: str
    local: str

    def __post_init__(self) -> None:
        for part, label in ((self.domain, "domain"), (self.local, "local")):
            if not isinstance(part, str) or not _ID_PART.fullmatch(part):
                raise InvalidIdentifier(
                    f"{label} part {part!r} must be non-empty and free of ':' and whitespace"
                )

    def __str__(self) -> str:
        return f"{self.domain}:{self.local}"

    def __lt__(self, other: QualifiedId) -> bool:
        return str(self) < str(other)

    @classmethod
    def parse(cls, text: str) -> QualifiedId:
        if not isinstance(text, str):
            raise InvalidIdentifier(f"identifier must be text, got {type(text).__name__}")
        domain, sep, local = text.partition(":")
        if not sep:
            raise InvalidIdentifier(f"{text!r} is not of the form domain:local")
        return cls(domain, local)


def mint_id(domain: str, local: str) -> QualifiedId:
    return QualifiedId(domain, local)


def as_id(value: QualifiedId | str) -> QualifiedId:
    return value if isinstance(value, QualifiedId) else QualifiedId.parse(value)


class NodeKind(str, Enum):
    ENTITY = "Entity"
    ACTIVITY = "Activity"
    AGENT = "Agent"


class EdgeKind(str, Enum):
    USED = "used"
    WAS_GENERATED_BY = "wasGeneratedBy"
    WAS_DERIVED_FROM = "wasDerivedFrom"
    WAS_ASSOCIATED_WITH = "wasAssociatedWith"
    ACTED_ON_BEHALF_OF = "actedOnBehalfOf"
    WAS_ATTRIBUTED_TO = "wasAttributedTo"
    WAS_INFORMED_BY = "wasInformedBy"


EDGE_CONSTRAINTS: Final[Mapping[EdgeKind, tuple[NodeKind, NodeKind]]] = MappingProxyType(
    {
        EdgeKind.USED: (NodeKind.ACTIVITY, NodeKind.ENTITY),
        EdgeKind.WAS_GENERATED_BY: (NodeKind.ENTITY, NodeKind.ACTIVITY),
        EdgeKind.WAS_DERIVED_FROM: (NodeKind.ENTITY, NodeKind.ENTITY),
        EdgeKind.WAS_ASSOCIATED_WITH: (NodeKind.ACTIVITY, NodeKind.AGENT),
        EdgeKind.ACTED_ON_BEHALF_OF: (NodeKind.AGENT, NodeKind.AGENT),
        EdgeKind.WAS_ATTRIBUTED_TO: (NodeKind.ENTITY, NodeKind.AGENT),
        EdgeKind.WAS_INFORMED_BY: (NodeKind.ACTIVITY, NodeKind.ACTIVITY),
    }
)

AttrValue = Union[str, bool, int, frozenset]

# Reserved attribute keys and their value types.
RESERVED: Final[Mapping[str, str]] = MappingProxyType(
    {
        "personal_data": "bool",
        "data_subject": "str",
        "purpose": "set",
        "consented_purposes": "set",
        "processing_purpose": "set",
        "expiry": "timestamp",
        "automated_decision": "bool",
        "accepted_sources": "set",
        "alias_of": "qid",
        "faulty": "bool",
    }
)

# Reserved keys restricted to one node kind.
_KIND_ONLY: Final = {
    "automated_decision": NodeKind.ACTIVITY,
    "accepted_sources": NodeKind.ENTITY,
    "alias_of": NodeKind.ENTITY,
}

# Reserved attributes copied from a source entity onto its receiver-side alias.
ALIAS_COPIED: Final = (
    "accepted_sources",
    "consented_purposes",
    "data_subject",
    "expiry",
    "faulty",
    "personal_data",
    "purpose",
)


def _check_text(key: str, text: str) -> str:
    try:
        text.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise InvalidAttribute(f"attribute {key!r}: text is not UTF-8 encodable") from exc
    return text


def normalize_value(key: str, value: Any) -> AttrValue:
    """Coerce ``value`` into the closed attribute value set, checking reserved types."""
    if isinstance(value, bool):
        norm: AttrValue = value
    elif isinstance(value, int):
        norm = value
    elif isinstance(value, str):
        norm = _check_text(key, value)
    elif isinstance(value, (set, frozenset, list, tuple)):
        if not all(isinstance(v, str) for v in value):
            raise InvalidAttribute(f"attribute {key!r}: string-set members must be text")
        norm = frozenset(_check_text(key, v) for v in value)
    else:
        raise InvalidAttribute(f"attribute {key!r}: unsupported value type {type(value).__name__}")

    expected = RESERVED.get(key)
    if expected is None:
        return norm
    ok = {
        "bool": isinstance(norm, bool),
        "str": isinstance(norm, str),
        "set": isinstance(norm, frozenset),
        "timestamp": isinstance(norm, int) and not isinstance(norm, bool) and norm >= 0,
        "qid": isinstance(norm, str),
    }[expected]
    if not ok:
        raise InvalidAttribute(f"reserved attribute {key!r} must be of type {expected}, got {value!r}")
    if expected == "qid":
        try:
            QualifiedId.parse(norm)
        except InvalidIdentifier as exc:
            raise InvalidAttribute(f"reserved attribute {key!r}: {exc}") from exc
    return norm


def normalize_attributes(attributes: Mapping[str, Any] | None) -> Mapping[str, AttrValue]:
    if not attributes:
        return MappingProxyType({})
    for key in attributes:
        if not isinstance(key, str) or not key:
            raise InvalidAttribute(f"attribute keys must be non-empty text, got {key!r}")
        _check_text(key, key)
    out = {key: normalize_value(key, attributes[key]) for key in sorted(attributes)}
    return MappingProxyType(out)


@dataclass(frozen=True, slots=True)
class ProvNode:
    id: QualifiedId
    kind: NodeKind
    node_type: str
    attributes: Mapping[str, AttrValue] = field(default_factory=dict, hash=False)
    created_at: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NodeKind(self.kind))
        if not isinstance(self.node_type, str) or not self.node_type:
            raise InvalidAttribute("node_type must be non-empty text")
        _check_text("node_type", self.node_type)
        if (
            not isinstance(self.created_at, int)
            or isinstance(self.created_at, bool)
            or self.created_at < 0
        ):
            raise InvalidAttribute(f"created_at must be a non-negative integer, got {self.created_at!r}")
        attrs = normalize_attributes(self.attributes)
        for key, kind in _KIND_ONLY.items():
            if key in attrs and self.kind is not kind:
                raise InvalidAttribute(f"attribute {key!r} is only allowed on {kind.value} nodes")
        alias = attrs.get("alias_of")
        if alias is not None and QualifiedId.parse(alias).domain == self.id.domain:
            raise InvalidAttribute("alias_of must reference an identifier in a different domain")
        object.__setattr__(self, "attributes", attrs)

    @property
    def alias_of(self) -> QualifiedId | None:
        alias = self.attributes.get("alias_of")
        return None if alias is None else QualifiedId.parse(alias)


@dataclass(frozen=True, slots=True)
class ProvEdge:
    source: QualifiedId
    target: QualifiedId
    kind: EdgeKind
    attributes: Mapping[str, AttrValue] = field(default_factory=dict, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EdgeKind(self.kind))
        attrs = normalize_attributes(self.attributes)
        at = attrs.get("at")
        if at is not None and (isinstance(at, bool) or not isinstance(at, int) or at < 0):
            raise InvalidAttribute("edge attribute 'at' must be a logical timestamp")
        object.__setattr__(self, "attributes", attrs)


Record = Union[ProvNode, ProvEdge]


def validate_edge(edge: ProvEdge, source_kind: NodeKind, target_kind: NodeKind) -> None:
    """Raise KindConstraintViolation unless the endpoint kinds fit the edge kind."""
    expected = EDGE_CONSTRAINTS[edge.kind]
    if (NodeKind(source_kind), NodeKind(target_kind)) != expected:
        raise KindConstraintViolation(
            f"{edge.kind.value} requires {expected[0].value} -> {expected[1].value}, "
            f"got {NodeKind(source_kind).value} -> {NodeKind(target_kind).value} "
            f"({edge.source} -> {edge.target})"
        )


def _encode_value(value: AttrValue) -> Any:
    if isinstance(value, frozenset):
        return sorted(value)
    return value


def record_to_dict(record: Record) -> dict[str, Any]:
    """Plain-data form in canonical field order."""
    attrs = {k: _encode_value(v) for k, v in record.attributes.items()}
    if isinstance(record, ProvNode):
        return {
            "rectype": "node",
            "id": str(record.id),
            "kind": record.kind.value,
            "node_type": record.node_type,
            "created_at": record.created_at,
            "attributes": attrs,
        }
    return {
        "rectype": "edge",
        "source": str(record.source),
        "target": str(record.target),
        "kind": record.kind.value,
        "attributes": attrs,
    }


_NODE_KEYS: Final = ("rectype", "id", "kind", "node_type", "created_at", "attributes")
_EDGE_KEYS: Final = ("rectype", "source", "target", "kind", "attributes")


def record_from_dict(data: Mapping[str, Any]) -> Record:
    """Inverse of :func:`record_to_dict`. Raises ValueError subclasses on bad input."""
    if not isinstance(data, Mapping):
        raise InvalidAttribute("record must be an object")
    rectype = data.get("rectype")
    keys = _NODE_KEYS if rectype == "node" else _EDGE_KEYS if rectype == "edge" else None
    if keys is None:
        raise InvalidAttribute(f"unknown rectype {rectype!r}")
    if set(data) != set(keys):
        raise InvalidAttribute(f"{rectype} record fields must be exactly {list(keys)}")
    attrs = data["attributes"]
    if not isinstance(attrs, Mapping):
        raise InvalidAttribute("attributes must be an object")
    try:
        if rectype == "node":
            return ProvNode(
                id=QualifiedId.parse(data["id"]),
                kind=NodeKind(data["kind"]),
                node_type=data["node_type"],
                attributes=attrs,
                created_at=data["created_at"],
            )
        return ProvEdge(
            source=QualifiedId.parse(data["source"]),
            target=QualifiedId.parse(data["target"]),
            kind=EdgeKind(data["kind"]),
            attributes=attrs,
        )
    except (InvalidIdentifier, ValueError) as exc:
        if isinstance(exc, InvalidAttribute):
            raise
        raise InvalidAttribute(str(exc)) from exc


def dumps_canonical(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def canonical_serialize(record: Record) -> bytes:
    """Deterministic UTF-8 bytes for ``record``; equal records give equal bytes."""
    return dumps_canonical(record_to_dict(record)).encode("utf-8")
