from __future__ import annotations

import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from decprov.errors import InvalidAttribute, InvalidIdentifier, KindConstraintViolation
from decprov.model import (
    EDGE_CONSTRAINTS,
    EdgeKind,
    NodeKind,
    ProvEdge,
    ProvNode,
    QualifiedId,
    canonical_serialize,
    mint_id,
    record_from_dict,
    record_to_dict,
    validate_edge,
)

id_part = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Zs", "Zl", "Zp", "Cc"), blacklist_characters=":"),
    min_size=1,
    max_size=12,
)


def test_mint_id_textual_form():
    assert str(mint_id("orgA", "sensor-17")) == "orgA:sensor-17"


@pytest.mark.parametrize("domain, local", [("", "x"), ("a:b", "x"), ("a", "x y"), ("a", ""), ("a", "tab\tx")])
def test_mint_id_rejects_bad_parts(domain, local):
    with pytest.raises(InvalidIdentifier):
        mint_id(domain, local)


def test_parse_round_trip():
    q = QualifiedId.parse("orgB:m1")
    assert mint_id(q.domain, q.local) == q
    assert str(q) == "orgB:m1"


@pytest.mark.parametrize("text", ["nocolon", ":x", "x:", "a:b:c", "a: b"])
def test_parse_rejects(text):
    with pytest.raises(InvalidIdentifier):
        QualifiedId.parse(text)


@given(id_part, id_part)
def test_identifier_text_round_trip(domain, local):
    q = QualifiedId(domain, local)
    assert QualifiedId.parse(str(q)) == q


def test_validate_edge_examples():
    validate_edge(ProvEdge(QualifiedId("a", "x"), QualifiedId("a", "y"), EdgeKind.USED), NodeKind.ACTIVITY, NodeKind.ENTITY)
    validate_edge(
        ProvEdge(QualifiedId("a", "x"), QualifiedId("a", "y"), EdgeKind.WAS_DERIVED_FROM), NodeKind.ENTITY, NodeKind.ENTITY
    )
    with pytest.raises(KindConstraintViolation, match="Activity -> Entity"):
        validate_edge(ProvEdge(QualifiedId("a", "x"), QualifiedId("a", "y"), EdgeKind.USED), NodeKind.ENTITY, NodeKind.ENTITY)


def test_validate_edge_exhaustive():
    accepted = 0
    for kind, src, dst in itertools.product(EdgeKind, NodeKind, NodeKind):
        edge = ProvEdge(QualifiedId("a", "x"), QualifiedId("a", "y"), kind)
        if EDGE_CONSTRAINTS[kind] == (src, dst):
            validate_edge(edge, src, dst)
            accepted += 1
        else:
            with pytest.raises(KindConstraintViolation):
                validate_edge(edge, src, dst)
    assert accepted == 7


def test_constraint_table():
    assert EDGE_CONSTRAINTS[EdgeKind.ACTED_ON_BEHALF_OF] == (NodeKind.AGENT, NodeKind.AGENT)
    assert EDGE_CONSTRAINTS[EdgeKind.WAS_INFORMED_BY] == (NodeKind.ACTIVITY, NodeKind.ACTIVITY)
    assert EDGE_CONSTRAINTS[EdgeKind.WAS_ATTRIBUTED_TO] == (NodeKind.ENTITY, NodeKind.AGENT)


def node(**attrs):
    return ProvNode(QualifiedId("orgA", "ent-1"), NodeKind.ENTITY, "reading", attrs, 3)


def test_serialization_is_deterministic():
    n = node(purpose={"b", "a"}, personal_data=True)
    assert canonical_serialize(n) == canonical_serialize(n)
    assert canonical_serialize(n) == (
        b'{"rectype":"node","id":"orgA:ent-1","kind":"Entity","node_type":"reading","created_at":3,'
        b'"attributes":{"personal_data":true,"purpose":["a","b"]}}'
    )


def test_attribute_insertion_order_is_irrelevant():
    a = ProvNode(QualifiedId("d", "x"), NodeKind.ENTITY, "t", {"b": 1, "a": 2})
    b = ProvNode(QualifiedId("d", "x"), NodeKind.ENTITY, "t", {"a": 2, "b": 1})
    assert canonical_serialize(a) == canonical_serialize(b)


def test_differing_value_changes_bytes():
    assert canonical_serialize(node(score=1)) != canonical_serialize(node(score=2))
    assert canonical_serialize(node(flag="1")) != canonical_serialize(node(flag=1))
    assert canonical_serialize(node(flag=True)) != canonical_serialize(node(flag=1))


def test_edge_serialization_field_order():
    e = ProvEdge(QualifiedId("a", "act-1"), QualifiedId("a", "ent-1"), EdgeKind.USED, {"role": "input", "at": 2})
    assert canonical_serialize(e) == (
        b'{"rectype":"edge","source":"a:act-1","target":"a:ent-1","kind":"used","attributes":{"at":2,"role":"input"}}'
    )


def test_utf8_text_preserved():
    n = ProvNode(QualifiedId("d", "x"), NodeKind.ENTITY, "lecture", {"note": "café"})
    assert "café".encode() in canonical_serialize(n)


@pytest.mark.parametrize(
    "attrs",
    [
        {"personal_data": "yes"},
        {"purpose": "analytics"},
        {"expiry": -1},
        {"expiry": True},
        {"alias_of": "nocolon"},
        {"nested": {"a": 1}},
        {"floaty": 1.5},
        {"purpose": ["a", 1]},
        {1: "x"},
    ],
)
def test_invalid_attributes(attrs):
    with pytest.raises(InvalidAttribute):
        ProvNode(QualifiedId("d", "x"), NodeKind.ENTITY, "t", attrs)


def test_kind_specific_reserved_attributes():
    with pytest.raises(InvalidAttribute):
        ProvNode(QualifiedId("d", "x"), NodeKind.ENTITY, "t", {"automated_decision": True})
    with pytest.raises(InvalidAttribute):
        ProvNode(QualifiedId("d", "x"), NodeKind.ACTIVITY, "t", {"accepted_sources": ["a"]})
    with pytest.raises(InvalidAttribute):
        ProvNode(QualifiedId("d", "x"), NodeKind.ENTITY, "t", {"alias_of": "d:y"})


def test_created_at_must_be_tick():
    with pytest.raises(InvalidAttribute):
        ProvNode(QualifiedId("d", "x"), NodeKind.ENTITY, "t", {}, -1)
    with pytest.raises(InvalidAttribute):
        ProvEdge(QualifiedId("d", "x"), QualifiedId("d", "y"), EdgeKind.USED, {"at": "now"})


def test_dict_round_trip():
    n = node(purpose=["x"], expiry=9, alias_of="orgB:ent-4")
    assert record_from_dict(record_to_dict(n)) == n
    with pytest.raises(InvalidAttribute):
        record_from_dict({**record_to_dict(n), "extra": 1})
    with pytest.raises(InvalidAttribute):
        record_from_dict({"rectype": "blob"})


scalar = st.one_of(st.booleans(), st.integers(min_value=0, max_value=10**6), st.text(max_size=8))
attr_values = st.one_of(scalar, st.frozensets(st.text(max_size=5), max_size=4))
attrs = st.dictionaries(st.sampled_from(["a", "b", "score", "note", "tags"]), attr_values, max_size=4)
nodes = st.builds(
    lambda local, t, created, a: ProvNode(QualifiedId("dom", local), NodeKind.ENTITY, t, a, created),
    st.sampled_from(["x", "y", "z"]),
    st.sampled_from(["reading", "record"]),
    st.integers(min_value=0, max_value=5),
    attrs,
)


def _tagged(n: ProvNode):
    # Type-aware view, since True == 1 in Python.
    attrs = tuple((k, type(v).__name__, tuple(sorted(v)) if isinstance(v, frozenset) else v) for k, v in n.attributes.items())
    return (n.id, n.kind, n.node_type, n.created_at, attrs)


@given(nodes, nodes)
def test_serialization_injective(a, b):
    assert (canonical_serialize(a) == canonical_serialize(b)) == (_tagged(a) == _tagged(b))
