from __future__ import annotations

import random

import networkx as nx
import pytest

from decprov.capture import ALERT_NODE_TYPE, Recorder, record_transfer
from decprov.errors import (
    KindConstraintViolation,
    PolicyBlocked,
    TemporalViolation,
    UnknownNode,
    ValidationFailed,
)
from decprov.model import EdgeKind, ProvEdge, QualifiedId
from decprov.policy import RuleSet, rule
from decprov.query import impact, lineage
from decprov.store import Federation, verify_chain

from gen import random_federation


def q(text):
    return QualifiedId.parse(text)


@pytest.fixture
def fed():
    return Federation()


def test_begin_activity(fed):
    rec = Recorder("orgA", federation=fed)
    agent = rec.register_agent("acme-corp")
    first = rec.begin_activity(agent, "inference", {"automated_decision": True})
    second = rec.begin_activity(agent, "inference")
    assert (str(first), str(second)) == ("orgA:act-1", "orgA:act-2")
    edges = rec.store.snapshot().out_edges(first)
    assert [(e.kind, e.target) for e in edges] == [(EdgeKind.WAS_ASSOCIATED_WITH, agent)]


def test_begin_activity_with_entity_agent(fed):
    rec = Recorder("orgA", federation=fed)
    agent = rec.register_agent("acme")
    gen = rec.record_generation(rec.begin_activity(agent, "x"), "thing")
    with pytest.raises(KindConstraintViolation):
        rec.begin_activity(gen, "inference")


def test_record_generation(fed):
    rec = Recorder("orgA", federation=fed)
    act = rec.begin_activity(rec.register_agent("a"), "inference")
    entity = rec.record_generation(act, "inference", {"personal_data": False})
    assert str(entity) == "orgA:ent-1"
    node = rec.store.node(entity)
    assert node.created_at == rec.clock
    assert rec.store.snapshot().out_edges(entity)[0].kind is EdgeKind.WAS_GENERATED_BY
    with pytest.raises(UnknownNode):
        rec.record_generation(q("orgA:act-99"), "x")


def test_ids_never_repeat(fed):
    rec = Recorder("orgA", federation=fed)
    act = rec.begin_activity(rec.register_agent("a"), "x")
    rec.record_generation(act, "t", local="ent-2")
    ids = [rec.record_generation(act, "t") for _ in range(3)]
    # The counter is monotone: it moves past explicitly chosen ids.
    assert [str(i) for i in ids] == ["orgA:ent-3", "orgA:ent-4", "orgA:ent-5"]


def test_generation_blocked_by_expiry(fed):
    rec = Recorder("orgA", RuleSet([rule("stale", "expired", triggers=["generation"])]), fed)
    agent = rec.register_agent("a")
    src = rec.record_generation(rec.begin_activity(agent, "x"), "reading", {"expiry": 2})
    rec.advance(5)
    act = rec.begin_activity(agent, "model")
    rec.record_use(act, src)
    before = len(rec.store)
    with pytest.raises(PolicyBlocked) as exc:
        rec.record_generation(act, "decision")
    assert len(rec.store) == before + 1
    alert = rec.store.node(exc.value.alert)
    assert alert.node_type == ALERT_NODE_TYPE and alert.attributes["rule"] == "stale"
    assert verify_chain(rec.store).ok
    assert rec.alerts == [exc.value.alert]


def test_record_use_local_and_consent_block(fed):
    rec = Recorder("orgA", RuleSet([rule("consent", "consent_missing_for_automated_decision")]), fed)
    agent = rec.register_agent("a")
    maker = rec.begin_activity(agent, "form")
    fine = rec.record_generation(maker, "reading")
    personal = rec.record_generation(maker, "application", {"personal_data": True})
    model = rec.begin_activity(agent, "inference", {"automated_decision": True})
    edge = rec.record_use(model, fine, role="input")
    assert edge.kind is EdgeKind.USED and edge.attributes["role"] == "input"
    with pytest.raises(PolicyBlocked):
        rec.record_use(model, personal)
    used = [e.target for e in rec.store.snapshot().out_edges(model) if e.kind is EdgeKind.USED]
    assert used == [fine]


def test_use_blocked_by_untrusted_source(fed):
    rules = RuleSet([rule("trust", "untrusted_lineage", agents=["orgA:shady"])])
    rec = Recorder("orgA", rules, fed)
    shady, good = rec.register_agent("shady"), rec.register_agent("good")
    raw = rec.record_generation(rec.begin_activity(shady, "scrape"), "raw")
    clean = rec.record_generation(rec.begin_activity(good, "clean"), "clean")
    rec.record_derivation(clean, [raw])
    consumer = rec.begin_activity(good, "decide")
    with pytest.raises(PolicyBlocked, match="shady"):
        rec.record_use(consumer, clean)


def test_use_kind_mismatch(fed):
    rec = Recorder("orgA", federation=fed)
    agent = rec.register_agent("a")
    act = rec.begin_activity(agent, "x")
    with pytest.raises(KindConstraintViolation):
        rec.record_use(act, agent)


def test_derivation(fed):
    rec = Recorder("orgA", federation=fed)
    act = rec.begin_activity(rec.register_agent("a"), "x")
    s1, s2 = rec.record_generation(act, "t"), rec.record_generation(act, "t")
    d = rec.record_generation(act, "t")
    assert len(rec.record_derivation(d, [s1, s2])) == 2
    assert rec.record_derivation(d, []) == []
    rec.advance(4)
    later = rec.record_generation(act, "t")
    with pytest.raises(TemporalViolation):
        rec.record_derivation(d, [later])
    with pytest.raises(UnknownNode):
        rec.record_derivation(q("orgA:nope"), [s1])


def test_clock_cannot_go_back(fed):
    rec = Recorder("orgA", federation=fed)
    rec.advance(3)
    with pytest.raises(TemporalViolation):
        rec.advance(2)


def _pair(fed, rules_b=None):
    a = Recorder("orgA", federation=fed)
    b = Recorder("orgB", rules_b, federation=fed)
    ag_a, ag_b = a.register_agent("alpha"), b.register_agent("beta")
    src = a.record_generation(
        a.begin_activity(ag_a, "collect"),
        "profile",
        {"purpose": ["analytics", "billing"], "data_subject": "ann", "personal_data": True, "score": 3},
    )
    return a, b, ag_a, ag_b, src


def test_transfer(fed):
    a, b, ag_a, ag_b, src = _pair(fed)
    a.advance(2)
    receipt = record_transfer(a, b, src, ag_a, ag_b, purposes=["billing"])
    alias = b.store.node(receipt.alias_entity)
    assert receipt.alias_entity.domain == "orgB" != receipt.source_entity.domain
    assert alias.alias_of == src
    assert alias.attributes["purpose"] == frozenset({"analytics", "billing"})
    assert alias.attributes["data_subject"] == "ann"
    assert "score" not in alias.attributes
    assert alias.created_at == 2 and receipt.at == 2
    gen = [e for e in b.store.snapshot().out_edges(alias.id) if e.kind is EdgeKind.WAS_GENERATED_BY]
    assert gen[0].target == receipt.transfer_activity and receipt.transfer_activity.domain == "orgA"
    transfer = a.store.node(receipt.transfer_activity)
    assert transfer.attributes["to_domain"] == "orgB"
    assert src in lineage(fed, alias.id).node_ids()
    assert alias.id in impact(fed, src).node_ids()


def test_two_transfers_two_aliases(fed):
    a, b, ag_a, ag_b, src = _pair(fed)
    r1 = a.transfer_to(b, src, ag_a, ag_b)
    r2 = a.transfer_to(b, src, ag_a, ag_b)
    assert r1.alias_entity != r2.alias_entity
    assert b.store.node(r1.alias_entity).alias_of == b.store.node(r2.alias_entity).alias_of == src


def test_transfer_purpose_block_is_atomic(fed):
    rules = RuleSet([rule("purpose", "purpose_incompatible", triggers=["transfer"])])
    a, b, ag_a, ag_b, src = _pair(fed, rules)
    sizes = (len(a.store), len(b.store))
    with pytest.raises(PolicyBlocked, match="advertising"):
        record_transfer(a, b, src, ag_a, ag_b, purposes=["advertising"])
    assert len(a.store) == sizes[0]
    assert len(b.store) == sizes[1] + 1
    assert b.store.node(b.alerts[0]).node_type == ALERT_NODE_TYPE


def test_transfer_requires_boundary(fed):
    a, b, ag_a, ag_b, src = _pair(fed)
    with pytest.raises(ValidationFailed):
        record_transfer(a, a, src, ag_a, ag_a)
    with pytest.raises(UnknownNode):
        record_transfer(a, b, q("orgA:missing"), ag_a, ag_b)


def test_alert_rules_do_not_block(fed):
    rules = RuleSet([rule("a1", "expired", "alert"), rule("a2", "expired", "alert")])
    rec = Recorder("orgA", rules, fed)
    agent = rec.register_agent("a")
    old = rec.record_generation(rec.begin_activity(agent, "x"), "t", {"expiry": 0})
    rec.advance(1)
    act = rec.begin_activity(agent, "y")
    rec.record_use(act, old)
    assert len(rec.alerts) == 2
    assert any(e.target == old for e in rec.store.snapshot().out_edges(act))


def test_annotate_rule_marks_record(fed):
    rules = RuleSet([rule("mark", "expired", "annotate", triggers=["generation"], key="stale-input", value=True)])
    rec = Recorder("orgA", rules, fed)
    agent = rec.register_agent("a")
    old = rec.record_generation(rec.begin_activity(agent, "x"), "t", {"expiry": 0})
    rec.advance(1)
    act = rec.begin_activity(agent, "y")
    rec.record_use(act, old)
    out = rec.record_generation(act, "t")
    assert rec.store.node(out).attributes["stale-input"] is True


def test_foreign_lineage_target_must_predate(fed):
    a, b, ag_a, ag_b, src = _pair(fed)
    act = b.begin_activity(ag_b, "peek")
    with pytest.raises(TemporalViolation):
        b.record_use(act, src)  # same tick as src
    b.advance(1)
    act = b.begin_activity(ag_b, "peek")
    b.record_use(act, src)


def test_informed_by_edge(fed):
    rec = Recorder("orgA", federation=fed)
    agent = rec.register_agent("a")
    first = rec.begin_activity(agent, "x")
    second = rec.begin_activity(agent, "y")
    rec.record_edge("wasInformedBy", second, first)
    with pytest.raises(TemporalViolation):
        rec.record_edge("wasInformedBy", first, second)


# -- properties over random capture sequences ---------------------------------------------


@pytest.mark.parametrize("seed", range(30))
def test_random_sequences_acyclic_and_closed(seed):
    fed = random_federation(random.Random(seed), max_records=300)
    g = nx.DiGraph()
    for store in fed:
        snap = store.snapshot()
        for record in store.records:
            if isinstance(record, ProvEdge):
                if record.target.domain == store.domain:
                    assert snap.node(record.target) is not None
                if record.kind in (EdgeKind.USED, EdgeKind.WAS_GENERATED_BY, EdgeKind.WAS_DERIVED_FROM):
                    g.add_edge(record.source, record.target)
            elif record.alias_of is not None:
                g.add_edge(record.id, record.alias_of)
        assert verify_chain(store).ok
    assert nx.is_directed_acyclic_graph(g)


@pytest.mark.parametrize("seed", range(20))
def test_blocked_appends_leave_only_an_alert(seed):
    rng = random.Random(seed)
    rules = RuleSet([rule("stale", "expired", triggers=["use", "derivation"])])
    fed = Federation()
    rec = Recorder("orgA", rules, fed)
    agent = rec.register_agent("a")
    entities = []
    for step in range(60):
        rec.advance(step)
        act = rec.begin_activity(agent, "x")
        entities.append(rec.record_generation(act, "t", {"expiry": rng.randint(0, 60)}))
        target = rng.choice(entities[:-1] or entities)
        for call in (lambda: rec.record_use(act, target), lambda: rec.record_derivation(entities[-1], [target])):
            before = list(rec.store.records)
            try:
                call()
            except PolicyBlocked as exc:
                after = list(rec.store.records)
                assert after[: len(before)] == before and len(after) == len(before) + 1
                assert after[-1].id == exc.alert
            except TemporalViolation:
                assert list(rec.store.records) == before
    assert verify_chain(rec.store).ok
