from __future__ import annotations

import json

import pytest

from decprov.errors import NonMonotoneTimestamps, ParseError, TickOutOfRange, UnknownComponent, UnknownDomain
from decprov.model import NodeKind, QualifiedId
from decprov.query import impact, lineage
from decprov.simulator import BUNDLED, bundled_path, inject_fault, load_bundled, load_scenario, load_scenario_file, run
from decprov.store import dump_store


def q(text):
    return QualifiedId.parse(text)


def doc(**overrides):
    base = {
        "domains": [{"name": "a", "agents": [{"id": "boss"}]}, {"name": "b", "agents": ["bee"]}],
        "components": [
            {"id": "s", "domain": "a", "kind": "sensor", "agent": "boss"},
            {"id": "p", "domain": "b", "kind": "process"},
        ],
        "script": [],
    }
    base.update(overrides)
    return json.dumps(base, indent=1)


def test_fig2_shape():
    scenario = load_bundled("fig2")
    assert [d.name for d in scenario.domains] == ["orgA", "orgB"]
    assert [c.kind for c in scenario.components] == ["sensor", "model", "datastore", "process", "model", "actuator"]


def test_all_bundled_scenarios_load():
    for name in BUNDLED:
        assert bundled_path(name).exists()
        assert load_bundled(name).script


def test_empty_script_only_rosters():
    result = run(load_scenario(doc()))
    assert result.events == [] and result.alerts == []
    nodes = [n for s in result.federation for n in s.snapshot().nodes()]
    assert {n.kind for n in nodes} == {NodeKind.AGENT}
    assert {str(n.id) for n in nodes} == {"a:boss", "b:bee"}


@pytest.mark.parametrize(
    "overrides, error",
    [
        ({"script": [{"tick": 0, "op": "emit", "component": "ghost", "node_type": "x"}]}, UnknownComponent),
        ({"script": [{"tick": 0, "op": "process", "component": "p", "inputs": [{"component": "ghost"}],
                      "node_type": "x"}]}, UnknownComponent),
        ({"components": [{"id": "s", "domain": "zz", "kind": "sensor"}]}, UnknownDomain),
        ({"flows": [["a", "zz", "x"]]}, UnknownDomain),
        ({"script": [{"tick": 2, "op": "emit", "component": "s", "node_type": "x"},
                     {"tick": 1, "op": "emit", "component": "s", "node_type": "x"}]}, NonMonotoneTimestamps),
        ({"script": [{"tick": 0, "op": "dance", "component": "s"}]}, ParseError),
        ({"script": [{"tick": -1, "op": "emit", "component": "s", "node_type": "x"}]}, ParseError),
        ({"script": [{"tick": 0, "op": "emit", "component": "s", "node_type": "x",
                      "attributes": {"personal_data": "yes"}}]}, ParseError),
        ({"components": [{"id": "s", "domain": "a", "kind": "toaster"}]}, ParseError),
        ({"components": [{"id": "s", "domain": "a", "kind": "sensor", "agent": "stranger"}]}, ParseError),
        ({"rules": [{"id": "r", "trigger": ["use"], "condition": {"name": "nope"}, "action": {"kind": "block"}}]},
         ParseError),
        ({"seed": "x"}, ParseError),
    ],
)
def test_load_errors(overrides, error):
    with pytest.raises(error):
        load_scenario(doc(**overrides))


def test_parse_error_line():
    with pytest.raises(ParseError) as exc:
        load_scenario('{\n  "domains": [\n  oops\n]}')
    assert exc.value.line == 3


def test_rules_file_reference(tmp_path):
    (tmp_path / "rules.json").write_text(json.dumps(
        [{"id": "r", "trigger": ["use"], "condition": {"name": "expired"}, "action": {"kind": "alert"}}]
    ))
    (tmp_path / "x.scenario").write_text(doc(rules="rules.json"))
    scenario = load_scenario_file(tmp_path / "x.scenario")
    assert [r.id for r in scenario.rules] == ["r"]
    assert scenario.name == "x"


def test_fig2_run():
    result = run(load_bundled("fig2"))
    assert all(e.outcome == "ok" for e in result.events)
    assert len(result.events) == len(load_bundled("fig2").script)
    fed = result.federation
    assert fed.snapshot().node(q("orgB:action-1")) is not None
    # Component attributes land on the right records.
    assert fed.store("orgA").node(q("orgA:model-a")).attributes["accepted_sources"] == frozenset({"sensor-reading"})
    assert fed.store("orgB").node(q("orgB:act-4")).attributes["automated_decision"] is True
    assert fed.store("orgB").node(q("orgB:act-2")).attributes["processing_purpose"] == frozenset({"operations"})
    transfer = fed.store("orgA").node(q("orgA:act-5"))
    assert transfer.attributes["processing_purpose"] == frozenset({"operations"})
    json.dumps(result.report())


def test_run_is_deterministic():
    for name in BUNDLED:
        first, second = run(load_bundled(name)), run(load_bundled(name))
        assert {s.domain: s.head_hash for s in first.federation} == {s.domain: s.head_hash for s in second.federation}
        assert first.report() == second.report()


def test_purpose_violation_cascade():
    result = run(load_bundled("purpose-violation"))
    outcomes = [(e.op, e.outcome, e.error) for e in result.events]
    assert outcomes == [
        ("emit", "ok", None),
        ("transfer", "blocked", "PolicyBlocked"),
        ("process", "error", "UnknownNode"),
    ]
    blocked = result.events[1]
    assert blocked.alert in result.alerts
    assert result.federation.snapshot().node(blocked.alert).node_type == "policy-alert"


def test_every_blocked_event_has_alert():
    for name in BUNDLED:
        result = run(load_bundled(name))
        for event in result.events:
            if event.outcome == "blocked":
                assert event.alert is not None and event.alert in result.alerts


def test_most_recent_selector_tie_breaks_by_id():
    text = doc(script=[
        {"tick": 0, "op": "emit", "component": "s", "node_type": "r", "id": "r-b"},
        {"tick": 0, "op": "emit", "component": "s", "node_type": "r", "id": "r-a"},
        {"tick": 1, "op": "transfer", "entity": {"component": "s"}, "from": "s", "to": "p"},
    ])
    result = run(load_scenario(text))
    alias = result.federation.snapshot().node(result.events[2].produced[1])
    assert alias.alias_of == q("a:r-b")


def test_missing_explicit_entity_is_error_outcome():
    text = doc(script=[{"tick": 0, "op": "process", "component": "p", "inputs": [{"entity": "a:ghost"}],
                        "node_type": "x"}])
    result = run(load_scenario(text))
    assert (result.events[0].outcome, result.events[0].error) == ("error", "UnknownNode")


def test_fault_on_fig2_sensor_reaches_action():
    faulted = inject_fault(load_bundled("fig2"), "sensor-1", 0)
    assert faulted.script[0].op == "inject_fault"
    result = run(faulted)
    reading = result.federation.snapshot().node(q("orgA:reading-1"))
    assert reading.attributes["faulty"] is True
    assert q("orgB:action-1") in impact(result.federation, reading.id).node_ids()
    assert "faulty" not in result.federation.snapshot().node(q("orgA:inference-1")).attributes


def test_fault_on_actuator():
    result = run(inject_fault(load_bundled("fig2"), "actuator", 0))
    action = result.federation.snapshot().node(q("orgB:action-1"))
    assert action.attributes["faulty"] is True
    assert impact(result.federation, action.id).node_ids() == {action.id}


def test_fault_beyond_last_event_changes_nothing():
    plain = run(load_bundled("fig2")).federation
    late = run(inject_fault(load_bundled("fig2"), "sensor-1", 1000)).federation
    assert [dump_store(s) for s in plain] == [dump_store(s) for s in late]


def test_fault_errors():
    with pytest.raises(UnknownComponent):
        inject_fault(load_bundled("fig2"), "ghost", 0)
    with pytest.raises(TickOutOfRange):
        inject_fault(load_bundled("fig2"), "sensor-1", -1)


@pytest.mark.parametrize("component, tick", [("sensor-1", 0), ("model-a", 1), ("datastore", 2), ("query", 4)])
def test_fault_closure(component, tick):
    result = run(inject_fault(load_bundled("fig2"), component, tick))
    fed = result.federation
    view = fed.snapshot()
    nodes = [n for s in fed for n in s.snapshot().nodes()]
    faulty = sorted((n for n in nodes if n.attributes.get("faulty") is True), key=lambda n: (n.created_at, str(n.id)))
    assert faulty
    tainted = {
        n.id for n in nodes
        if any(view.node(i).attributes.get("faulty") is True for i in lineage(fed, n.id).node_ids())
    }
    reach = set()
    for f in faulty:
        reach |= {i for i in impact(fed, f.id).node_ids() if view.node(i).created_at >= tick}
    assert tainted == reach
    if len(faulty) == 1:
        assert tainted == impact(fed, faulty[0].id).node_ids()


def test_faulty_sensor_scenario():
    result = run(load_bundled("faulty-sensor"))
    view = result.federation.snapshot()
    assert "faulty" not in view.node(q("grid:reading-1")).attributes
    assert view.node(q("grid:reading-2")).attributes["faulty"] is True
    downstream = impact(result.federation, "grid:reading-2").node_ids()
    assert q("city:action-1") in downstream
    assert q("grid:forecast-1") not in downstream
