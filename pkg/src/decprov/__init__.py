"""Decision provenance for interconnected systems.

Record who did what with which data across organisational boundaries,
keep each domain's records in a tamper-evident log, and ask what a decision
depended on or what a datum went on to affect.
"""

from __future__ import annotations

from decprov.capture import Recorder, TransferReceipt, record_transfer
from decprov.model import EdgeKind, NodeKind, ProvEdge, ProvNode, QualifiedId
from decprov.policy import PolicyRule, PolicyVerdict, RuleSet, evaluate
from decprov.query import (
    DEFAULT_DEPTH,
    UNBOUNDED,
    DecisionPipeline,
    FlowDeclaration,
    data_inventory,
    erasure_set,
    impact,
    involved_agents,
    lineage,
    unexpected_flows,
)
from decprov.simulator import inject_fault, load_scenario, run
from decprov.store import REGULATOR, Federation, ProvStore, Visibility, verify_chain, verify_log

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_DEPTH",
    "REGULATOR",
    "UNBOUNDED",
    "DecisionPipeline",
    "EdgeKind",
    "Federation",
    "FlowDeclaration",
    "NodeKind",
    "PolicyRule",
    "PolicyVerdict",
    "ProvEdge",
    "ProvNode",
    "ProvStore",
    "QualifiedId",
    "Recorder",
    "RuleSet",
    "TransferReceipt",
    "Visibility",
    "data_inventory",
    "erasure_set",
    "evaluate",
    "impact",
    "inject_fault",
    "involved_agents",
    "lineage",
    "load_scenario",
    "record_transfer",
    "run",
    "unexpected_flows",
    "verify_chain",
    "verify_log",
]
