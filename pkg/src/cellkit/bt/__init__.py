"""Behavior-tree engine: XML trees, tick semantics, blackboard, traces and snapshots."""
from cellkit.bt.blackboard import Blackboard
from cellkit.bt.definition import NodeSpec, TreeDefinition, TreeParseError, TreeStructureError, load_tree, parse_tree
from cellkit.bt.engine import (BehaviorRegistry, ExecutableTree, InstantiationError, RunResult, TickContext,
                               instantiate, run)
from cellkit.bt.snapshot import SnapshotError, restore, snapshot
from cellkit.bt.status import NodeStatus, evaluate_control
from cellkit.bt.trace import TickTrace, TraceError, TraceEvent, as_trace, replay

__all__ = [
    "Blackboard", "NodeSpec", "TreeDefinition", "TreeParseError", "TreeStructureError", "load_tree", "parse_tree",
    "BehaviorRegistry", "ExecutableTree", "InstantiationError", "RunResult", "TickContext", "instantiate", "run",
    "SnapshotError", "restore", "snapshot", "NodeStatus", "evaluate_control",
    "TickTrace", "TraceError", "TraceEvent", "as_trace", "replay",
]
