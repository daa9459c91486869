from __future__ import annotations

from enum import Enum


class NodeStatus(str, Enum):
    IDLE = "IDLE"
    RUNNING = "RUNNING"
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"

    @property
    def completed(self) -> bool:
        return self in (NodeStatus.SUCCESS, NodeStatus.FAILURE)

    def __str__(self) -> str:
        return self.value


CONTROL_KINDS = ("Sequence", "ReactiveSequence", "Fallback", "Parallel")
DECORATOR_KINDS = ("Timeout", "Retry")
LEAF_KINDS = ("Action", "Condition")
NODE_KINDS = CONTROL_KINDS + DECORATOR_KINDS + LEAF_KINDS


def evaluate_control(kind: str, child_statuses: list[NodeStatus], params: dict | None = None) -> NodeStatus:
    """Status of a control node given its children's statuses for this tick.

    Sequence-like and Fallback nodes read the list left to right and stop at the
    first child that does not let the tick through, so entries to the right of
    that child are irrelevant (they would not have been ticked).
    """
    if not child_statuses:
        raise ValueError("child_statuses must be non-empty")
    params = params or {}
    if kind in ("Sequence", "ReactiveSequence"):
        for s in child_statuses:
            if s is not NodeStatus.SUCCESS:
                return s
        return NodeStatus.SUCCESS
    if kind == "Fallback":
        for s in child_statuses:
            if s is not NodeStatus.FAILURE:
                return s
        return NodeStatus.FAILURE
    if kind == "Parallel":
        k = int(params["k"])
        n = len(child_statuses)
        successes = sum(s is NodeStatus.SUCCESS for s in child_statuses)
        failures = sum(s is NodeStatus.FAILURE for s in child_statuses)
        if successes >= k:
            return NodeStatus.SUCCESS
        if n - failures < k:
            return NodeStatus.FAILURE
        return NodeStatus.RUNNING
    if kind in DECORATOR_KINDS:
        if len(child_statuses) != 1:
            raise ValueError(f"{kind} takes exactly one child status")
        return child_statuses[0]
    raise ValueError(f"not a control kind: {kind!r}")
