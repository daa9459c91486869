"""Blackboard predicates. Each evaluates in a single tick and never returns RUNNING."""
from __future__ import annotations


def has_key(params: dict):
    key = _key(params)
    return lambda ctx: key in ctx.bb


def is_true(params: dict):
    key = _key(params)
    return lambda ctx: ctx.bb.get(key) is True


def key_equals(params: dict):
    key = _key(params)
    if "value" not in params:
        raise ValueError("KeyEquals needs a value")
    want = params["value"]

    def check(ctx) -> bool:
        v = ctx.bb.get(key)
        if v is None:
            return False
        if isinstance(v, bool):
            return str(v).lower() == want.lower()
        return str(v) == want
    return check


def _key(params: dict) -> str:
    key = params.get("key")
    if not key:
        raise ValueError("condition needs a key")
    return key


CONDITIONS = {"HasKey": has_key, "IsTrue": is_true, "KeyEquals": key_equals}
