from __future__ import annotations

import logging
import threading
from typing import Any, Iterator

from cellkit.geometry import GraspRecord, JointVector, Pose6D, Wrench

log = logging.getLogger(__name__)

VALUE_TYPES = (str, bool, int, float, Pose6D, JointVector, Wrench, GraspRecord)


def _type_name(value: Any) -> str:
    # bool is checked first: it is an int subclass
    for t in VALUE_TYPES:
        if isinstance(value, t):
            return t.__name__
    raise TypeError(f"unsupported blackboard value type: {type(value).__name__}")


class Blackboard:
    """Typed key-value store shared by the nodes of one execution instance.

    ``get`` returns ``None`` for absent keys; ``None`` itself cannot be stored,
    so absence is never confused with a stored value.
    """

    def __init__(self) -> None:
        self._entries: dict[str, Any] = {}
        self._revision = 0
        self._lock = threading.Lock()

    @property
    def revision(self) -> int:
        return self._revision

    def put(self, key: str, value: Any) -> int:
        if not isinstance(key, str) or not key:
            raise KeyError(f"blackboard keys are non-empty strings, got {key!r}")
        new_type = _type_name(value)
        with self._lock:
            old = self._entries.get(key)
            if old is not None and _type_name(old) != new_type:
                log.warning("blackboard key %r changes type %s -> %s", key, _type_name(old), new_type)
            self._entries[key] = value
            self._revision += 1
            return self._revision

    def get(self, key: str, default: Any = None) -> Any:
        return self._entries.get(key, default)

    def delete(self, key: str) -> bool:
        with self._lock:
            if key not in self._entries:
                return False
            del self._entries[key]
            self._revision += 1
            return True

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(list(self._entries))

    def items(self) -> list[tuple[str, Any]]:
        with self._lock:
            return list(self._entries.items())

    def entries(self) -> dict[str, Any]:
        with self._lock:
            return dict(self._entries)

    def _load(self, entries: dict[str, Any], revision: int) -> None:
        for key, value in entries.items():
            _type_name(value)
        with self._lock:
            self._entries = dict(entries)
            self._revision = revision

    def __repr__(self) -> str:
        return f"Blackboard(rev={self._revision}, keys={sorted(self._entries)})"
