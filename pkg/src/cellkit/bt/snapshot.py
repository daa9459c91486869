"""Binary executor snapshot.

Layout (all integers little-endian)::

    b"CBT1"  u64 revision  u32 entry_count
    entry*:  u32 key_len  key(utf-8)  u8 tag  value
    u32 xml_len  tree-xml(utf-8)
    u32 crc32 of everything above

Node statuses are not stored: a restored tree starts IDLE and relies on its
condition guards plus the blackboard to skip finished work.
"""
from __future__ import annotations

import struct
import zlib
from typing import Any

from cellkit.bt.blackboard import Blackboard
from cellkit.bt.definition import TreeParseError, TreeStructureError, parse_tree
from cellkit.bt.engine import BehaviorRegistry, ExecutableTree, instantiate
from cellkit.geometry import GraspRecord, JointVector, Pose6D, Wrench

MAGIC = b"CBT1"

TAG_STR, TAG_INT, TAG_REAL, TAG_BOOL, TAG_POSE, TAG_JOINTS, TAG_WRENCH, TAG_GRASP = range(1, 9)


class SnapshotError(ValueError):
    pass


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_value(value: Any) -> bytes:
    if isinstance(value, str):
        return bytes([TAG_STR]) + _pack_str(value)
    if isinstance(value, bool):
        return bytes([TAG_BOOL, int(value)])
    if isinstance(value, int):
        return bytes([TAG_INT]) + struct.pack("<q", value)
    if isinstance(value, float):
        return bytes([TAG_REAL]) + struct.pack("<d", value)
    if isinstance(value, Pose6D):
        return bytes([TAG_POSE]) + struct.pack("<7d", *value.to_list())
    if isinstance(value, JointVector):
        return bytes([TAG_JOINTS]) + struct.pack("<6d", *value.q)
    if isinstance(value, Wrench):
        return bytes([TAG_WRENCH]) + struct.pack("<6d", *value.to_list())
    if isinstance(value, GraspRecord):
        return (bytes([TAG_GRASP]) + _pack_str(value.object_name)
                + struct.pack("<8d", *value.grasp_pose_in_object.to_list(), value.closure))
    raise SnapshotError(f"cannot serialize {type(value).__name__}")


def encode_blackboard(bb: Blackboard) -> bytes:
    items = bb.items()
    out = [MAGIC, struct.pack("<QI", bb.revision, len(items))]
    for key, value in items:
        out.append(_pack_str(key))
        out.append(_pack_value(value))
    return b"".join(out)


def snapshot(tree: ExecutableTree | None, bb: Blackboard) -> bytes:
    body = encode_blackboard(bb) + _pack_str(tree.definition.to_xml() if tree is not None else "")
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SnapshotError(f"truncated snapshot at byte {self.pos} (wanted {n})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SnapshotError(f"invalid utf-8 string: {exc}") from None


def _read_value(r: _Reader) -> Any:
    (tag,) = r.unpack("<B")
    try:
        if tag == TAG_STR:
            return r.string()
        if tag == TAG_BOOL:
            (b,) = r.unpack("<B")
            if b > 1:
                raise SnapshotError(f"bad boolean byte {b}")
            return bool(b)
        if tag == TAG_INT:
            return r.unpack("<q")[0]
        if tag == TAG_REAL:
            return r.unpack("<d")[0]
        if tag == TAG_POSE:
            return Pose6D.from_list(r.unpack("<7d"))
        if tag == TAG_JOINTS:
            return JointVector(r.unpack("<6d"))
        if tag == TAG_WRENCH:
            return Wrench.from_list(r.unpack("<6d"))
        if tag == TAG_GRASP:
            name = r.string()
            vals = r.unpack("<8d")
            return GraspRecord(name, Pose6D.from_list(vals[:7]), vals[7])
    except ValueError as exc:
        if isinstance(exc, SnapshotError):
            raise
        raise SnapshotError(f"invalid value for tag {tag}: {exc}") from None
    raise SnapshotError(f"unknown type tag {tag}")


def restore(data: bytes, registry: BehaviorRegistry | None = None, **tree_kwargs) -> tuple[ExecutableTree | None, Blackboard]:
    """Inverse of :func:`snapshot`. Nothing is returned unless the whole snapshot validates."""
    if len(data) < 4 + 12 + 4 + 4:
        raise SnapshotError("snapshot too short")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise SnapshotError("checksum mismatch")
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise SnapshotError("bad magic")
    revision, count = r.unpack("<QI")
    entries = {}
    for _ in range(count):
        key = r.string()
        if key in entries:
            raise SnapshotError(f"duplicate key {key!r}")
        entries[key] = _read_value(r)
    xml = r.string()
    if r.pos != len(body):
        raise SnapshotError(f"{len(body) - r.pos} trailing bytes")
    bb = Blackboard()
    bb._load(entries, revision)
    tree = None
    if xml:
        try:
            definition = parse_tree(xml)
        except (TreeParseError, TreeStructureError) as exc:
            raise SnapshotError(f"embedded tree invalid: {exc}") from None
        if registry is None:
            raise SnapshotError("snapshot holds a tree; a registry is required to restore it")
        tree = instantiate(definition, registry, bb, **tree_kwargs)
    return tree, bb
