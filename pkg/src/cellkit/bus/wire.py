"""Bus wire format: one UTF-8 JSON object per line, keys ``v,kind,id,topic,ts_us,body`` in that order."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

PROTOCOL_VERSION = 1
KINDS = ("pub", "req", "rep", "hb")
KEYS = ("v", "kind", "id", "topic", "ts_us", "body")
U64_MAX = 2 ** 64 - 1


class ProtocolError(ValueError):
    def __init__(self, message: str, data: bytes = b""):
        self.data = data
        super().__init__(f"{message}: {data[:200]!r}" if data else message)


def valid_topic(topic: Any) -> bool:
    return (isinstance(topic, str) and topic != "" and topic.isascii()
            and not any(c.isspace() for c in topic))


@dataclass(frozen=True)
class Message:
    kind: str
    topic: str
    body: dict = field(default_factory=dict)
    id: int = 0
    ts_us: int = 0
    v: int = PROTOCOL_VERSION

    def __post_init__(self) -> None:
        problem = _check(self.v, self.kind, self.id, self.topic, self.ts_us, self.body)
        if problem:
            raise ProtocolError(problem)

    def encode(self) -> bytes:
        return encode_message(self)


def _check(v, kind, id_, topic, ts_us, body) -> str | None:
    if type(v) is not int or v != PROTOCOL_VERSION:
        return f"unsupported protocol version {v!r}"
    if kind not in KINDS:
        return f"unknown kind {kind!r}"
    if type(id_) is not int or not 0 <= id_ <= U64_MAX:
        return f"id {id_!r} is not a 64-bit unsigned integer"
    if not valid_topic(topic):
        return f"invalid topic {topic!r}"
    if type(ts_us) is not int or not 0 <= ts_us <= U64_MAX:
        return f"ts_us {ts_us!r} is not a 64-bit unsigned integer"
    if not isinstance(body, dict) or not all(isinstance(k, str) for k in body):
        return "body must be an object with string keys"
    return None


def encode_message(m: Message) -> bytes:
    doc = {"v": m.v, "kind": m.kind, "id": m.id, "topic": m.topic, "ts_us": m.ts_us, "body": m.body}
    try:
        text = json.dumps(doc, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"body not encodable: {exc}") from None
    return text.encode("utf-8") + b"\n"


def decode_message(data: bytes) -> Message:
    if not data.endswith(b"\n"):
        raise ProtocolError("truncated line (no terminating newline)", data)
    line = data[:-1]
    if b"\n" in line:
        raise ProtocolError("embedded newline", data)
    try:
        doc = json.loads(line.decode("utf-8"), parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"invalid JSON ({exc})", data) from None
    if not isinstance(doc, dict):
        raise ProtocolError("message is not a JSON object", data)
    if tuple(doc) != KEYS:
        missing = [k for k in KEYS if k not in doc]
        extra = [k for k in doc if k not in KEYS]
        raise ProtocolError(f"bad keys (missing={missing}, unexpected={extra}, order={list(doc)})", data)
    problem = _check(doc["v"], doc["kind"], doc["id"], doc["topic"], doc["ts_us"], doc["body"])
    if problem:
        raise ProtocolError(problem, data)
    return Message(kind=doc["kind"], topic=doc["topic"], body=doc["body"], id=doc["id"], ts_us=doc["ts_us"], v=doc["v"])


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name}")


@dataclass(frozen=True)
class Heartbeat:
    component_id: str
    seq: int
    period_ms: int

    @property
    def topic(self) -> str:
        return f"hb/{self.component_id}"

    def to_message(self, ts_us: int = 0) -> Message:
        return Message("hb", self.topic, {"seq": self.seq, "period_ms": self.period_ms}, id=self.seq, ts_us=ts_us)

    @classmethod
    def from_message(cls, m: Message) -> "Heartbeat":
        if m.kind != "hb" or not m.topic.startswith("hb/") or len(m.topic) <= 3:
            raise ProtocolError(f"not a heartbeat: kind={m.kind} topic={m.topic}")
        try:
            seq = m.body["seq"]
            period = m.body["period_ms"]
        except KeyError as exc:
            raise ProtocolError(f"heartbeat body missing {exc}") from None
        if type(seq) is not int or type(period) is not int:
            raise ProtocolError("heartbeat seq/period_ms must be integers")
        return cls(m.topic[3:], seq, period)


def topic_matches(pattern: str, topic: str) -> bool:
    """Exact match, ``*`` for everything, or ``prefix/*`` for any topic under ``prefix/``."""
    if pattern == "*" or pattern == topic:
        return True
    if pattern.endswith("/*"):
        return topic.startswith(pattern[:-1])
    return False
