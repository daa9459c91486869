"""Message bus: wire format, broker routing, and in-memory / TCP transports."""
from cellkit.bus.core import BROKER_LOG_TOPIC, CTL_TOPIC, DISCONNECT_TOPIC, BrokerCore
from cellkit.bus.endpoint import Endpoint, HeartbeatEmitter, PendingRequest, RequestTimeout
from cellkit.bus.memory import MemoryBroker, MemoryEndpoint
from cellkit.bus.tcp import DEFAULT_PORT, TcpBroker, TcpEndpoint, default_port
from cellkit.bus.wire import Heartbeat, Message, ProtocolError, decode_message, encode_message, topic_matches

__all__ = [
    "BROKER_LOG_TOPIC", "CTL_TOPIC", "DISCONNECT_TOPIC", "BrokerCore", "Endpoint", "HeartbeatEmitter",
    "PendingRequest", "RequestTimeout", "MemoryBroker", "MemoryEndpoint", "DEFAULT_PORT", "TcpBroker",
    "TcpEndpoint", "default_port", "Heartbeat", "Message", "ProtocolError", "decode_message", "encode_message",
    "topic_matches",
]
