"""Fault-tolerant behavior-tree orchestration over a message bus, with a simulated assembly cell and a watchdog."""

__version__ = "0.1.0"
