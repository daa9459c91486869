"""Component supervision: heartbeats, log patterns, controller audit, restarts, interventions."""
from cellkit.watchdog.health import ComponentHealth, HealthMonitor, HealthState
from cellkit.watchdog.interventions import CAUSES, Intervention, InterventionLog
from cellkit.watchdog.logscan import Incident, LogPattern, LogScanner, PatternError
from cellkit.watchdog.policy import Decision, Outcome, RestartLadder, RestartPolicy
from cellkit.watchdog.supervisor import Detection, RestartEvent, Watchdog, audit_controllers

__all__ = [
    "CAUSES", "ComponentHealth", "Decision", "Detection", "HealthMonitor", "HealthState", "Incident",
    "Intervention", "InterventionLog", "LogPattern", "LogScanner", "Outcome", "PatternError", "RestartEvent",
    "RestartLadder", "RestartPolicy", "Watchdog", "audit_controllers",
]
