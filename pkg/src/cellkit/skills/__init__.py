"""Skill leaves for the cell: motion, grasping, perception and force-guided insertion."""
from __future__ import annotations

from cellkit.bt.engine import BehaviorRegistry
from cellkit.skills.actions import (ACTIONS, BusSkill, ComputeGrasp, EstimatePose, Grasp, MoveEE, MoveJoint,
                                    MoveUntilFF, NJInsert, SearchAlign, SkillEnv, compose_grasp)
from cellkit.skills.conditions import CONDITIONS
from cellkit.skills.control import (BlockAverage, MoveUntilForce, NonJammingInsert, SpiralParams, SpiralSearch,
                                    StraightPush, direction_autocorrelation, noise_floor, run_law)


def build_registry(env: SkillEnv) -> BehaviorRegistry:
    reg = BehaviorRegistry()
    for name, cls in ACTIONS.items():
        reg.register_action(name, lambda params, cls=cls: cls(env, params))
    for name, factory in CONDITIONS.items():
        reg.register_condition(name, factory)
    return reg


__all__ = [
    "ACTIONS", "CONDITIONS", "BlockAverage", "BusSkill", "ComputeGrasp", "EstimatePose", "Grasp", "MoveEE",
    "MoveJoint", "MoveUntilFF", "MoveUntilForce", "NJInsert", "NonJammingInsert", "SearchAlign", "SkillEnv",
    "SpiralParams", "SpiralSearch", "StraightPush", "build_registry", "compose_grasp",
    "direction_autocorrelation", "noise_floor", "run_law",
]
