"""Privileged-state argument solver.

Chooses in-tolerance arguments for any allowed skill from the true world
state. Used to validate that the reference schemas solve the environments and
that skill sequences missing a required element cannot.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

from .envs import (
    DEFAULT_TOLERANCES,
    HOME_POSES,
    BallObject,
    BarObject,
    BottleObject,
    CorkscrewObject,
    EpisodeTrace,
    Tolerances,
    WorldState,
    bearing_from_home,
    reset,
    step,
    wrap_angle,
)
from .errors import ContractViolation
from .pamdp import ARMS, Arm, JointAction, JointSkill, TaskSpec

LIFT_DISTANCE = 0.3
BAR_GRIP_REACH = 0.1


def _toward_home(arm: Arm, center: tuple[float, float]) -> tuple[float, float]:
    hx, hy = HOME_POSES[arm][0], HOME_POSES[arm][1]
    dx, dy = hx - center[0], hy - center[1]
    norm = math.hypot(dx, dy) or 1.0
    return dx / norm, dy / norm


def _bar_lever_sign(bar: BarObject, arm: Arm) -> float:
    """Left arm takes the bar end nearer its home; right arm the other one."""
    ax, ay = bar.axis
    reach = BAR_GRIP_REACH
    hx, hy = HOME_POSES["left"][0], HOME_POSES["left"][1]
    minus = math.hypot(bar.center[0] - reach * ax - hx, bar.center[1] - reach * ay - hy)
    plus = math.hypot(bar.center[0] + reach * ax - hx, bar.center[1] + reach * ay - hy)
    left_sign = -1.0 if minus <= plus else 1.0
    return left_sign if arm == "left" else -left_sign


def solve_arguments(
    world: WorldState,
    arm: Arm,
    skill: str,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> tuple[float, ...]:
    obj = world.obj
    if skill in ("no-op", "twist"):
        return ()
    if skill == "lift":
        return (LIFT_DISTANCE,)

    if isinstance(obj, BarObject):
        if skill == "top-grasp":
            sign = _bar_lever_sign(obj, arm)
            reach = sign * BAR_GRIP_REACH
            ax, ay = obj.axis
            return (reach * ax, reach * ay, wrap_angle(obj.yaw + math.pi / 2))
    elif isinstance(obj, BallObject):
        if skill == "top-grasp":
            return (0.0, 0.0, 0.0)
        if skill == "go-to-pose":
            ux, uy = _toward_home(arm, obj.center)
            # Middle of the contact band, also inside the approach radius.
            distance = (
                tolerances.support_inner * obj.radius + obj.radius + tolerances.support_margin
            ) / 2
            facing = wrap_angle(math.atan2(-uy, -ux))
            return (distance * ux, distance * uy, 0.0, 0.0, facing)
    elif isinstance(obj, BottleObject):
        if skill == "top-grasp":
            return (0.0, 0.0, 0.0)
        if skill == "side-grasp":
            ux, uy = _toward_home(arm, obj.center)
            return (
                obj.base_radius * ux,
                obj.base_radius * uy,
                bearing_from_home(arm, obj.center),
            )
    elif isinstance(obj, CorkscrewObject):
        if skill == "side-grasp":
            ux, uy = _toward_home(arm, obj.center)
            radius = tolerances.corkscrew_base_radius
            return (radius * ux, radius * uy, bearing_from_home(arm, obj.center))
        if skill == "go-to-pose":
            direction = obj.handle_direction
            reach = obj.handle_length
            return (
                reach * math.cos(direction),
                reach * math.sin(direction),
                0.0,
                0.0,
                direction,
            )
        if skill == "rotate":
            return (0.0, 0.0, obj.handle_length)
    raise ContractViolation(f"no solver for {skill} in {world.spec.family}")


def solve_action(
    world: WorldState,
    joint_skill: JointSkill,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> JointAction:
    return JointAction(
        joint_skill,
        solve_arguments(world, "left", joint_skill.left, tolerances),
        solve_arguments(world, "right", joint_skill.right, tolerances),
    )


def run_schema(
    spec: TaskSpec,
    schema: Sequence[JointSkill],
    seed: int,
    *,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    trace: Optional[EpisodeTrace] = None,
) -> tuple[float, WorldState]:
    """Execute a skill sequence with solver arguments; return (reward, final state)."""
    noop = spec.joint_skill("no-op", "no-op")
    padded = list(schema) + [noop] * (spec.horizon - len(schema))
    world = reset(spec, seed)
    reward = 0.0
    for joint in padded[: spec.horizon]:
        action = solve_action(world, joint, tolerances)
        after, reward, done = step(world, action, tolerances)
        if trace is not None:
            trace.record(world, action, after, reward)
        world = after
        if done:
            break
    return reward, world


def _steps_with(
    sequence: Sequence[JointSkill], arm: Arm, skill: str, before: int
) -> list[int]:
    return [t for t in range(before) if sequence[t].skill(arm) == skill]


def omits_required_elements(family: str, sequence: Sequence[JointSkill]) -> bool:
    """True when the sequence lacks a coarse element every solution needs.

    lateral-lifting: both arms top-grasp before a joint lift.
    picking: one arm top-grasps and the other performs two go-to-poses before a joint lift.
    opening: the twisting arm top-grasped earlier and the other arm side-grasps no later.
    rotating: the rotating arm did two go-to-poses earlier and the other arm side-grasps no later.
    """
    for k, joint in enumerate(sequence):
        if family == "lateral-lifting":
            if joint.left == joint.right == "lift" and all(
                _steps_with(sequence, arm, "top-grasp", k) for arm in ARMS
            ):
                return False
        elif family == "picking":
            if joint.left == joint.right == "lift":
                for arm in ARMS:
                    other: Arm = "right" if arm == "left" else "left"
                    if (
                        _steps_with(sequence, arm, "top-grasp", k)
                        and len(_steps_with(sequence, other, "go-to-pose", k)) >= 2
                    ):
                        return False
        elif family == "opening":
            for arm in ARMS:
                other = "right" if arm == "left" else "left"
                if (
                    joint.skill(arm) == "twist"
                    and _steps_with(sequence, arm, "top-grasp", k)
                    and _steps_with(sequence, other, "side-grasp", k + 1)
                ):
                    return False
        elif family == "rotating":
            for arm in ARMS:
                other = "right" if arm == "left" else "left"
                if (
                    joint.skill(arm) == "rotate"
                    and len(_steps_with(sequence, arm, "go-to-pose", k)) >= 2
                    and _steps_with(sequence, other, "side-grasp", k + 1)
                ):
                    return False
        else:
            raise ContractViolation(f"unknown task family {family!r}")
    return True
