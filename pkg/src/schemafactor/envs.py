"""Analytic desk-scale simulators for the four bimanual task families.

Physics is replaced by geometric success predicates. Both arms' skills in one
timestep are applied simultaneously: positioning skills (grasps, go-to-pose)
first, then actuation skills (lift, twist, rotate) against the positioned
state. Every function here is pure; ``WorldState`` is immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Mapping, Optional, Union

import numpy as np

from .errors import ContractViolation
from .pamdp import ARMS, TWO_PI, Arm, JointAction, TaskSpec, build_task_spec

Encoding = Literal["low-dim", "raster"]
ENCODINGS: tuple[Encoding, ...] = ("low-dim", "raster")

LOW_DIM_SIZE = 19
RASTER_GRID = 16
RASTER_CHANNELS = 4
RASTER_SIZE = RASTER_CHANNELS * RASTER_GRID * RASTER_GRID

HOME_POSES: Mapping[str, tuple[float, float, float, float]] = {
    "left": (0.1, 0.5, 0.3, 0.0),
    "right": (0.9, 0.5, 0.3, math.pi),
}
GRASP_HEIGHT = 0.05
POSE_HEIGHT = 0.1

BAR_WIDTH = 0.05

POSITIONING_SKILLS = frozenset({"top-grasp", "side-grasp", "go-to-pose"})


@dataclass(frozen=True)
class Tolerances:
    """Success-predicate calibration. Only ``lift_height`` comes from the task
    definition (25 cm); the rest are calibration knobs."""

    grasp_yaw: float = math.radians(45.0)
    bar_grip: float = 0.06  # max grasp distance from the bar axis
    min_lever: float = 0.01
    lever_balance: float = 0.1  # fraction of bar length
    lift_height: float = 0.25
    lift_balance: float = 0.08
    single_arm_payload: float = 1.5  # kg, below the lightest bar
    grip_friction_scale: float = 3.0
    support_inner: float = 0.5  # fraction of ball radius
    support_margin: float = 0.05
    approach_factor: float = 2.0
    pointing: float = math.radians(45.0)
    base_grip_margin: float = 0.02
    side_approach: float = math.pi / 3
    engage_distance: float = 0.06
    handle_approach: float = 0.15
    handle_alignment: float = math.radians(45.0)  # undirected
    axis_tolerance: float = 0.05
    radius_tolerance: float = 0.05
    corkscrew_base_radius: float = 0.05


DEFAULT_TOLERANCES = Tolerances()


# ----------------------------------------------------------------------
# Object and arm records


@dataclass(frozen=True)
class BarObject:
    center: tuple[float, float]
    yaw: float
    length: float
    mass: float

    @property
    def axis(self) -> tuple[float, float]:
        return (math.cos(self.yaw), math.sin(self.yaw))


@dataclass(frozen=True)
class BallObject:
    center: tuple[float, float]
    radius: float
    friction: float


@dataclass(frozen=True)
class BottleObject:
    center: tuple[float, float]
    base_radius: float
    cap_radius: float
    yaw: float = 0.0
    cap_angle: float = 0.0


@dataclass(frozen=True)
class CorkscrewObject:
    center: tuple[float, float]
    handle_length: float
    handle_yaw: float
    base_yaw: float = 0.0
    handle_angle: float = 0.0

    @property
    def handle_direction(self) -> float:
        return wrap_angle(self.handle_yaw + self.handle_angle)

    @property
    def tip(self) -> tuple[float, float]:
        direction = self.handle_direction
        return (
            self.center[0] + self.handle_length * math.cos(direction),
            self.center[1] + self.handle_length * math.sin(direction),
        )


ObjectRecord = Union[BarObject, BallObject, BottleObject, CorkscrewObject]


@dataclass(frozen=True)
class GraspRecord:
    kind: Literal["none", "top", "side"] = "none"
    valid: bool = False
    point: tuple[float, float] = (0.0, 0.0)
    lever: float = 0.0


NO_GRASP = GraspRecord()


@dataclass(frozen=True)
class ArmState:
    position: tuple[float, float, float]
    yaw: float
    holding: bool = False
    grasp: GraspRecord = NO_GRASP
    approached: bool = False
    engaged: bool = False
    lift: float = 0.0

    @property
    def xy(self) -> tuple[float, float]:
        return (self.position[0], self.position[1])


def home_arm(arm: Arm) -> ArmState:
    x, y, z, yaw = HOME_POSES[arm]
    return ArmState(position=(x, y, z), yaw=yaw)


@dataclass(frozen=True)
class WorldState:
    spec: TaskSpec
    obj: ObjectRecord
    left: ArmState = field(default_factory=lambda: home_arm("left"))
    right: ArmState = field(default_factory=lambda: home_arm("right"))
    timestep: int = 0
    base_held: bool = False
    support_formed: bool = False
    base_displaced: bool = False
    success: bool = False

    def arm(self, arm: Arm) -> ArmState:
        return self.left if arm == "left" else self.right

    def with_arm(self, arm: Arm, state: ArmState) -> WorldState:
        if arm == "left":
            return replace(self, left=state)
        return replace(self, right=state)


@dataclass(frozen=True)
class Observation:
    encoding: Encoding
    data: np.ndarray


# ----------------------------------------------------------------------
# Geometry helpers


def wrap_angle(angle: float) -> float:
    """Wrap to [0, 2*pi)."""
    return angle % TWO_PI


def angle_between(a: float, b: float) -> float:
    """Smallest absolute difference between two angles, in [0, pi]."""
    diff = (a - b) % TWO_PI
    return min(diff, TWO_PI - diff)


def axis_misalignment(a: float, b: float) -> float:
    """Angle between two undirected axes, in [0, pi/2]."""
    diff = (a - b) % math.pi
    return min(diff, math.pi - diff)


def _distance(p: tuple[float, float], q: tuple[float, float]) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def _clip_unit(value: float) -> float:
    return min(max(value, 0.0), 1.0)


def target_point(obj: ObjectRecord, dx: float, dy: float) -> tuple[float, float]:
    return (_clip_unit(obj.center[0] + dx), _clip_unit(obj.center[1] + dy))


def bearing_from_home(arm: Arm, target: tuple[float, float]) -> float:
    """Direction of ``target`` seen from the arm's home, in the arm's frame, in (-pi, pi]."""
    hx, hy, _, facing = HOME_POSES[arm]
    angle = math.atan2(target[1] - hy, target[0] - hx) - facing
    return math.atan2(math.sin(angle), math.cos(angle))


def other_arm(arm: Arm) -> Arm:
    return "right" if arm == "left" else "left"


# ----------------------------------------------------------------------
# Success predicates


def _holds(arm: ArmState, kind: str) -> bool:
    return arm.holding and arm.grasp.valid and arm.grasp.kind == kind


def success_bar(state: WorldState, tolerances: Tolerances = DEFAULT_TOLERANCES) -> bool:
    bar = state.obj
    assert isinstance(bar, BarObject)
    left, right = state.left, state.right
    if not (_holds(left, "top") and _holds(right, "top")):
        return False
    lever_l, lever_r = left.grasp.lever, right.grasp.lever
    if lever_l * lever_r >= 0.0:
        return False
    if min(abs(lever_l), abs(lever_r)) < tolerances.min_lever:
        return False
    if abs(abs(lever_l) - abs(lever_r)) > tolerances.lever_balance * bar.length:
        return False
    if min(left.lift, right.lift) < tolerances.lift_height:
        return False
    return abs(left.lift - right.lift) <= tolerances.lift_balance


def success_ball(
    state: WorldState, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> bool:
    if min(state.left.lift, state.right.lift) < tolerances.lift_height:
        return False
    for grasping in ARMS:
        supporting = state.arm(other_arm(grasping))
        if _holds(state.arm(grasping), "top") and supporting.engaged:
            return True
    return False


def success_bottle(
    state: WorldState, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> bool:
    bottle = state.obj
    assert isinstance(bottle, BottleObject)
    return bottle.cap_angle >= math.pi / 2 - 1e-9 and not state.base_displaced


def success_corkscrew(
    state: WorldState, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> bool:
    corkscrew = state.obj
    assert isinstance(corkscrew, CorkscrewObject)
    return corkscrew.handle_angle >= math.pi - 1e-9 and not state.base_displaced


# ----------------------------------------------------------------------
# Per-family models


class _ObjectModel:
    """Family-specific sampling, skill effects, success and rendering."""

    def sample(self, values: Mapping[str, float]) -> ObjectRecord:
        raise NotImplementedError

    def top_grasp(
        self, world: WorldState, arm: Arm, point: tuple[float, float], yaw: float,
        tol: Tolerances,
    ) -> GraspRecord:
        return GraspRecord("top", False, point, 0.0)

    def side_grasp(
        self, world: WorldState, arm: Arm, point: tuple[float, float], angle: float,
        tol: Tolerances,
    ) -> GraspRecord:
        return GraspRecord("side", False, point, 0.0)

    def go_to_pose(
        self, world: WorldState, arm: ArmState, point: tuple[float, float], yaw: float,
        tol: Tolerances,
    ) -> tuple[bool, bool]:
        """Return the (approached, engaged) flags after the move."""
        return False, False

    def actuate(
        self, world: WorldState, action: JointAction, tol: Tolerances
    ) -> WorldState:
        return world

    def success(self, world: WorldState, tol: Tolerances) -> bool:
        raise NotImplementedError

    def geometry(self, obj: ObjectRecord) -> tuple[float, ...]:
        raise NotImplementedError

    def object_yaw(self, obj: ObjectRecord) -> float:
        return 0.0

    def rasterize(
        self, obj: ObjectRecord, xs: np.ndarray, ys: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


def _apply_lifts(world: WorldState, action: JointAction) -> tuple[WorldState, bool]:
    lifted = False
    for arm in ARMS:
        if action.joint_skill.skill(arm) != "lift":
            continue
        distance = action.args(arm)[0]
        state = world.arm(arm)
        x, y, z = state.position
        world = world.with_arm(
            arm, replace(state, lift=distance, position=(x, y, z + distance))
        )
        lifted = True
    return world, lifted


def _drop(world: WorldState, action: JointAction) -> WorldState:
    """A failed lift lets the object slip out of every lifting gripper."""
    for arm in ARMS:
        if action.joint_skill.skill(arm) == "lift":
            world = world.with_arm(
                arm, replace(world.arm(arm), holding=False, grasp=NO_GRASP)
            )
    return world


class _BarModel(_ObjectModel):
    def sample(self, values: Mapping[str, float]) -> ObjectRecord:
        return BarObject(
            center=(values["center_x"], values["center_y"]),
            yaw=values["yaw"],
            length=values["length"],
            mass=values["mass"],
        )

    def top_grasp(self, world, arm, point, yaw, tol):
        bar = world.obj
        assert isinstance(bar, BarObject)
        ax, ay = bar.axis
        rx, ry = point[0] - bar.center[0], point[1] - bar.center[1]
        along = rx * ax + ry * ay
        across = -rx * ay + ry * ax
        inside = abs(along) <= bar.length / 2 and abs(across) <= tol.bar_grip
        aligned = axis_misalignment(yaw, bar.yaw + math.pi / 2) <= tol.grasp_yaw
        return GraspRecord("top", inside and aligned, point, along)

    def actuate(self, world, action, tol):
        world, lifted = _apply_lifts(world, action)
        if not lifted or success_bar(world, tol):
            return world
        bar = world.obj
        assert isinstance(bar, BarObject)
        carriers = [
            arm
            for arm in ARMS
            if action.joint_skill.skill(arm) == "lift" and _holds(world.arm(arm), "top")
        ]
        # A lone gripper keeps the bar only if it can carry the mass.
        if len(carriers) == 1 and bar.mass <= tol.single_arm_payload:
            return world
        return _drop(world, action)

    def success(self, world, tol):
        return success_bar(world, tol)

    def geometry(self, obj):
        assert isinstance(obj, BarObject)
        return (obj.length / 0.6, obj.mass / 6.0, 0.0)

    def object_yaw(self, obj):
        assert isinstance(obj, BarObject)
        return obj.yaw

    def rasterize(self, obj, xs, ys):
        assert isinstance(obj, BarObject)
        cell = 1.0 / RASTER_GRID
        ax, ay = obj.axis
        rx, ry = xs - obj.center[0], ys - obj.center[1]
        along = rx * ax + ry * ay
        across = -rx * ay + ry * ax
        body = (np.abs(along) <= obj.length / 2 + cell / 2) & (
            np.abs(across) <= BAR_WIDTH / 2 + cell / 2
        )
        feature = np.zeros_like(body)
        for s in np.linspace(-obj.length / 2, obj.length / 2, 2 * RASTER_GRID + 1):
            _mark(feature, (obj.center[0] + s * ax, obj.center[1] + s * ay))
        return body, feature


class _BallModel(_ObjectModel):
    def sample(self, values):
        return BallObject(
            center=(values["center_x"], values["center_y"]),
            radius=values["radius"],
            friction=values["friction"],
        )

    def top_grasp(self, world, arm, point, yaw, tol):
        ball = world.obj
        assert isinstance(ball, BallObject)
        offset = _distance(point, ball.center)
        # Slippier balls need a more central grasp.
        valid = offset <= tol.grip_friction_scale * ball.friction * ball.radius
        return GraspRecord("top", valid, point, offset)

    def go_to_pose(self, world, arm, point, yaw, tol):
        ball = world.obj
        assert isinstance(ball, BallObject)
        distance = _distance(point, ball.center)
        facing = math.atan2(ball.center[1] - point[1], ball.center[0] - point[0])
        pointing = angle_between(yaw, facing) <= tol.pointing
        in_contact = (
            tol.support_inner * ball.radius
            <= distance
            <= ball.radius + tol.support_margin
        )
        if arm.approached and in_contact and pointing:
            return True, True
        if distance <= tol.approach_factor * ball.radius:
            return True, False
        return False, False

    def actuate(self, world, action, tol):
        world, lifted = _apply_lifts(world, action)
        if not lifted or success_ball(world, tol):
            return world
        return _drop(world, action)

    def success(self, world, tol):
        return success_ball(world, tol)

    def geometry(self, obj):
        assert isinstance(obj, BallObject)
        return (obj.radius / 0.15, obj.friction / 0.3, 0.0)

    def rasterize(self, obj, xs, ys):
        assert isinstance(obj, BallObject)
        body = np.hypot(xs - obj.center[0], ys - obj.center[1]) <= obj.radius
        _mark(body, obj.center)
        feature = np.zeros_like(body)
        _mark(feature, obj.center)
        return body, feature


def _side_grasp_on_base(
    arm: Arm,
    point: tuple[float, float],
    angle: float,
    center: tuple[float, float],
    base_radius: float,
    tol: Tolerances,
) -> GraspRecord:
    offset = _distance(point, center)
    close = offset <= base_radius + tol.base_grip_margin
    square = abs(angle - bearing_from_home(arm, center)) <= tol.side_approach
    return GraspRecord("side", close and square, point, offset)


class _BottleModel(_ObjectModel):
    def sample(self, values):
        return BottleObject(
            center=(values["center_x"], values["center_y"]),
            base_radius=values["base_radius"],
            cap_radius=values["cap_radius"],
        )

    def top_grasp(self, world, arm, point, yaw, tol):
        bottle = world.obj
        assert isinstance(bottle, BottleObject)
        offset = _distance(point, bottle.center)
        return GraspRecord("top", offset <= bottle.cap_radius, point, offset)

    def side_grasp(self, world, arm, point, angle, tol):
        bottle = world.obj
        assert isinstance(bottle, BottleObject)
        return _side_grasp_on_base(
            arm, point, angle, bottle.center, bottle.base_radius, tol
        )

    def actuate(self, world, action, tol):
        for arm in ARMS:
            if action.joint_skill.skill(arm) != "twist":
                continue
            if not _holds(world.arm(arm), "top"):
                continue
            bottle = world.obj
            assert isinstance(bottle, BottleObject)
            if _holds(world.arm(other_arm(arm)), "side"):
                world = replace(
                    world,
                    obj=replace(bottle, cap_angle=bottle.cap_angle + math.pi / 2),
                )
            else:
                # Unheld, the whole bottle turns with the cap.
                world = replace(
                    world,
                    obj=replace(bottle, yaw=wrap_angle(bottle.yaw + math.pi / 2)),
                    base_displaced=True,
                )
        return world

    def success(self, world, tol):
        return success_bottle(world, tol)

    def geometry(self, obj):
        assert isinstance(obj, BottleObject)
        return (obj.base_radius / 0.08, obj.cap_radius / 0.04, 0.0)

    def object_yaw(self, obj):
        assert isinstance(obj, BottleObject)
        return obj.yaw

    def rasterize(self, obj, xs, ys):
        assert isinstance(obj, BottleObject)
        distance = np.hypot(xs - obj.center[0], ys - obj.center[1])
        body = distance <= obj.base_radius
        _mark(body, obj.center)
        feature = distance <= obj.cap_radius
        _mark(feature, obj.center)
        return body, feature


class _CorkscrewModel(_ObjectModel):
    def sample(self, values):
        return CorkscrewObject(
            center=(values["center_x"], values["center_y"]),
            handle_length=values["handle_length"],
            handle_yaw=values["handle_yaw"],
        )

    def side_grasp(self, world, arm, point, angle, tol):
        corkscrew = world.obj
        assert isinstance(corkscrew, CorkscrewObject)
        return _side_grasp_on_base(
            arm, point, angle, corkscrew.center, tol.corkscrew_base_radius, tol
        )

    def go_to_pose(self, world, arm, point, yaw, tol):
        corkscrew = world.obj
        assert isinstance(corkscrew, CorkscrewObject)
        distance = _distance(point, corkscrew.tip)
        aligned = (
            axis_misalignment(yaw, corkscrew.handle_direction) <= tol.handle_alignment
        )
        if arm.approached and distance <= tol.engage_distance and aligned:
            return True, True
        if distance <= tol.handle_approach:
            return True, False
        return False, False

    def actuate(self, world, action, tol):
        for arm in ARMS:
            if action.joint_skill.skill(arm) != "rotate":
                continue
            state = world.arm(arm)
            if not state.engaged:
                continue
            corkscrew = world.obj
            assert isinstance(corkscrew, CorkscrewObject)
            axis_x, axis_y, radius = action.args(arm)
            on_axis = math.hypot(axis_x, axis_y) <= tol.axis_tolerance
            on_radius = abs(radius - corkscrew.handle_length) <= tol.radius_tolerance
            if not (on_axis and on_radius):
                world = world.with_arm(arm, replace(state, engaged=False))
                continue
            if _holds(world.arm(other_arm(arm)), "side"):
                world = replace(
                    world,
                    obj=replace(
                        corkscrew, handle_angle=corkscrew.handle_angle + math.pi
                    ),
                )
            else:
                world = replace(
                    world,
                    obj=replace(
                        corkscrew,
                        base_yaw=wrap_angle(corkscrew.base_yaw + math.pi),
                        handle_yaw=wrap_angle(corkscrew.handle_yaw + math.pi),
                    ),
                    base_displaced=True,
                )
        return world

    def success(self, world, tol):
        return success_corkscrew(world, tol)

    def geometry(self, obj):
        assert isinstance(obj, CorkscrewObject)
        return (obj.handle_length / 0.15, 0.0, 0.0)

    def object_yaw(self, obj):
        assert isinstance(obj, CorkscrewObject)
        return obj.handle_direction

    def rasterize(self, obj, xs, ys):
        assert isinstance(obj, CorkscrewObject)
        body = (
            np.hypot(xs - obj.center[0], ys - obj.center[1])
            <= DEFAULT_TOLERANCES.corkscrew_base_radius
        )
        _mark(body, obj.center)
        tip = obj.tip
        for s in np.linspace(0.0, 1.0, RASTER_GRID + 1):
            _mark(
                body,
                (
                    obj.center[0] + s * (tip[0] - obj.center[0]),
                    obj.center[1] + s * (tip[1] - obj.center[1]),
                ),
            )
        feature = np.zeros_like(body)
        _mark(feature, tip)
        return body, feature


_MODELS: Mapping[str, _ObjectModel] = {
    "lateral-lifting": _BarModel(),
    "picking": _BallModel(),
    "opening": _BottleModel(),
    "rotating": _CorkscrewModel(),
}


# ----------------------------------------------------------------------
# Environment operations


def sample_object(spec: TaskSpec, seed: int) -> ObjectRecord:
    rng = np.random.default_rng(seed)
    values = {
        name: float(rng.uniform(low, high))
        for name, low, high in spec.variation.ranges
    }
    return _MODELS[spec.family].sample(values)


def reset(spec: TaskSpec, seed: int) -> WorldState:
    return WorldState(spec=spec, obj=sample_object(spec, seed))


def _position_arm(
    world: WorldState, arm: Arm, skill: str, args: tuple[float, ...], tol: Tolerances
) -> ArmState:
    model = _MODELS[world.spec.family]
    state = world.arm(arm)
    point = target_point(world.obj, args[0], args[1])
    if skill == "top-grasp":
        grasp = model.top_grasp(world, arm, point, args[2], tol)
        return replace(
            state,
            position=(point[0], point[1], GRASP_HEIGHT),
            yaw=wrap_angle(args[2]),
            holding=grasp.valid,
            grasp=grasp,
            approached=False,
            engaged=False,
        )
    if skill == "side-grasp":
        grasp = model.side_grasp(world, arm, point, args[2], tol)
        return replace(
            state,
            position=(point[0], point[1], GRASP_HEIGHT),
            yaw=wrap_angle(HOME_POSES[arm][3] + args[2]),
            holding=grasp.valid,
            grasp=grasp,
            approached=False,
            engaged=False,
        )
    # go-to-pose releases whatever the gripper held
    yaw = wrap_angle(args[4])
    approached, engaged = model.go_to_pose(world, state, point, yaw, tol)
    return replace(
        state,
        position=(point[0], point[1], POSE_HEIGHT),
        yaw=yaw,
        holding=False,
        grasp=NO_GRASP,
        approached=approached,
        engaged=engaged,
    )


def step(
    state: WorldState,
    action: JointAction,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> tuple[WorldState, float, bool]:
    spec = state.spec
    if state.timestep >= spec.horizon or state.success:
        raise ContractViolation(
            f"episode already finished at t={state.timestep} (T={spec.horizon})"
        )
    action.validate(spec)
    model = _MODELS[spec.family]

    world = state
    for arm in ARMS:
        world = world.with_arm(arm, replace(world.arm(arm), lift=0.0))
    for arm in ARMS:
        skill = action.joint_skill.skill(arm)
        if skill in POSITIONING_SKILLS:
            world = world.with_arm(
                arm, _position_arm(world, arm, skill, action.args(arm), tolerances)
            )
    world = replace(
        world,
        base_held=any(_holds(world.arm(arm), "side") for arm in ARMS),
        support_formed=any(world.arm(arm).engaged for arm in ARMS),
    )
    world = model.actuate(world, action, tolerances)

    success = model.success(world, tolerances)
    world = replace(world, timestep=world.timestep + 1, success=success)
    done = success or world.timestep >= spec.horizon
    return world, (1.0 if success else 0.0), done


# ----------------------------------------------------------------------
# Observations

_CELL_CENTERS = (np.arange(RASTER_GRID) + 0.5) / RASTER_GRID
_GRID_X, _GRID_Y = np.meshgrid(_CELL_CENTERS, _CELL_CENTERS)


def _cell(point: tuple[float, float]) -> tuple[int, int]:
    col = min(max(int(point[0] * RASTER_GRID), 0), RASTER_GRID - 1)
    row = min(max(int(point[1] * RASTER_GRID), 0), RASTER_GRID - 1)
    return row, col


def _mark(grid: np.ndarray, point: tuple[float, float]) -> None:
    if 0.0 <= point[0] <= 1.0 and 0.0 <= point[1] <= 1.0:
        grid[_cell(point)] = True


def _scaled_yaw(yaw: float) -> float:
    return wrap_angle(yaw) / math.pi - 1.0


def _arm_features(arm: ArmState) -> list[float]:
    x, y, z = arm.position
    return [2 * x - 1, 2 * y - 1, 2 * z - 1, _scaled_yaw(arm.yaw)]


def _in_arm_frame(arm: ArmState, point: tuple[float, float]) -> list[float]:
    dx, dy = point[0] - arm.position[0], point[1] - arm.position[1]
    cos, sin = math.cos(arm.yaw), math.sin(arm.yaw)
    return [cos * dx + sin * dy, -sin * dx + cos * dy]


def observe(state: WorldState, encoding: Encoding = "low-dim") -> Observation:
    model = _MODELS[state.spec.family]
    obj = state.obj
    if encoding == "low-dim":
        center = obj.center
        data = [
            *_arm_features(state.left),
            *_arm_features(state.right),
            2.0 * state.timestep / state.spec.horizon - 1.0,
            *model.geometry(obj),
            2 * center[0] - 1,
            2 * center[1] - 1,
            _scaled_yaw(model.object_yaw(obj)),
            *_in_arm_frame(state.left, center),
            *_in_arm_frame(state.right, center),
        ]
        return Observation("low-dim", np.asarray(data, dtype=np.float64))
    if encoding == "raster":
        grid = np.zeros((RASTER_CHANNELS, RASTER_GRID, RASTER_GRID), dtype=bool)
        body, feature = model.rasterize(obj, _GRID_X, _GRID_Y)
        grid[0] = body
        grid[1] = feature
        grid[2][_cell(state.left.xy)] = True
        grid[3][_cell(state.right.xy)] = True
        return Observation("raster", grid.astype(np.float64).ravel())
    raise ContractViolation(f"unknown observation encoding {encoding!r}")


def observation_size(encoding: Encoding) -> int:
    if encoding == "low-dim":
        return LOW_DIM_SIZE
    if encoding == "raster":
        return RASTER_SIZE
    raise ContractViolation(f"unknown observation encoding {encoding!r}")


# ----------------------------------------------------------------------
# Environment handle and traces


class BimanualEnv:
    """Stateless handle bundling a task, an observation encoding and tolerances."""

    def __init__(
        self,
        spec: TaskSpec | str,
        *,
        encoding: Encoding = "low-dim",
        tolerances: Tolerances = DEFAULT_TOLERANCES,
    ) -> None:
        self.spec = build_task_spec(spec) if isinstance(spec, str) else spec
        if encoding not in ENCODINGS:
            raise ContractViolation(f"unknown observation encoding {encoding!r}")
        self.encoding: Encoding = encoding
        self.tolerances = tolerances

    @property
    def observation_size(self) -> int:
        return observation_size(self.encoding)

    def reset(self, seed: int) -> WorldState:
        return reset(self.spec, seed)

    def step(
        self, state: WorldState, action: JointAction
    ) -> tuple[WorldState, float, bool]:
        return step(state, action, self.tolerances)

    def observe(self, state: WorldState) -> Observation:
        return observe(state, self.encoding)


def _fmt_args(values: tuple[float, ...]) -> str:
    return "[" + ",".join(f"{v:.4f}" for v in values) + "]"


class EpisodeTrace:
    """Line-per-step debugging record of one episode."""

    def __init__(self, family: str, seed: Optional[int] = None) -> None:
        self.family = family
        self.seed = seed
        self.lines: list[str] = []

    def record(
        self,
        before: WorldState,
        action: JointAction,
        after: WorldState,
        reward: float,
    ) -> None:
        joint = action.joint_skill
        self.lines.append(
            f"t={before.timestep} "
            f"left={joint.left}{_fmt_args(action.left_args)} "
            f"right={joint.right}{_fmt_args(action.right_args)} "
            f"base_held={int(after.base_held)} "
            f"support_formed={int(after.support_formed)} "
            f"base_displaced={int(after.base_displaced)} "
            f"grasp_valid={int(after.left.grasp.valid)},{int(after.right.grasp.valid)} "
            f"reward={int(reward)}"
        )

    def dump(self, path: str | Path) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        header = f"# family={self.family} seed={self.seed}\n"
        target.write_text(header + "".join(f"{line}\n" for line in self.lines))
        return target
