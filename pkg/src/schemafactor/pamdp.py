"""Parameterized-action vocabulary shared by every other module.

Skills, their continuous parameters, bimanual joint skills and the per-family
task specification. Everything here is immutable once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Mapping, Optional, Sequence

from .errors import ContractViolation

SkillName = Literal[
    "top-grasp", "side-grasp", "go-to-pose", "lift", "twist", "rotate", "no-op"
]
TaskFamily = Literal["lateral-lifting", "picking", "opening", "rotating"]
Arm = Literal["left", "right"]

ARMS: tuple[Arm, Arm] = ("left", "right")
TASK_FAMILIES: tuple[TaskFamily, ...] = (
    "lateral-lifting",
    "picking",
    "opening",
    "rotating",
)
HORIZON = 3

TWO_PI = 2.0 * math.pi
# Skill positions are offsets from the object centre. The box reaches the
# tip of the longest corkscrew handle and the rim of the largest ball.
POSITION_OFFSET = 0.15
AXIS_OFFSET = 0.1


@dataclass(frozen=True)
class ParamSpec:
    name: str
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not self.lower < self.upper:
            raise ValueError(f"ParamSpec {self.name}: lower must be < upper")


@dataclass(frozen=True)
class SkillSpec:
    name: SkillName
    params: tuple[ParamSpec, ...] = ()

    @property
    def param_count(self) -> int:
        return len(self.params)


def _position() -> tuple[ParamSpec, ParamSpec]:
    return (
        ParamSpec("x", -POSITION_OFFSET, POSITION_OFFSET),
        ParamSpec("y", -POSITION_OFFSET, POSITION_OFFSET),
    )


SKILLS: Mapping[str, SkillSpec] = {
    "top-grasp": SkillSpec(
        "top-grasp", (*_position(), ParamSpec("z_orientation", 0.0, TWO_PI))
    ),
    "side-grasp": SkillSpec(
        "side-grasp",
        (*_position(), ParamSpec("approach_angle", -math.pi / 2, math.pi / 2)),
    ),
    "go-to-pose": SkillSpec(
        "go-to-pose",
        (
            *_position(),
            ParamSpec("roll", 0.0, TWO_PI),
            ParamSpec("pitch", 0.0, TWO_PI),
            ParamSpec("yaw", 0.0, TWO_PI),
        ),
    ),
    "lift": SkillSpec("lift", (ParamSpec("distance", 0.0, 0.5),)),
    "twist": SkillSpec("twist"),
    "rotate": SkillSpec(
        "rotate",
        (
            ParamSpec("axis_x", -AXIS_OFFSET, AXIS_OFFSET),
            ParamSpec("axis_y", -AXIS_OFFSET, AXIS_OFFSET),
            ParamSpec("radius", 0.0, 0.2),
        ),
    ),
    "no-op": SkillSpec("no-op"),
}

ALLOWED_SKILLS: Mapping[str, tuple[str, ...]] = {
    "lateral-lifting": ("top-grasp", "lift", "no-op"),
    "picking": ("top-grasp", "go-to-pose", "lift", "no-op"),
    "opening": ("top-grasp", "side-grasp", "twist", "no-op"),
    "rotating": ("side-grasp", "go-to-pose", "rotate", "no-op"),
}

# Schemas discovered in simulation, one (left, right) pair per executed step.
REFERENCE_SCHEMAS: Mapping[str, tuple[tuple[str, str], ...]] = {
    "lateral-lifting": (("top-grasp", "top-grasp"), ("lift", "lift")),
    "picking": (
        ("top-grasp", "go-to-pose"),
        ("no-op", "go-to-pose"),
        ("lift", "lift"),
    ),
    "opening": (("top-grasp", "side-grasp"), ("twist", "no-op")),
    "rotating": (
        ("go-to-pose", "side-grasp"),
        ("go-to-pose", "no-op"),
        ("rotate", "no-op"),
    ),
}


@dataclass(frozen=True)
class VariationRanges:
    """Closed sampling interval per varied quantity, in sampling order."""

    ranges: tuple[tuple[str, float, float], ...]

    def bounds(self, name: str) -> tuple[float, float]:
        for key, low, high in self.ranges:
            if key == name:
                return low, high
        raise KeyError(name)

    def names(self) -> tuple[str, ...]:
        return tuple(key for key, _, _ in self.ranges)


DEFAULT_VARIATION: Mapping[str, VariationRanges] = {
    "lateral-lifting": VariationRanges(
        (
            ("length", 0.4, 0.6),
            ("yaw", 0.0, math.pi),
            ("center_x", 0.3, 0.7),
            ("center_y", 0.3, 0.7),
            ("mass", 2.0, 6.0),
        )
    ),
    "picking": VariationRanges(
        (
            ("radius", 0.05, 0.15),
            ("center_x", 0.3, 0.7),
            ("center_y", 0.3, 0.7),
            ("friction", 0.05, 0.3),
        )
    ),
    "opening": VariationRanges(
        (
            ("base_radius", 0.04, 0.08),
            ("cap_radius", 0.02, 0.04),
            ("center_x", 0.3, 0.7),
            ("center_y", 0.3, 0.7),
        )
    ),
    "rotating": VariationRanges(
        (
            ("handle_length", 0.08, 0.15),
            ("handle_yaw", 0.0, TWO_PI),
            ("center_x", 0.3, 0.7),
            ("center_y", 0.3, 0.7),
        )
    ),
}


@dataclass(frozen=True)
class JointSkill:
    left: str
    right: str
    index: int

    @property
    def label(self) -> str:
        return f"{self.left}:{self.right}"

    def skill(self, arm: Arm) -> str:
        return self.left if arm == "left" else self.right


@dataclass(frozen=True)
class TaskSpec:
    family: TaskFamily
    horizon: int
    allowed: tuple[str, ...]
    joint_vocab: tuple[JointSkill, ...]
    per_arm_param_dim: int
    variation: VariationRanges = field(compare=False)

    @property
    def vocab_size(self) -> int:
        return len(self.joint_vocab)

    @property
    def fingerprint(self) -> tuple[str, ...]:
        return tuple(joint.label for joint in self.joint_vocab)

    def joint_skill(self, left: str, right: str) -> JointSkill:
        for joint in self.joint_vocab:
            if joint.left == left and joint.right == right:
                return joint
        raise ContractViolation(
            f"({left}, {right}) is not in the {self.family} vocabulary"
        )

    def reference_schema(self) -> tuple[JointSkill, ...]:
        """The discovered schema, padded with no-op pairs up to the horizon."""
        pairs = list(REFERENCE_SCHEMAS[self.family])
        pairs += [("no-op", "no-op")] * (self.horizon - len(pairs))
        return tuple(self.joint_skill(left, right) for left, right in pairs)


@lru_cache(maxsize=None)
def build_task_spec(family: str) -> TaskSpec:
    if family not in ALLOWED_SKILLS:
        raise ContractViolation(f"unknown task family {family!r}")
    allowed = ALLOWED_SKILLS[family]
    vocab = tuple(
        JointSkill(left, right, index)
        for index, (left, right) in enumerate(
            (left, right) for left in allowed for right in allowed
        )
    )
    return TaskSpec(
        family=family,  # type: ignore[arg-type]
        horizon=HORIZON,
        allowed=allowed,
        joint_vocab=vocab,
        per_arm_param_dim=sum(SKILLS[name].param_count for name in allowed),
        variation=DEFAULT_VARIATION[family],
    )


def denormalize(raw: float, spec: ParamSpec) -> float:
    """Map a network output in [-1, 1] onto the parameter's bounds (clamped)."""
    raw = min(max(float(raw), -1.0), 1.0)
    return spec.lower + (raw + 1.0) / 2.0 * (spec.upper - spec.lower)


def normalize(value: float, spec: ParamSpec) -> float:
    return 2.0 * (float(value) - spec.lower) / (spec.upper - spec.lower) - 1.0


def param_slices(spec: TaskSpec) -> dict[tuple[Arm, str], range]:
    """Per-arm index ranges of each allowed skill inside the argument vector."""
    slices: dict[tuple[Arm, str], range] = {}
    for arm in ARMS:
        offset = 0
        for name in spec.allowed:
            count = SKILLS[name].param_count
            slices[(arm, name)] = range(offset, offset + count)
            offset += count
    return slices


@dataclass(frozen=True)
class JointAction:
    """One skill per arm with its physical arguments.

    ``left_raw``/``right_raw`` keep the pre-clamp normalized samples when the
    action came from a stochastic policy, so densities can be re-evaluated.
    """

    joint_skill: JointSkill
    left_args: tuple[float, ...] = ()
    right_args: tuple[float, ...] = ()
    left_raw: Optional[tuple[float, ...]] = None
    right_raw: Optional[tuple[float, ...]] = None

    def args(self, arm: Arm) -> tuple[float, ...]:
        return self.left_args if arm == "left" else self.right_args

    def raw(self, arm: Arm) -> tuple[float, ...]:
        """Normalized arguments, recovered from physical values if needed."""
        stored = self.left_raw if arm == "left" else self.right_raw
        if stored is not None:
            return stored
        params = SKILLS[self.joint_skill.skill(arm)].params
        return tuple(normalize(v, p) for v, p in zip(self.args(arm), params))

    def validate(self, spec: TaskSpec) -> None:
        joint = self.joint_skill
        if not 0 <= joint.index < spec.vocab_size or (
            spec.joint_vocab[joint.index] != joint
        ):
            raise ContractViolation(
                f"joint skill {joint.label} is not in the {spec.family} vocabulary"
            )
        for arm in ARMS:
            params = SKILLS[joint.skill(arm)].params
            values = self.args(arm)
            if len(values) != len(params):
                raise ContractViolation(
                    f"{arm} {joint.skill(arm)} expects {len(params)} arguments, "
                    f"got {len(values)}"
                )
            for value, param in zip(values, params):
                if not param.lower - 1e-9 <= value <= param.upper + 1e-9:
                    raise ContractViolation(
                        f"{arm} {param.name}={value} outside "
                        f"[{param.lower}, {param.upper}]"
                    )


def make_action(
    spec: TaskSpec,
    left: str,
    right: str,
    left_args: Sequence[float] = (),
    right_args: Sequence[float] = (),
) -> JointAction:
    return JointAction(
        spec.joint_skill(left, right), tuple(left_args), tuple(right_args)
    )
