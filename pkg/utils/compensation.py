"""Constant-offset backlash compensation.

The commanded bending angle is the desired one shifted by +c while the desired
angle rises and by -c while it falls. A direction flip needs the input to move
more than the deadband away from the extremum reached in the held direction,
and the offset is held while the input is at rest.
"""
import math
from dataclasses import dataclass
from enum import IntEnum

from utils.errors import ValidationError


class Direction(IntEnum):
    DECREASING = -1
    UNSET = 0
    INCREASING = 1


@dataclass(frozen=True)
class CompensatorSettings:
    offset_deg: float = 10.0
    direction_deadband_deg: float = 0.1
    enabled: bool = True

    def __post_init__(self):
        for name in ("offset_deg", "direction_deadband_deg"):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value >= 0):
                raise ValidationError(f"{name} must be finite and >= 0, got {value}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class CompensatorState:
    last_direction: tuple
    # Running extremum in the held direction (reference point while unset)
    anchor_deg: tuple
    last_input_deg: tuple

    @classmethod
    def initial(cls, n_axes=2):
        return cls(
            last_direction=(Direction.UNSET,) * n_axes,
            anchor_deg=(None,) * n_axes,
            last_input_deg=(None,) * n_axes,
        )

    @property
    def n_axes(self):
        return len(self.last_direction)


def _track(direction, anchor, x, eps):
    if anchor is None:
        return Direction.UNSET, x
    if direction == Direction.UNSET:
        if x - anchor > eps:
            return Direction.INCREASING, x
        if anchor - x > eps:
            return Direction.DECREASING, x
        return direction, anchor
    if direction == Direction.INCREASING:
        if x >= anchor:
            return direction, x
        if anchor - x > eps:
            return Direction.DECREASING, x
        return direction, anchor
    if x <= anchor:
        return direction, x
    if x - anchor > eps:
        return Direction.INCREASING, x
    return direction, anchor


def compensate(state, settings, desired_angle_deg):
    """Return (new_state, commanded angle); accepts one angle or one per axis"""
    scalar = isinstance(desired_angle_deg, (int, float))
    desired = (desired_angle_deg,) if scalar else tuple(desired_angle_deg)
    if len(desired) != state.n_axes:
        raise ValidationError(f"Compensator tracks {state.n_axes} axes, got {len(desired)} angles")

    directions, anchors, commanded = [], [], []
    for direction, anchor, x in zip(state.last_direction, state.anchor_deg, desired):
        x = float(x)
        direction, anchor = _track(direction, anchor, x, settings.direction_deadband_deg)
        directions.append(direction)
        anchors.append(anchor)
        offset = settings.offset_deg * int(direction) if settings.enabled else 0.0
        commanded.append(x + offset)

    new_state = CompensatorState(tuple(directions), tuple(anchors), tuple(float(x) for x in desired))
    return new_state, commanded[0] if scalar else tuple(commanded)
