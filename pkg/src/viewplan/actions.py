"""The 12 discrete camera actions and their deterministic pose transitions.

Translations move the camera center along its own axes by s_t meters; the
"up" pair follows the screen axis (-Y in the OpenCV frame), not world up.

Rotations step one Euler component by s_r degrees with mod-360 wraparound:
look_up/look_down drive rx (an exact rotation about the camera's local X,
since rx is the innermost factor), rotate_cw/rotate_ccw drive ry, and
turn_left/turn_right drive rz (an azimuth turn about world Z, which equals
a local -Y yaw for upright cameras). Component arithmetic is what makes
action sequences exactly invertible: the angle grid is closed under every
action, whereas composing raw local-axis matrices leaves the grid. With
``snap=True`` all three angles are additionally snapped to the s_r grid
after each rotation, absorbing off-grid starting orientations.

Action names below are a wire format: they appear verbatim in prompts,
datasets, and protocol messages.
"""

from __future__ import annotations

from dataclasses import dataclass

from .se3 import (
    EulerAngles,
    Pose,
    StepSizes,
    euler_compose,
    euler_decompose,
    snap_angle,
)

TRANSLATION = "translation"
ROTATION = "rotation"

# (camera axis index, sign) for translations; axis 0=+X right, 1=+Y down, 2=+Z forward
_TRANSLATIONS = {
    "move_forward": (2, 1.0),
    "move_backward": (2, -1.0),
    "move_left": (0, -1.0),
    "move_right": (0, 1.0),
    "move_up": (1, -1.0),
    "move_down": (1, 1.0),
}

# (euler component index into [rx, ry, rz], sign) for rotations; signs follow
# the action table: turn_right = +yaw about local Y (screen-down) = -rz,
# look_up = +pitch about local X = +rx, rotate_cw = +roll about local Z = +ry.
_ROTATIONS = {
    "turn_left": (2, 1.0),
    "turn_right": (2, -1.0),
    "look_up": (0, 1.0),
    "look_down": (0, -1.0),
    "rotate_ccw": (1, -1.0),
    "rotate_cw": (1, 1.0),
}

_INVERSE = {
    "move_forward": "move_backward",
    "move_backward": "move_forward",
    "move_left": "move_right",
    "move_right": "move_left",
    "move_up": "move_down",
    "move_down": "move_up",
    "turn_left": "turn_right",
    "turn_right": "turn_left",
    "look_up": "look_down",
    "look_down": "look_up",
    "rotate_ccw": "rotate_cw",
    "rotate_cw": "rotate_ccw",
}

ACTION_NAMES = tuple(list(_TRANSLATIONS) + list(_ROTATIONS))
TRANSLATION_ACTIONS = tuple(_TRANSLATIONS)
ROTATION_ACTIONS = tuple(_ROTATIONS)


@dataclass(frozen=True)
class ActionInfo:
    name: str
    category: str
    inverse: str


def action_info(name: str) -> ActionInfo:
    if name in _TRANSLATIONS:
        return ActionInfo(name, TRANSLATION, _INVERSE[name])
    if name in _ROTATIONS:
        return ActionInfo(name, ROTATION, _INVERSE[name])
    raise ValueError(f"unknown action: {name!r}")


def action_category(name: str) -> str:
    return action_info(name).category


def inverse_action(name: str) -> str:
    return action_info(name).inverse


def apply_action(p: Pose, name: str, steps: StepSizes = StepSizes(), snap: bool = True) -> Pose:
    """Apply one action to a pose; pure, deterministic, no collision model."""
    if name in _TRANSLATIONS:
        axis, sign = _TRANSLATIONS[name]
        return Pose(
            p.position + sign * steps.s_t * p.rotation[:, axis],
            p.rotation,
            euler_hint=p.euler_hint,
        )
    if name in _ROTATIONS:
        idx, sign = _ROTATIONS[name]
        angles = list(euler_decompose(p).as_tuple())
        angles[idx] += sign * steps.s_r
        if snap:
            angles = [snap_angle(a, steps.s_r) for a in angles]
        return euler_compose(EulerAngles(*angles), p.position)
    raise ValueError(f"unknown action: {name!r}")


def apply_sequence(
    p: Pose, seq, steps: StepSizes = StepSizes(), snap: bool = True
) -> tuple[Pose, list[Pose]]:
    """Left-fold apply_action over ``seq``; returns (final pose, pose after each action)."""
    intermediates = []
    cur = p
    for name in seq:
        cur = apply_action(cur, name, steps, snap)
        intermediates.append(cur)
    return cur, intermediates


def invert_sequence(seq) -> list[str]:
    """Reverse the sequence and replace every action with its inverse."""
    return [_INVERSE[name] for name in reversed(list(seq))]
