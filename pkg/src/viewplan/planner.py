"""Greedy rotation-first action planning between two poses.

Axes are processed in the fixed order yaw, pitch, roll, forward, right, up.
For each axis every signed step count k in [-k_max, k_max] is evaluated by
actually executing k copies of the axis action (snapping included, exactly
as the environment would) and scoring pose_error plus a 0.01*|k| step
regularizer. The best k is committed only if it strictly reduces the
pre-axis error. Single pass, deterministic; ties prefer fewer steps, then
the positive direction.

Targets offset along a single rotation axis plus any translations are
recovered exactly (the geodesic residual then decouples per axis). Mixed
rotation offsets may be recovered only approximately: the geodesic error
couples the axes, so the per-axis argmin can land one step off. Dataset
construction re-plans against the committed (executed) target until the
plan is its own fixed point, which restores exactness for emitted pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

from .actions import apply_action
from .se3 import Pose, StepSizes, view_distance

# per-axis (positive action, negative action), in planning order
AXIS_ORDER = (
    ("yaw", "turn_right", "turn_left"),
    ("pitch", "look_up", "look_down"),
    ("roll", "rotate_cw", "rotate_ccw"),
    ("forward", "move_forward", "move_backward"),
    ("right", "move_right", "move_left"),
    ("up", "move_up", "move_down"),
)
ROTATION_AXES = ("yaw", "pitch", "roll")
STEP_REGULARIZER = 0.01

DEFAULT_K_MAX_ROT = 12
DEFAULT_K_MAX_TRANS = 10


@dataclass(frozen=True)
class PlanResult:
    actions: list
    final_error: float
    step_counts: dict  # axis name -> committed signed step count
    final_pose: Pose


def pose_error(p: Pose, target: Pose, steps: StepSizes = StepSizes()) -> float:
    """Step-normalized additive error: d_pos/s_t + d_rot/s_r. Zero iff equal."""
    d = view_distance(p, target, steps)
    return d.d_pos / steps.s_t + d.d_rot / steps.s_r


def plan_actions(
    init: Pose,
    target: Pose,
    steps: StepSizes = StepSizes(),
    k_max_rot: int = DEFAULT_K_MAX_ROT,
    k_max_trans: int = DEFAULT_K_MAX_TRANS,
    snap: bool = True,
) -> PlanResult:
    """Plan an action sequence from ``init`` toward ``target``.

    A poor plan is a valid output: the result reports the remaining error.
    """
    if k_max_rot < 1 or k_max_trans < 1:
        raise ValueError("k_max must be >= 1")
    cur = init
    actions: list = []
    step_counts: dict = {}
    for axis, a_pos, a_neg in AXIS_ORDER:
        k_max = k_max_rot if axis in ROTATION_AXES else k_max_trans
        e0 = pose_error(cur, target, steps)
        best_cost, best_k, best_pose = e0, 0, cur
        for sign, action in ((1, a_pos), (-1, a_neg)):
            cand = cur
            for mag in range(1, k_max + 1):
                cand = apply_action(cand, action, steps, snap)
                k = sign * mag
                cost = pose_error(cand, target, steps) + STEP_REGULARIZER * mag
                # ties prefer fewer steps, then the positive direction
                better = cost < best_cost or (
                    cost == best_cost
                    and (mag < abs(best_k) or (mag == abs(best_k) and k > best_k))
                )
                if better:
                    best_cost, best_k, best_pose = cost, k, cand
        step_counts[axis] = best_k
        if best_k != 0:
            actions.extend([a_pos if best_k > 0 else a_neg] * abs(best_k))
            cur = best_pose
    return PlanResult(actions, pose_error(cur, target, steps), step_counts, cur)
