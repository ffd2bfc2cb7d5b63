"""Interactive view-planning episodes: response grammar, stepping, rewards,
protocol variants, rollout logs, and built-in reference agents.

An episode is a finite-horizon loop: the agent sees the current rendered
view plus its pose echo, replies in the
``<think>...</think><action>...</action>`` grammar, and either moves the
camera or submits ``answer(tx, ty, tz, rx, ry, rz)``. Reward is
1 * success + 0.1 * well_formed_final_response, so it always lands in
{0, 0.1, 1.0, 1.1}.

Protocol variants: ``default`` snaps rotations and requires an explicit
answer; ``no_snap`` executes raw rotations; ``no_submit`` also succeeds the
moment the camera pose itself enters the success region (checked after
every single action).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .render import CameraIntrinsics, render_view, topdown_pose
from .scene import Scene
from .se3 import (
    Pose,
    StepSizes,
    SuccessThresholds,
    is_success,
    pose_from_vec6,
    pose_to_vec6,
    view_distance,
)
from .actions import ACTION_NAMES, apply_action

VARIANTS = ("default", "no_snap", "no_submit")
MAX_ACTIONS_PER_TURN = 10
FORMAT_REWARD = 0.1

_RESPONSE_RE = re.compile(
    r"\s*(?:<think>(?P<think>.*?)</think>\s*)?<action>(?P<payload>.*?)</action>\s*",
    re.DOTALL,
)
_ANSWER_RE = re.compile(r"answer\s*\((?P<args>[^()]*)\)\s*", re.DOTALL)


@dataclass(frozen=True)
class AgentResponse:
    raw: str
    think: str | None = None
    actions: tuple | None = None
    answer: tuple | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def parse_response(text: str) -> AgentResponse:
    """Parse one agent turn. Never raises; failures set ``error``."""
    if not isinstance(text, str):
        return AgentResponse(raw=str(text), error="response is not text")
    m = _RESPONSE_RE.fullmatch(text)
    if m is None:
        return AgentResponse(raw=text, error="response does not match the action grammar")
    payload = m.group("payload").strip()
    think = m.group("think")
    if "<action>" in payload:
        return AgentResponse(raw=text, think=think, error="multiple action blocks")
    if not payload:
        return AgentResponse(raw=text, think=think, error="empty action block")

    ans = _ANSWER_RE.fullmatch(payload)
    if ans is not None:
        parts = [p.strip() for p in ans.group("args").split(",")]
        if len(parts) != 6:
            return AgentResponse(
                raw=text, think=think, error=f"answer needs 6 numbers, got {len(parts)}"
            )
        try:
            values = tuple(float(p) for p in parts)
        except ValueError:
            return AgentResponse(raw=text, think=think, error="answer has non-numeric entries")
        if not all(math.isfinite(v) for v in values):
            return AgentResponse(raw=text, think=think, error="answer has non-finite entries")
        return AgentResponse(raw=text, think=think, answer=values)

    names = [p.strip() for p in payload.split("|")]
    for name in names:
        if name not in ACTION_NAMES:
            return AgentResponse(raw=text, think=think, error=f"unknown action: {name!r}")
    if len(names) > MAX_ACTIONS_PER_TURN:
        return AgentResponse(
            raw=text, think=think,
            error=f"too many actions: {len(names)} > {MAX_ACTIONS_PER_TURN}",
        )
    return AgentResponse(raw=text, think=think, actions=tuple(names))


@dataclass(frozen=True)
class EpisodeSpec:
    """Everything needed to run one episode."""

    instance_id: str
    scene_id: str
    init_pose: Pose
    target_pose: Pose
    budget: int = 10
    gt_actions: tuple = ()

    @staticmethod
    def from_record(rec: dict) -> "EpisodeSpec":
        return EpisodeSpec(
            rec["instance_id"],
            rec["scene_id"],
            pose_from_vec6(rec["init_pose"]),
            pose_from_vec6(rec["target_pose"]),
            int(rec.get("budget", 10)),
            tuple(rec.get("gt_actions", ())),
        )


@dataclass(frozen=True)
class EpisodeOutcome:
    success: bool
    reward: float
    format_ok: bool
    d_pos: float
    d_rot: float
    turns_used: int
    terminated_by: str  # "answer" | "pose_threshold" | "budget" | "aborted"


@dataclass
class TurnRecord:
    turn: int
    raw: str
    format_ok: bool
    actions: list | None
    answer: list | None
    pose_after: list  # 6-vector


class EpisodeState:
    """Mutable episode state driven by ``step``.

    The pose always equals the initial pose advanced by every parsed action
    in ``turns`` (malformed turns move nothing).
    """

    def __init__(
        self,
        spec: EpisodeSpec,
        variant: str = "default",
        steps: StepSizes = StepSizes(),
        thresholds: SuccessThresholds = SuccessThresholds(),
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.spec = spec
        self.variant = variant
        self.steps = steps
        self.thresholds = thresholds
        self.pose = spec.init_pose
        self.turn = 0
        self.turns: list[TurnRecord] = []
        self.outcome: EpisodeOutcome | None = None
        self._last_format_ok = False

    @property
    def terminal(self) -> bool:
        return self.outcome is not None

    @property
    def budget_remaining(self) -> int:
        return self.spec.budget - self.turn

    def _distances(self, pose: Pose):
        d = view_distance(pose, self.spec.target_pose, self.steps)
        return d.d_pos, d.d_rot

    def _finish(self, success: bool, format_ok: bool, pose: Pose, terminated_by: str):
        d_pos, d_rot = self._distances(pose)
        reward = (1.0 if success else 0.0) + (FORMAT_REWARD if format_ok else 0.0)
        self.outcome = EpisodeOutcome(
            success, reward, format_ok, d_pos, d_rot, self.turn, terminated_by
        )
        return self.outcome


def step(state: EpisodeState, text: str):
    """Advance one turn with the agent's raw response.

    Returns the EpisodeOutcome when the episode terminates, else None (the
    caller renders the next observation). Raises on terminal states.
    """
    if state.terminal:
        raise RuntimeError("step on terminal episode")
    resp = parse_response(text)
    state._last_format_ok = resp.ok
    state.turn += 1

    if resp.answer is not None:
        # a free 6-DoF estimate; deliberately not snapped before scoring
        est = pose_from_vec6(resp.answer)
        success = is_success(est, state.spec.target_pose, state.steps, state.thresholds)
        state.turns.append(
            TurnRecord(state.turn, resp.raw, True, None, list(resp.answer),
                       pose_to_vec6(state.pose))
        )
        d = view_distance(est, state.spec.target_pose, state.steps)
        reward = (1.0 if success else 0.0) + FORMAT_REWARD
        state.outcome = EpisodeOutcome(
            success, reward, True, d.d_pos, d.d_rot, state.turn, "answer"
        )
        return state.outcome

    if resp.ok:
        snap = state.variant != "no_snap"
        for name in resp.actions:
            state.pose = apply_action(state.pose, name, state.steps, snap)
            if state.variant == "no_submit" and is_success(
                state.pose, state.spec.target_pose, state.steps, state.thresholds
            ):
                state.turns.append(
                    TurnRecord(state.turn, resp.raw, True, list(resp.actions), None,
                               pose_to_vec6(state.pose))
                )
                return state._finish(True, True, state.pose, "pose_threshold")
        state.turns.append(
            TurnRecord(state.turn, resp.raw, True, list(resp.actions), None,
                       pose_to_vec6(state.pose))
        )
    else:
        # malformed responses consume the turn but move nothing
        state.turns.append(
            TurnRecord(state.turn, resp.raw, False, None, None, pose_to_vec6(state.pose))
        )

    if state.turn >= state.spec.budget:
        return state._finish(False, state._last_format_ok, state.pose, "budget")
    return None


@dataclass
class RolloutLog:
    episode_id: str
    instance_id: str
    scene_id: str
    variant: str
    init_pose: list
    target_pose: list
    turns: list
    outcome: EpisodeOutcome

    def to_records(self) -> list:
        """One dict per turn plus one outcome dict (the JSONL wire format)."""
        recs = []
        for t in self.turns:
            recs.append(
                {
                    "type": "turn",
                    "episode_id": self.episode_id,
                    "scene_id": self.scene_id,
                    "variant": self.variant,
                    "turn": t.turn,
                    "raw_response": t.raw,
                    "format_ok": t.format_ok,
                    "actions": t.actions,
                    "answer": t.answer,
                    "pose": t.pose_after,
                }
            )
        o = self.outcome
        recs.append(
            {
                "type": "outcome",
                "episode_id": self.episode_id,
                "instance_id": self.instance_id,
                "scene_id": self.scene_id,
                "variant": self.variant,
                "init_pose": self.init_pose,
                "target_pose": self.target_pose,
                "success": o.success,
                "reward": o.reward,
                "format_ok": o.format_ok,
                "d_pos": o.d_pos,
                "d_rot": o.d_rot,
                "turns_used": o.turns_used,
                "terminated_by": o.terminated_by,
            }
        )
        return recs

    @staticmethod
    def from_records(records: list) -> "RolloutLog":
        turns = []
        outcome_rec = None
        meta = None
        for rec in records:
            if rec["type"] == "turn":
                turns.append(
                    TurnRecord(rec["turn"], rec["raw_response"], rec["format_ok"],
                               rec["actions"], rec["answer"], rec["pose"])
                )
            elif rec["type"] == "outcome":
                outcome_rec = rec
                meta = rec
        if outcome_rec is None:
            raise ValueError("log has no outcome record")
        outcome = EpisodeOutcome(
            outcome_rec["success"], outcome_rec["reward"], outcome_rec["format_ok"],
            outcome_rec["d_pos"], outcome_rec["d_rot"], outcome_rec["turns_used"],
            outcome_rec["terminated_by"],
        )
        return RolloutLog(
            meta["episode_id"], meta.get("instance_id", ""), meta["scene_id"],
            meta["variant"], meta["init_pose"], meta["target_pose"], turns, outcome,
        )


def split_log_stream(records: list) -> list:
    """Group a flat JSONL record stream into per-episode RolloutLogs."""
    by_episode: dict = {}
    order = []
    for rec in records:
        eid = rec["episode_id"]
        if eid not in by_episode:
            by_episode[eid] = []
            order.append(eid)
        by_episode[eid].append(rec)
    return [RolloutLog.from_records(by_episode[eid]) for eid in order]


def build_observation(state: EpisodeState, scene: Scene,
                      intrinsics: CameraIntrinsics, episode_id: str,
                      include_static: bool) -> dict:
    """Observation for the agent; views are in-memory RenderedViews here and
    get encoded by the transport layer when crossing a wire."""
    obs = {
        "episode_id": episode_id,
        "scene_id": state.spec.scene_id,
        "turn": state.turn,
        "budget_remaining": state.budget_remaining,
        "pose": pose_to_vec6(state.pose),
        "images": {"current": render_view(scene, state.pose, intrinsics)},
    }
    if include_static:
        obs["images"]["target"] = render_view(scene, state.spec.target_pose, intrinsics)
        obs["images"]["topdown"] = render_view(scene, topdown_pose(scene, intrinsics), intrinsics)
        obs["thresholds"] = {
            "pos_m": state.thresholds.beta_t * state.steps.s_t,
            "rot_deg": state.thresholds.beta_r * state.steps.s_r,
        }
    return obs


def run_episode(
    spec: EpisodeSpec,
    agent,
    scene: Scene,
    variant: str = "default",
    intrinsics: CameraIntrinsics = CameraIntrinsics(),
    steps: StepSizes = StepSizes(),
    thresholds: SuccessThresholds = SuccessThresholds(),
    episode_id: str | None = None,
) -> RolloutLog:
    """Drive the observe/respond loop to termination.

    ``agent`` is a callable observation-dict -> raw response text. Agent
    exceptions abort the episode, logged as a failed outcome.
    """
    episode_id = episode_id or f"ep-{spec.instance_id}"
    state = EpisodeState(spec, variant, steps, thresholds)
    if spec.budget <= 0:
        state._finish(False, False, state.pose, "budget")
    first = True
    while not state.terminal:
        obs = build_observation(state, scene, intrinsics, episode_id, include_static=first)
        first = False
        try:
            text = agent(obs)
        except Exception:
            state._finish(False, False, state.pose, "aborted")
            break
        step(state, text)
    return RolloutLog(
        episode_id,
        spec.instance_id,
        spec.scene_id,
        variant,
        pose_to_vec6(spec.init_pose),
        pose_to_vec6(spec.target_pose),
        state.turns,
        state.outcome,
    )


class OracleAgent:
    """Replays the instance's ground-truth actions, then answers the pose the
    environment echoed back."""

    def __init__(self, gt_actions):
        self._chunks = [
            list(gt_actions[i:i + MAX_ACTIONS_PER_TURN])
            for i in range(0, len(gt_actions), MAX_ACTIONS_PER_TURN)
        ]
        self._sent = 0

    def __call__(self, obs: dict) -> str:
        if self._sent < len(self._chunks):
            chunk = self._chunks[self._sent]
            self._sent += 1
            return "<action>" + "|".join(chunk) + "</action>"
        pose = obs["pose"]
        args = ", ".join(repr(float(v)) for v in pose)
        return f"<think>done</think><action>answer({args})</action>"


class RandomAgent:
    """Takes 1-3 uniformly random actions per turn; on the final turn answers
    with the current echoed pose."""

    def __init__(self, rng):
        self.rng = rng

    def __call__(self, obs: dict) -> str:
        if obs["budget_remaining"] <= 1:
            args = ", ".join(repr(float(v)) for v in obs["pose"])
            return f"<action>answer({args})</action>"
        k = self.rng.randint(1, 3)
        acts = [self.rng.choice(ACTION_NAMES) for _ in range(k)]
        return "<action>" + "|".join(acts) + "</action>"
