"""Reference policies: observation dict -> raw response text.

A policy is any callable with that shape (the PolicyHook contract); the
client transports whatever text comes back without validating it, so LLM
outputs can flow through unmodified.
"""

from __future__ import annotations

import hashlib
import random

ACTIONS = (
    "move_forward", "move_backward", "move_left", "move_right", "move_up",
    "move_down", "turn_left", "turn_right", "look_up", "look_down",
    "rotate_ccw", "rotate_cw",
)
MAX_ACTIONS_PER_TURN = 10


def derive_seed(seed: int, tag: str) -> int:
    digest = hashlib.sha256(f"{seed}:{tag}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class OracleReplayPolicy:
    """Replays the instance's ground-truth actions from the manifest record,
    then answers with the pose the server echoed back (no client geometry)."""

    def __init__(self, gt_actions):
        gt = list(gt_actions)
        self._chunks = [gt[i:i + MAX_ACTIONS_PER_TURN]
                        for i in range(0, len(gt), MAX_ACTIONS_PER_TURN)]
        self._sent = 0

    def __call__(self, obs: dict) -> str:
        if self._sent < len(self._chunks):
            chunk = self._chunks[self._sent]
            self._sent += 1
            return "<action>" + "|".join(chunk) + "</action>"
        args = ", ".join(repr(float(v)) for v in obs["pose"])
        return f"<think>done</think><action>answer({args})</action>"


class RandomPolicy:
    """1-3 random actions per turn; answers the echoed pose on the last turn."""

    def __init__(self, rng: random.Random):
        self.rng = rng

    def __call__(self, obs: dict) -> str:
        if obs["budget_remaining"] <= 1:
            args = ", ".join(repr(float(v)) for v in obs["pose"])
            return f"<action>answer({args})</action>"
        k = self.rng.randint(1, 3)
        return "<action>" + "|".join(self.rng.choice(ACTIONS) for _ in range(k)) + "</action>"


class GarbagePolicy:
    """Always malformed; useful for format-reward plumbing checks."""

    def __call__(self, obs: dict) -> str:
        return "lorem ipsum, no action block here"


def policy_factory(name: str, seed: int = 0):
    """Factory of factories: returns record -> policy for the named agent."""
    if name == "oracle":
        return lambda rec: OracleReplayPolicy(rec.get("gt_actions", ()))
    if name == "random":
        return lambda rec: RandomPolicy(
            random.Random(derive_seed(seed, rec["instance_id"]))
        )
    if name == "garbage":
        return lambda rec: GarbagePolicy()
    raise ValueError(f"unknown policy {name!r} (use oracle|random|garbage)")
