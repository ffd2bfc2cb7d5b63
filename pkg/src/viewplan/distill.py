"""Graph-path sampling and reformulation into supervised demonstrations.

Any path through the view graph becomes a valid demonstration by declaring
its end node the target: the start node supplies the initial view, the edge
action lists supply per-turn targets, and the end node's pose is the answer.
Auxiliary reformulations ask for the step-normalized view distance between
two nodes, either as a number (viewdiff) or as a 4-way multiple choice
(viewdiff_mcq). Inverse/forward dynamics variants exist behind a config
flag, default off.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from .se3 import pose_to_vec6, view_distance
from .util import derive_seed, write_jsonl
from .viewgraph import ViewGraph, graph_stats

log = logging.getLogger(__name__)

MCQ_MIN_SEPARATION = 0.5  # unified units between any two offered distances


@dataclass(frozen=True)
class DistillConfig:
    planning_len: tuple = (3, 5)
    planning_per_scene: int = 20
    planning_oversample: int = 10
    viewdiff_len: tuple = (2, 5)
    viewdiff_per_scene: int = 15
    mcq_len: tuple = (2, 5)
    mcq_per_scene: int = 15
    emit_dynamics: bool = False
    dynamics_per_scene: int = 10
    walk_attempts_per_path: int = 30
    seed: int = 0

    def __post_init__(self):
        for lo, hi in (self.planning_len, self.viewdiff_len, self.mcq_len):
            if not (1 <= lo <= hi):
                raise ValueError("path length bounds must satisfy 1 <= lo <= hi")
        if min(self.planning_per_scene, self.viewdiff_per_scene, self.mcq_per_scene) < 0:
            raise ValueError("per-scene counts must be >= 0")


@dataclass(frozen=True)
class GraphPath:
    scene_id: str
    node_ids: tuple  # K+1 nodes
    action_lists: tuple  # K edge action tuples

    def __post_init__(self):
        if len(self.node_ids) < 2 or len(self.action_lists) != len(self.node_ids) - 1:
            raise ValueError("path needs K >= 1 edges and K+1 nodes")
        if len(set(self.node_ids)) != len(self.node_ids):
            raise ValueError("path may not repeat nodes")

    @property
    def length(self) -> int:
        return len(self.action_lists)


@dataclass(frozen=True)
class Demonstration:
    kind: str  # planning | viewdiff | viewdiff_mcq | inverse_dynamics | forward_dynamics
    scene_id: str
    images: dict  # role -> "img:<hash>" reference
    messages: tuple  # ({"role", "content", "images": [...]}, ...)
    payload: dict  # kind-specific supervision targets
    sample_seed: int

    def to_record(self) -> dict:
        return {
            "kind": self.kind,
            "scene_id": self.scene_id,
            "images": self.images,
            "messages": list(self.messages),
            "payload": self.payload,
            "sample_seed": self.sample_seed,
        }


def _adjacency(graph: ViewGraph, scene_id: str) -> dict:
    adj: dict = {}
    for edge in graph.scene_edges(scene_id):
        adj.setdefault(edge.src, []).append(edge)
    return adj


def _random_walk(graph, scene_id, adj, nodes, target_len, rng) -> GraphPath | None:
    start = rng.choice(nodes)
    path_nodes = [start.node_id]
    lists = []
    visited = {start.node_id}
    cur = start.node_id
    while len(lists) < target_len:
        options = [e for e in adj.get(cur, ()) if e.dst not in visited]
        if not options:
            return None
        edge = rng.choice(options)
        path_nodes.append(edge.dst)
        lists.append(edge.actions)
        visited.add(edge.dst)
        cur = edge.dst
    return GraphPath(scene_id, tuple(path_nodes), tuple(lists))


def sample_paths(
    graph: ViewGraph,
    scene_id: str,
    length_range: tuple,
    count: int,
    balanced: bool,
    rng,
    attempts_per_path: int = 30,
) -> list:
    """Uniform random walks without node repetition.

    Balanced mode targets equal counts per path length (difference at most
    one); lengths a scene cannot supply are backfilled from the others.
    Scenes without enough qualifying paths return fewer, with a log line.
    """
    nodes = graph.scene_nodes(scene_id)
    if not nodes:
        return []
    adj = _adjacency(graph, scene_id)
    lo, hi = length_range
    lengths = list(range(lo, hi + 1))

    if balanced:
        base, rem = divmod(count, len(lengths))
        quotas = {ln: base + (1 if i < rem else 0) for i, ln in enumerate(lengths)}
    else:
        quotas = None

    paths: list = []
    exhausted: set = set()
    if balanced:
        for ln in lengths:
            got = 0
            for _ in range(quotas[ln] * attempts_per_path):
                if got >= quotas[ln]:
                    break
                p = _random_walk(graph, scene_id, adj, nodes, ln, rng)
                if p is not None:
                    paths.append(p)
                    got += 1
            if got < quotas[ln]:
                exhausted.add(ln)
        # proportional backfill from lengths that still produce paths
        deficit = count - len(paths)
        refill_lengths = [ln for ln in lengths if ln not in exhausted]
        attempts = deficit * attempts_per_path
        while deficit > 0 and refill_lengths and attempts > 0:
            ln = refill_lengths[len(paths) % len(refill_lengths)]
            p = _random_walk(graph, scene_id, adj, nodes, ln, rng)
            attempts -= 1
            if p is not None:
                paths.append(p)
                deficit -= 1
    else:
        attempts = count * attempts_per_path
        while len(paths) < count and attempts > 0:
            ln = rng.choice(lengths)
            p = _random_walk(graph, scene_id, adj, nodes, ln, rng)
            attempts -= 1
            if p is not None:
                paths.append(p)

    if len(paths) < count:
        log.info(
            "scene %s: only %d/%d paths for lengths %s", scene_id, len(paths), count,
            length_range,
        )
    return paths


_PLANNING_SYSTEM = (
    "You are controlling a camera in a 3D scene. Reach the target view using "
    "the 12 camera actions, then submit the target viewpoint as "
    "answer(tx, ty, tz, rx, ry, rz). Respond as "
    "<think>...</think><action>action_1|action_2|...</action>."
)


def reformulate_planning(graph: ViewGraph, path: GraphPath, rng,
                         oversample: int = 10) -> list:
    """Multi-turn demonstrations: start node is the initial view, end node is
    the target, edge action lists are the per-turn action targets, and the
    end pose is the final answer. Oversampled copies differ only in seed."""
    nodes = {n.node_id: n for n in graph.scene_nodes(path.scene_id)}
    first, last = nodes[path.node_ids[0]], nodes[path.node_ids[-1]]
    answer = pose_to_vec6(last.pose)
    images = {"init": f"img:{first.image_hash}", "target": f"img:{last.image_hash}"}
    messages = [
        {"role": "system", "content": _PLANNING_SYSTEM},
        {
            "role": "user",
            "content": (
                "Target view, then your current view. Move until your view "
                f"matches the target, then answer. Current pose: {pose_to_vec6(first.pose)}."
            ),
            "images": [images["target"], images["init"]],
        },
    ]
    for i, actions in enumerate(path.action_lists):
        messages.append(
            {"role": "assistant", "content": "<action>" + "|".join(actions) + "</action>"}
        )
        node = nodes[path.node_ids[i + 1]]
        messages.append(
            {
                "role": "user",
                "content": f"Current pose: {pose_to_vec6(node.pose)}.",
                "images": [f"img:{node.image_hash}"],
            }
        )
    args = ", ".join(repr(v) for v in answer)
    messages.append({"role": "assistant", "content": f"<action>answer({args})</action>"})

    demos = []
    for _ in range(oversample):
        demos.append(
            Demonstration(
                "planning",
                path.scene_id,
                images,
                tuple(messages),
                {
                    "node_ids": list(path.node_ids),
                    "turn_actions": [list(a) for a in path.action_lists],
                    "answer_pose": answer,
                },
                sample_seed=rng.randrange(2**31),
            )
        )
    return demos


def reformulate_viewdiff(graph: ViewGraph, path: GraphPath, rng) -> Demonstration:
    """Numeric view-distance estimation between the path's two end nodes.

    The label is the step-normalized pose distance recomputed from the stored
    poses, not the path length."""
    nodes = {n.node_id: n for n in graph.scene_nodes(path.scene_id)}
    a, b = nodes[path.node_ids[0]], nodes[path.node_ids[-1]]
    label = view_distance(a.pose, b.pose).d_unified
    images = {"first": f"img:{a.image_hash}", "second": f"img:{b.image_hash}"}
    messages = (
        {"role": "system", "content": "Estimate the view distance between two views "
                                      "in step units (0.5 m or 30 deg per step)."},
        {"role": "user", "content": "How far apart are these two views?",
         "images": [images["first"], images["second"]]},
        {"role": "assistant", "content": f"{label:.2f}"},
    )
    return Demonstration(
        "viewdiff", path.scene_id, images, messages,
        {"node_ids": [a.node_id, b.node_id], "label": label,
         "path_length": path.length},
        sample_seed=rng.randrange(2**31),
    )


def reformulate_mcq(graph: ViewGraph, path: GraphPath, rng,
                    min_separation: float = MCQ_MIN_SEPARATION,
                    candidate_attempts: int = 200) -> Demonstration | None:
    """View-distance estimation as a 4-option multiple choice.

    Distractor distances come from real same-scene node pairs; all four
    offered values are pairwise at least ``min_separation`` apart. Returns
    None (logged) when the scene cannot supply enough distinct distances."""
    nodes = graph.scene_nodes(path.scene_id)
    by_id = {n.node_id: n for n in nodes}
    a, b = by_id[path.node_ids[0]], by_id[path.node_ids[-1]]
    correct = view_distance(a.pose, b.pose).d_unified

    values = [correct]
    if len(nodes) >= 2:
        for _ in range(candidate_attempts):
            if len(values) == 4:
                break
            u, v = rng.sample(nodes, 2)
            d = view_distance(u.pose, v.pose).d_unified
            if all(abs(d - x) >= min_separation for x in values):
                values.append(d)
    if len(values) < 4:
        log.info("scene %s: not enough distinct distances for an MCQ", path.scene_id)
        return None

    order = list(range(4))
    rng.shuffle(order)
    options = [values[i] for i in order]
    correct_index = order.index(0)
    images = {"first": f"img:{a.image_hash}", "second": f"img:{b.image_hash}"}
    letters = "ABCD"
    option_text = "  ".join(f"{letters[i]}. {v:.2f}" for i, v in enumerate(options))
    messages = (
        {"role": "system", "content": "Pick the view distance between the two views. "
                                      "Answer with a single letter."},
        {"role": "user", "content": f"Options: {option_text}",
         "images": [images["first"], images["second"]]},
        {"role": "assistant", "content": letters[correct_index]},
    )
    return Demonstration(
        "viewdiff_mcq", path.scene_id, images, messages,
        {"node_ids": [a.node_id, b.node_id], "label": correct,
         "options": options, "correct_index": correct_index},
        sample_seed=rng.randrange(2**31),
    )


def reformulate_dynamics(graph: ViewGraph, path: GraphPath, direction: str, rng,
                         n_forward_options: int = 4) -> Demonstration | None:
    """Inverse: two views in, action sequence out. Forward: initial view and
    actions in, resulting view picked from candidate node images."""
    nodes = graph.scene_nodes(path.scene_id)
    by_id = {n.node_id: n for n in nodes}
    src, dst = by_id[path.node_ids[0]], by_id[path.node_ids[1]]
    actions = list(path.action_lists[0])
    if direction == "inverse":
        images = {"first": f"img:{src.image_hash}", "second": f"img:{dst.image_hash}"}
        messages = (
            {"role": "system", "content": "Name the actions that transform the first "
                                          "view into the second."},
            {"role": "user", "content": "Which actions were taken?",
             "images": [images["first"], images["second"]]},
            {"role": "assistant", "content": "<action>" + "|".join(actions) + "</action>"},
        )
        return Demonstration(
            "inverse_dynamics", path.scene_id, images, messages,
            {"src": src.node_id, "dst": dst.node_id, "actions": actions},
            sample_seed=rng.randrange(2**31),
        )
    if direction == "forward":
        others = [n for n in nodes if n.node_id not in (src.node_id, dst.node_id)]
        if len(others) < n_forward_options - 1:
            return None
        cands = [dst] + rng.sample(others, n_forward_options - 1)
        order = list(range(len(cands)))
        rng.shuffle(order)
        options = [cands[i] for i in order]
        correct_index = order.index(0)
        images = {"init": f"img:{src.image_hash}"}
        option_refs = [f"img:{n.image_hash}" for n in options]
        messages = (
            {"role": "system", "content": "Pick the view that results from the actions."},
            {"role": "user",
             "content": "After " + "|".join(actions) + ", which view do you see?",
             "images": [images["init"], *option_refs]},
            {"role": "assistant", "content": "ABCD"[correct_index]},
        )
        return Demonstration(
            "forward_dynamics", path.scene_id, images, messages,
            {"src": src.node_id, "dst": dst.node_id, "actions": actions,
             "option_nodes": [n.node_id for n in options], "correct_index": correct_index},
            sample_seed=rng.randrange(2**31),
        )
    raise ValueError(f"direction must be 'inverse' or 'forward', got {direction!r}")


def distill_scene(graph: ViewGraph, scene_id: str, cfg: DistillConfig) -> list:
    """All demonstrations for one scene; deterministic for (graph, cfg)."""
    rng = random.Random(derive_seed(cfg.seed, f"distill:{scene_id}"))
    demos: list = []
    for path in sample_paths(graph, scene_id, cfg.planning_len, cfg.planning_per_scene,
                             balanced=False, rng=rng,
                             attempts_per_path=cfg.walk_attempts_per_path):
        demos.extend(reformulate_planning(graph, path, rng, cfg.planning_oversample))
    for path in sample_paths(graph, scene_id, cfg.viewdiff_len, cfg.viewdiff_per_scene,
                             balanced=True, rng=rng,
                             attempts_per_path=cfg.walk_attempts_per_path):
        demos.append(reformulate_viewdiff(graph, path, rng))
    for path in sample_paths(graph, scene_id, cfg.mcq_len, cfg.mcq_per_scene,
                             balanced=True, rng=rng,
                             attempts_per_path=cfg.walk_attempts_per_path):
        demo = reformulate_mcq(graph, path, rng)
        if demo is not None:
            demos.append(demo)
    if cfg.emit_dynamics:
        for path in sample_paths(graph, scene_id, (1, 1), cfg.dynamics_per_scene,
                                 balanced=False, rng=rng,
                                 attempts_per_path=cfg.walk_attempts_per_path):
            demo = reformulate_dynamics(graph, path, "inverse", rng)
            if demo is not None:
                demos.append(demo)
            demo = reformulate_dynamics(graph, path, "forward", rng)
            if demo is not None:
                demos.append(demo)
    return demos


def distill_graph(graph: ViewGraph, out_path, cfg: DistillConfig = DistillConfig()) -> dict:
    """Emit demonstrations for every scene as JSONL plus a manifest dict."""
    demos: list = []
    for scene_id in sorted(graph.nodes):
        demos.extend(distill_scene(graph, scene_id, cfg))
    write_jsonl(out_path, (d.to_record() for d in demos))
    counts: dict = {}
    for d in demos:
        counts[d.kind] = counts.get(d.kind, 0) + 1
    manifest = {
        "seed": cfg.seed,
        "config": {
            "planning_len": list(cfg.planning_len),
            "planning_per_scene": cfg.planning_per_scene,
            "planning_oversample": cfg.planning_oversample,
            "viewdiff_len": list(cfg.viewdiff_len),
            "viewdiff_per_scene": cfg.viewdiff_per_scene,
            "mcq_len": list(cfg.mcq_len),
            "mcq_per_scene": cfg.mcq_per_scene,
            "emit_dynamics": cfg.emit_dynamics,
        },
        "graph_stats": graph_stats(graph),
        "counts": dict(sorted(counts.items())),
        "total": len(demos),
    }
    return manifest
