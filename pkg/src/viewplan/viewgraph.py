"""Deduplicated graph of visited viewpoints with action-labeled edges.

Trajectories stream in; low-quality frames are dropped (their incident
action lists concatenate across the gap), surviving states merge into the
first existing same-scene node within BOTH dedup thresholds (position
below 0.25 m and rotation below 15 deg) or insert a new node, and edges
dedup by (source, destination, action list). Merging keeps the earlier
node's pose and image; node ids are insertion-ordered, so builds replay
deterministically.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

from .render import RenderedView, quality_check, view_to_png
from .se3 import Pose, pose_from_vec6, pose_to_vec6, view_distance
from .util import dumps_canonical, read_jsonl, write_jsonl

STORE_VERSION = 1
DEDUP_POS_M = 0.25
DEDUP_ROT_DEG = 15.0


@dataclass(frozen=True)
class ViewNode:
    node_id: int
    scene_id: str
    pose: Pose
    image_hash: str
    iteration: int = 0


@dataclass(frozen=True)
class ViewEdge:
    src: int
    dst: int
    actions: tuple


@dataclass(frozen=True)
class TrajState:
    pose: Pose
    view: RenderedView


@dataclass(frozen=True)
class Trajectory:
    """Ordered states with the action list taken between consecutive states."""

    scene_id: str
    states: tuple
    actions: tuple  # len(states) - 1 entries, each a tuple of action names

    def __post_init__(self):
        if len(self.actions) != max(0, len(self.states) - 1):
            raise ValueError("need exactly one action list between consecutive states")


@dataclass
class MergeReport:
    nodes_added: int = 0
    nodes_merged: int = 0
    edges_added: int = 0
    edges_deduped: int = 0
    states_dropped: int = 0
    self_loops_dropped: int = 0


class ViewGraph:
    def __init__(self, pos_thr: float = DEDUP_POS_M, rot_thr: float = DEDUP_ROT_DEG):
        self.pos_thr = pos_thr
        self.rot_thr = rot_thr
        self.nodes: dict = {}  # scene_id -> [ViewNode] in id order
        self.edges: dict = {}  # scene_id -> [ViewEdge] in insertion order
        self._edge_keys: dict = {}  # scene_id -> set of (src, dst, actions)
        self.images: dict = {}  # image_hash -> png bytes
        self.growth: list = []  # one stats dict appended per ingest
        self._next_id = 0

    def scene_nodes(self, scene_id: str) -> list:
        return self.nodes.get(scene_id, [])

    def scene_edges(self, scene_id: str) -> list:
        return self.edges.get(scene_id, [])

    def node_by_id(self, scene_id: str, node_id: int) -> ViewNode:
        for node in self.nodes.get(scene_id, []):
            if node.node_id == node_id:
                return node
        raise KeyError(f"no node {node_id} in scene {scene_id!r}")

    def _find_merge_target(self, scene_id: str, pose: Pose):
        for node in self.nodes.get(scene_id, []):
            d = view_distance(pose, node.pose)
            if d.d_pos < self.pos_thr and d.d_rot < self.rot_thr:
                return node
        return None


def ingest_trajectory(graph: ViewGraph, traj: Trajectory, iteration: int = 0) -> MergeReport:
    """Merge one trajectory into the graph; returns what changed."""
    report = MergeReport()

    # quality gate with action bridging across dropped states
    kept = []  # (state, composed actions since previous kept state or None)
    pending = None
    for i, state in enumerate(traj.states):
        if i > 0:
            pending = (pending or []) + list(traj.actions[i - 1])
        ok, _reason = quality_check(state.view)
        if not ok:
            report.states_dropped += 1
            continue
        kept.append((state, pending if kept else None))
        pending = None

    scene = traj.scene_id
    nodes = graph.nodes.setdefault(scene, [])
    edges = graph.edges.setdefault(scene, [])
    keys = graph._edge_keys.setdefault(scene, set())

    node_ids = []
    for state, _ in kept:
        target = graph._find_merge_target(scene, state.pose)
        if target is not None:
            node_ids.append(target.node_id)
            report.nodes_merged += 1
            continue
        png = view_to_png(state.view)
        h = hashlib.sha256(png).hexdigest()[:16]
        graph.images.setdefault(h, png)
        node = ViewNode(graph._next_id, scene, state.pose, h, iteration)
        graph._next_id += 1
        nodes.append(node)
        node_ids.append(node.node_id)
        report.nodes_added += 1

    for idx in range(1, len(kept)):
        actions = tuple(kept[idx][1] or ())
        if not actions:
            continue
        src, dst = node_ids[idx - 1], node_ids[idx]
        if src == dst:
            report.self_loops_dropped += 1
            continue
        key = (src, dst, actions)
        if key in keys:
            report.edges_deduped += 1
            continue
        keys.add(key)
        edges.append(ViewEdge(src, dst, actions))
        report.edges_added += 1

    graph.growth.append({"iteration": iteration, **graph_stats(graph)})
    return report


def graph_stats(graph: ViewGraph) -> dict:
    n_scenes = sum(1 for nodes in graph.nodes.values() if nodes)
    n_nodes = sum(len(v) for v in graph.nodes.values())
    n_edges = sum(len(v) for v in graph.edges.values())
    n_actions = sum(len(e.actions) for edges in graph.edges.values() for e in edges)
    return {
        "scenes": n_scenes,
        "nodes": n_nodes,
        "edges": n_edges,
        "avg_nodes_per_scene": (n_nodes / n_scenes) if n_scenes else 0.0,
        "avg_actions_per_edge": (n_actions / n_edges) if n_edges else 0.0,
    }


def action_distribution(source) -> dict:
    """Frequency of each action over a ViewGraph's edges or an iterable of
    Trajectories; frequencies sum to 1 (empty input gives an empty map)."""
    counts: dict = {}
    if isinstance(source, ViewGraph):
        lists = (e.actions for edges in source.edges.values() for e in edges)
    else:
        lists = (acts for traj in source for acts in traj.actions)
    for actions in lists:
        for a in actions:
            counts[a] = counts.get(a, 0) + 1
    total = sum(counts.values())
    return {a: c / total for a, c in sorted(counts.items())} if total else {}


def persist(graph: ViewGraph, path) -> None:
    """Write the graph store: nodes.jsonl, edges.jsonl, images/, meta.json."""
    root = str(path)
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    node_recs = []
    for scene in sorted(graph.nodes):
        for node in graph.nodes[scene]:
            node_recs.append(
                {
                    "node_id": node.node_id,
                    "scene_id": node.scene_id,
                    "pose": pose_to_vec6(node.pose),
                    "image": node.image_hash,
                    "iteration": node.iteration,
                }
            )
    write_jsonl(os.path.join(root, "nodes.jsonl"), node_recs)
    edge_recs = []
    for scene in sorted(graph.edges):
        for edge in graph.edges[scene]:
            edge_recs.append(
                {"scene_id": scene, "src": edge.src, "dst": edge.dst,
                 "actions": list(edge.actions)}
            )
    write_jsonl(os.path.join(root, "edges.jsonl"), edge_recs)
    for h, png in sorted(graph.images.items()):
        img_path = os.path.join(root, "images", f"{h}.png")
        if not os.path.exists(img_path):
            with open(img_path, "wb") as fh:
                fh.write(png)
    meta = {
        "version": STORE_VERSION,
        "pos_thr": graph.pos_thr,
        "rot_thr": graph.rot_thr,
        "next_id": graph._next_id,
        "growth": graph.growth,
        "stats": graph_stats(graph),
    }
    with open(os.path.join(root, "meta.json"), "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(meta) + "\n")


def load(path) -> ViewGraph:
    """Load a graph store; raises on version mismatch or corrupt records
    without leaving partial state behind."""
    root = str(path)
    meta_path = os.path.join(root, "meta.json")
    if not os.path.exists(meta_path):
        raise ValueError(f"not a graph store: {root} (missing meta.json)")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("version") != STORE_VERSION:
        raise ValueError(
            f"unsupported graph store version {meta.get('version')!r}, "
            f"expected {STORE_VERSION}"
        )
    graph = ViewGraph(meta["pos_thr"], meta["rot_thr"])
    for rec in read_jsonl(os.path.join(root, "nodes.jsonl")):
        node = ViewNode(
            rec["node_id"], rec["scene_id"], pose_from_vec6(rec["pose"]),
            rec["image"], rec.get("iteration", 0),
        )
        graph.nodes.setdefault(node.scene_id, []).append(node)
    for rec in read_jsonl(os.path.join(root, "edges.jsonl")):
        edge = ViewEdge(rec["src"], rec["dst"], tuple(rec["actions"]))
        graph.edges.setdefault(rec["scene_id"], []).append(edge)
        graph._edge_keys.setdefault(rec["scene_id"], set()).add(
            (edge.src, edge.dst, edge.actions)
        )
    img_dir = os.path.join(root, "images")
    if os.path.isdir(img_dir):
        for name in sorted(os.listdir(img_dir)):
            if name.endswith(".png"):
                with open(os.path.join(img_dir, name), "rb") as fh:
                    graph.images[name[:-4]] = fh.read()
    graph.growth = meta.get("growth", [])
    graph._next_id = meta.get("next_id", 0)
    # referential integrity: every edge endpoint must exist
    for scene, edges in graph.edges.items():
        ids = {n.node_id for n in graph.nodes.get(scene, [])}
        for e in edges:
            if e.src not in ids or e.dst not in ids:
                raise ValueError(f"corrupt store: edge {e} references missing node")
    return graph


def trajectory_from_rollout(log, scene, intrinsics, steps=None) -> Trajectory:
    """Rebuild a Trajectory from a RolloutLog by replaying its action turns.

    States are the initial pose plus the pose after every action-carrying
    turn, each rendered fresh against the scene.
    """
    from .render import render_view
    from .se3 import StepSizes
    from .actions import apply_sequence

    steps = steps or StepSizes()
    snap = log.variant != "no_snap"
    pose = pose_from_vec6(log.init_pose)
    states = [TrajState(pose, render_view(scene, pose, intrinsics))]
    actions = []
    for turn in log.turns:
        turn_actions = turn.actions if hasattr(turn, "actions") else turn.get("actions")
        if not turn_actions:
            continue
        pose, _ = apply_sequence(pose, turn_actions, steps, snap)
        states.append(TrajState(pose, render_view(scene, pose, intrinsics)))
        actions.append(tuple(turn_actions))
    return Trajectory(log.scene_id, tuple(states), tuple(actions))
