"""Benchmark construction pipeline: pair sampling, planning, distractors,
instance emission, and dataset splitting.

Ground-truth action sequences are committed as a plan/execute fixed point:
the planner runs against the raw sampled target, the plan is executed (with
snapping) to give the committed target, and planning repeats against that
committed target until executing the plan reproduces it exactly. Pairs that
fail to stabilize within a few iterations are skipped, which keeps the
emitted invariant simple: replaying the stored actions from the stored
initial pose lands bit-exactly on the stored target, and re-planning the
stored pair returns the stored actions.
"""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, asdict

import numpy as np

from .actions import (
    ACTION_NAMES,
    ROTATION_ACTIONS,
    TRANSLATION_ACTIONS,
    action_category,
    apply_sequence,
)
from .planner import plan_actions
from .render import CameraIntrinsics, pixel_diff, render_view, topdown_pose, view_to_png
from .scene import Scene
from .se3 import (
    EulerAngles,
    Pose,
    StepSizes,
    euler_compose,
    pose_from_vec6,
    pose_to_vec6,
    poses_equal,
    view_distance,
)
from .util import derive_seed, dumps_canonical, write_jsonl

log = logging.getLogger(__name__)

SHORT_LONG_BOUNDARY = 3.0
IDENTICAL_POS_EPS = 1e-6
IDENTICAL_ROT_EPS = 1e-4


@dataclass(frozen=True)
class PipelineConfig:
    """Pipeline hyperparameters; defaults follow the reference configuration."""

    delta_weights: tuple = (0.3, 0.5, 0.2)  # near / mid / remaining frame gaps
    delta_near: tuple = (50, 99)
    delta_mid: tuple = (100, 300)
    len_min: int = 2
    len_max: int = 10
    k_distractors: int = 3
    perturb_ratio: float = 0.3
    op_probs: tuple = (0.6, 0.2, 0.2)  # replace / remove / insert
    same_category_prob: float = 0.7
    pixel_threshold: float = 0.02
    max_distractor_attempts: int = 20
    max_pair_attempts: int = 20
    pair_timeout_s: float = 30.0
    replan_max_iter: int = 4
    ivp_budget: int = 10
    seed: int = 0

    def __post_init__(self):
        if abs(sum(self.delta_weights) - 1.0) > 1e-9:
            raise ValueError("delta weights must sum to 1")
        if abs(sum(self.op_probs) - 1.0) > 1e-9:
            raise ValueError("op probabilities must sum to 1")
        if not (1 <= self.len_min <= self.len_max):
            raise ValueError("length bounds must satisfy 1 <= len_min <= len_max")

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        known = {f for f in PipelineConfig.__dataclass_fields__}
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items() if k in known}
        return PipelineConfig(**kwargs)


class PairSkip(Exception):
    """A pair could not be produced; ``reason`` explains why."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


# when attempts exhaust, report the most informative failure seen
_REASON_PRIORITY = {
    "identical poses": 3,
    "length bounds": 3,
    "plan instability": 3,
    "timeout": 2,
    "frame gap out of range": 1,
    "no valid frame gap": 1,
    "attempts exhausted": 0,
}


class _ReasonTracker:
    def __init__(self):
        self.reason = "attempts exhausted"

    def note(self, reason: str):
        if _REASON_PRIORITY.get(reason, 2) >= _REASON_PRIORITY.get(self.reason, 0):
            self.reason = reason


@dataclass(frozen=True)
class ViewPair:
    pair_id: str
    scene_id: str
    mode: str  # "trajectory" | "synthetic"
    init_pose: Pose
    target_pose: Pose
    actions: tuple
    d_unified: float
    difficulty: str  # "short" | "long"
    f_init: int | None = None
    f_tgt: int | None = None


@dataclass(frozen=True)
class TaskInstance:
    instance_id: str
    kind: str  # "p2v" | "v2p" | "ivp"
    pair: ViewPair
    images: dict  # role -> image key
    option_images: list | None = None  # p2v: image keys in presented order
    option_sequences: list | None = None  # v2p: sequences in presented order
    correct_index: int | None = None
    ivp_budget: int | None = None
    thresholds: dict | None = None


def _near_identical(a: Pose, b: Pose) -> bool:
    d = view_distance(a, b)
    return d.d_pos < IDENTICAL_POS_EPS and d.d_rot < IDENTICAL_ROT_EPS


def commit_plan(init: Pose, raw_target: Pose, steps: StepSizes, max_iter: int = 4):
    """Plan toward raw_target, executing and re-planning until the committed
    target is the plan's own fixed point. Returns (actions, committed target)
    or None if no fixed point emerges within max_iter rounds."""
    target = raw_target
    for _ in range(max_iter):
        res = plan_actions(init, target, steps)
        committed, _ = apply_sequence(init, res.actions, steps)
        if poses_equal(committed, target, tol=1e-12):
            return list(res.actions), committed
        target = committed
    return None


def _draw_delta(n_frames: int, cfg: PipelineConfig, rng) -> int | None:
    """Temporal frame gap from the three-range mixture, clipped to the video."""
    max_delta = n_frames - 1
    if max_delta < 1:
        return None
    r = rng.random()
    if r < cfg.delta_weights[0]:
        lo, hi = cfg.delta_near
    elif r < cfg.delta_weights[0] + cfg.delta_weights[1]:
        lo, hi = cfg.delta_mid
    else:
        # remaining gaps: [1, max] minus the two ranges above
        pool_parts = []
        if cfg.delta_near[0] > 1:
            pool_parts.append((1, min(cfg.delta_near[0] - 1, max_delta)))
        if max_delta > cfg.delta_mid[1]:
            pool_parts.append((cfg.delta_mid[1] + 1, max_delta))
        pool_parts = [(lo, hi) for lo, hi in pool_parts if lo <= hi]
        if not pool_parts:
            return None
        sizes = [hi - lo + 1 for lo, hi in pool_parts]
        pick = rng.randrange(sum(sizes))
        for (lo, hi), size in zip(pool_parts, sizes):
            if pick < size:
                return lo + pick
            pick -= size
        return None
    lo, hi = max(1, lo), min(hi, max_delta)
    if lo > hi:
        return None
    return rng.randint(lo, hi)


def sample_trajectory_pair(
    scene_id: str,
    frames: list,
    cfg: PipelineConfig,
    rng,
    steps: StepSizes = StepSizes(),
    pair_id: str = "pair",
) -> ViewPair:
    """Sample a view pair from video frames [(frame_index, Pose), ...]."""
    if len(frames) < 2:
        raise PairSkip("too few frames")
    start = time.monotonic()
    tracker = _ReasonTracker()
    for _ in range(cfg.max_pair_attempts):
        if time.monotonic() - start > cfg.pair_timeout_s:
            tracker.note("timeout")
            break
        delta = _draw_delta(len(frames), cfg, rng)
        if delta is None:
            tracker.note("no valid frame gap")
            continue
        i = rng.randrange(len(frames))
        j = i + delta
        if j >= len(frames):
            tracker.note("frame gap out of range")
            continue
        f_init, init = frames[i]
        f_tgt, raw_target = frames[j]
        if _near_identical(init, raw_target):
            tracker.note("identical poses")
            continue
        committed = commit_plan(init, raw_target, steps, cfg.replan_max_iter)
        if committed is None:
            tracker.note("plan instability")
            continue
        actions, target = committed
        if not (cfg.len_min <= len(actions) <= cfg.len_max):
            tracker.note("length bounds")
            continue
        d = view_distance(init, target, steps).d_unified
        return ViewPair(
            pair_id, scene_id, "trajectory", init, target, tuple(actions), d,
            "short" if d < SHORT_LONG_BOUNDARY else "long", f_init, f_tgt,
        )
    raise PairSkip(tracker.reason)


def random_grid_pose_in_scene(scene: Scene, rng, steps: StepSizes = StepSizes()) -> Pose:
    """A camera pose on the discrete grid inside the scene bounds: positions on
    the s_t lattice with an interior margin, upright orientations (roll 0,
    pitch within one step of horizontal, any grid heading)."""
    lo, hi = scene.bounds
    margin = steps.s_t

    def grid_range(a, b):
        ks = range(math.ceil((a + margin) / steps.s_t), math.floor((b - margin) / steps.s_t) + 1)
        vals = [k * steps.s_t for k in ks]
        return vals if vals else [(a + b) / 2.0]

    x = rng.choice(grid_range(lo[0], hi[0]))
    y = rng.choice(grid_range(lo[1], hi[1]))
    z = rng.choice(grid_range(lo[2], hi[2]))
    heading = rng.randrange(-5, 7) * steps.s_r
    pitch = -90.0 + rng.choice([-1.0, 0.0, 1.0]) * steps.s_r
    return euler_compose(EulerAngles(pitch, 0.0, heading), np.array([x, y, z]))


def sample_synthetic_pair(
    scene: Scene,
    cfg: PipelineConfig,
    rng,
    steps: StepSizes = StepSizes(),
    pair_id: str = "pair",
) -> ViewPair:
    """Sample a pair by walking a random action sequence from a grid pose,
    then re-planning for the canonical ground truth."""
    start = time.monotonic()
    tracker = _ReasonTracker()
    for _ in range(cfg.max_pair_attempts):
        if time.monotonic() - start > cfg.pair_timeout_s:
            tracker.note("timeout")
            break
        init = random_grid_pose_in_scene(scene, rng, steps)
        length = rng.randint(cfg.len_min, cfg.len_max)
        seq = [rng.choice(ACTION_NAMES) for _ in range(length)]
        raw_target, _ = apply_sequence(init, seq, steps)
        if _near_identical(init, raw_target):
            tracker.note("identical poses")
            continue
        committed = commit_plan(init, raw_target, steps, cfg.replan_max_iter)
        if committed is None:
            tracker.note("plan instability")
            continue
        actions, target = committed
        if not (cfg.len_min <= len(actions) <= cfg.len_max):
            tracker.note("length bounds")
            continue
        d = view_distance(init, target, steps).d_unified
        return ViewPair(
            pair_id, scene.scene_id, "synthetic", init, target, tuple(actions), d,
            "short" if d < SHORT_LONG_BOUNDARY else "long",
        )
    raise PairSkip(tracker.reason)


def perturb_sequence_with_ops(seq, cfg: PipelineConfig, rng):
    """Perturb ceil(r * len) distinct positions; returns (sequence, ops) where
    ops is [(position, op_name), ...] in application order."""
    seq = list(seq)
    n = len(seq)
    if n < 1:
        raise ValueError("cannot perturb an empty sequence")
    count = math.ceil(cfg.perturb_ratio * n)
    positions = sorted(rng.sample(range(n), count), reverse=True)
    p_replace, p_remove, _ = cfg.op_probs
    ops = []
    for pos in positions:
        r = rng.random()
        if r < p_replace:
            original = seq[pos]
            same_cat = rng.random() < cfg.same_category_prob
            cat = action_category(original)
            if not same_cat:
                cat = "rotation" if cat == "translation" else "translation"
            pool = ROTATION_ACTIONS if cat == "rotation" else TRANSLATION_ACTIONS
            pool = [a for a in pool if a != original]
            seq[pos] = rng.choice(pool)
            ops.append((pos, "replace"))
        elif r < p_replace + p_remove:
            del seq[pos]
            ops.append((pos, "remove"))
        else:
            seq.insert(pos, rng.choice(ACTION_NAMES))
            ops.append((pos, "insert"))
    return seq, ops


def perturb_sequence(seq, cfg: PipelineConfig, rng):
    return perturb_sequence_with_ops(seq, cfg, rng)[0]


def gen_distractors(
    pair: ViewPair,
    renderer,
    cfg: PipelineConfig,
    rng,
    steps: StepSizes = StepSizes(),
    gt_view=None,
):
    """Generate k perturbed options; each accepted option's view differs from
    every previously accepted option by more than the pixel threshold.

    ``renderer`` maps Pose -> RenderedView. Returns [(actions, view), ...]
    with the ground truth first. Raises PairSkip when attempts run out.
    """
    if gt_view is None:
        gt_view = renderer(pair.target_pose)
    options = [(list(pair.actions), gt_view)]
    for _ in range(cfg.k_distractors):
        for _attempt in range(cfg.max_distractor_attempts):
            cand = perturb_sequence(pair.actions, cfg, rng)
            if not cand:
                continue
            final, _ = apply_sequence(pair.init_pose, cand, steps)
            view = renderer(final)
            if view.void_fraction > 0.7:  # perturbed walk left the scene
                continue
            if all(pixel_diff(view, v) > cfg.pixel_threshold for _, v in options):
                options.append((cand, view))
                break
        else:
            raise PairSkip("distractor attempts exhausted")
    return options


def build_instances(pair: ViewPair, options, rng, cfg: PipelineConfig,
                    steps: StepSizes = StepSizes(), image_keys=None):
    """Emit the three task instances for one pair.

    ``options`` is the gen_distractors output (ground truth first);
    ``image_keys`` maps roles to stored image keys: 'init', 'topdown',
    'target', and 'option0'..'option3' aligned with ``options``.
    """
    image_keys = image_keys or {}
    n = len(options)
    perm_p2v = list(range(n))
    rng.shuffle(perm_p2v)
    perm_v2p = list(range(n))
    rng.shuffle(perm_v2p)

    base_images = {k: image_keys.get(k) for k in ("init", "topdown", "target")}
    p2v = TaskInstance(
        f"{pair.pair_id}-p2v", "p2v", pair,
        {"init": base_images["init"], "topdown": base_images["topdown"]},
        option_images=[image_keys.get(f"option{i}") for i in perm_p2v],
        correct_index=perm_p2v.index(0),
    )
    v2p = TaskInstance(
        f"{pair.pair_id}-v2p", "v2p", pair,
        dict(base_images),
        option_sequences=[list(options[i][0]) for i in perm_v2p],
        correct_index=perm_v2p.index(0),
    )
    ivp = TaskInstance(
        f"{pair.pair_id}-ivp", "ivp", pair,
        dict(base_images),
        ivp_budget=cfg.ivp_budget,
        thresholds={"pos_m": 1.0 * steps.s_t, "rot_deg": 1.0 * steps.s_r},
    )
    return p2v, v2p, ivp


def filter_scenes(scene_ids, verdict_path) -> list:
    """Keep scenes whose verdict is 'good'. Unknown ids are rejected with a
    warning; a missing verdict file passes everything with a notice."""
    from .util import read_jsonl

    scene_ids = list(scene_ids)
    if verdict_path is None or not os.path.exists(str(verdict_path)):
        log.info("no scene verdict file; accepting all %d scenes", len(scene_ids))
        return scene_ids
    verdicts = {}
    for rec in read_jsonl(verdict_path):
        verdicts[rec["scene_id"]] = rec["verdict"]
    kept = []
    for sid in scene_ids:
        v = verdicts.get(sid)
        if v == "good":
            kept.append(sid)
        elif v is None:
            log.warning("scene %s has no verdict; excluded", sid)
        else:
            log.info("scene %s classified %s; excluded", sid, v)
    return kept


@dataclass(frozen=True)
class DatasetSplit:
    subset: str  # "5k" | "50k"
    partition: str  # "train" | "dev" | "test"
    pair_ids: tuple


def split_dataset(pairs_by_scene: dict, seed: int):
    """Scene-level 8:1:1 train/dev/test partition plus a 1:10 within-scene
    subset split. Returns (splits, assignment) where assignment maps
    pair_id -> (subset, partition)."""
    import random as _random

    scenes = sorted(pairs_by_scene)
    if len(scenes) < 10:
        raise ValueError(f"too few scenes for a split: {len(scenes)} < 10")
    rng = _random.Random(seed)
    order = scenes[:]
    rng.shuffle(order)
    n = len(order)
    n_dev = max(1, round(n * 0.1))
    n_test = max(1, round(n * 0.1))
    partition_of = {}
    for sid in order[:n_dev]:
        partition_of[sid] = "dev"
    for sid in order[n_dev:n_dev + n_test]:
        partition_of[sid] = "test"
    for sid in order[n_dev + n_test:]:
        partition_of[sid] = "train"

    assignment = {}
    buckets = {(sub, part): [] for sub in ("5k", "50k") for part in ("train", "dev", "test")}
    for sid in scenes:
        pair_ids = list(pairs_by_scene[sid])
        rng.shuffle(pair_ids)
        n5 = round(len(pair_ids) / 11.0)
        for i, pid in enumerate(pair_ids):
            subset = "5k" if i < n5 else "50k"
            part = partition_of[sid]
            assignment[pid] = (subset, part)
            buckets[(subset, part)].append(pid)
    splits = [
        DatasetSplit(sub, part, tuple(sorted(pids)))
        for (sub, part), pids in sorted(buckets.items())
    ]
    return splits, assignment


class ImageStore:
    """Content-addressed PNG store under <root>/images; returns relative keys."""

    def __init__(self, root):
        self.root = str(root)
        self._seen = {}

    def put(self, view) -> str:
        import hashlib

        data = view_to_png(view)
        h = hashlib.sha256(data).hexdigest()[:16]
        key = f"images/{h}.png"
        if h not in self._seen:
            path = os.path.join(self.root, key)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "wb") as fh:
                fh.write(data)
            self._seen[h] = key
        return key


def instance_to_record(inst: TaskInstance, assignment) -> dict:
    pair = inst.pair
    subset, partition = assignment.get(pair.pair_id, (None, None))
    rec = {
        "instance_id": inst.instance_id,
        "kind": inst.kind,
        "scene_id": pair.scene_id,
        "pair_id": pair.pair_id,
        "mode": pair.mode,
        "init_pose": pose_to_vec6(pair.init_pose),
        "target_pose": pose_to_vec6(pair.target_pose),
        "gt_actions": list(pair.actions),
        "unified_distance": pair.d_unified,
        "difficulty": pair.difficulty,
        "subset": subset,
        "partition": partition,
        "images": inst.images,
    }
    if pair.f_init is not None:
        rec["f_init"] = pair.f_init
        rec["f_tgt"] = pair.f_tgt
    if inst.kind == "p2v":
        rec["option_images"] = inst.option_images
        rec["correct_index"] = inst.correct_index
    elif inst.kind == "v2p":
        rec["option_sequences"] = inst.option_sequences
        rec["correct_index"] = inst.correct_index
    else:
        rec["budget"] = inst.ivp_budget
        rec["thresholds"] = inst.thresholds
    return rec


def record_to_pair(rec: dict) -> ViewPair:
    return ViewPair(
        rec["pair_id"], rec["scene_id"], rec.get("mode", "synthetic"),
        pose_from_vec6(rec["init_pose"]), pose_from_vec6(rec["target_pose"]),
        tuple(rec["gt_actions"]), rec["unified_distance"], rec["difficulty"],
        rec.get("f_init"), rec.get("f_tgt"),
    )


def generate_dataset(
    scenes,
    out_dir,
    cfg: PipelineConfig = PipelineConfig(),
    pairs_per_scene: int = 5,
    intrinsics: CameraIntrinsics = CameraIntrinsics(),
    steps: StepSizes = StepSizes(),
    mode: str = "synthetic",
    frames_by_scene: dict | None = None,
    verdict_path=None,
    min_scenes_for_split: int = 10,
) -> dict:
    """Run the full pipeline over ``scenes`` and write a dataset directory:
    manifest.jsonl (one task instance per line), images/, and meta.json.
    Deterministic for a fixed config: one seed, byte-identical output."""
    import random as _random

    os.makedirs(str(out_dir), exist_ok=True)
    scenes = sorted(scenes, key=lambda s: s.scene_id)
    kept_ids = set(filter_scenes([s.scene_id for s in scenes], verdict_path))
    scenes = [s for s in scenes if s.scene_id in kept_ids]

    store = ImageStore(out_dir)
    instances = []
    pairs_by_scene: dict = {}
    skip_counts: dict = {}

    for scene in scenes:
        rng = _random.Random(derive_seed(cfg.seed, scene.scene_id))
        renderer_cache: dict = {}

        def renderer(pose, _scene=scene, _cache=renderer_cache):
            key = (tuple(pose.position.tolist()), tuple(pose.rotation.ravel().tolist()))
            if key not in _cache:
                _cache[key] = render_view(_scene, pose, intrinsics)
            return _cache[key]

        top_view = render_view(scene, topdown_pose(scene, intrinsics), intrinsics)
        top_key = store.put(top_view)
        emitted = 0
        for i in range(pairs_per_scene):
            pair_id = f"{scene.scene_id}-{i:04d}"
            try:
                if mode == "trajectory":
                    frames = (frames_by_scene or {}).get(scene.scene_id, [])
                    pair = sample_trajectory_pair(scene.scene_id, frames, cfg, rng, steps, pair_id)
                else:
                    pair = sample_synthetic_pair(scene, cfg, rng, steps, pair_id)
                options = gen_distractors(pair, renderer, cfg, rng, steps)
            except PairSkip as skip:
                skip_counts[skip.reason] = skip_counts.get(skip.reason, 0) + 1
                log.info("pair %s skipped: %s", pair_id, skip.reason)
                continue
            image_keys = {
                "init": store.put(renderer(pair.init_pose)),
                "topdown": top_key,
                "target": store.put(options[0][1]),
            }
            for j, (_, view) in enumerate(options):
                image_keys[f"option{j}"] = store.put(view)
            instances.extend(build_instances(pair, options, rng, cfg, steps, image_keys))
            pairs_by_scene.setdefault(scene.scene_id, []).append(pair_id)
            emitted += 1
        log.info("scene %s: %d pairs", scene.scene_id, emitted)

    if len(pairs_by_scene) >= min_scenes_for_split:
        splits, assignment = split_dataset(pairs_by_scene, cfg.seed)
    else:
        splits, assignment = [], {}

    records = sorted(
        (instance_to_record(inst, assignment) for inst in instances),
        key=lambda r: r["instance_id"],
    )
    write_jsonl(os.path.join(str(out_dir), "manifest.jsonl"), records)

    meta = {
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()},
        "pairs": sum(len(v) for v in pairs_by_scene.values()),
        "instances": len(records),
        "scenes": len(pairs_by_scene),
        "skips": dict(sorted(skip_counts.items())),
        "splits": [
            {"subset": s.subset, "partition": s.partition, "pairs": len(s.pair_ids)}
            for s in splits
        ],
    }
    with open(os.path.join(str(out_dir), "meta.json"), "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(meta) + "\n")
    return meta
