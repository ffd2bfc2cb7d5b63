"""Scoring and diagnostics over rollout logs and datasets: success tables,
distance-binned curves, the 12-factor correlation analysis, point-cloud
coverage curves, and turn distributions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np

from .render import CameraIntrinsics, visible_vertices
from .se3 import Pose, StepSizes, view_distance

DEFAULT_ROT_BINS = (0.0, 30.0, 60.0, 90.0, float("inf"))
DEFAULT_POS_BINS = (0.0, 0.5, 1.0, 2.0, float("inf"))
MIN_TRAJ_FRACTION = 0.01  # turns with fewer trajectories than this are dropped


@dataclass(frozen=True)
class FactorVector:
    """12 per-pair factors: geometric distances, visual overlap, and
    directional geometry. Degenerate pairs (zero displacement) carry None
    for bearing/alignment/elevation."""

    pos_dist: float
    rot_dist: float
    unified_dist: float
    horiz_dist: float
    height_diff: float
    vis_init_norm: float
    vis_target_norm: float
    vis_iou: float
    forward_alignment: float | None
    target_bearing: float | None
    target_elevation: float | None
    orientation_agreement: float

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def camera_forward_analysis(pose: Pose) -> np.ndarray:
    """Forward axis used by the factor formulas: minus the third rotation
    column. (The action executor's forward is +Z; the factor definitions are
    kept exactly as published, so the two conventions differ by sign.)"""
    return -pose.rotation[:, 2]


def compute_factors(
    init: Pose,
    target: Pose,
    vis_init=None,
    vis_target=None,
    steps: StepSizes = StepSizes(),
) -> FactorVector:
    """All 12 factors; visibility sets may be any index iterables."""
    d = view_distance(init, target, steps)
    delta = target.position - init.position
    horiz = float(np.linalg.norm(delta[:2]))
    height = abs(float(delta[2]))

    si = set(int(i) for i in (vis_init if vis_init is not None else ()))
    st = set(int(i) for i in (vis_target if vis_target is not None else ()))
    inter = len(si & st)
    union = len(si | st)
    vis_init_norm = inter / len(si) if si else 0.0
    vis_target_norm = inter / len(st) if st else 0.0
    vis_iou = inter / union if union else 0.0

    f_init = camera_forward_analysis(init)
    f_target = camera_forward_analysis(target)
    agreement = float(np.clip(np.dot(f_init, f_target), -1.0, 1.0))

    norm = float(np.linalg.norm(delta))
    if norm < 1e-12:
        alignment = bearing = elevation = None
    else:
        dhat = delta / norm
        alignment = float(np.clip(np.dot(f_init, dhat), -1.0, 1.0))
        bearing = math.degrees(math.acos(alignment))
        elevation = math.degrees(math.atan2(delta[2], horiz))

    return FactorVector(
        d.d_pos, d.d_rot, d.d_unified, horiz, height,
        vis_init_norm, vis_target_norm, vis_iou,
        alignment, bearing, elevation, agreement,
    )


def _average_ranks(xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    order = np.argsort(xs, kind="stable")
    ranks = np.empty(len(xs))
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[order[j + 1]] == xs[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average of 1-based ranks
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    """Rank correlation with average ranks for ties.

    Raises on fewer than two samples or a constant input (undefined rank
    correlation)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("inputs must be 1-d arrays of equal length")
    if len(xs) < 2:
        raise ValueError("need at least two samples")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise ValueError("constant input: rank correlation undefined")
    rx = _average_ranks(xs)
    ry = _average_ranks(ys)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    return float((rx * ry).sum() / math.sqrt((rx * rx).sum() * (ry * ry).sum()))


def factor_success_correlations(factor_vectors, successes) -> dict:
    """Spearman rho between each factor and binary success, skipping
    degenerate (None) entries and constant columns (reported as None)."""
    out = {}
    names = [f.name for f in fields(FactorVector)]
    succ = [1.0 if s else 0.0 for s in successes]
    for name in names:
        xs, ys = [], []
        for fv, s in zip(factor_vectors, succ):
            v = getattr(fv, name)
            if v is None:
                continue
            xs.append(v)
            ys.append(s)
        try:
            out[name] = spearman(xs, ys)
        except ValueError:
            out[name] = None
    return out


@dataclass(frozen=True)
class SuccessTable:
    short_rate: float | None
    long_rate: float | None
    all_rate: float
    counts: dict  # split -> (successes, total)
    rot_bins: tuple  # ((lo, hi, rate, n), ...)
    pos_bins: tuple


def success_table(
    logs,
    pairs_by_id: dict,
    rot_bin_edges=DEFAULT_ROT_BINS,
    pos_bin_edges=DEFAULT_POS_BINS,
    steps: StepSizes = StepSizes(),
) -> SuccessTable:
    """Success rates by Short/Long split and binned over pair distances.

    ``pairs_by_id`` maps pair/instance ids to objects with ``d_unified``,
    ``init_pose`` and ``target_pose`` (ViewPair works); each log's
    ``instance_id`` must resolve after stripping a '-ivp' style suffix."""
    rows = []
    for log in logs:
        pid = log.instance_id
        base = pid.rsplit("-", 1)[0] if pid not in pairs_by_id else pid
        if pid in pairs_by_id:
            pair = pairs_by_id[pid]
        elif base in pairs_by_id:
            pair = pairs_by_id[base]
        else:
            raise KeyError(f"log references unknown pair {pid!r}")
        d = view_distance(pair.init_pose, pair.target_pose, steps)
        rows.append((pair.d_unified, d.d_rot, d.d_pos, bool(log.outcome.success)))

    def rate(items):
        return (sum(1 for s in items if s) / len(items)) if items else None

    short = [s for du, _, _, s in rows if du < 3.0]
    long_ = [s for du, _, _, s in rows if du >= 3.0]
    all_rate = rate([s for *_, s in rows])

    def bins(edges, key_idx):
        out = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            inside = [row[3] for row in rows if lo <= row[key_idx] < hi]
            out.append((lo, hi, rate(inside), len(inside)))
        return tuple(out)

    counts = {
        "short": (sum(short), len(short)),
        "long": (sum(long_), len(long_)),
        "all": (sum(r[3] for r in rows), len(rows)),
    }
    return SuccessTable(
        rate(short), rate(long_), 0.0 if all_rate is None else all_rate, counts,
        bins(rot_bin_edges, 1), bins(pos_bin_edges, 2),
    )


@dataclass(frozen=True)
class CoverageCurve:
    turns: tuple
    mean: tuple
    std: tuple
    counts: tuple


def coverage_curves(
    logs,
    scenes_by_id: dict,
    intrinsics: CameraIntrinsics = CameraIntrinsics(),
    steps: StepSizes = StepSizes(),
) -> tuple:
    """(scene coverage, target intersection) cumulative curves.

    For every trajectory the per-turn visible-vertex sets are accumulated as
    unions: scene coverage is |union V_t| / |V_total|; target intersection is
    |union V_t intersect V_target| / |V_target|. Curves report per-turn mean
    and standard deviation over trajectories; turns carried by fewer than 1%
    of the maximum trajectory count are excluded.
    """
    from .se3 import pose_from_vec6
    from .actions import apply_sequence

    scene_ratios: dict = {}
    target_ratios: dict = {}
    for log in logs:
        scene = scenes_by_id[log.scene_id]
        total = len(scene)
        target_pose = pose_from_vec6(log.target_pose)
        v_target = set(int(i) for i in visible_vertices(scene, target_pose, intrinsics))
        pose = pose_from_vec6(log.init_pose)
        snap = log.variant != "no_snap"
        seen: set = set()
        turn_list = [pose]
        for t in log.turns:
            if t.actions:
                pose, _ = apply_sequence(pose, t.actions, steps, snap)
                turn_list.append(pose)
        for turn_idx, p in enumerate(turn_list):
            seen |= set(int(i) for i in visible_vertices(scene, p, intrinsics))
            scene_ratios.setdefault(turn_idx, []).append(len(seen) / total)
            inter = len(seen & v_target)
            target_ratios.setdefault(turn_idx, []).append(
                inter / len(v_target) if v_target else 0.0
            )

    def curve(ratios: dict) -> CoverageCurve:
        if not ratios:
            return CoverageCurve((), (), (), ())
        max_count = max(len(v) for v in ratios.values())
        floor = max(1, math.ceil(MIN_TRAJ_FRACTION * max_count))
        turns = tuple(t for t in sorted(ratios) if len(ratios[t]) >= floor)
        mean = tuple(float(np.mean(ratios[t])) for t in turns)
        std = tuple(float(np.std(ratios[t])) for t in turns)
        counts = tuple(len(ratios[t]) for t in turns)
        return CoverageCurve(turns, mean, std, counts)

    return curve(scene_ratios), curve(target_ratios)


def turn_distribution(logs) -> dict:
    """Histogram over turns used: total episodes, successes, success rate."""
    totals: dict = {}
    succ: dict = {}
    for log in logs:
        t = log.outcome.turns_used
        totals[t] = totals.get(t, 0) + 1
        if log.outcome.success:
            succ[t] = succ.get(t, 0) + 1
    return {
        t: {
            "episodes": totals[t],
            "successes": succ.get(t, 0),
            "success_rate": succ.get(t, 0) / totals[t],
        }
        for t in sorted(totals)
    }


def write_success_csv(table: SuccessTable, path) -> None:
    with open(str(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "success_rate", "successes", "episodes"])
        for split, rate in (("short", table.short_rate), ("long", table.long_rate),
                            ("all", table.all_rate)):
            s, n = table.counts[split]
            w.writerow([split, "" if rate is None else f"{rate:.4f}", s, n])
        w.writerow([])
        w.writerow(["rot_bin_lo", "rot_bin_hi", "success_rate", "episodes"])
        for lo, hi, rate, n in table.rot_bins:
            w.writerow([lo, hi, "" if rate is None else f"{rate:.4f}", n])
        w.writerow([])
        w.writerow(["pos_bin_lo", "pos_bin_hi", "success_rate", "episodes"])
        for lo, hi, rate, n in table.pos_bins:
            w.writerow([lo, hi, "" if rate is None else f"{rate:.4f}", n])


def write_coverage_csv(scene_curve: CoverageCurve, target_curve: CoverageCurve, path) -> None:
    with open(str(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["turn", "scene_mean", "scene_std", "target_mean", "target_std", "episodes"])
        for i, t in enumerate(scene_curve.turns):
            w.writerow([
                t, f"{scene_curve.mean[i]:.6f}", f"{scene_curve.std[i]:.6f}",
                f"{target_curve.mean[i]:.6f}" if i < len(target_curve.mean) else "",
                f"{target_curve.std[i]:.6f}" if i < len(target_curve.std) else "",
                scene_curve.counts[i],
            ])


def plot_coverage(scene_curve: CoverageCurve, target_curve: CoverageCurve, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, curve, title in zip(
        axes, (scene_curve, target_curve), ("Scene coverage", "Target intersection")
    ):
        t = np.array(curve.turns)
        m = np.array(curve.mean)
        s = np.array(curve.std)
        ax.plot(t, m, marker="o")
        ax.fill_between(t, m - s, m + s, alpha=0.25)
        ax.set_xlabel("turn")
        ax.set_ylabel("ratio")
        ax.set_ylim(0, 1)
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(str(path), dpi=110)
    plt.close(fig)


def plot_turn_distribution(dist: dict, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    turns = sorted(dist)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    axes[0].bar(turns, [dist[t]["episodes"] for t in turns])
    axes[0].set_title("Rollouts by turn count")
    axes[1].bar(turns, [dist[t]["successes"] for t in turns])
    axes[1].set_title("Successful rollouts")
    axes[2].bar(turns, [dist[t]["success_rate"] for t in turns])
    axes[2].set_title("Success rate")
    axes[2].set_ylim(0, 1)
    for ax in axes:
        ax.set_xlabel("turns used")
    fig.tight_layout()
    fig.savefig(str(path), dpi=110)
    plt.close(fig)
