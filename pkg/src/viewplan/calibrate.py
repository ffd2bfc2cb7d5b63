"""Success-threshold calibration: sweep a grid of (position, rotation)
thresholds and score the rule-based success indicator against human
match/no-match labels."""

from __future__ import annotations

from dataclasses import dataclass

from .se3 import Pose, StepSizes, pose_from_vec6, pose_to_vec6, view_distance
from .util import read_jsonl, write_jsonl

POSITION_GRID = (0.25, 0.5, 0.75, 1.0)
ROTATION_GRID = (30.0, 60.0, 90.0)
LABELS = ("match", "no-match")


@dataclass(frozen=True)
class CalibrationRecord:
    estimate: Pose
    target: Pose
    label: str  # "match" | "no-match"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")


@dataclass(frozen=True)
class CalibrationCell:
    pos_thr: float
    rot_thr: float
    precision: float
    recall: float
    f1: float
    accuracy: float
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass(frozen=True)
class CalibrationResult:
    cells: tuple
    best: CalibrationCell  # max F1; ties broken toward smaller thresholds
    degenerate: bool  # labels lack a positive or a negative example


def calibrate_thresholds(
    records,
    position_grid=POSITION_GRID,
    rotation_grid=ROTATION_GRID,
    steps: StepSizes = StepSizes(),
) -> CalibrationResult:
    """Score the thresholded success indicator as a classifier of the human
    label at every grid cell."""
    records = list(records)
    if not records:
        raise ValueError("no calibration records")
    dists = [view_distance(r.estimate, r.target, steps) for r in records]
    labels = [r.label == "match" for r in records]
    n_pos = sum(labels)
    degenerate = n_pos == 0 or n_pos == len(labels)

    cells = []
    for pos_thr in sorted(position_grid):
        for rot_thr in sorted(rotation_grid):
            tp = fp = fn = tn = 0
            for d, positive in zip(dists, labels):
                pred = d.d_pos <= pos_thr and d.d_rot <= rot_thr
                if pred and positive:
                    tp += 1
                elif pred:
                    fp += 1
                elif positive:
                    fn += 1
                else:
                    tn += 1
            precision = tp / (tp + fp) if tp + fp else 0.0
            recall = tp / (tp + fn) if tp + fn else 0.0
            f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
            accuracy = (tp + tn) / len(records)
            cells.append(
                CalibrationCell(pos_thr, rot_thr, precision, recall, f1, accuracy, tp, fp, fn, tn)
            )
    # grid is iterated smallest-first, so strict '>' keeps the smallest argmax
    best = cells[0]
    for cell in cells[1:]:
        if cell.f1 > best.f1:
            best = cell
    return CalibrationResult(tuple(cells), best, degenerate)


def format_table(result: CalibrationResult) -> str:
    """Human-readable sweep table: one row per threshold pair."""
    lines = ["pos_thr_m  rot_thr_deg  precision  recall  f1     accuracy"]
    for c in result.cells:
        mark = " *" if c == result.best else ""
        lines.append(
            f"{c.pos_thr:<9.2f}  {c.rot_thr:<11.0f}  {c.precision:<9.3f}  "
            f"{c.recall:<6.3f}  {c.f1:<5.3f}  {c.accuracy:.3f}{mark}"
        )
    return "\n".join(lines)


def save_records(records, path) -> None:
    write_jsonl(
        path,
        (
            {
                "estimate": pose_to_vec6(r.estimate),
                "target": pose_to_vec6(r.target),
                "label": r.label,
            }
            for r in records
        ),
    )


def load_records(path) -> list:
    return [
        CalibrationRecord(
            pose_from_vec6(rec["estimate"]), pose_from_vec6(rec["target"]), rec["label"]
        )
        for rec in read_jsonl(path)
    ]
