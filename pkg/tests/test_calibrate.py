import random

import numpy as np
import pytest

from helpers import random_pose
from viewplan.calibrate import (
    CalibrationRecord,
    calibrate_thresholds,
    format_table,
    load_records,
    save_records,
)
from viewplan.se3 import EulerAngles, Pose, euler_compose, view_distance


def synth_records(n, rng, pos_rule=0.5, rot_rule=30.0):
    """Labels generated exactly by the (pos_rule, rot_rule) threshold rule."""
    records = []
    for _ in range(n):
        base = random_pose(rng, span=2.0)
        # half the samples land near the rule boundary to make the sweep sharp
        dp = rng.uniform(0, 1.2)
        dr = rng.uniform(0, 80.0)
        offset = np.array([dp, 0.0, 0.0])
        est = euler_compose(
            EulerAngles(0.0, 0.0, dr), np.zeros(3)
        )
        est = Pose(base.position + offset, base.rotation @ est.rotation)
        d = view_distance(est, base)
        label = "match" if (d.d_pos <= pos_rule and d.d_rot <= rot_rule) else "no-match"
        records.append(CalibrationRecord(est, base, label))
    return records


class TestCalibration:
    def test_rule_generated_labels_recover_rule(self):
        rng = random.Random(1)
        records = synth_records(400, rng)
        result = calibrate_thresholds(records)
        assert result.best.pos_thr == 0.5
        assert result.best.rot_thr == 30.0
        assert result.best.f1 == pytest.approx(1.0)
        assert not result.degenerate

    def test_grid_shape(self):
        rng = random.Random(2)
        result = calibrate_thresholds(synth_records(50, rng))
        assert len(result.cells) == 12
        assert {c.pos_thr for c in result.cells} == {0.25, 0.5, 0.75, 1.0}
        assert {c.rot_thr for c in result.cells} == {30.0, 60.0, 90.0}

    def test_all_positive_labels(self):
        rng = random.Random(3)
        records = [
            CalibrationRecord(r.estimate, r.target, "match")
            for r in synth_records(60, rng)
        ]
        result = calibrate_thresholds(records)
        assert result.degenerate
        for cell in result.cells:
            assert cell.recall == pytest.approx(
                (cell.tp) / (cell.tp + cell.fn) if cell.tp + cell.fn else 0.0
            )
            # with only positives, precision is 1 wherever anything is predicted
            if cell.tp + cell.fp:
                assert cell.precision == pytest.approx(1.0)

    def test_empty_records_error(self):
        with pytest.raises(ValueError):
            calibrate_thresholds([])

    def test_tie_breaks_toward_smaller_thresholds(self):
        # all estimates exactly on target: every cell scores F1 = 1
        rng = random.Random(4)
        records = [
            CalibrationRecord(p, p, "match") for p in (random_pose(rng) for _ in range(10))
        ] + [
            CalibrationRecord(
                Pose(p.position + np.array([5.0, 0, 0]), p.rotation), p, "no-match"
            )
            for p in (random_pose(rng) for _ in range(10))
        ]
        result = calibrate_thresholds(records)
        assert result.best.f1 == pytest.approx(1.0)
        assert (result.best.pos_thr, result.best.rot_thr) == (0.25, 30.0)

    def test_bad_label_rejected(self):
        rng = random.Random(5)
        p = random_pose(rng)
        with pytest.raises(ValueError):
            CalibrationRecord(p, p, "maybe")

    def test_table_format_has_reference_columns(self):
        # fixture row mirroring the published sweep's schema
        rng = random.Random(6)
        table = format_table(calibrate_thresholds(synth_records(100, rng)))
        header = table.splitlines()[0]
        for col in ("pos_thr_m", "rot_thr_deg", "precision", "recall", "f1", "accuracy"):
            assert col in header
        assert len(table.splitlines()) == 13  # header + 12 cells

    def test_records_round_trip(self, tmp_path):
        rng = random.Random(7)
        records = synth_records(20, rng)
        path = tmp_path / "records.jsonl"
        save_records(records, path)
        loaded = load_records(path)
        assert len(loaded) == 20
        for a, b in zip(records, loaded):
            assert a.label == b.label
            d = view_distance(a.estimate, b.estimate)
            assert d.d_pos <= 1e-9 and d.d_rot <= 1e-5
