import math
import random
from dataclasses import fields

import numpy as np
import pytest

from helpers import random_pose
from viewplan.analysis import (
    FactorVector,
    compute_factors,
    coverage_curves,
    factor_success_correlations,
    spearman,
    success_table,
    turn_distribution,
    write_coverage_csv,
    write_success_csv,
)
from viewplan.episode import EpisodeOutcome, RolloutLog, TurnRecord
from viewplan.render import CameraIntrinsics
from viewplan.scene import Scene
from viewplan.se3 import EulerAngles, Pose, StepSizes, euler_compose, pose_to_vec6

STEPS = StepSizes()


def upright(x=0.0, y=0.0, z=1.5, heading=0.0, pitch=-90.0):
    return euler_compose(EulerAngles(pitch, 0.0, heading), np.array([x, y, z]))


class TestFactors:
    def test_target_ahead_gives_full_alignment(self):
        init = Pose.identity()
        fwd = -init.rotation[:, 2]  # the factor convention's forward axis
        target = Pose(init.position + 2.0 * fwd, init.rotation)
        f = compute_factors(init, target)
        assert f.forward_alignment == pytest.approx(1.0)
        assert f.target_bearing == pytest.approx(0.0)

    def test_target_behind_gives_negative_alignment(self):
        init = Pose.identity()
        fwd = -init.rotation[:, 2]
        target = Pose(init.position - 2.0 * fwd, init.rotation)
        f = compute_factors(init, target)
        assert f.forward_alignment == pytest.approx(-1.0)
        assert f.target_bearing == pytest.approx(180.0)

    def test_same_facing_agreement(self):
        a = upright(0, 0)
        b = upright(3, 1)
        f = compute_factors(a, b)
        assert f.orientation_agreement == pytest.approx(1.0)

    def test_opposite_facing_agreement(self):
        a = upright(0, 0, heading=0.0)
        b = upright(3, 1, heading=180.0)
        f = compute_factors(a, b)
        assert f.orientation_agreement == pytest.approx(-1.0)

    def test_elevation_45_for_unit_xz(self):
        init = Pose(np.zeros(3), np.eye(3))
        target = Pose(np.array([1.0, 0.0, 1.0]), np.eye(3))
        f = compute_factors(init, target)
        assert f.target_elevation == pytest.approx(45.0)

    def test_identical_visible_sets_full_iou(self):
        f = compute_factors(upright(0, 0), upright(1, 0), vis_init=[1, 2, 3],
                            vis_target=[1, 2, 3])
        assert f.vis_iou == pytest.approx(1.0)
        assert f.vis_init_norm == pytest.approx(1.0)
        assert f.vis_target_norm == pytest.approx(1.0)

    def test_disjoint_visible_sets(self):
        f = compute_factors(upright(0, 0), upright(1, 0), vis_init=[1, 2],
                            vis_target=[3, 4])
        assert f.vis_iou == 0.0

    def test_asymmetric_norms(self):
        f = compute_factors(upright(0, 0), upright(1, 0), vis_init=[1, 2, 3, 4],
                            vis_target=[1, 2])
        assert f.vis_init_norm == pytest.approx(0.5)
        assert f.vis_target_norm == pytest.approx(1.0)

    def test_zero_displacement_flags_none(self):
        p = upright(0, 0)
        q = upright(0, 0, heading=30.0)
        f = compute_factors(p, q)
        assert f.forward_alignment is None
        assert f.target_bearing is None
        assert f.target_elevation is None
        assert f.orientation_agreement is not None

    def test_distance_factors(self):
        init = upright(0, 0, z=1.0)
        target = upright(3, 4, z=2.0)
        f = compute_factors(init, target)
        assert f.horiz_dist == pytest.approx(5.0)
        assert f.height_diff == pytest.approx(1.0)
        assert f.pos_dist == pytest.approx(math.sqrt(26.0))

    def test_ranges_hold_on_random_pairs(self):
        rng = random.Random(1)
        for _ in range(200):
            f = compute_factors(random_pose(rng), random_pose(rng),
                                vis_init=[1, 2], vis_target=[2, 3])
            assert 0 <= f.vis_iou <= 1
            assert 0 <= f.vis_init_norm <= 1
            assert 0 <= f.vis_target_norm <= 1
            assert -1 <= f.orientation_agreement <= 1
            if f.forward_alignment is not None:
                assert -1 <= f.forward_alignment <= 1
                assert 0 <= f.target_bearing <= 180


class TestSpearman:
    def test_increasing_is_one(self):
        assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)

    def test_reversed_is_minus_one(self):
        assert spearman([1, 2, 3, 4], [4, 1, 0, -2]) == pytest.approx(-1.0)

    def test_tie_case_matches_hand_oracle(self):
        # xs = [1, 1, 2] -> average ranks [1.5, 1.5, 3]; ys = [1, 2, 3] -> [1, 2, 3]
        # pearson of ranks = 1.5 / sqrt(1.5 * 2) = sqrt(3)/2
        rho = spearman([1, 1, 2], [1, 2, 3])
        assert rho == pytest.approx(math.sqrt(3) / 2)

    def test_monotone_transform_invariance(self):
        rng = random.Random(2)
        xs = [rng.uniform(0, 10) for _ in range(50)]
        ys = [rng.uniform(0, 10) for _ in range(50)]
        base = spearman(xs, ys)
        assert spearman([math.exp(x) for x in xs], ys) == pytest.approx(base)
        assert spearman(xs, [y ** 3 for y in ys]) == pytest.approx(base)

    def test_constant_input_raises(self):
        with pytest.raises(ValueError, match="constant"):
            spearman([1, 1, 1], [1, 2, 3])

    def test_short_input_raises(self):
        with pytest.raises(ValueError):
            spearman([1], [2])

    def test_correlation_map_skips_degenerate(self):
        fvs = [
            compute_factors(upright(0, 0), upright(i + 1.0, 0.5 * i))
            for i in range(10)
        ]
        rhos = factor_success_correlations(fvs, [i % 2 == 0 for i in range(10)])
        assert set(rhos) == {f.name for f in fields(FactorVector)}


def make_log(eid, scene_id, instance_id, success, turns_used, init, target,
             action_turns=()):
    turns = []
    for i, acts in enumerate(action_turns):
        turns.append(TurnRecord(i + 1, "<action>" + "|".join(acts) + "</action>",
                                True, list(acts), None, [0, 0, 0, 0, 0, 0]))
    outcome = EpisodeOutcome(success, 1.1 if success else 0.1, True, 0.1, 5.0,
                             turns_used, "answer")
    return RolloutLog(eid, instance_id, scene_id, "default",
                      pose_to_vec6(init), pose_to_vec6(target), turns, outcome)


class FakePair:
    def __init__(self, d_unified, init_pose, target_pose):
        self.d_unified = d_unified
        self.init_pose = init_pose
        self.target_pose = target_pose


class TestSuccessTable:
    def _setup(self):
        a = upright(0, 0)
        pairs = {
            "p1": FakePair(2.0, a, upright(1.0, 0)),        # short
            "p2": FakePair(2.5, a, upright(0, 1.0)),        # short
            "p3": FakePair(4.0, a, upright(2.0, 0)),        # long
            "p4": FakePair(5.0, a, upright(0, 2.5)),        # long
        }
        logs = [
            make_log("e1", "s", "p1-ivp", True, 3, a, pairs["p1"].target_pose),
            make_log("e2", "s", "p2-ivp", False, 10, a, pairs["p2"].target_pose),
            make_log("e3", "s", "p3-ivp", True, 5, a, pairs["p3"].target_pose),
            make_log("e4", "s", "p4-ivp", False, 10, a, pairs["p4"].target_pose),
        ]
        return logs, pairs

    def test_half_success(self):
        logs, pairs = self._setup()
        table = success_table(logs, pairs)
        assert table.all_rate == pytest.approx(0.5)
        assert table.short_rate == pytest.approx(0.5)
        assert table.long_rate == pytest.approx(0.5)

    def test_all_success_everywhere(self):
        logs, pairs = self._setup()
        logs = [
            make_log(l.episode_id, l.scene_id, l.instance_id, True,
                     l.outcome.turns_used, upright(0, 0), upright(1, 0))
            for l in logs
        ]
        pairs = {k: FakePair(v.d_unified, upright(0, 0), upright(1, 0))
                 for k, v in pairs.items()}
        table = success_table(logs, pairs)
        assert table.all_rate == 1.0
        for lo, hi, rate, n in table.rot_bins + table.pos_bins:
            if n:
                assert rate == 1.0

    def test_weighted_average_consistency(self):
        logs, pairs = self._setup()
        table = success_table(logs, pairs)
        s_succ, s_n = table.counts["short"]
        l_succ, l_n = table.counts["long"]
        assert table.all_rate == pytest.approx((s_succ + l_succ) / (s_n + l_n))

    def test_unknown_pair_raises(self):
        logs, pairs = self._setup()
        del pairs["p1"]
        with pytest.raises(KeyError):
            success_table(logs, pairs)

    def test_csv_written(self, tmp_path):
        logs, pairs = self._setup()
        write_success_csv(success_table(logs, pairs), tmp_path / "t.csv")
        text = (tmp_path / "t.csv").read_text()
        assert "split" in text and "rot_bin_lo" in text


class TestCoverage:
    """Five-point compass scene with hand-enumerated visibility."""

    POINTS = np.array(
        [
            [0.0, 6.0, 1.5],   # 0: N, visible at headings 0 / +-30
            [6.0, 0.0, 1.5],   # 1: E, visible at headings -60 / -90 / -120
            [0.0, -6.0, 1.5],  # 2: S, visible at headings +-180 / +-150
            [-6.0, 0.0, 1.5],  # 3: W, visible at headings 60 / 90 / 120
            [0.0, 2.0, 6.0],   # 4: U, visible looking up (pitch -30) at heading 0
        ]
    )
    INTR = CameraIntrinsics(width=64, height=64, v_fov_deg=90.0)

    def _scene(self):
        return Scene("compass", self.POINTS, np.full((5, 3), 200, dtype=np.uint8))

    def _log(self):
        init = upright(0, 0, heading=0.0)  # sees {N}
        target = upright(0, 0, pitch=-30.0, heading=0.0)  # sees {U}
        action_turns = [
            ["turn_right", "turn_right"],                       # heading -60: {E}
            ["turn_right", "turn_right", "turn_right"],         # heading -150: {S}
            ["turn_left"] * 5 + ["look_up", "look_up"],         # back to {U}
        ]
        return make_log("e1", "compass", "p-ivp", True, 4, init, target, action_turns)

    def test_matches_enumerated_oracle(self):
        scene_curve, target_curve = coverage_curves(
            [self._log()], {"compass": self._scene()}, self.INTR
        )
        assert scene_curve.turns == (0, 1, 2, 3)
        assert scene_curve.mean == pytest.approx((0.2, 0.4, 0.6, 0.8))
        assert target_curve.mean == pytest.approx((0.0, 0.0, 0.0, 1.0))

    def test_cumulative_non_decreasing(self):
        scene_curve, target_curve = coverage_curves(
            [self._log()], {"compass": self._scene()}, self.INTR
        )
        for curve in (scene_curve, target_curve):
            assert all(b >= a - 1e-12 for a, b in zip(curve.mean, curve.mean[1:]))

    def test_stationary_agent_constant(self):
        init = upright(0, 0, heading=0.0)
        log = make_log("e2", "compass", "p-ivp", False, 2, init, init,
                       [["move_forward", "move_backward"], ["turn_left", "turn_right"]])
        scene_curve, _ = coverage_curves([log], {"compass": self._scene()}, self.INTR)
        assert len(set(scene_curve.mean)) == 1

    def test_turn0_full_target_intersection(self):
        init = upright(0, 0, pitch=-30.0)  # already the target view
        log = make_log("e3", "compass", "p-ivp", True, 1, init, init, [["turn_left"]])
        _, target_curve = coverage_curves([log], {"compass": self._scene()}, self.INTR)
        assert target_curve.mean[0] == pytest.approx(1.0)

    def test_csv_output(self, tmp_path):
        curves = coverage_curves([self._log()], {"compass": self._scene()}, self.INTR)
        write_coverage_csv(curves[0], curves[1], tmp_path / "cov.csv")
        assert (tmp_path / "cov.csv").read_text().startswith("turn,")


class TestTurnDistribution:
    def test_counting_oracle(self):
        a = upright(0, 0)
        logs = (
            [make_log(f"e{i}", "s", "p-ivp", True, 3, a, a) for i in range(2)]
            + [make_log(f"f{i}", "s", "p-ivp", False, 3, a, a) for i in range(2)]
            + [make_log(f"g{i}", "s", "p-ivp", True, 10, a, a) for i in range(5)]
        )
        dist = turn_distribution(logs)
        assert dist[3] == {"episodes": 4, "successes": 2, "success_rate": 0.5}
        assert dist[10] == {"episodes": 5, "successes": 5, "success_rate": 1.0}
        assert sum(v["episodes"] for v in dist.values()) == len(logs)

    def test_empty(self):
        assert turn_distribution([]) == {}

    def test_single_bucket(self):
        a = upright(0, 0)
        logs = [make_log(f"e{i}", "s", "p-ivp", False, 10, a, a) for i in range(4)]
        assert list(turn_distribution(logs)) == [10]
