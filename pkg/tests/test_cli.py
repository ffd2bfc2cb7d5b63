import json
import subprocess
import sys

import pytest

from viewplan.cli import main
from viewplan.scene import SceneSpec, procedural_scene, save_scene
from viewplan.util import read_jsonl

CFG = {
    "render": {"width": 64, "height": 64, "v_fov_deg": 60.0},
    "procedural": {"n_points": 2000, "n_boxes": 2},
}


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(CFG))
    return str(path)


def run_cli(args, capsys):
    code = main(args)
    out = capsys.readouterr().out
    return code, out


class TestBasicCommands:
    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 2

    def test_render(self, tmp_path, config_file, capsys):
        out_png = tmp_path / "view.png"
        code, out = run_cli([
            "render", "--scene", "proc-1", "--pose", "0,0,1.5,-90,0,0",
            "--out", str(out_png), "--config", config_file,
        ], capsys)
        assert code == 0
        assert out_png.exists()
        assert json.loads(out)["out"] == str(out_png)

    def test_topdown(self, tmp_path, config_file, capsys):
        out_png = tmp_path / "top.png"
        code, out = run_cli([
            "topdown", "--scene", "proc-1", "--out", str(out_png),
            "--config", config_file,
        ], capsys)
        assert code == 0
        assert out_png.exists()
        assert json.loads(out)["pose"][5] == pytest.approx(0.0)  # heading 0

    def test_plan_yaw_pair(self, capsys):
        # +60 deg yaw offset plans as exactly two turn actions
        code, out = run_cli([
            "plan", "--init", "0,0,1.5,-90,0,0", "--target", "0,0,1.5,-90,0,60",
        ], capsys)
        assert code == 0
        payload = json.loads(out)
        assert payload["actions"] == ["turn_left", "turn_left"]
        assert payload["final_error"] == pytest.approx(0.0, abs=1e-9)

    def test_render_from_ply_root(self, tmp_path, config_file, capsys):
        scene = procedural_scene(2, SceneSpec(n_points=1500, n_boxes=2))
        save_scene(scene, tmp_path / "room.ply")
        out_png = tmp_path / "v.png"
        code, _ = run_cli([
            "render", "--scene", "room", "--scene-root", str(tmp_path),
            "--pose", "0,0,1.5,-90,0,0", "--out", str(out_png),
            "--config", config_file,
        ], capsys)
        assert code == 0 and out_png.exists()


class TestDataCommands:
    def test_gen_data_deterministic(self, tmp_path, config_file, capsys):
        args = [
            "gen-data", "--proc-scenes", "2", "--pairs-per-scene", "2",
            "--seed", "7", "--config", config_file,
        ]
        code, out1 = run_cli(args + ["--out", str(tmp_path / "a")], capsys)
        assert code == 0
        code, out2 = run_cli(args + ["--out", str(tmp_path / "b")], capsys)
        assert code == 0
        assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (
            tmp_path / "b" / "manifest.jsonl"
        ).read_bytes()
        meta = json.loads(out1)
        assert meta["instances"] == 3 * meta["pairs"]

    def test_episode_run_oracle(self, tmp_path, config_file, capsys):
        code, _ = run_cli([
            "gen-data", "--proc-scenes", "2", "--pairs-per-scene", "2",
            "--seed", "3", "--out", str(tmp_path / "data"), "--config", config_file,
        ], capsys)
        assert code == 0
        code, out = run_cli([
            "episode-run", "--manifest", str(tmp_path / "data" / "manifest.jsonl"),
            "--agent", "oracle", "--out", str(tmp_path / "logs.jsonl"),
            "--config", config_file,
        ], capsys)
        assert code == 0
        payload = json.loads(out)
        assert payload["success_rate"] == 1.0
        assert (tmp_path / "logs.jsonl").exists()

    def test_graph_build_stats_sample_distill(self, tmp_path, config_file, capsys):
        code, _ = run_cli([
            "gen-data", "--proc-scenes", "2", "--pairs-per-scene", "2",
            "--seed", "5", "--out", str(tmp_path / "data"), "--config", config_file,
        ], capsys)
        assert code == 0
        code, _ = run_cli([
            "episode-run", "--manifest", str(tmp_path / "data" / "manifest.jsonl"),
            "--agent", "oracle", "--out", str(tmp_path / "logs.jsonl"),
            "--config", config_file,
        ], capsys)
        assert code == 0
        code, out = run_cli([
            "graph-build", "--logs", str(tmp_path / "logs.jsonl"),
            "--store", str(tmp_path / "graph"), "--config", config_file,
        ], capsys)
        assert code == 0
        stats = json.loads(out)
        assert stats["nodes"] > 0

        code, out = run_cli(["graph-stats", "--store", str(tmp_path / "graph")], capsys)
        assert code == 0
        assert "action_distribution" in json.loads(out)

        scene_id = read_jsonl(tmp_path / "graph" / "nodes.jsonl")[0]["scene_id"]
        code, out = run_cli([
            "graph-sample", "--store", str(tmp_path / "graph"), "--scene", scene_id,
            "--length", "1,2", "--count", "2", "--seed", "1",
        ], capsys)
        assert code == 0

        code, out = run_cli([
            "distill", "--store", str(tmp_path / "graph"),
            "--out", str(tmp_path / "demos.jsonl"), "--seed", "2",
        ], capsys)
        assert code == 0
        assert (tmp_path / "demos.jsonl").exists()

    def test_calibrate_recovers_rule(self, tmp_path, capsys):
        import random as _random

        sys.path.insert(0, "tests")
        from test_calibrate import synth_records
        from viewplan.calibrate import save_records

        save_records(synth_records(300, _random.Random(1)), tmp_path / "rec.jsonl")
        code, out = run_cli(["calibrate", "--records", str(tmp_path / "rec.jsonl")], capsys)
        assert code == 0
        best = json.loads(out.strip().splitlines()[-1])["best"]
        assert (best["pos_thr"], best["rot_thr"]) == (0.5, 30.0)
        assert best["f1"] == pytest.approx(1.0)

    def test_analyze(self, tmp_path, config_file, capsys):
        code, _ = run_cli([
            "gen-data", "--proc-scenes", "2", "--pairs-per-scene", "2",
            "--seed", "9", "--out", str(tmp_path / "data"), "--config", config_file,
        ], capsys)
        code, _ = run_cli([
            "episode-run", "--manifest", str(tmp_path / "data" / "manifest.jsonl"),
            "--agent", "random", "--out", str(tmp_path / "logs.jsonl"),
            "--config", config_file, "--seed", "1",
        ], capsys)
        assert code == 0
        code, out = run_cli([
            "analyze", "--logs", str(tmp_path / "logs.jsonl"),
            "--manifest", str(tmp_path / "data" / "manifest.jsonl"),
            "--out", str(tmp_path / "report"), "--coverage", "--config", config_file,
        ], capsys)
        assert code == 0
        assert (tmp_path / "report" / "success.csv").exists()
        assert (tmp_path / "report" / "turns.png").exists()
        assert (tmp_path / "report" / "coverage.csv").exists()
        assert (tmp_path / "report" / "summary.json").exists()

    def test_error_exit_code(self, tmp_path, capsys):
        code = main(["graph-stats", "--store", str(tmp_path / "missing")])
        assert code == 1


class TestStdioServeSubprocess:
    def test_serve_stdio_subprocess(self, tmp_path, config_file):
        # build a tiny manifest, then speak the wire protocol to a subprocess
        code = main([
            "gen-data", "--proc-scenes", "2", "--pairs-per-scene", "2",
            "--seed", "11", "--out", str(tmp_path / "data"), "--config", config_file,
        ])
        assert code == 0
        proc = subprocess.Popen(
            [sys.executable, "-m", "viewplan.cli", "serve", "--transport", "stdio",
             "--manifest", str(tmp_path / "data" / "manifest.jsonl"),
             "--config", config_file],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
        )
        try:
            manifest = read_jsonl(tmp_path / "data" / "manifest.jsonl")
            ivp = next(r for r in manifest if r["kind"] == "ivp")
            proc.stdin.write(json.dumps({"type": "reset", "instance_id": ivp["instance_id"]}) + "\n")
            proc.stdin.flush()
            reply = json.loads(proc.stdout.readline())
            assert reply["type"] == "observation"
            proc.stdin.write(json.dumps({
                "type": "act", "episode_id": reply["episode_id"],
                "response": "<action>answer(0,0,0,0,0,0)</action>",
            }) + "\n")
            proc.stdin.flush()
            result = json.loads(proc.stdout.readline())
            assert result["type"] == "result"
        finally:
            proc.stdin.close()
            proc.wait(timeout=30)
