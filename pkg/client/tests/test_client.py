import json

import pytest

from viewplan_client.agents import GarbagePolicy, OracleReplayPolicy, policy_factory
from viewplan_client.client import (
    EpisodeClient,
    ProtocolError,
    ServerError,
    StdioTransport,
    batch_run,
    default_server_command,
    read_manifest,
    run_episode,
)


def make_client(ws):
    cmd = default_server_command(manifest_path=ws["manifest"], config=ws["config"])
    return EpisodeClient(StdioTransport(cmd))


def ivp_records(ws):
    return [r for r in read_manifest(ws["manifest"]) if r["kind"] == "ivp"]


class TestEpisodeFlow:
    def test_oracle_episode_succeeds(self, workspace):
        rec = ivp_records(workspace)[0]
        client = make_client(workspace)
        try:
            result = run_episode(client, rec["instance_id"],
                                 OracleReplayPolicy(rec["gt_actions"]))
            assert result["type"] == "result"
            assert result["success"] is True
            assert result["reward"] == pytest.approx(1.1)
        finally:
            client.close()

    def test_observation_shape(self, workspace):
        rec = ivp_records(workspace)[0]
        client = make_client(workspace)
        try:
            obs = client.reset(instance_id=rec["instance_id"])
            assert obs["type"] == "observation"
            assert obs["turn"] == 0
            assert set(obs["images"]) == {"current", "target", "topdown"}
            assert obs["pose"] == rec["init_pose"]
        finally:
            client.close()

    def test_act_without_reset_is_protocol_error(self, workspace):
        client = make_client(workspace)
        try:
            with pytest.raises(ProtocolError):
                client.act("<action>move_up</action>")
        finally:
            client.close()

    def test_double_reset_is_protocol_error(self, workspace):
        rec = ivp_records(workspace)[0]
        client = make_client(workspace)
        try:
            client.reset(instance_id=rec["instance_id"])
            with pytest.raises(ProtocolError):
                client.reset(instance_id=rec["instance_id"])
        finally:
            client.close()

    def test_server_error_surfaces(self, workspace):
        client = make_client(workspace)
        try:
            with pytest.raises(ServerError) as e:
                client.reset(instance_id="no-such-instance")
            assert e.value.code == "unknown_instance"
        finally:
            client.close()

    def test_garbage_policy_outcome(self, workspace):
        rec = ivp_records(workspace)[0]
        client = make_client(workspace)
        try:
            result = run_episode(client, rec["instance_id"], GarbagePolicy())
            assert result["format_ok"] is False
            assert result["reward"] == 0.0
            assert result["success"] is False
        finally:
            client.close()

    def test_client_transports_text_verbatim(self, workspace):
        # content validation is entirely server-side: unknown actions come
        # back as a consumed turn, not a client-side error
        rec = ivp_records(workspace)[0]
        client = make_client(workspace)
        try:
            client.reset(instance_id=rec["instance_id"])
            reply = client.act("<action>fly_up</action>")
            assert reply["type"] == "observation"
            assert reply["turn"] == 1
        finally:
            client.close()


class TestBatchRun:
    def test_ten_episodes_parallel(self, workspace):
        records = ivp_records(workspace)[:10]
        cmd = default_server_command(manifest_path=workspace["manifest"],
                                     config=workspace["config"])
        report = batch_run(
            records, policy_factory("oracle"),
            lambda: StdioTransport(cmd), parallelism=2,
        )
        assert report["episodes"] == 10
        assert len(report["outcomes"]) == 10
        assert report["success_rate"] == 1.0
        assert report["failures"] == {}

    def test_outcome_schema(self, workspace, tmp_path):
        records = ivp_records(workspace)[:3]
        cmd = default_server_command(manifest_path=workspace["manifest"],
                                     config=workspace["config"])
        out = tmp_path / "outcomes.jsonl"
        report = batch_run(records, policy_factory("oracle"),
                           lambda: StdioTransport(cmd), parallelism=1, out_path=out)
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(lines) == 3
        for rec in lines:
            for field in ("type", "instance_id", "scene_id", "variant", "success",
                          "reward", "format_ok", "d_pos", "d_rot", "turns_used",
                          "terminated_by", "init_pose", "target_pose"):
                assert field in rec
            assert rec["type"] == "outcome"

    def test_empty_slice(self, workspace):
        cmd = default_server_command(manifest_path=workspace["manifest"],
                                     config=workspace["config"])
        report = batch_run([], policy_factory("oracle"), lambda: StdioTransport(cmd))
        assert report == {
            "outcomes": [], "failures": {}, "episodes": 0, "successes": 0,
            "success_rate": 0.0,
        }

    def test_partial_failures_collected(self, workspace):
        # a record the server cannot turn into an episode fails in isolation
        records = ivp_records(workspace)[:1]
        broken = {"instance_id": "missing-instance", "kind": "ivp"}
        cmd = default_server_command(manifest_path=workspace["manifest"],
                                     config=workspace["config"])
        report = batch_run(
            [records[0], broken],
            lambda rec: OracleReplayPolicy(rec.get("gt_actions", ())),
            lambda: StdioTransport(cmd), parallelism=1,
        )
        assert report["episodes"] == 2
        assert len(report["outcomes"]) == 1
        assert "missing-instance" in report["failures"]


class TestCli:
    def test_cli_oracle(self, workspace, tmp_path, capsys):
        from viewplan_client.cli import main

        out = tmp_path / "outcomes.jsonl"
        code = main([
            "--manifest", workspace["manifest"], "--agent", "oracle",
            "--episodes", "3", "--config", workspace["config"], "--out", str(out),
        ])
        captured = capsys.readouterr().out
        assert code == 0
        summary = json.loads(captured)
        assert summary["episodes"] == 3
        assert summary["success_rate"] == 1.0
        assert out.exists()
