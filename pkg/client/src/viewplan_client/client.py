"""Client for the episode server's newline-delimited JSON protocol.

The client carries raw response text to the server and decoded messages
back; it never inspects or validates geometry or grammar. All scoring
authority stays server-side.
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess
import sys
import threading
from queue import Queue


class ProtocolError(RuntimeError):
    """The conversation violated the expected message alternation."""


class ServerError(RuntimeError):
    """The server answered with an error message."""

    def __init__(self, code: str, detail: str):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}")


class TransportClosed(RuntimeError):
    pass


class StdioTransport:
    """Server as a subprocess; one JSON object per line on stdin/stdout."""

    def __init__(self, command):
        if isinstance(command, str):
            command = shlex.split(command)
        self.proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1,
        )

    def request(self, msg: dict) -> dict:
        if self.proc.poll() is not None:
            raise TransportClosed("server process exited")
        self.proc.stdin.write(json.dumps(msg) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise TransportClosed("server closed the stream")
        return json.loads(line)

    def close(self):
        try:
            if self.proc.poll() is None:
                self.proc.stdin.close()
                self.proc.wait(timeout=10)
        except Exception:
            self.proc.kill()


class TcpTransport:
    def __init__(self, host: str, port: int, timeout: float = 60.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.fh = self.sock.makefile("rw", encoding="utf-8")

    def request(self, msg: dict) -> dict:
        self.fh.write(json.dumps(msg) + "\n")
        self.fh.flush()
        line = self.fh.readline()
        if not line:
            raise TransportClosed("server closed the connection")
        return json.loads(line)

    def close(self):
        try:
            self.fh.close()
            self.sock.close()
        except Exception:
            pass


class EpisodeClient:
    """One in-flight episode per client; messages strictly alternate."""

    def __init__(self, transport):
        self.transport = transport
        self.episode_id = None
        self.last_observation = None

    def _check(self, reply: dict, want: tuple) -> dict:
        if reply.get("type") == "error":
            raise ServerError(reply.get("code", "unknown"), reply.get("detail", ""))
        if reply.get("type") not in want:
            raise ProtocolError(f"expected {want}, got {reply.get('type')!r}")
        return reply

    def reset(self, instance_id: str | None = None, instance: dict | None = None) -> dict:
        if self.episode_id is not None:
            raise ProtocolError("an episode is already in flight")
        msg = {"type": "reset"}
        if instance is not None:
            msg["instance"] = instance
        elif instance_id is not None:
            msg["instance_id"] = instance_id
        else:
            raise ValueError("reset needs instance_id or instance")
        reply = self._check(self.transport.request(msg), ("observation", "result"))
        if reply["type"] == "observation":
            self.episode_id = reply["episode_id"]
            self.last_observation = reply
        return reply

    def act(self, response_text: str) -> dict:
        if self.episode_id is None:
            raise ProtocolError("no episode in flight; call reset first")
        reply = self._check(
            self.transport.request(
                {"type": "act", "episode_id": self.episode_id, "response": response_text}
            ),
            ("observation", "result"),
        )
        if reply["type"] == "result":
            self.episode_id = None
            self.last_observation = None
        else:
            self.last_observation = reply
        return reply

    def close(self):
        self.transport.close()


def run_episode(client: EpisodeClient, instance, policy) -> dict:
    """Drive observation -> policy -> act until the result message.

    ``instance`` is an instance_id string or an inline instance record;
    ``policy`` maps the observation dict to raw response text. Returns the
    decoded result message. Server errors surface as ServerError."""
    if isinstance(instance, dict):
        reply = client.reset(instance=instance)
    else:
        reply = client.reset(instance_id=instance)
    while reply["type"] == "observation":
        reply = client.act(policy(reply))
    return reply


def outcome_record(result: dict, instance_rec: dict | None = None) -> dict:
    """Shape a result message like a server-side rollout-log outcome line."""
    rec = {
        "type": "outcome",
        "episode_id": result.get("episode_id"),
        "instance_id": result.get("instance_id"),
        "scene_id": result.get("scene_id"),
        "variant": result.get("variant"),
        "success": result["success"],
        "reward": result["reward"],
        "format_ok": result["format_ok"],
        "d_pos": result["d_pos"],
        "d_rot": result["d_rot"],
        "turns_used": result["turns_used"],
        "terminated_by": result["terminated_by"],
    }
    if instance_rec is not None:
        rec["init_pose"] = instance_rec.get("init_pose")
        rec["target_pose"] = instance_rec.get("target_pose")
    return rec


def batch_run(
    instances,
    policy_factory,
    transport_factory,
    parallelism: int = 1,
    out_path=None,
) -> dict:
    """Run one episode per instance record over ``parallelism`` connections.

    ``policy_factory(record)`` builds a fresh policy per episode;
    ``transport_factory()`` opens a new transport per worker. Failures are
    collected per instance, not fatal. Returns {"outcomes", "failures",
    "success_rate"}; outcomes follow the rollout-log outcome schema and are
    ordered like the input. Optionally writes them as JSONL."""
    instances = list(instances)
    results: dict = {}
    failures: dict = {}
    queue: Queue = Queue()
    for idx, rec in enumerate(instances):
        queue.put((idx, rec))

    def worker():
        client = EpisodeClient(transport_factory())
        try:
            while True:
                try:
                    idx, rec = queue.get_nowait()
                except Exception:
                    return
                try:
                    result = run_episode(client, rec, policy_factory(rec))
                    results[idx] = outcome_record(result, rec)
                except Exception as e:
                    failures[idx] = f"{type(e).__name__}: {e}"
                    if not isinstance(e, ServerError):
                        # transport is suspect; start a fresh one
                        client.close()
                        client = EpisodeClient(transport_factory())
                finally:
                    queue.task_done()
        finally:
            client.close()

    threads = [threading.Thread(target=worker, daemon=True) for _ in range(max(1, parallelism))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    outcomes = [results[i] for i in sorted(results)]
    n_success = sum(1 for o in outcomes if o["success"])
    if out_path is not None:
        with open(str(out_path), "w", encoding="utf-8") as fh:
            for rec in outcomes:
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    return {
        "outcomes": outcomes,
        "failures": {instances[i]["instance_id"]: msg for i, msg in sorted(failures.items())},
        "episodes": len(instances),
        "successes": n_success,
        "success_rate": n_success / len(instances) if instances else 0.0,
    }


def read_manifest(path) -> list:
    out = []
    with open(str(path), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def default_server_command(manifest_path=None, scene_root=None, variant="default",
                           config=None, log_path=None, seed=0):
    """The documented way to start a local stdio server."""
    cmd = [sys.executable, "-m", "viewplan.cli", "serve", "--transport", "stdio",
           "--seed", str(seed), "--variant", variant]
    if manifest_path:
        cmd += ["--manifest", str(manifest_path)]
    if scene_root:
        cmd += ["--scene-root", str(scene_root)]
    if config:
        cmd += ["--config", str(config)]
    if log_path:
        cmd += ["--log", str(log_path)]
    return cmd
