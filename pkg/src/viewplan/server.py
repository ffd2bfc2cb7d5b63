"""Episode server speaking newline-delimited JSON over stdio or TCP.

Every message is one JSON object per line. Client -> server:
  {"type": "reset", "instance_id": "..."} or {"type": "reset", "instance": {...}}
  {"type": "act", "episode_id": "...", "response": "<raw agent text>"}
Server -> client:
  {"type": "observation", "episode_id", "turn", "pose", "budget_remaining",
   "images": {role: {"id": ..., "png_base64": ...}}, ["thresholds" on turn 0]}
  {"type": "result", "episode_id", success, reward, format_ok, d_pos, d_rot,
   "turns_used", "terminated_by"}
  {"type": "error", "code", "detail"}

Protocol errors answer with an error message and leave the connection (and
other episodes) intact. All finished episodes append RolloutLog records to
the log sink, serialized by a lock.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import socketserver
import sys
import threading

from .episode import (
    EpisodeSpec,
    EpisodeState,
    RolloutLog,
    build_observation,
    step,
)
from .render import CameraIntrinsics, view_to_png
from .scene import load_scene, procedural_scene, SceneSpec
from .se3 import StepSizes, SuccessThresholds, pose_to_vec6
from .util import dumps_canonical, read_jsonl


class SceneLibrary:
    """Lazy scene loading by id: PLY files under a root directory, with
    procedural fallback for ids of the form 'proc-<seed>'."""

    def __init__(self, scene_root=None, proc_spec: SceneSpec | None = None):
        self.scene_root = scene_root
        self.proc_spec = proc_spec or SceneSpec()
        self._cache: dict = {}

    def get(self, scene_id: str):
        if scene_id in self._cache:
            return self._cache[scene_id]
        if self.scene_root is not None:
            path = os.path.join(str(self.scene_root), f"{scene_id}.ply")
            if os.path.exists(path):
                scene = load_scene(path, scene_id=scene_id)
                self._cache[scene_id] = scene
                return scene
        if scene_id.startswith("proc-"):
            try:
                seed = int(scene_id.split("-", 1)[1])
            except ValueError:
                raise KeyError(f"unknown scene {scene_id!r}")
            scene = procedural_scene(seed, self.proc_spec)
            self._cache[scene_id] = scene
            return scene
        raise KeyError(f"unknown scene {scene_id!r}")


def _encode_images(images: dict) -> dict:
    out = {}
    for role, view in images.items():
        png = view_to_png(view)
        out[role] = {
            "id": hashlib.sha256(png).hexdigest()[:16],
            "png_base64": base64.b64encode(png).decode("ascii"),
        }
    return out


class EpisodeServer:
    """Protocol logic shared by the stdio and TCP transports."""

    def __init__(
        self,
        manifest_path=None,
        scene_root=None,
        variant: str = "default",
        seed: int = 0,
        intrinsics: CameraIntrinsics = CameraIntrinsics(),
        steps: StepSizes = StepSizes(),
        thresholds: SuccessThresholds = SuccessThresholds(),
        log_path=None,
        proc_spec: SceneSpec | None = None,
    ):
        self.instances: dict = {}
        if manifest_path is not None:
            for rec in read_jsonl(manifest_path):
                self.instances[rec["instance_id"]] = rec
        self.scenes = SceneLibrary(scene_root, proc_spec)
        self.variant = variant
        self.seed = seed
        self.intrinsics = intrinsics
        self.steps = steps
        self.thresholds = thresholds
        self.log_path = log_path
        self._log_lock = threading.Lock()

    def new_session(self) -> "Session":
        return Session(self)

    def _write_log(self, log: RolloutLog) -> None:
        if self.log_path is None:
            return
        lines = "".join(dumps_canonical(rec) + "\n" for rec in log.to_records())
        with self._log_lock:
            with open(str(self.log_path), "a", encoding="utf-8") as fh:
                fh.write(lines)


class Session:
    """Per-connection state: independent episodes with connection-unique ids."""

    def __init__(self, server: EpisodeServer):
        self.server = server
        self.episodes: dict = {}  # episode_id -> (EpisodeState, scene, spec)
        self._counter = 0

    def handle_line(self, line: str) -> dict:
        line = line.strip()
        if not line:
            return {"type": "error", "code": "bad_json", "detail": "empty line"}
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            return {"type": "error", "code": "bad_json", "detail": str(e)}
        if not isinstance(msg, dict):
            return {"type": "error", "code": "bad_json", "detail": "message must be an object"}
        mtype = msg.get("type")
        try:
            if mtype == "reset":
                return self._handle_reset(msg)
            if mtype == "act":
                return self._handle_act(msg)
        except Exception as e:  # one bad episode must not kill the connection
            return {"type": "error", "code": "internal", "detail": f"{type(e).__name__}: {e}"}
        return {"type": "error", "code": "bad_type", "detail": f"unknown type {mtype!r}"}

    def _handle_reset(self, msg: dict) -> dict:
        if "instance" in msg:
            rec = msg["instance"]
        elif "instance_id" in msg:
            rec = self.server.instances.get(msg["instance_id"])
            if rec is None:
                return {
                    "type": "error", "code": "unknown_instance",
                    "detail": f"no instance {msg['instance_id']!r}",
                }
        else:
            return {"type": "error", "code": "bad_reset",
                    "detail": "reset needs instance_id or instance"}
        try:
            spec = EpisodeSpec.from_record(rec)
        except (KeyError, ValueError, TypeError) as e:
            return {"type": "error", "code": "bad_instance", "detail": str(e)}
        try:
            scene = self.server.scenes.get(spec.scene_id)
        except KeyError as e:
            return {"type": "error", "code": "unknown_scene", "detail": str(e)}

        self._counter += 1
        episode_id = f"ep-{self._counter}"
        state = EpisodeState(spec, self.server.variant, self.server.steps,
                             self.server.thresholds)
        self.episodes[episode_id] = (state, scene, spec)
        if spec.budget <= 0:
            state._finish(False, False, state.pose, "budget")
            return self._finish_episode(episode_id)
        return self._observation(episode_id, include_static=True)

    def _handle_act(self, msg: dict) -> dict:
        episode_id = msg.get("episode_id")
        if episode_id not in self.episodes:
            return {"type": "error", "code": "no_episode",
                    "detail": f"no active episode {episode_id!r}"}
        if "response" not in msg or not isinstance(msg["response"], str):
            return {"type": "error", "code": "bad_act", "detail": "act needs response text"}
        state, scene, spec = self.episodes[episode_id]
        outcome = step(state, msg["response"])
        if outcome is not None:
            return self._finish_episode(episode_id)
        return self._observation(episode_id, include_static=False)

    def _observation(self, episode_id: str, include_static: bool) -> dict:
        state, scene, spec = self.episodes[episode_id]
        obs = build_observation(state, scene, self.server.intrinsics, episode_id,
                                include_static)
        obs["type"] = "observation"
        obs["images"] = _encode_images(obs["images"])
        return obs

    def _finish_episode(self, episode_id: str) -> dict:
        state, scene, spec = self.episodes.pop(episode_id)
        o = state.outcome
        log = RolloutLog(
            episode_id, spec.instance_id, spec.scene_id, state.variant,
            pose_to_vec6(spec.init_pose), pose_to_vec6(spec.target_pose),
            state.turns, o,
        )
        self.server._write_log(log)
        return {
            "type": "result",
            "episode_id": episode_id,
            "instance_id": spec.instance_id,
            "scene_id": spec.scene_id,
            "variant": state.variant,
            "success": o.success,
            "reward": o.reward,
            "format_ok": o.format_ok,
            "d_pos": o.d_pos,
            "d_rot": o.d_rot,
            "turns_used": o.turns_used,
            "terminated_by": o.terminated_by,
        }


def serve_stdio(server: EpisodeServer, stdin=None, stdout=None) -> None:
    """One session over stdin/stdout; returns at EOF."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    session = server.new_session()
    for line in stdin:
        reply = session.handle_line(line)
        stdout.write(dumps_canonical(reply) + "\n")
        stdout.flush()


class _TCPHandler(socketserver.StreamRequestHandler):
    def handle(self):
        session = self.server.episode_server.new_session()
        for raw in self.rfile:
            reply = session.handle_line(raw.decode("utf-8", errors="replace"))
            self.wfile.write((dumps_canonical(reply) + "\n").encode("utf-8"))
            self.wfile.flush()


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def serve_tcp(server: EpisodeServer, host: str = "127.0.0.1", port: int = 0):
    """Start a threaded TCP server; returns the server object (caller calls
    serve_forever / shutdown). Port 0 picks a free port."""
    tcp = _TCPServer((host, port), _TCPHandler)
    tcp.episode_server = server
    return tcp
