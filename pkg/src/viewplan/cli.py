"""Command-line interface: rendering, data generation, planning, serving,
graph building, distillation, calibration, and analysis."""

from __future__ import annotations

import argparse
import glob
import json
import os
import random
import sys

from . import analysis as analysis_mod
from . import calibrate as calibrate_mod
from . import datagen, distill, server as server_mod, viewgraph
from .episode import EpisodeSpec, OracleAgent, RandomAgent, run_episode, split_log_stream
from .planner import plan_actions
from .render import CameraIntrinsics, render_view, save_png, topdown_pose
from .scene import SceneSpec, load_scene, procedural_scene
from .se3 import StepSizes, pose_from_vec6
from .util import dumps_canonical, read_jsonl, write_jsonl

SCENE_ROOT_ENV = "VIEWPLAN_SCENE_ROOT"


def load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def intrinsics_from_config(cfg: dict) -> CameraIntrinsics:
    r = cfg.get("render", {})
    return CameraIntrinsics(
        width=r.get("width", 512), height=r.get("height", 512),
        v_fov_deg=r.get("v_fov_deg", 60.0),
    )


def steps_from_config(cfg: dict) -> StepSizes:
    s = cfg.get("steps", {})
    return StepSizes(s_t=s.get("s_t", 0.5), s_r=s.get("s_r", 30.0))


def proc_spec_from_config(cfg: dict) -> SceneSpec:
    p = cfg.get("procedural", {})
    return SceneSpec(
        room_size=tuple(p.get("room_size", (6.0, 5.0, 3.0))),
        n_boxes=p.get("n_boxes", 4),
        n_points=p.get("n_points", 8000),
    )


def resolve_scene_root(args) -> str | None:
    return os.environ.get(SCENE_ROOT_ENV) or getattr(args, "scene_root", None)


def collect_scenes(args, cfg: dict) -> list:
    """Scenes from a PLY directory and/or procedurally generated ones."""
    scenes = []
    root = resolve_scene_root(args)
    if root:
        for path in sorted(glob.glob(os.path.join(root, "*.ply"))):
            scenes.append(load_scene(path))
    n_proc = getattr(args, "proc_scenes", 0) or 0
    spec = proc_spec_from_config(cfg)
    for seed in range(n_proc):
        scenes.append(procedural_scene(seed, spec))
    if not scenes:
        raise SystemExit("no scenes: pass --scene-root with .ply files or --proc-scenes N")
    return scenes


def load_one_scene(args, cfg: dict):
    if args.scene.endswith(".ply"):
        return load_scene(args.scene)
    if args.scene.startswith("proc-"):
        return procedural_scene(int(args.scene.split("-", 1)[1]), proc_spec_from_config(cfg))
    root = resolve_scene_root(args)
    if root:
        return load_scene(os.path.join(root, f"{args.scene}.ply"), scene_id=args.scene)
    raise SystemExit(f"cannot resolve scene {args.scene!r}")


def parse_vec6(text: str) -> list:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 6:
        raise SystemExit(f"expected 6 numbers, got {len(parts)}: {text!r}")
    return [float(p) for p in parts]


def cmd_render(args):
    cfg = load_config(args.config)
    scene = load_one_scene(args, cfg)
    pose = pose_from_vec6(parse_vec6(args.pose))
    view = render_view(scene, pose, intrinsics_from_config(cfg))
    save_png(view, args.out)
    print(dumps_canonical({"out": args.out, "void_fraction": view.void_fraction}))
    return 0


def cmd_topdown(args):
    cfg = load_config(args.config)
    scene = load_one_scene(args, cfg)
    intr = intrinsics_from_config(cfg)
    pose = topdown_pose(scene, intr)
    view = render_view(scene, pose, intr)
    save_png(view, args.out)
    from .se3 import pose_to_vec6

    print(dumps_canonical({"out": args.out, "pose": pose_to_vec6(pose)}))
    return 0


def cmd_plan(args):
    cfg = load_config(args.config)
    steps = steps_from_config(cfg)
    init = pose_from_vec6(parse_vec6(args.init))
    target = pose_from_vec6(parse_vec6(args.target))
    res = plan_actions(init, target, steps)
    print(dumps_canonical({
        "actions": res.actions,
        "final_error": res.final_error,
        "step_counts": res.step_counts,
    }))
    return 0


def cmd_gen_data(args):
    cfg = load_config(args.config)
    pipeline_cfg = datagen.PipelineConfig.from_dict(
        {**cfg.get("pipeline", {}), "seed": args.seed}
    )
    scenes = collect_scenes(args, cfg)
    frames_by_scene = None
    mode = "synthetic"
    if args.frames:
        mode = "trajectory"
        frames_by_scene = {}
        for path in sorted(glob.glob(os.path.join(args.frames, "*.jsonl"))):
            sid = os.path.splitext(os.path.basename(path))[0]
            frames_by_scene[sid] = [
                (rec["frame"], pose_from_vec6(rec["pose"])) for rec in read_jsonl(path)
            ]
    meta = datagen.generate_dataset(
        scenes, args.out, pipeline_cfg,
        pairs_per_scene=args.pairs_per_scene,
        intrinsics=intrinsics_from_config(cfg),
        steps=steps_from_config(cfg),
        mode=mode,
        frames_by_scene=frames_by_scene,
        verdict_path=args.verdicts,
    )
    print(dumps_canonical(meta))
    return 0


def cmd_episode_run(args):
    cfg = load_config(args.config)
    intr = intrinsics_from_config(cfg)
    steps = steps_from_config(cfg)
    records = read_jsonl(args.manifest)
    instances = [r for r in records if r.get("kind", "ivp") == "ivp"]
    if args.episodes:
        instances = instances[: args.episodes]
    lib = server_mod.SceneLibrary(resolve_scene_root(args), proc_spec_from_config(cfg))

    from .util import derive_seed

    factory = None
    if args.agent == "oracle":
        factory = lambda spec: OracleAgent(spec.gt_actions)
    elif args.agent == "random":
        factory = lambda spec: RandomAgent(
            random.Random(derive_seed(args.seed, spec.instance_id))
        )
    else:
        raise SystemExit(f"unknown agent {args.agent!r} (use oracle|random)")

    all_records = []
    successes = 0
    for rec in instances:
        spec = EpisodeSpec.from_record(rec)
        scene = lib.get(spec.scene_id)
        log = run_episode(spec, factory(spec), scene, args.variant, intr, steps)
        all_records.extend(log.to_records())
        successes += int(log.outcome.success)
    if args.out:
        write_jsonl(args.out, all_records)
    print(dumps_canonical({
        "episodes": len(instances),
        "successes": successes,
        "success_rate": successes / len(instances) if instances else 0.0,
        "log": args.out,
    }))
    return 0


def cmd_serve(args):
    cfg = load_config(args.config)
    srv = server_mod.EpisodeServer(
        manifest_path=args.manifest,
        scene_root=resolve_scene_root(args),
        variant=args.variant,
        seed=args.seed,
        intrinsics=intrinsics_from_config(cfg),
        steps=steps_from_config(cfg),
        log_path=args.log,
        proc_spec=proc_spec_from_config(cfg),
    )
    if args.transport == "stdio":
        server_mod.serve_stdio(srv)
        return 0
    tcp = server_mod.serve_tcp(srv, args.host, args.port)
    host, port = tcp.server_address
    print(dumps_canonical({"listening": f"{host}:{port}"}), flush=True)
    try:
        tcp.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        tcp.shutdown()
    return 0


def _load_logs(path):
    return split_log_stream(read_jsonl(path))


def cmd_graph_build(args):
    cfg = load_config(args.config)
    intr = intrinsics_from_config(cfg)
    steps = steps_from_config(cfg)
    lib = server_mod.SceneLibrary(resolve_scene_root(args), proc_spec_from_config(cfg))
    if args.store and os.path.exists(os.path.join(args.store, "meta.json")) and args.append:
        graph = viewgraph.load(args.store)
    else:
        graph = viewgraph.ViewGraph()
    logs = _load_logs(args.logs)
    for log in logs:
        scene = lib.get(log.scene_id)
        traj = viewgraph.trajectory_from_rollout(log, scene, intr, steps)
        viewgraph.ingest_trajectory(graph, traj, iteration=args.iteration)
    viewgraph.persist(graph, args.store)
    print(dumps_canonical(viewgraph.graph_stats(graph)))
    return 0


def cmd_graph_stats(args):
    graph = viewgraph.load(args.store)
    stats = viewgraph.graph_stats(graph)
    stats["action_distribution"] = viewgraph.action_distribution(graph)
    print(dumps_canonical(stats))
    return 0


def cmd_graph_sample(args):
    graph = viewgraph.load(args.store)
    rng = random.Random(args.seed)
    lo, hi = (int(x) for x in args.length.split(","))
    paths = distill.sample_paths(graph, args.scene, (lo, hi), args.count,
                                 balanced=args.balanced, rng=rng)
    for p in paths:
        print(dumps_canonical({
            "scene_id": p.scene_id,
            "node_ids": list(p.node_ids),
            "actions": [list(a) for a in p.action_lists],
        }))
    return 0


def cmd_distill(args):
    cfg = load_config(args.config)
    d = cfg.get("distill", {})
    distill_cfg = distill.DistillConfig(
        planning_len=tuple(d.get("planning_len", (3, 5))),
        planning_per_scene=d.get("planning_per_scene", 20),
        planning_oversample=d.get("planning_oversample", 10),
        viewdiff_len=tuple(d.get("viewdiff_len", (2, 5))),
        viewdiff_per_scene=d.get("viewdiff_per_scene", 15),
        mcq_len=tuple(d.get("mcq_len", (2, 5))),
        mcq_per_scene=d.get("mcq_per_scene", 15),
        emit_dynamics=d.get("emit_dynamics", False),
        seed=args.seed,
    )
    graph = viewgraph.load(args.store)
    manifest = distill.distill_graph(graph, args.out, distill_cfg)
    print(dumps_canonical(manifest))
    return 0


def cmd_calibrate(args):
    records = calibrate_mod.load_records(args.records)
    result = calibrate_mod.calibrate_thresholds(records)
    print(calibrate_mod.format_table(result))
    print(dumps_canonical({
        "best": {
            "pos_thr": result.best.pos_thr,
            "rot_thr": result.best.rot_thr,
            "f1": result.best.f1,
            "accuracy": result.best.accuracy,
        },
        "degenerate": result.degenerate,
    }))
    return 0


def cmd_analyze(args):
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    logs = _load_logs(args.logs)
    manifest = read_jsonl(args.manifest)
    pairs = {}
    for rec in manifest:
        if rec.get("kind") == "ivp" or "gt_actions" in rec:
            pairs.setdefault(rec["pair_id"], datagen.record_to_pair(rec))
            pairs.setdefault(rec["instance_id"], datagen.record_to_pair(rec))
    ivp_logs = [l for l in logs if l.instance_id in pairs
                or l.instance_id.rsplit("-", 1)[0] in pairs]
    table = analysis_mod.success_table(ivp_logs, pairs)
    analysis_mod.write_success_csv(table, os.path.join(args.out, "success.csv"))

    dist = analysis_mod.turn_distribution(logs)
    analysis_mod.plot_turn_distribution(dist, os.path.join(args.out, "turns.png"))

    summary = {
        "episodes": len(logs),
        "success": {
            "short": table.short_rate,
            "long": table.long_rate,
            "all": table.all_rate,
        },
        "turn_distribution": dist,
    }
    if args.coverage:
        lib = server_mod.SceneLibrary(resolve_scene_root(args), proc_spec_from_config(cfg))
        scenes = {log.scene_id: lib.get(log.scene_id) for log in logs}
        scene_curve, target_curve = analysis_mod.coverage_curves(
            logs, scenes, intrinsics_from_config(cfg), steps_from_config(cfg)
        )
        analysis_mod.write_coverage_csv(
            scene_curve, target_curve, os.path.join(args.out, "coverage.csv")
        )
        analysis_mod.plot_coverage(
            scene_curve, target_curve, os.path.join(args.out, "coverage.png")
        )
        summary["coverage_final"] = {
            "scene": scene_curve.mean[-1] if scene_curve.mean else None,
            "target": target_curve.mean[-1] if target_curve.mean else None,
        }
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(summary) + "\n")
    print(dumps_canonical(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewplan",
        description="Point-cloud view-planning environment and benchmark toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="JSON config file")

    p = sub.add_parser("render", help="render a pose to PNG")
    common(p)
    p.add_argument("--scene", required=True, help="PLY path, scene id, or proc-<seed>")
    p.add_argument("--scene-root", default=None)
    p.add_argument("--pose", required=True, help="tx,ty,tz,rx,ry,rz")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("topdown", help="render the top-down reference view")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--scene-root", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_topdown)

    p = sub.add_parser("plan", help="plan actions between two poses")
    common(p)
    p.add_argument("--init", required=True, help="tx,ty,tz,rx,ry,rz")
    p.add_argument("--target", required=True)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("gen-data", help="build a task dataset")
    common(p)
    p.add_argument("--scene-root", default=None, help="directory of .ply scenes")
    p.add_argument("--proc-scenes", type=int, default=0,
                   help="additionally use N procedural scenes")
    p.add_argument("--frames", default=None,
                   help="directory of per-scene frame jsonl for trajectory mode")
    p.add_argument("--verdicts", default=None, help="scene verdict jsonl")
    p.add_argument("--pairs-per-scene", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("episode-run", help="run episodes with a built-in agent")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scene-root", default=None)
    p.add_argument("--agent", default="oracle", choices=("oracle", "random"))
    p.add_argument("--variant", default="default",
                   choices=("default", "no_snap", "no_submit"))
    p.add_argument("--episodes", type=int, default=0, help="0 = all ivp instances")
    p.add_argument("--out", default=None, help="rollout log jsonl")
    p.set_defaults(fn=cmd_episode_run)

    p = sub.add_parser("serve", help="serve episodes over stdio or tcp")
    common(p)
    p.add_argument("--transport", default="stdio", choices=("stdio", "tcp"))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--manifest", default=None)
    p.add_argument("--scene-root", default=None)
    p.add_argument("--variant", default="default",
                   choices=("default", "no_snap", "no_submit"))
    p.add_argument("--log", default=None, help="rollout log jsonl sink")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("graph-build", help="build/extend a view graph from rollout logs")
    common(p)
    p.add_argument("--logs", required=True)
    p.add_argument("--scene-root", default=None)
    p.add_argument("--store", required=True)
    p.add_argument("--append", action="store_true")
    p.add_argument("--iteration", type=int, default=0)
    p.set_defaults(fn=cmd_graph_build)

    p = sub.add_parser("graph-stats", help="print view graph statistics")
    common(p)
    p.add_argument("--store", required=True)
    p.set_defaults(fn=cmd_graph_stats)

    p = sub.add_parser("graph-sample", help="sample paths from a view graph")
    common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--length", default="2,5", help="lo,hi edge count")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--balanced", action="store_true")
    p.set_defaults(fn=cmd_graph_sample)

    p = sub.add_parser("distill", help="reformulate graph paths into demonstrations")
    common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("calibrate", help="sweep success thresholds against labels")
    common(p)
    p.add_argument("--records", required=True)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("analyze", help="score rollout logs against a dataset")
    common(p)
    p.add_argument("--logs", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scene-root", default=None)
    p.add_argument("--coverage", action="store_true", help="also compute coverage curves")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
