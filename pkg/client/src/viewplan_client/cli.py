"""Command-line runner mirroring the server's built-in episode-run, but
driving everything through the wire protocol."""

from __future__ import annotations

import argparse
import json
import sys

from .agents import policy_factory
from .client import (
    StdioTransport,
    TcpTransport,
    batch_run,
    default_server_command,
    read_manifest,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="viewplan-client",
        description="Run episodes against a viewplan server over the wire protocol",
    )
    parser.add_argument("--manifest", required=True, help="dataset manifest jsonl")
    parser.add_argument("--agent", default="oracle", choices=("oracle", "random", "garbage"))
    parser.add_argument("--episodes", type=int, default=0, help="0 = all ivp instances")
    parser.add_argument("--parallelism", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="outcome jsonl")
    parser.add_argument("--server-cmd", default=None,
                        help="stdio server command (default: spawn a local server)")
    parser.add_argument("--scene-root", default=None)
    parser.add_argument("--config", default=None, help="server config file")
    parser.add_argument("--variant", default="default")
    parser.add_argument("--tcp", default=None, help="host:port of a running server")
    args = parser.parse_args(argv)

    records = [r for r in read_manifest(args.manifest) if r.get("kind", "ivp") == "ivp"]
    if args.episodes:
        records = records[: args.episodes]

    if args.tcp:
        host, port = args.tcp.rsplit(":", 1)

        def transport_factory():
            return TcpTransport(host, int(port))
    else:
        cmd = args.server_cmd or default_server_command(
            manifest_path=args.manifest, scene_root=args.scene_root,
            variant=args.variant, config=args.config, seed=args.seed,
        )

        def transport_factory():
            return StdioTransport(cmd)

    report = batch_run(
        records,
        policy_factory(args.agent, args.seed),
        transport_factory,
        parallelism=args.parallelism,
        out_path=args.out,
    )
    summary = {k: report[k] for k in ("episodes", "successes", "success_rate")}
    summary["failures"] = len(report["failures"])
    print(json.dumps(summary, sort_keys=True))
    return 0 if not report["failures"] else 1


if __name__ == "__main__":
    sys.exit(main())
