"""Command line entry points.

    cloudshare run      --scenario S --out DIR [--seed N] [--config F]
    cloudshare validate --scenario S
    cloudshare serve    --scenario S [--host H] [--port P]
    cloudshare report   --metrics metrics.csv
    cloudshare node transition <id> <batch|cloud> [--tenant P] [--ttl S] [--url U]

Exit codes: 0 success, 1 I/O problems, 2 validation failures.  The config
file path may also come from the CLOUDSHARE_CONFIG environment variable;
scenario ``config`` blocks override it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import urllib.error
import urllib.request
from pathlib import Path

from .report import ReportError, build_report
from .scenario import ScenarioValidationError, load_scenario, parse_config_file
from .sim import Simulation

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2


def _base_config(args, out_dir: Path | None):
    config = {}
    if out_dir is not None:
        # default journal location; a scenario may still turn journaling off
        config["queue.journal_path"] = str(out_dir / "queue.journal")
    path = getattr(args, "config", None) or os.environ.get("CLOUDSHARE_CONFIG")
    if path:
        config.update(parse_config_file(path))
    return config


def _load(args, out_dir: Path | None):
    try:
        base = _base_config(args, out_dir)
        scenario = load_scenario(args.scenario, base)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_IO)
    except ScenarioValidationError as exc:
        for line in exc.errors:
            print(line, file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)
    if args.seed is not None:
        scenario.seed = args.seed
    return scenario


def cmd_run(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = _load(args, out_dir)
    sim = Simulation(scenario)
    sim.run()
    paths = sim.write_outputs(out_dir)
    if not args.quiet:
        print(json.dumps(sim.summary(), indent=2, sort_keys=True))
        for name, path in sorted(paths.items()):
            print(f"{name}: {path}", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args) -> int:
    _load(args, None)
    print("scenario ok")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        text = build_report(args.metrics)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(text, end="")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    scenario = _load(args, Path(args.out) if args.out else None)
    sim = Simulation(scenario)
    app = create_app(sim)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def cmd_node(args) -> int:
    url = f"{args.url.rstrip('/')}/v1/nodes/{args.node}/transition"
    body = {"target": args.target}
    if args.tenant:
        body["tenant"] = args.tenant
    if args.ttl is not None:
        body["ttl"] = args.ttl
    req = urllib.request.Request(
        url,
        data=json.dumps(body).encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req) as resp:
            print(resp.read().decode())
        return EXIT_OK
    except urllib.error.HTTPError as exc:
        print(f"error {exc.code}: {exc.read().decode()}", file=sys.stderr)
        return EXIT_VALIDATION if exc.code in (409, 422) else EXIT_IO
    except urllib.error.URLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cloudshare")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and write metrics/summary")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="validate a scenario file")
    p_val.add_argument("--scenario", required=True)
    p_val.add_argument("--seed", type=int, default=None)
    p_val.add_argument("--config", default=None)
    p_val.set_defaults(func=cmd_validate)

    p_rep = sub.add_parser("report", help="aggregate tables from a metrics CSV")
    p_rep.add_argument("--metrics", required=True)
    p_rep.set_defaults(func=cmd_report)

    p_srv = sub.add_parser("serve", help="run the management API over a stepped simulation")
    p_srv.add_argument("--scenario", required=True)
    p_srv.add_argument("--out", default=None)
    p_srv.add_argument("--seed", type=int, default=None)
    p_srv.add_argument("--config", default=None)
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8170)
    p_srv.set_defaults(func=cmd_serve)

    p_node = sub.add_parser("node", help="node management commands")
    node_sub = p_node.add_subparsers(dest="node_command", required=True)
    p_tr = node_sub.add_parser("transition", help="request a partition switch")
    p_tr.add_argument("node")
    p_tr.add_argument("target", choices=["batch", "cloud"])
    p_tr.add_argument("--tenant", default=None)
    p_tr.add_argument("--ttl", type=float, default=None)
    p_tr.add_argument("--url", default="http://127.0.0.1:8170")
    p_tr.set_defaults(func=cmd_node)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
