"""Command-line entry point: run scenarios, validate them, summarize logs."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .metrics import Metrics
from .runner import Network
from .scenario import SchemaError, load_scenario


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="edgelora",
        description="Desk-scale LoRaWAN emulator with edge-processing gateways")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario")
    run_p.add_argument("--scenario", required=True, help="scenario file (.scn)")
    run_p.add_argument("--duration", type=float, default=None,
                       help="override duration in seconds")
    run_p.add_argument("--seed", type=int, default=None, help="override seed")
    run_p.add_argument("--realtime", action="store_true",
                       help="wall-clock pacing (required for --serve)")
    run_p.add_argument("--serve", metavar="ADDR:PORT", default=None,
                       help="serve the control API and dashboard")
    run_p.add_argument("--report", metavar="PATH", default=None,
                       help="write the final report here (default: stdout)")
    run_p.add_argument("--delivery-log", metavar="PATH", default=None,
                       help="write the newline-delimited delivery log here")

    val_p = sub.add_parser("validate", help="validate a scenario file")
    val_p.add_argument("--scenario", required=True)

    rep_p = sub.add_parser("report", help="summarize a delivery log")
    rep_p.add_argument("delivery_log", help="newline-delimited JSON log")

    args = parser.parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "validate":
        return _cmd_validate(args)
    if args.command == "report":
        return _cmd_report(args)
    return 2


def _cmd_run(args) -> int:
    try:
        cfg = load_scenario(args.scenario)
    except SchemaError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    if args.duration is not None:
        cfg.duration_s = args.duration
    if args.seed is not None:
        cfg.seed = args.seed
    if args.realtime and cfg.pacing == 0.0:
        cfg.pacing = 1.0
    if args.serve:
        if cfg.pacing == 0.0:
            print("--serve requires --realtime (or a scenario with pacing > 0)",
                  file=sys.stderr)
            return 2
        from .api import RunController, serve_control_api
        host, _, port = args.serve.rpartition(":")
        controller = RunController(cfg)
        controller.start()
        serve_control_api(controller, host or "127.0.0.1", int(port))
        controller.stop()
        net = controller.network
    else:
        net = Network(cfg)
        if cfg.pacing > 0:
            net.run_realtime()
        else:
            net.run()

    report = net.report()
    if args.report:
        Path(args.report).write_text(report)
    else:
        print(report)
    if args.delivery_log:
        Path(args.delivery_log).write_text(net.delivery_log())
    return 0


def _cmd_validate(args) -> int:
    try:
        cfg = load_scenario(args.scenario)
    except SchemaError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    print(f"ok: {len(cfg.devices)} devices, {len(cfg.gateways)} gateways, "
          f"{len(cfg.links)} links, seed={cfg.seed}")
    return 0


def _cmd_report(args) -> int:
    path = Path(args.delivery_log)
    if not path.exists():
        print(f"no such file: {path}", file=sys.stderr)
        return 2
    mx = Metrics()
    counts = {"cloud": 0, "edge": 0, "fallback": 0}
    frames_edge = 0
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        mx.record_latency(record["path"], record["latency_us"])
        if record["path"] == "edge":
            counts["edge"] += 1
            frames_edge += len(record.get("covered", record.get("fcnt_list", [])))
        elif record.get("fallback"):
            counts["fallback"] += 1
        else:
            counts["cloud"] += 1
    print("delivery log summary")
    print(f"  cloud_immediate={counts['cloud']} cloud_fallback={counts['fallback']}"
          f" edge_aggregates={counts['edge']} edge_frames_covered={frames_edge}")
    for path_name in ("cloud", "edge"):
        n, mean, half = mx.latency_stats(path_name)
        print(f"  {path_name}: n={n} mean_ms={mean:.3f} ci95_ms={half:.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
