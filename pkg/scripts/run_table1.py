#!/usr/bin/env python3
"""Reproduce the two-terminal comparison: per-path traffic and latency.

Runs scenarios/table1.scn and scenarios/latency.scn in fast mode and prints
the headline numbers (traffic ratio, aggregate count, latency differential).
"""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from edgelora import Network, load_scenario  # noqa: E402

ROOT = pathlib.Path(__file__).resolve().parents[1]


def main() -> None:
    net = Network(load_scenario(ROOT / "scenarios" / "table1.scn"))
    net.run()
    m = net.metrics
    legacy_addr = net.devices["legacy-1"].session.dev_addr
    edge_addr = net.devices["edge-1"].session.dev_addr
    legacy_bytes = (m.traffic_bytes("gw1->ns", "uplink", legacy_addr)
                    + m.traffic_bytes("ns->as", "ns_uplink", legacy_addr))
    edge_bytes = m.traffic_bytes("gw2->as", "edge_aggregate", edge_addr)
    print("traffic comparison (100 frames per device, window 5, mean)")
    print(f"  legacy path bytes : {legacy_bytes}")
    print(f"  edge path bytes   : {edge_bytes}")
    print(f"  ratio             : {edge_bytes / legacy_bytes:.3f}")
    print(f"  aggregates        : {m.get('delivered_edge_msgs')}")

    net = Network(load_scenario(ROOT / "scenarios" / "latency.scn"))
    net.run()
    m = net.metrics
    _, mean_cloud, ci_cloud = m.latency_stats("cloud")
    _, mean_edge, ci_edge = m.latency_stats("edge")
    print("latency comparison (calibrated link profile)")
    print(f"  cloud path : {mean_cloud:.2f} ms (95% CI +/- {ci_cloud:.3f})")
    print(f"  edge path  : {mean_edge:.2f} ms (95% CI +/- {ci_edge:.3f})")
    print(f"  gain       : {mean_cloud - mean_edge:.2f} ms")


if __name__ == "__main__":
    main()
