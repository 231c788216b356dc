"""Run accounting: counters, per-link traffic, latency histograms, the report.

Counter discipline: every data-frame pipeline entry at a gateway (an envelope
handed to the GW->NS link, or a frame taken by the edge module) must end up in
exactly one of delivered / duplicate-dropped / security-dropped / in-flight.
The conservation identity over these counters is checked at run end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

from scipy import stats as _scipy_stats

from . import frames, sim

# classification of one accepted frame identity at the application server
CLASS_CLOUD = "cloud"
CLASS_EDGE = "edge"
CLASS_FALLBACK = "fallback"
CLASS_LATE_DUP = "late_dup"

DUPLICATE_COUNTERS = (
    "dup_ns_reassembly",
    "dup_window_fcnt",
    "dup_ddf_hold",
    "dup_ddf_immediate",
    "late_duplicate_frames",
)
SECURITY_COUNTERS = (
    "sec_ns_unknown_device",
    "sec_ns_bad_mic",
    "sec_gw_bad_mic",
    "sec_gw_bad_format",
    "sec_as_bad_tag_frames",
    "sec_as_bad_format",
    "sec_as_missing_keys",
    "sec_js_bad_join",
)


class AccountingError(RuntimeError):
    """A frame identity changed classification in a way the design forbids."""


class Metrics:
    def __init__(self, emit: Callable[..., None] | None = None):
        self.counters: dict[str, int] = {}
        # (channel_id, envelope type, dev_addr or -1) -> bytes
        self.traffic: dict[tuple[str, str, int], int] = {}
        self.latency_us: dict[str, list[int]] = {"cloud": [], "edge": []}
        self.deliveries: list[dict] = []
        self.accepted_keys: set[bytes] = set()
        self.classification: dict[bytes, str] = {}
        self.emit = emit or (lambda name, **kw: None)

    # -- counters -----------------------------------------------------------

    def count(self, name: str, n: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + n

    def get(self, name: str) -> int:
        return self.counters.get(name, 0)

    # -- link traffic ---------------------------------------------------------

    def on_link_bytes(self, channel_id: str, type_: str, env: dict,
                      nbytes: int) -> None:
        dev = _attribute_device(type_, env)
        key = (channel_id, type_, dev)
        self.traffic[key] = self.traffic.get(key, 0) + nbytes

    def traffic_bytes(self, channel_id: str | None = None,
                      type_: str | None = None,
                      dev_addr: int | None = None) -> int:
        total = 0
        for (chan, typ, dev), nbytes in self.traffic.items():
            if channel_id is not None and chan != channel_id:
                continue
            if type_ is not None and typ != type_:
                continue
            if dev_addr is not None and dev != dev_addr:
                continue
            total += nbytes
        return total

    # -- acceptance / classification -------------------------------------------

    def accept_key(self, packed: bytes) -> None:
        self.accepted_keys.add(packed)

    def classify(self, packed: bytes, new_class: str) -> None:
        current = self.classification.get(packed)
        if current is None:
            self.classification[packed] = new_class
        elif current == CLASS_FALLBACK and new_class == CLASS_LATE_DUP:
            self.classification[packed] = new_class
        else:
            raise AccountingError(
                f"key classified {current!r} cannot become {new_class!r}")

    # -- latency ----------------------------------------------------------------

    def record_latency(self, path: str, latency_us: int) -> None:
        assert latency_us >= 0, f"negative latency {latency_us} on {path} path"
        self.latency_us[path].append(latency_us)

    def latency_stats(self, path: str) -> tuple[int, float, float]:
        """(sample count, mean ms, half-width of the 95% Student-t CI in ms)."""
        samples = self.latency_us[path]
        n = len(samples)
        if n == 0:
            return 0, 0.0, 0.0
        mean = sum(samples) / n / 1000.0
        if n == 1:
            return 1, mean, 0.0
        var = sum((s / 1000.0 - mean) ** 2 for s in samples) / (n - 1)
        half = float(_scipy_stats.t.ppf(0.975, n - 1)) * math.sqrt(var / n)
        return n, mean, half

    # -- deliveries ---------------------------------------------------------------

    def record_delivery(self, record: dict) -> None:
        self.deliveries.append(record)

    # -- derived -------------------------------------------------------------------

    def frames_accepted_at_gateways(self) -> int:
        return self.get("ns_entries") + self.get("edge_entries")

    def delivered_cloud(self) -> int:
        return self.get("delivered_cloud_immediate") + self.get("delivered_cloud_fallback")

    def delivered_edge(self) -> int:
        return self.get("delivered_edge_frames")

    def dropped_duplicates(self) -> int:
        return sum(self.get(c) for c in DUPLICATE_COUNTERS)

    def dropped_security(self) -> int:
        return sum(self.get(c) for c in SECURITY_COUNTERS if c != "sec_js_bad_join")

    def conservation(self, in_flight: int) -> dict[str, int]:
        accepted = self.frames_accepted_at_gateways()
        accounted = (self.delivered_cloud() + self.delivered_edge()
                     + self.dropped_duplicates() + self.dropped_security()
                     + in_flight)
        return {
            "frames_accepted_at_gateways": accepted,
            "delivered_cloud": self.delivered_cloud(),
            "delivered_edge": self.delivered_edge(),
            "dropped_duplicates": self.dropped_duplicates(),
            "dropped_security": self.dropped_security(),
            "in_flight": in_flight,
            "accounted": accounted,
            "balanced": int(accounted == accepted),
        }


def _attribute_device(type_: str, env: dict) -> int:
    """Which device's sensor-data traffic an envelope carries.

    Control traffic (joins, FPort-8 edge joins, hand-offs) stays unattributed
    so per-device data-path byte accounting is not polluted by one-time
    activation messages.
    """
    if type_ in ("uplink", "ns_uplink"):
        try:
            data = sim.unb64(env["data"])
        except Exception:
            return -1
        if len(data) >= 9 and data[0] == frames.MHDR_DATA_UP \
                and data[8] == frames.FPORT_SENSOR_DATA:
            return int.from_bytes(data[1:5], "little")
        return -1
    if type_ == "edge_aggregate":
        return int(env.get("dev_addr", -1))
    return -1


@dataclass(frozen=True)
class MetricsSnapshot:
    """Immutable copy handed to the API/dashboard; counters only ever grow."""

    t_us: int
    counters: dict[str, int]
    traffic: dict[str, int]  # "channel|type" -> bytes
    latency: dict[str, dict[str, float]]
    ddf: dict[str, int]
    queue_depths: dict[str, int]
    conservation: dict[str, int]
    deliveries_total: int

    def to_json(self) -> dict[str, Any]:
        return {
            "t_us": self.t_us,
            "counters": self.counters,
            "traffic": self.traffic,
            "latency": self.latency,
            "ddf": self.ddf,
            "queue_depths": self.queue_depths,
            "conservation": self.conservation,
            "deliveries_total": self.deliveries_total,
        }


def build_snapshot(mx: Metrics, t_us: int, ddf_stats: dict[str, int],
                   queue_depths: dict[str, int], in_flight: int) -> MetricsSnapshot:
    latency = {}
    for path in ("cloud", "edge"):
        n, mean, half = mx.latency_stats(path)
        latency[path] = {"n": n, "mean_ms": mean, "ci95_ms": half}
    traffic: dict[str, int] = {}
    for (chan, typ, _dev), nbytes in mx.traffic.items():
        k = f"{chan}|{typ}"
        traffic[k] = traffic.get(k, 0) + nbytes
    return MetricsSnapshot(
        t_us=t_us,
        counters=dict(sorted(mx.counters.items())),
        traffic=dict(sorted(traffic.items())),
        latency=latency,
        ddf=dict(ddf_stats),
        queue_depths=dict(sorted(queue_depths.items())),
        conservation=mx.conservation(in_flight),
        deliveries_total=len(mx.deliveries),
    )


def render_report(snapshot: MetricsSnapshot, seed: int, duration_s: float,
                  device_count: int) -> str:
    """Deterministic structured-text report for a finished run."""
    lines: list[str] = []
    o = lines.append
    o("edgelora run report")
    o(f"seed={seed} duration_s={duration_s:g} sim_end_us={snapshot.t_us}")
    o("")
    o("[deliveries]")
    c = snapshot.counters
    o(f"  cloud_immediate={c.get('delivered_cloud_immediate', 0)}"
      f" cloud_fallback={c.get('delivered_cloud_fallback', 0)}"
      f" edge_frames={c.get('delivered_edge_frames', 0)}"
      f" edge_aggregates={c.get('delivered_edge_msgs', 0)}")
    o("")
    o("[latency]")
    for path in ("cloud", "edge"):
        st = snapshot.latency[path]
        o(f"  {path}: n={st['n']} mean_ms={st['mean_ms']:.3f}"
          f" ci95_ms={st['ci95_ms']:.3f}")
    o("")
    o("[traffic bytes]")
    for key, nbytes in snapshot.traffic.items():
        o(f"  {key}: {nbytes}")
    o("")
    o("[conservation]")
    for key, val in snapshot.conservation.items():
        o(f"  {key}={val}")
    o("")
    o("[ddf]")
    o("  " + " ".join(f"{k}={v}" for k, v in sorted(snapshot.ddf.items())))
    o("")
    o("[counters]")
    for key, val in snapshot.counters.items():
        o(f"  {key}={val}")
    o("")
    o("[scalability proxies]  # proxies, not direct measurements")
    sim_s = snapshot.t_us / 1e6 if snapshot.t_us else 1.0
    o(f"  deliveries_per_sim_s={snapshot.deliveries_total / sim_s:.4f}")
    o(f"  device_count={device_count}")
    for key, val in snapshot.queue_depths.items():
        o(f"  peak_queue_{key}={val}")
    o("")
    return "\n".join(lines)
