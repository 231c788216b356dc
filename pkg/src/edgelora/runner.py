"""Network assembly and run orchestration.

Builds engine, medium, links, devices, gateways, and servers from a
ScenarioConfig, runs in fast or wall-clock mode, and exposes the state
queries and mutations the control API needs. All mutations must arrive via
the engine command queue when the engine runs on its own thread.
"""

from __future__ import annotations

import hashlib
import json
from typing import Callable

from . import crypto, sim
from .ddf import Ddf
from .device import EndDevice
from .gateway import AggregationSpec, Gateway, GatewayConfig
from .metrics import Metrics, MetricsSnapshot, build_snapshot, render_report
from .scenario import ScenarioConfig
from .servers import ApplicationServer, JoinServer, NetworkServer

DEVICE_START_STAGGER_US = 100_000
SNAPSHOT_INTERVAL_US = 1_000_000


def _as_public_key(private: bytes) -> bytes:
    from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat
    return X25519PrivateKey.from_private_bytes(private).public_key() \
        .public_bytes(Encoding.Raw, PublicFormat.Raw)


class Network:
    """One fully wired emulation instance."""

    def __init__(self, cfg: ScenarioConfig,
                 on_event: Callable[[dict], None] | None = None):
        self.cfg = cfg
        self.engine = sim.Engine(cfg.seed, pacing=cfg.pacing)
        self.events: list[dict] = []
        self._event_sink = on_event or (lambda ev: None)
        self.metrics = Metrics(emit=self._emit)
        self.agg_spec = AggregationSpec(cfg.aggregation.function,
                                        cfg.aggregation.window_len)
        self.agg_spec.validate()

        gw_ids = [g.gw_id for g in cfg.gateways]
        self.medium = sim.RadioMedium(
            self.engine, sim.CoverageMatrix(cfg.coverage), gw_ids,
            cfg.radio.airtime_us_per_byte, self.engine.rng("radio"))

        # two directional channels per configured link, sharing LinkParams
        self.link_params: dict[str, sim.LinkParams] = {}
        self.channels: dict[str, sim.LinkChannel] = {}
        for spec in cfg.links:
            params = sim.LinkParams(spec.link_id, spec.a, spec.b,
                                    spec.bandwidth_bps,
                                    int(spec.delay_ms * 1000))
            self.link_params[spec.link_id] = params
            for src, dst in ((spec.a, spec.b), (spec.b, spec.a)):
                chan = sim.LinkChannel(self.engine, params, src, dst,
                                       on_bytes=self.metrics.on_link_bytes)
                self.channels[chan.channel_id] = chan

        as_priv = cfg.servers.as_static_private_key
        as_pub = _as_public_key(as_priv) if as_priv else b""
        chan_keys_as_side: dict[str, crypto.GwAsChannelKeys] = {}
        for g in cfg.gateways:
            if g.mode == "e2gw" and g.static_private_key:
                gw_pub = _as_public_key(g.static_private_key)
                chan_keys_as_side[g.gw_id] = crypto.derive_channel_keys_as_side(
                    as_priv, gw_pub, g.gw_id)

        self.ddf = Ddf()
        self.delivery_lines: list[str] = []
        self.as_ = ApplicationServer(
            self.engine, self.metrics, self.ddf, self.agg_spec,
            hold_margin_us=cfg.hold_margin_ms * 1000,
            channel_keys=chan_keys_as_side,
            on_delivery=self._on_delivery)
        self.ns = NetworkServer(
            self.engine, self.metrics,
            reassembly_window_us=int(cfg.control.reassembly_window_ms * 1000),
            processing_delay_us=cfg.control.ns_processing_ms * 1000)
        gw_control = {g.gw_id: self._require_channel("ns", g.gw_id)
                      for g in cfg.gateways}
        self.js = JoinServer(self.engine, self.metrics, self.ns, self.as_,
                             gw_control, {g.gw_id: g.mode for g in cfg.gateways})
        self.ns.js = self.js
        self.ns.as_channel = self._require_channel("ns", "as")
        self.ns.as_channel.receiver = self.as_.ingest

        self.gateways: dict[str, Gateway] = {}
        for g in cfg.gateways:
            static = None
            chan_keys = None
            as_channel = None
            if g.mode == "e2gw":
                assert g.static_private_key is not None
                static = crypto.EcKeyPair(g.static_private_key,
                                          _as_public_key(g.static_private_key))
                chan_keys = crypto.derive_channel_keys(g.static_private_key,
                                                       as_pub, g.gw_id)
                as_channel = self._require_channel(g.gw_id, "as")
                as_channel.receiver = self.as_.ingest
            gw = Gateway(
                self.engine,
                GatewayConfig(g.gw_id, g.mode, static),
                ns_channel=self._require_channel(g.gw_id, "ns"),
                as_channel=as_channel,
                agg_spec=self.agg_spec,
                metrics=self.metrics,
                rng=self.engine.rng(f"gateway:{g.gw_id}"),
                send_downlink=self._send_downlink,
                channel_keys=chan_keys,
                suppress_ns_forward_for_e2ed=cfg.suppress_ns_forward_for_e2ed,
            )
            self._require_channel(g.gw_id, "ns").receiver = self.ns.ingest
            self._require_channel("ns", g.gw_id).receiver = gw.on_control
            self.medium.attach_gateway(g.gw_id, gw.on_reception)
            self.gateways[g.gw_id] = gw

        self.devices: dict[str, EndDevice] = {}
        for idx, profile in enumerate(cfg.devices):
            dev = EndDevice(self.engine, self.medium, profile,
                            self.engine.rng(f"device:{profile.name}"),
                            start_at_us=idx * DEVICE_START_STAGGER_US,
                            on_event=self.metrics.emit)
            self.js.register(profile)
            self.devices[profile.name] = dev
        self._downlink_delay_us = cfg.control.downlink_delay_ms * 1000
        for dev in self.devices.values():
            dev.start()
        # scheduled in every mode so the event trace is pacing-independent
        self.engine.schedule(SNAPSHOT_INTERVAL_US, self._periodic_snapshot)

    # -- wiring helpers ---------------------------------------------------------

    def _require_channel(self, src: str, dst: str) -> sim.LinkChannel:
        key = f"{src}->{dst}"
        if key not in self.channels:
            raise ValueError(f"scenario defines no link covering {key}")
        return self.channels[key]

    def _send_downlink(self, device_name: str, msg) -> None:
        dev = self.devices[device_name]
        self.engine.schedule_in(self._downlink_delay_us, dev.on_downlink, msg)

    def _emit(self, name: str, **fields) -> None:
        event = {"event": name, "t_us": self.engine.now_us, **fields}
        self.events.append(event)
        self._event_sink(event)

    def _on_delivery(self, record: dict) -> None:
        self.delivery_lines.append(json.dumps(record, sort_keys=True,
                                              separators=(",", ":")))

    def _periodic_snapshot(self) -> None:
        self._event_sink({"event": "snapshot", "t_us": self.engine.now_us,
                          "metrics": self.snapshot().to_json()})
        next_at = self.engine.now_us + SNAPSHOT_INTERVAL_US
        if next_at <= int(self.cfg.duration_s * 1_000_000):
            self.engine.schedule(next_at, self._periodic_snapshot)

    # -- running ---------------------------------------------------------------------

    def run(self) -> MetricsSnapshot:
        """Fast deterministic run to the configured duration."""
        self.engine.run_until(int(self.cfg.duration_s * 1_000_000))
        return self.snapshot()

    def run_realtime(self) -> MetricsSnapshot:
        self.engine.run_realtime(int(self.cfg.duration_s * 1_000_000))
        return self.snapshot()

    # -- state inspection ---------------------------------------------------------------

    def in_flight_frames(self) -> int:
        """Data frames currently inside windows, links, reassembly, or holds."""
        total = sum(gw.buffered_frames() for gw in self.gateways.values())
        total += sum(ch.in_flight_frames() for ch in self.channels.values())
        total += self.ns.pending_frames()
        total += self.as_.held_frames()
        return total

    def queue_depths(self) -> dict[str, int]:
        depths = {f"link:{cid}": ch.peak_depth
                  for cid, ch in self.channels.items()}
        depths["as_hold"] = self.as_.held_frames()
        return depths

    def snapshot(self) -> MetricsSnapshot:
        return build_snapshot(self.metrics, self.engine.now_us,
                              self.ddf.stats(), self.queue_depths(),
                              self.in_flight_frames())

    def report(self) -> str:
        return render_report(self.snapshot(), self.cfg.seed,
                             self.cfg.duration_s, len(self.cfg.devices))

    def report_hash(self) -> str:
        return hashlib.sha256(self.report().encode()).hexdigest()

    def delivery_log(self) -> str:
        return "\n".join(self.delivery_lines) + ("\n" if self.delivery_lines else "")

    def state_view(self) -> dict:
        devices = []
        for name, dev in self.devices.items():
            entry = self.js.registry.get(dev.profile.dev_eui)
            devices.append({
                "name": name,
                "dev_eui": dev.profile.dev_eui.hex(),
                "mode": dev.profile.mode,
                "period_ms": dev.profile.period_ms,
                "payload_len": dev.profile.payload_len,
                "state": dev.state.value,
                "dev_addr": entry.dev_addr if entry else None,
                "assigned_gw": entry.assigned_gw if entry else None,
                "frames_sent": dev.frames_sent,
            })
        return {
            "t_us": self.engine.now_us,
            "pacing": self.cfg.pacing,
            "devices": devices,
            "gateways": [{"gw_id": g.gw_id, "mode": g.config.mode,
                          "serving": sorted(g.serving)}
                         for g in self.gateways.values()],
            "links": [{"id": p.link_id, "a": p.a, "b": p.b,
                       "bandwidth_bps": p.bandwidth_bps,
                       "delay_ms": p.delay_us / 1000.0}
                      for p in self.link_params.values()],
            "aggregation": {"function": self.agg_spec.function,
                            "window_len": self.agg_spec.window_len},
        }

    def security_view(self, dev_eui_hex: str) -> dict | None:
        """Ciphertext as the NS sees it vs plaintext at the edge/AS."""
        for dev in self.devices.values():
            if dev.profile.dev_eui.hex() == dev_eui_hex:
                entry = self.js.registry[dev.profile.dev_eui]
                addr = entry.dev_addr
                edge_plain = None
                for gw in self.gateways.values():
                    if addr is not None and addr in gw.last_edge_plaintext:
                        edge_plain = list(gw.last_edge_plaintext[addr])
                as_values = (list(self.as_.last_values[addr])
                             if addr is not None and addr in self.as_.last_values
                             else None)
                return {
                    "dev_eui": dev_eui_hex,
                    "dev_addr": addr,
                    "ns_ciphertext_hex":
                        self.ns.last_frame_hex.get(addr) if addr is not None else None,
                    "edge_plaintext": edge_plain,
                    "as_plaintext": as_values,
                }
        return None

    # -- runtime mutations (call via engine.submit when the engine is threaded) ----

    def set_device_mode(self, name: str, mode: str) -> None:
        dev = self.devices[name]
        if mode not in ("legacy", "e2ed"):
            raise ValueError(f"unknown device mode {mode!r}")
        if mode != dev.profile.mode:
            dev.profile.mode = mode
            dev.reset_activation()

    def set_device_period(self, name: str, period_ms: int) -> None:
        if period_ms < 100:
            raise ValueError("period_ms must be >= 100")
        self.devices[name].profile.period_ms = period_ms
        entry = self.js.registry[self.devices[name].profile.dev_eui]
        if entry.dev_addr is not None and entry.dev_addr in self.as_.devices:
            self.as_.devices[entry.dev_addr].period_ms = period_ms

    def set_device_payload_len(self, name: str, payload_len: int) -> None:
        if payload_len < 12:
            raise ValueError("payload_len must be >= 12")
        self.devices[name].profile.payload_len = payload_len

    def device_by_eui(self, dev_eui_hex: str) -> EndDevice | None:
        for dev in self.devices.values():
            if dev.profile.dev_eui.hex() == dev_eui_hex:
                return dev
        return None

    def set_aggregation(self, function: str | None = None,
                        window_len: int | None = None) -> None:
        spec = AggregationSpec(
            self.agg_spec.function if function is None else function,
            self.agg_spec.window_len if window_len is None else window_len)
        spec.validate()
        self.agg_spec.function = spec.function
        self.agg_spec.window_len = spec.window_len

    def set_link(self, link_id: str, bandwidth_bps: int | None = None,
                 delay_ms: float | None = None) -> None:
        params = self.link_params.get(link_id)
        if params is None:
            raise KeyError(f"unknown link {link_id!r}")
        if bandwidth_bps is not None:
            if bandwidth_bps < 1:
                raise ValueError("bandwidth_bps must be >= 1")
            params.bandwidth_bps = bandwidth_bps
        if delay_ms is not None:
            if delay_ms < 0:
                raise ValueError("delay_ms must be >= 0")
            params.delay_us = int(delay_ms * 1000)
