"""Backend roles: network server, join server, application server.

All three are logical actors on the one event loop. The JS owns the device
registry; the NS holds network session keys only; edge session keys exist at
exactly the device, its serving gateway, and the AS.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

from . import crypto, frames, sim
from .ddf import Ddf, DdfKey
from .device import (DeviceProfile, PayloadFormatError, derive_session_keys,
                     parse_sensor_payload)
from .gateway import AggregationSpec, aggregate_tag_input
from .metrics import (CLASS_CLOUD, CLASS_EDGE, CLASS_FALLBACK, CLASS_LATE_DUP,
                      Metrics)

FIRST_DEV_ADDR = 0x2600_0001


# --- network server -----------------------------------------------------------

@dataclass
class NsSession:
    dev_eui: bytes
    device_name: str
    nwk_s_key: bytes


@dataclass
class _PendingGroup:
    # (envelope, decoded frame, rssi, gw_id) per received copy
    copies: list[tuple[dict, frames.UplinkFrame, float, str]] = field(
        default_factory=list)


@dataclass
class _PendingJoin:
    copies: list[tuple[frames.JoinRequest, float, str]] = field(
        default_factory=list)


class NetworkServer:
    """Validates uplinks, merges multi-gateway copies, forwards one copy to the AS."""

    def __init__(self, engine: sim.Engine, metrics: Metrics,
                 reassembly_window_us: int, processing_delay_us: int):
        self.engine = engine
        self.metrics = metrics
        self.reassembly_window_us = reassembly_window_us
        self.processing_delay_us = processing_delay_us
        self.sessions: dict[int, NsSession] = {}
        self.js: "JoinServer | None" = None
        self.as_channel: sim.LinkChannel | None = None
        self.last_frame_hex: dict[int, str] = {}
        self._pending: dict[bytes, _PendingGroup] = {}
        self._pending_joins: dict[tuple[bytes, int], _PendingJoin] = {}
        self._processing: list[dict] = []

    def held_keys(self) -> dict[str, bytes]:
        """Every key byte-string the NS possesses, for the exclusion check."""
        return {f"nwk_s_key[{addr:08x}]": s.nwk_s_key
                for addr, s in self.sessions.items()}

    def install_session(self, dev_addr: int, session: NsSession,
                        old_dev_addr: int | None = None) -> None:
        if old_dev_addr is not None:
            self.sessions.pop(old_dev_addr, None)
        self.sessions[dev_addr] = session

    def ns_ingest(self, env: dict) -> None:
        data = sim.unb64(env["data"])
        if not data:
            self.metrics.count("sec_ns_bad_frame")
            return
        if data[0] == frames.MHDR_JOIN_REQUEST:
            self._ingest_join(env, data)
        elif data[0] == frames.MHDR_DATA_UP:
            self._ingest_data(env, data)
        else:
            self.metrics.count("sec_ns_bad_frame")

    # receiver hook for gw->ns channels
    ingest = ns_ingest

    def _ingest_join(self, env: dict, data: bytes) -> None:
        try:
            req = frames.decode_join_request(data)
        except frames.FrameError:
            self.metrics.count("sec_ns_bad_frame")
            return
        key = (req.dev_eui, req.dev_nonce)
        group = self._pending_joins.get(key)
        if group is None:
            group = self._pending_joins[key] = _PendingJoin()
            self.engine.schedule_in(self.reassembly_window_us,
                                    self._flush_join, key)
        group.copies.append((req, env["rssi"], env["gw_id"]))

    def _flush_join(self, key: tuple[bytes, int]) -> None:
        group = self._pending_joins.pop(key)
        req = group.copies[0][0]
        receivers = [(gw, rssi) for (_r, rssi, gw) in group.copies]
        assert self.js is not None
        self.js.js_activate(req, receivers)

    def _ingest_data(self, env: dict, data: bytes) -> None:
        try:
            frame = frames.decode_uplink(data)
        except frames.FrameError:
            self.metrics.count("sec_ns_bad_frame")
            return
        session = self.sessions.get(frame.dev_addr)
        if session is None:
            self.metrics.count("sec_ns_unknown_device")
            self.metrics.emit("security_drop", where="ns",
                              reason="unknown_device", dev_addr=frame.dev_addr)
            return
        if not frames.verify_mic(session.nwk_s_key, frame):
            self.metrics.count("sec_ns_bad_mic")
            self.metrics.emit("security_drop", where="ns", reason="bad_mic",
                              dev_addr=frame.dev_addr)
            return
        self.last_frame_hex[frame.dev_addr] = data.hex()
        packed = DdfKey(frame.dev_addr, frame.fcnt, frame.mic).packed()
        group = self._pending.get(packed)
        if group is None:
            group = self._pending[packed] = _PendingGroup()
            self.engine.schedule_in(self.reassembly_window_us,
                                    self._flush_uplink, packed)
        group.copies.append((env, frame, env["rssi"], env["gw_id"]))

    def _flush_uplink(self, packed: bytes) -> None:
        group = self._pending.pop(packed)
        best = max(group.copies, key=lambda c: c[2])
        env, frame, _rssi, _gw = best
        is_data = frame.fport == frames.FPORT_SENSOR_DATA
        if is_data:
            # the losing copies terminate here
            self.metrics.count("dup_ns_reassembly", len(group.copies) - 1)
        if frame.fport == frames.FPORT_EDGE_JOIN:
            receivers = [(gw, rssi) for (_e, _f, rssi, gw) in group.copies]
            assert self.js is not None
            self.js.handle_edge_join(frame, receivers)
            return
        self.metrics.accept_key(packed)
        self._processing.append(env)
        self.engine.schedule_in(self.processing_delay_us, self._forward, env)

    def _forward(self, env: dict) -> None:
        self._processing.remove(env)
        fwd = dict(env)
        fwd["type"] = "ns_uplink"
        assert self.as_channel is not None
        self.as_channel.send(fwd, frame_weight=1)

    def pending_frames(self) -> int:
        data_copies = sum(
            len(g.copies) for g in self._pending.values()
            if g.copies and g.copies[0][1].fport == frames.FPORT_SENSOR_DATA)
        return data_copies + len(self._processing)


# --- join server -----------------------------------------------------------------

@dataclass
class RegistryEntry:
    profile: DeviceProfile
    last_dev_nonce: int = 0
    dev_addr: int | None = None
    join_nonce: int | None = None
    nwk_s_key: bytes | None = None
    app_s_key: bytes | None = None
    assigned_gw: str | None = None


class JoinServer:
    """Device registry, OTAA activation, and serving-gateway selection."""

    def __init__(self, engine: sim.Engine, metrics: Metrics, ns: NetworkServer,
                 as_: "ApplicationServer",
                 gw_control: dict[str, sim.LinkChannel],
                 gw_modes: dict[str, str]):
        self.engine = engine
        self.metrics = metrics
        self.ns = ns
        self.as_ = as_
        self.gw_control = gw_control
        self.gw_modes = gw_modes
        self.registry: dict[bytes, RegistryEntry] = {}
        self.by_addr: dict[int, bytes] = {}
        self._next_dev_addr = FIRST_DEV_ADDR
        self._join_nonce = 0

    def register(self, profile: DeviceProfile) -> None:
        if profile.dev_eui in self.registry:
            raise ValueError(f"duplicate dev_eui {profile.dev_eui.hex()}")
        self.registry[profile.dev_eui] = RegistryEntry(profile=profile)

    def held_keys(self) -> dict[str, bytes]:
        out: dict[str, bytes] = {}
        for eui, entry in self.registry.items():
            out[f"root_key[{eui.hex()}]"] = entry.profile.root_key
            if entry.nwk_s_key is not None:
                out[f"nwk_s_key[{eui.hex()}]"] = entry.nwk_s_key
            if entry.app_s_key is not None:
                out[f"app_s_key[{eui.hex()}]"] = entry.app_s_key
        return out

    def js_activate(self, req: frames.JoinRequest,
                    receivers: list[tuple[str, float]]) -> None:
        entry = self.registry.get(req.dev_eui)
        if entry is None:
            self.metrics.count("sec_js_bad_join")
            return
        if not frames.verify_join_request(entry.profile.root_key, req):
            self.metrics.count("sec_js_bad_join")
            return
        if req.dev_nonce <= entry.last_dev_nonce:
            self.metrics.count("sec_js_nonce_replay")
            return
        entry.last_dev_nonce = req.dev_nonce
        self._revoke_assignment(entry)
        old_addr = entry.dev_addr
        self._join_nonce += 1
        dev_addr = self._next_dev_addr
        self._next_dev_addr += 1
        nwk, app = derive_session_keys(entry.profile.root_key,
                                       self._join_nonce, req.dev_nonce)
        if old_addr is not None:
            self.by_addr.pop(old_addr, None)
        entry.dev_addr = dev_addr
        entry.join_nonce = self._join_nonce
        entry.nwk_s_key = nwk
        entry.app_s_key = app
        self.by_addr[dev_addr] = req.dev_eui
        self.ns.install_session(
            dev_addr,
            NsSession(req.dev_eui, entry.profile.name, nwk),
            old_dev_addr=old_addr)
        self.as_.register_device(dev_addr, req.dev_eui, entry.profile.name,
                                 app, entry.profile.period_ms)
        accept = frames.encode_join_accept(
            entry.profile.root_key,
            frames.JoinAccept(self._join_nonce, dev_addr, b"\x00\x00"))
        best_gw = _strongest(receivers)
        self.gw_control[best_gw].send(sim.make_envelope(
            "join_accept_dl",
            gw_id=best_gw,
            device=entry.profile.name,
            egress_time_us=self.engine.now_us,
            data=sim.b64(accept),
        ))
        self.metrics.emit("activation", device=entry.profile.name,
                          dev_addr=dev_addr, mode=entry.profile.mode)

    def handle_edge_join(self, frame: frames.UplinkFrame,
                         receivers: list[tuple[str, float]]) -> None:
        eui = self.by_addr.get(frame.dev_addr)
        if eui is None:
            self.metrics.count("sec_js_bad_join")
            return
        entry = self.registry[eui]
        assert entry.app_s_key is not None and entry.dev_addr is not None
        plaintext = frames.decrypt_payload(entry.app_s_key, frame.dev_addr,
                                           frame.fcnt, frames.DIR_UP,
                                           frame.frm_payload)
        try:
            payload = frames.decode_edge_join(plaintext)
        except frames.FrameError:
            self.metrics.count("sec_js_bad_join")
            return
        if payload.role is not frames.EdgeRole.DEVICE:
            self.metrics.count("sec_js_bad_join")
            return
        candidates = [(gw, rssi) for gw, rssi in receivers
                      if self.gw_modes.get(gw) == "e2gw"]
        if not candidates:
            self.metrics.count("edge_join_no_gateway")
            self.metrics.emit("edge_join_no_gateway",
                              device=entry.profile.name)
            return
        best_gw = _strongest(candidates)
        self._revoke_assignment(entry)
        entry.assigned_gw = best_gw
        assert entry.nwk_s_key is not None and entry.join_nonce is not None
        self.gw_control[best_gw].send(sim.make_envelope(
            "edge_serve",
            gw_id=best_gw,
            device=entry.profile.name,
            dev_addr=entry.dev_addr,
            device_pub=payload.ephemeral_pub.hex(),
            join_nonce=entry.join_nonce,
            nwk_s_key=entry.nwk_s_key.hex(),
            period_ms=entry.profile.period_ms,
            egress_time_us=self.engine.now_us,
        ))
        self.metrics.emit("edge_assign", device=entry.profile.name,
                          dev_addr=entry.dev_addr, gw_id=best_gw)

    def _revoke_assignment(self, entry: RegistryEntry) -> None:
        if entry.assigned_gw is None or entry.dev_addr is None:
            return
        self.gw_control[entry.assigned_gw].send(sim.make_envelope(
            "edge_revoke",
            gw_id=entry.assigned_gw,
            dev_addr=entry.dev_addr,
            egress_time_us=self.engine.now_us,
        ))
        entry.assigned_gw = None

    def assignment_of(self, dev_eui: bytes) -> str | None:
        entry = self.registry.get(dev_eui)
        return entry.assigned_gw if entry else None


def _strongest(receivers: list[tuple[str, float]]) -> str:
    # strongest rssi wins; ties go to the lexically lowest gateway id
    return min(receivers, key=lambda r: (-r[1], r[0]))[0]


# --- application server ---------------------------------------------------------

@dataclass(eq=False)
class HoldEntry:
    env: dict
    frame: frames.UplinkFrame
    arrival_us: int
    deadline_us: int


@dataclass
class AsDeviceInfo:
    dev_eui: bytes
    name: str
    app_s_key: bytes
    period_ms: int


class ApplicationServer:
    """Hold-timeout queue, duplicate filter, decryption, delivery, metrics."""

    def __init__(self, engine: sim.Engine, metrics: Metrics, ddf: Ddf,
                 agg_spec: AggregationSpec, hold_margin_us: int,
                 channel_keys: dict[str, crypto.GwAsChannelKeys],
                 on_delivery: Callable[[dict], None] | None = None):
        self.engine = engine
        self.metrics = metrics
        self.ddf = ddf
        self.agg_spec = agg_spec
        self.hold_margin_us = hold_margin_us
        self.channel_keys = channel_keys
        self.on_delivery = on_delivery or (lambda record: None)
        self.devices: dict[int, AsDeviceInfo] = {}
        self.edge_keys: dict[int, crypto.EdgeSessionKeys] = {}
        self.hold_queue: list[HoldEntry] = []
        self.last_values: dict[int, tuple[float, float, float]] = {}

    def register_device(self, dev_addr: int, dev_eui: bytes, name: str,
                        app_s_key: bytes, period_ms: int) -> None:
        # old addresses are retained: frames already held under them must
        # still resolve after a re-join
        self.devices[dev_addr] = AsDeviceInfo(dev_eui, name, app_s_key,
                                              period_ms)

    def ingest(self, env: dict) -> None:
        kind = env.get("type")
        if kind == "ns_uplink":
            self.as_ingest_cloud(env)
        elif kind == "edge_aggregate":
            self.as_ingest_edge(env)
        elif kind == "edge_key_handoff":
            self._handle_handoff(env)

    # -- cloud path ------------------------------------------------------------

    def as_ingest_cloud(self, env: dict) -> None:
        frame = frames.decode_uplink(sim.unb64(env["data"]))
        if frame.dev_addr not in self.devices:
            self.metrics.count("sec_as_missing_keys")
            return
        if frame.dev_addr in self.edge_keys:
            deadline = self.engine.now_us + self._hold_timeout_us(frame.dev_addr)
            entry = HoldEntry(env, frame, self.engine.now_us, deadline)
            self.hold_queue.append(entry)
            self.engine.schedule(deadline, self._resolve_hold, entry)
        else:
            self._deliver_cloud(env, frame, fallback=False)

    def _hold_timeout_us(self, dev_addr: int) -> int:
        period_ms = self.devices[dev_addr].period_ms
        return self.agg_spec.window_len * period_ms * 1000 + self.hold_margin_us

    def _resolve_hold(self, entry: HoldEntry) -> None:
        self.hold_queue.remove(entry)
        self._deliver_cloud(entry.env, entry.frame, fallback=True)

    def _deliver_cloud(self, env: dict, frame: frames.UplinkFrame,
                       fallback: bool) -> None:
        key = DdfKey(frame.dev_addr, frame.fcnt, frame.mic)
        if self.ddf.check_and_insert(key):
            self.metrics.count("dup_ddf_hold" if fallback else "dup_ddf_immediate")
            self.metrics.emit("duplicate_drop", where="as",
                              dev_addr=frame.dev_addr, fcnt=frame.fcnt)
            return
        info = self.devices[frame.dev_addr]
        if fallback:
            dec_key = self.edge_keys[frame.dev_addr].edge_s_enc_key
        else:
            dec_key = info.app_s_key
        plaintext = frames.decrypt_payload(dec_key, frame.dev_addr, frame.fcnt,
                                           frames.DIR_UP, frame.frm_payload)
        try:
            values = parse_sensor_payload(plaintext)
        except PayloadFormatError:
            self.metrics.count("sec_as_bad_format")
            self.metrics.emit("security_drop", where="as", reason="bad_format",
                              dev_addr=frame.dev_addr)
            return
        latency = self.engine.now_us - env["egress_time_us"]
        self.metrics.record_latency("cloud", latency)
        self.metrics.count("delivered_cloud_fallback" if fallback
                           else "delivered_cloud_immediate")
        self.metrics.classify(key.packed(),
                              CLASS_FALLBACK if fallback else CLASS_CLOUD)
        self.last_values[frame.dev_addr] = values
        record = {
            "path": "cloud",
            "fallback": fallback,
            "dev_eui": info.dev_eui.hex(),
            "dev_addr": frame.dev_addr,
            "fcnt": frame.fcnt,
            "values": [round(v, 6) for v in values],
            "latency_us": latency,
            "t_us": self.engine.now_us,
        }
        self.metrics.record_delivery(record)
        self.on_delivery(record)

    # -- edge path ----------------------------------------------------------------

    def as_ingest_edge(self, env: dict) -> None:
        dev_addr = int(env["dev_addr"])
        frame_ids = env["frames"]
        weight = len(frame_ids)
        keys = self.edge_keys.get(dev_addr)
        if keys is None:
            self.metrics.count("sec_as_missing_keys", weight)
            return
        ciphertext = sim.unb64(env["ciphertext"])
        expect = frames.aes_cmac(
            keys.edge_s_int_key,
            aggregate_tag_input(dev_addr, int(env["agg_seq"]), env["function"],
                                frame_ids, ciphertext))[:crypto.HANDOFF_TAG_LEN]
        if expect.hex() != env["tag"]:
            self.metrics.count("sec_as_bad_tag_frames", weight)
            self.metrics.emit("security_drop", where="as", reason="bad_tag",
                              dev_addr=dev_addr)
            return
        plaintext = frames.decrypt_payload(keys.edge_s_enc_key, dev_addr,
                                           int(env["agg_seq"]), frames.DIR_UP,
                                           ciphertext)
        if len(plaintext) != 12:
            self.metrics.count("sec_as_bad_format")
            return
        values = struct.unpack("<fff", plaintext)
        if not all(v == v and abs(v) != float("inf") for v in values):
            self.metrics.count("sec_as_bad_format")
            return
        covered: list[int] = []
        late: list[int] = []
        for fcnt, mic_hex in frame_ids:
            key = DdfKey(dev_addr, int(fcnt), bytes.fromhex(mic_hex))
            if self.ddf.check_and_insert(key):
                late.append(int(fcnt))
                self.metrics.classify(key.packed(), CLASS_LATE_DUP)
            else:
                covered.append(int(fcnt))
                self.metrics.classify(key.packed(), CLASS_EDGE)
        self.metrics.count("delivered_edge_frames", len(covered))
        self.metrics.count("delivered_edge_msgs")
        if late:
            self.metrics.count("late_duplicate_frames", len(late))
            self.metrics.emit("duplicate_drop", where="as_late",
                              dev_addr=dev_addr, fcnts=late)
        latency = self.engine.now_us - env["egress_time_us"]
        self.metrics.record_latency("edge", latency)
        self.last_values[dev_addr] = values
        info = self.devices.get(dev_addr)
        record = {
            "path": "edge",
            "dev_eui": info.dev_eui.hex() if info else "",
            "dev_addr": dev_addr,
            "gw_id": env["gw_id"],
            "function": env["function"],
            "fcnt_list": [int(f) for f, _ in frame_ids],
            "covered": covered,
            "late": late,
            "values": [round(v, 6) for v in values],
            "latency_us": latency,
            "t_us": self.engine.now_us,
        }
        self.metrics.record_delivery(record)
        self.on_delivery(record)

    # -- key hand-off ----------------------------------------------------------------

    def _handle_handoff(self, env: dict) -> None:
        gw_id = env["gw_id"]
        chan = self.channel_keys.get(gw_id)
        if chan is None:
            self.metrics.count("sec_as_bad_handoff")
            return
        try:
            keys = crypto.open_handoff(chan, int(env["dev_addr"]),
                                       int(env["seq"]),
                                       bytes.fromhex(env["ciphertext"]),
                                       bytes.fromhex(env["tag"]), gw_id)
        except crypto.KeyAgreementError:
            self.metrics.count("sec_as_bad_handoff")
            self.metrics.emit("security_drop", where="as",
                              reason="bad_handoff", dev_addr=env["dev_addr"])
            return
        self.edge_keys[keys.dev_addr] = keys
        self.metrics.emit("edge_keys_installed", dev_addr=keys.dev_addr,
                          gw_id=gw_id)

    def held_frames(self) -> int:
        return len(self.hold_queue)
