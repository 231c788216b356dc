"""Gateway node: legacy packet forwarder plus the optional edge module.

The packet forwarder bridges every radio reception to the NS unchanged, in
both gateway modes. An e2gw-mode gateway additionally filters FPort-1 frames
from devices it serves, decrypts them under the edge session key, and folds
them into per-device tumbling windows whose aggregates go straight to the AS.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from typing import Callable

from . import crypto, frames, sim
from .device import DownlinkMsg, PayloadFormatError, parse_sensor_payload
from .metrics import Metrics

AGG_FUNCTIONS = ("mean", "sum", "max", "min")

# edge intercept outcomes
TAKEN_ACCEPTED = "accepted"
TAKEN_DUPLICATE = "duplicate"
TAKEN_BAD_MIC = "bad_mic"
TAKEN_BAD_FORMAT = "bad_format"
NOT_TAKEN = "not_taken"

WINDOW_TIMEOUT_PERIODS = 3


@dataclass
class AggregationSpec:
    """Live operator settings, shared by gateways and the AS hold logic."""

    function: str = "mean"
    window_len: int = 5

    def validate(self) -> None:
        if self.function not in AGG_FUNCTIONS:
            raise ValueError(f"unknown aggregation function {self.function!r}")
        if self.window_len < 1:
            raise ValueError(f"window_len must be >= 1, got {self.window_len}")


def _f32(x: float) -> float:
    return struct.unpack("<f", struct.pack("<f", x))[0]


def aggregate_readings(function: str,
                       readings: list[tuple[float, float, float]]
                       ) -> tuple[float, float, float]:
    """Per-field aggregate as 32-bit floats; mean/sum accumulate in 64-bit."""
    if not readings:
        raise ValueError("cannot aggregate an empty window")
    cols = list(zip(*readings))
    if function == "mean":
        return tuple(_f32(sum(col) / len(col)) for col in cols)  # type: ignore[return-value]
    if function == "sum":
        return tuple(_f32(sum(col)) for col in cols)  # type: ignore[return-value]
    if function == "max":
        return tuple(max(col) for col in cols)  # type: ignore[return-value]
    if function == "min":
        return tuple(min(col) for col in cols)  # type: ignore[return-value]
    raise ValueError(f"unknown aggregation function {function!r}")


@dataclass
class ServingEntry:
    keys: crypto.EdgeSessionKeys
    nwk_s_key: bytes
    device_name: str
    period_ms: int
    last_accepted_fcnt: int = 0


@dataclass
class WindowState:
    dev_addr: int
    window_len: int
    opened_at_us: int
    # accepted frames in arrival order; fcnt strictly increasing
    buffer: list[tuple[int, bytes, tuple[float, float, float]]] = field(
        default_factory=list)
    timer_generation: int = 0


@dataclass
class GatewayConfig:
    gw_id: str
    mode: str  # "legacy" | "e2gw"
    static_keys: crypto.EcKeyPair | None = None

    def __post_init__(self):
        if self.mode not in ("legacy", "e2gw"):
            raise ValueError(f"unknown gateway mode {self.mode!r}")
        if self.mode == "e2gw" and self.static_keys is None:
            raise ValueError(f"gateway {self.gw_id}: e2gw mode needs a static keypair")


class Gateway:
    """One gateway as a logical actor on the event loop."""

    def __init__(self, engine: sim.Engine, config: GatewayConfig,
                 ns_channel: sim.LinkChannel,
                 as_channel: sim.LinkChannel | None,
                 agg_spec: AggregationSpec, metrics: Metrics,
                 rng: random.Random,
                 send_downlink: Callable[[str, DownlinkMsg], None],
                 channel_keys: crypto.GwAsChannelKeys | None = None,
                 suppress_ns_forward_for_e2ed: bool = False):
        self.engine = engine
        self.config = config
        self.ns_channel = ns_channel
        self.as_channel = as_channel
        self.agg_spec = agg_spec
        self.metrics = metrics
        self.rng = rng
        self.send_downlink = send_downlink
        self.channel_keys = channel_keys
        self.suppress_ns_forward_for_e2ed = suppress_ns_forward_for_e2ed
        self.serving: dict[int, ServingEntry] = {}
        self.windows: dict[int, WindowState] = {}
        self._handoff_seq = 0
        self._agg_seq: dict[int, int] = {}
        self.last_edge_plaintext: dict[int, tuple[float, float, float]] = {}

    @property
    def gw_id(self) -> str:
        return self.config.gw_id

    # -- radio ingress ------------------------------------------------------

    def on_reception(self, frame_bytes: bytes, channel: int, rssi: float,
                     rx_time_us: int) -> None:
        outcome = NOT_TAKEN
        if self.config.mode == "e2gw":
            outcome = self.e2gw_intercept(frame_bytes)
        suppressed = (self.suppress_ns_forward_for_e2ed
                      and outcome in (TAKEN_ACCEPTED, TAKEN_DUPLICATE))
        if not suppressed:
            self.packet_forward(frame_bytes, channel, rssi, rx_time_us)

    def packet_forward(self, frame_bytes: bytes, channel: int, rssi: float,
                       rx_time_us: int) -> None:
        """Bridge a reception to the NS unchanged; never parses beyond length."""
        env = sim.make_envelope(
            "uplink",
            gw_id=self.gw_id,
            rx_time_us=rx_time_us,
            egress_time_us=self.engine.now_us,
            channel=channel,
            rssi=round(rssi, 2),
            data=sim.b64(frame_bytes),
        )
        weight = 1 if _is_data_frame(frame_bytes) else 0
        if weight:
            self.metrics.count("ns_entries")
        self.ns_channel.send(env, frame_weight=weight)

    # -- edge module -----------------------------------------------------------

    def e2gw_intercept(self, frame_bytes: bytes) -> str:
        """Decrypt-and-buffer for served devices; everything else passes by."""
        try:
            frame = frames.decode_uplink(frame_bytes)
        except frames.FrameError:
            return NOT_TAKEN
        entry = self.serving.get(frame.dev_addr)
        if entry is None or frame.fport != frames.FPORT_SENSOR_DATA:
            return NOT_TAKEN
        self.metrics.count("edge_entries")
        if not frames.verify_mic(entry.nwk_s_key, frame):
            self.metrics.count("sec_gw_bad_mic")
            self.metrics.emit("security_drop", where=self.gw_id,
                              reason="bad_mic", dev_addr=frame.dev_addr)
            return TAKEN_BAD_MIC
        if frame.fcnt <= entry.last_accepted_fcnt:
            self.metrics.count("dup_window_fcnt")
            self.metrics.emit("duplicate_drop", where=self.gw_id,
                              dev_addr=frame.dev_addr, fcnt=frame.fcnt)
            return TAKEN_DUPLICATE
        plaintext = frames.decrypt_payload(entry.keys.edge_s_enc_key,
                                           frame.dev_addr, frame.fcnt,
                                           frames.DIR_UP, frame.frm_payload)
        try:
            reading = parse_sensor_payload(plaintext)
        except PayloadFormatError:
            self.metrics.count("sec_gw_bad_format")
            self.metrics.emit("security_drop", where=self.gw_id,
                              reason="bad_format", dev_addr=frame.dev_addr)
            return TAKEN_BAD_FORMAT
        entry.last_accepted_fcnt = frame.fcnt
        self.last_edge_plaintext[frame.dev_addr] = reading
        self._append_to_window(frame.dev_addr, frame.fcnt, frame.mic, reading,
                               entry)
        return TAKEN_ACCEPTED

    def _append_to_window(self, dev_addr: int, fcnt: int, mic: bytes,
                          reading: tuple[float, float, float],
                          entry: ServingEntry) -> None:
        window = self.windows.get(dev_addr)
        if window is None:
            window = WindowState(dev_addr, self.agg_spec.window_len,
                                 opened_at_us=self.engine.now_us)
            self.windows[dev_addr] = window
        window.buffer.append((fcnt, mic, reading))
        if len(window.buffer) >= self.agg_spec.window_len:
            self.flush_window(dev_addr, "full")
        else:
            window.timer_generation += 1
            timeout_us = WINDOW_TIMEOUT_PERIODS * entry.period_ms * 1000
            self.engine.schedule_in(timeout_us, self._window_timeout, dev_addr,
                                    window.timer_generation)

    def _window_timeout(self, dev_addr: int, generation: int) -> None:
        window = self.windows.get(dev_addr)
        if window is None or window.timer_generation != generation:
            return
        if window.buffer:
            self.flush_window(dev_addr, "timeout")

    def flush_window(self, dev_addr: int, reason: str) -> None:
        """Emit one aggregate for the buffered frames and clear the window."""
        window = self.windows.pop(dev_addr)
        entry = self.serving[dev_addr]
        readings = [r for (_f, _m, r) in window.buffer]
        values = aggregate_readings(self.agg_spec.function, readings)
        seq = self._agg_seq.get(dev_addr, 0) + 1
        self._agg_seq[dev_addr] = seq
        plaintext = struct.pack("<fff", *values)
        ciphertext = frames.encrypt_payload(entry.keys.edge_s_enc_key,
                                            dev_addr, seq, frames.DIR_UP,
                                            plaintext)
        frame_ids = [[fcnt, mic.hex()] for (fcnt, mic, _r) in window.buffer]
        tag = frames.aes_cmac(entry.keys.edge_s_int_key,
                              aggregate_tag_input(dev_addr, seq,
                                                  self.agg_spec.function,
                                                  frame_ids, ciphertext))
        env = sim.make_envelope(
            "edge_aggregate",
            gw_id=self.gw_id,
            dev_addr=dev_addr,
            agg_seq=seq,
            function=self.agg_spec.function,
            window_len=self.agg_spec.window_len,
            window_len_actual=len(window.buffer),
            frames=frame_ids,
            opened_at_us=window.opened_at_us,
            closed_at_us=self.engine.now_us,
            flush_reason=reason,
            egress_time_us=self.engine.now_us,
            ciphertext=sim.b64(ciphertext),
            tag=tag[:crypto.HANDOFF_TAG_LEN].hex(),
        )
        assert self.as_channel is not None
        self.as_channel.send(env, frame_weight=len(window.buffer))
        self.metrics.emit("aggregate", gw_id=self.gw_id, dev_addr=dev_addr,
                          n=len(window.buffer), function=self.agg_spec.function,
                          reason=reason)

    # -- control ingress (from the JS over the NS->GW path) ----------------------

    def on_control(self, env: dict) -> None:
        kind = env.get("type")
        if kind == "edge_serve":
            self._handle_edge_serve(env)
        elif kind == "join_accept_dl":
            self.send_downlink(env["device"],
                               DownlinkMsg("join_accept", sim.unb64(env["data"])))
        elif kind == "edge_revoke":
            self._handle_edge_revoke(env)

    def _handle_edge_serve(self, env: dict) -> None:
        dev_addr = int(env["dev_addr"])
        device_pub = bytes.fromhex(env["device_pub"])
        ephemeral = crypto.generate_keypair(self.rng)
        shared = crypto.dh_shared(ephemeral.private, device_pub)
        keys = crypto.derive_edge_keys(shared, dev_addr, int(env["join_nonce"]),
                                       self.gw_id)
        self.serving[dev_addr] = ServingEntry(
            keys=keys,
            nwk_s_key=bytes.fromhex(env["nwk_s_key"]),
            device_name=env["device"],
            period_ms=int(env["period_ms"]),
        )
        assert self.channel_keys is not None and self.as_channel is not None
        self._handoff_seq += 1
        ct, tag = crypto.seal_handoff(self.channel_keys, keys, self._handoff_seq)
        self.as_channel.send(sim.make_envelope(
            "edge_key_handoff",
            gw_id=self.gw_id,
            dev_addr=dev_addr,
            seq=self._handoff_seq,
            egress_time_us=self.engine.now_us,
            ciphertext=ct.hex(),
            tag=tag.hex(),
        ))
        accept = frames.encode_edge_join(frames.EdgeJoinPayload(
            ephemeral.public, frames.EdgeRole.GATEWAY))
        self.send_downlink(env["device"],
                           DownlinkMsg("edge_accept", accept,
                                       echo_pub=device_pub))

    def _handle_edge_revoke(self, env: dict) -> None:
        dev_addr = int(env["dev_addr"])
        if dev_addr in self.windows and self.windows[dev_addr].buffer:
            self.flush_window(dev_addr, "revoked")
        self.windows.pop(dev_addr, None)
        self.serving.pop(dev_addr, None)

    def buffered_frames(self) -> int:
        return sum(len(w.buffer) for w in self.windows.values())


def aggregate_tag_input(dev_addr: int, agg_seq: int, function: str,
                        frame_ids: list[list], ciphertext: bytes) -> bytes:
    parts = [dev_addr.to_bytes(4, "little"), agg_seq.to_bytes(4, "little"),
             function.encode(), bytes([len(frame_ids)])]
    for fcnt, mic_hex in frame_ids:
        parts.append(int(fcnt).to_bytes(2, "little"))
        parts.append(bytes.fromhex(mic_hex))
    parts.append(ciphertext)
    return b"".join(parts)


def _is_data_frame(frame_bytes: bytes) -> bool:
    if not frame_bytes or frame_bytes[0] != frames.MHDR_DATA_UP:
        return False
    try:
        return frames.decode_uplink(frame_bytes).fport == frames.FPORT_SENSOR_DATA
    except frames.FrameError:
        return False
