import random

import pytest

from edgelora import crypto, frames, sim
from edgelora.ddf import Ddf
from edgelora.device import (SensorReading, derive_session_keys,
                             pack_sensor_payload)
from edgelora.gateway import AggregationSpec, aggregate_tag_input
from edgelora.metrics import Metrics
from edgelora.servers import (ApplicationServer, JoinServer, NetworkServer,
                              NsSession)
from conftest import make_profile


def uplink_env(frame, gw_id="gw1", rssi=-80.0, egress_us=0, type_="uplink"):
    return sim.make_envelope(type_, gw_id=gw_id, rx_time_us=egress_us,
                             egress_time_us=egress_us, channel=0, rssi=rssi,
                             data=sim.b64(frames.encode_uplink(frame)))


class NsHarness:
    def __init__(self, reassembly_ms=200.0, processing_ms=50):
        self.engine = sim.Engine(seed=4)
        self.metrics = Metrics()
        self.ns = NetworkServer(self.engine, self.metrics,
                                reassembly_window_us=int(reassembly_ms * 1000),
                                processing_delay_us=processing_ms * 1000)
        params = sim.LinkParams("ns-as", "ns", "as", 1_000_000, 1000)
        self.to_as = sim.LinkChannel(self.engine, params, "ns", "as")
        self.forwarded: list[dict] = []
        self.to_as.receiver = self.forwarded.append
        self.ns.as_channel = self.to_as
        self.nwk = bytes([0x31]) * 16
        self.ns.install_session(0x26000001,
                                NsSession(b"\x01" * 8, "dev1", self.nwk))

    def data_frame(self, fcnt, payload=b"\x00" * 12, dev_addr=0x26000001):
        ct = frames.encrypt_payload(bytes([0xA1]) * 16, dev_addr, fcnt,
                                    frames.DIR_UP, payload)
        return frames.make_uplink(self.nwk, dev_addr, fcnt,
                                  frames.FPORT_SENSOR_DATA, ct)


class TestNsIngest:
    def test_two_gateway_copies_forward_once(self):
        h = NsHarness()
        frame = h.data_frame(1)
        h.ns.ingest(uplink_env(frame, "gw1", rssi=-90.0))
        h.engine.run_until(10_000)  # 10 ms later, second copy
        h.ns.ingest(uplink_env(frame, "gw2", rssi=-70.0))
        h.engine.run_until(5_000_000)
        assert len(h.forwarded) == 1
        assert h.forwarded[0]["gw_id"] == "gw2"  # strongest rssi kept
        assert h.forwarded[0]["type"] == "ns_uplink"
        assert h.metrics.get("dup_ns_reassembly") == 1

    def test_bad_mic_dropped_and_counted(self):
        h = NsHarness()
        frame = h.data_frame(1)
        bad = frames.UplinkFrame(frame.mhdr, frame.dev_addr, frame.fctrl,
                                 frame.fcnt, frame.fport, frame.frm_payload,
                                 b"\x00\x00\x00\x00")
        h.ns.ingest(uplink_env(bad))
        h.engine.run_until(5_000_000)
        assert h.forwarded == []
        assert h.metrics.get("sec_ns_bad_mic") == 1

    def test_unknown_device_dropped(self):
        h = NsHarness()
        frame = frames.make_uplink(bytes(16), 0x11111111, 1, 1, b"\x00" * 12)
        h.ns.ingest(uplink_env(frame))
        h.engine.run_until(5_000_000)
        assert h.forwarded == []
        assert h.metrics.get("sec_ns_unknown_device") == 1

    def test_distinct_fcnts_forward_separately(self):
        h = NsHarness()
        h.ns.ingest(uplink_env(h.data_frame(1)))
        h.ns.ingest(uplink_env(h.data_frame(2)))
        h.engine.run_until(5_000_000)
        assert len(h.forwarded) == 2

    def test_processing_delay_applied(self):
        h = NsHarness(reassembly_ms=0.0, processing_ms=50)
        arrival_times = []
        h.to_as.receiver = lambda env: arrival_times.append(h.engine.now_us)
        h.ns.ingest(uplink_env(h.data_frame(1)))
        h.engine.run_until(5_000_000)
        # reassembly 0 + processing 50 ms + link (tx + 1 ms delay)
        assert arrival_times[0] >= 51_000

    def test_straggler_copy_forwards_again(self):
        # a copy arriving after the window becomes a new group; the AS DDF
        # is what catches it
        h = NsHarness(reassembly_ms=200.0)
        frame = h.data_frame(1)
        h.ns.ingest(uplink_env(frame, "gw1"))
        h.engine.run_until(1_000_000)
        h.ns.ingest(uplink_env(frame, "gw2"))
        h.engine.run_until(5_000_000)
        assert len(h.forwarded) == 2


class JsHarness:
    def __init__(self, gw_modes=None):
        self.engine = sim.Engine(seed=5)
        self.metrics = Metrics()
        self.ns = NetworkServer(self.engine, self.metrics, 200_000, 50_000)
        self.as_msgs: list[dict] = []
        agg = AggregationSpec("mean", 5)
        self.as_ = ApplicationServer(self.engine, self.metrics, Ddf(1024), agg,
                                     500_000, {})
        gw_modes = gw_modes or {"gw1": "e2gw", "gw2": "e2gw", "gw3": "legacy"}
        self.gw_msgs: dict[str, list[dict]] = {}
        gw_control = {}
        for gw_id in gw_modes:
            params = sim.LinkParams(f"ns-{gw_id}", "ns", gw_id, 1_000_000, 1000)
            chan = sim.LinkChannel(self.engine, params, "ns", gw_id)
            self.gw_msgs[gw_id] = []
            chan.receiver = self.gw_msgs[gw_id].append
            gw_control[gw_id] = chan
        self.js = JoinServer(self.engine, self.metrics, self.ns, self.as_,
                             gw_control, gw_modes)
        self.profile = make_profile(1, mode="e2ed")
        self.js.register(self.profile)

    def join(self, dev_nonce=1, receivers=None):
        req = frames.make_join_request(self.profile.root_key,
                                       self.profile.join_eui,
                                       self.profile.dev_eui, dev_nonce)
        self.js.js_activate(req, receivers or [("gw1", -80.0)])
        self.engine.run_until(self.engine.now_us + 2_000_000)


class TestJsActivate:
    def test_activation_installs_sessions_and_sends_accept(self):
        h = JsHarness()
        h.join()
        entry = h.js.registry[h.profile.dev_eui]
        assert entry.dev_addr is not None
        assert entry.dev_addr in h.ns.sessions
        assert entry.dev_addr in h.as_.devices
        accepts = [m for m in h.gw_msgs["gw1"] if m["type"] == "join_accept_dl"]
        assert len(accepts) == 1
        accept = frames.decode_join_accept(h.profile.root_key,
                                           sim.unb64(accepts[0]["data"]))
        assert accept.dev_addr == entry.dev_addr
        nwk, app = derive_session_keys(h.profile.root_key, accept.join_nonce, 1)
        assert entry.nwk_s_key == nwk and entry.app_s_key == app

    def test_accept_routed_via_strongest_gateway(self):
        h = JsHarness()
        h.join(receivers=[("gw1", -90.0), ("gw2", -70.0)])
        assert not [m for m in h.gw_msgs["gw1"] if m["type"] == "join_accept_dl"]
        assert [m for m in h.gw_msgs["gw2"] if m["type"] == "join_accept_dl"]

    def test_nonce_replay_rejected(self):
        h = JsHarness()
        h.join(dev_nonce=5)
        first_addr = h.js.registry[h.profile.dev_eui].dev_addr
        h.join(dev_nonce=5)
        assert h.js.registry[h.profile.dev_eui].dev_addr == first_addr
        assert h.metrics.get("sec_js_nonce_replay") == 1

    def test_unknown_device_rejected(self):
        h = JsHarness()
        req = frames.make_join_request(bytes(16), b"\xbb" * 8, b"\xcc" * 8, 1)
        h.js.js_activate(req, [("gw1", -80.0)])
        assert h.metrics.get("sec_js_bad_join") == 1

    def _edge_join_frame(self, h):
        entry = h.js.registry[h.profile.dev_eui]
        pair = crypto.generate_keypair(random.Random(42))
        payload = frames.encode_edge_join(frames.EdgeJoinPayload(
            pair.public, frames.EdgeRole.DEVICE))
        ct = frames.encrypt_payload(entry.app_s_key, entry.dev_addr, 1,
                                    frames.DIR_UP, payload)
        return frames.make_uplink(entry.nwk_s_key, entry.dev_addr, 1,
                                  frames.FPORT_EDGE_JOIN, ct), pair

    def test_edge_selection_prefers_strongest(self):
        h = JsHarness()
        h.join()
        frame, _ = self._edge_join_frame(h)
        h.js.handle_edge_join(frame, [("gw1", -70.0), ("gw2", -90.0)])
        assert h.js.registry[h.profile.dev_eui].assigned_gw == "gw1"
        serves = [m for m in h.gw_msgs["gw1"] if m["type"] == "edge_serve"]
        assert len(serves) == 0  # still on the link
        h.engine.run_until(h.engine.now_us + 2_000_000)
        serves = [m for m in h.gw_msgs["gw1"] if m["type"] == "edge_serve"]
        assert len(serves) == 1

    def test_edge_selection_tie_breaks_on_gw_id(self):
        h = JsHarness()
        h.join()
        frame, _ = self._edge_join_frame(h)
        h.js.handle_edge_join(frame, [("gw2", -70.0), ("gw1", -70.0)])
        assert h.js.registry[h.profile.dev_eui].assigned_gw == "gw1"

    def test_legacy_only_receivers_leave_device_legacy(self):
        h = JsHarness()
        h.join()
        frame, _ = self._edge_join_frame(h)
        h.js.handle_edge_join(frame, [("gw3", -60.0)])
        assert h.js.registry[h.profile.dev_eui].assigned_gw is None
        assert h.metrics.get("edge_join_no_gateway") == 1

    def test_serve_notification_carries_material(self):
        h = JsHarness()
        h.join()
        frame, pair = self._edge_join_frame(h)
        h.js.handle_edge_join(frame, [("gw1", -70.0)])
        h.engine.run_until(h.engine.now_us + 2_000_000)
        serve = [m for m in h.gw_msgs["gw1"] if m["type"] == "edge_serve"][0]
        entry = h.js.registry[h.profile.dev_eui]
        assert serve["dev_addr"] == entry.dev_addr
        assert serve["device_pub"] == pair.public.hex()
        assert serve["nwk_s_key"] == entry.nwk_s_key.hex()
        assert serve["join_nonce"] == entry.join_nonce

    def test_no_edge_keys_in_js_or_ns_state(self):
        h = JsHarness()
        h.join()
        frame, _ = self._edge_join_frame(h)
        h.js.handle_edge_join(frame, [("gw1", -70.0)])
        for store in (h.js.held_keys(), h.ns.held_keys()):
            for name in store:
                assert "edge" not in name


class AsHarness:
    def __init__(self, hold_margin_ms=500):
        self.engine = sim.Engine(seed=6)
        self.metrics = Metrics()
        self.agg = AggregationSpec("mean", 5)
        gw_pair = crypto.generate_keypair(random.Random(8))
        as_pair = crypto.generate_keypair(random.Random(9))
        self.gw_chan_keys = crypto.derive_channel_keys(gw_pair.private,
                                                       as_pair.public, "gw1")
        self.as_ = ApplicationServer(
            self.engine, self.metrics, Ddf(4096), self.agg,
            hold_margin_ms * 1000,
            {"gw1": crypto.derive_channel_keys_as_side(as_pair.private,
                                                       gw_pair.public, "gw1")})
        self.dev_addr = 0x26000001
        self.app_key = bytes([0xA1]) * 16
        self.nwk = bytes([0x31]) * 16
        self.as_.register_device(self.dev_addr, b"\x01" * 8, "dev1",
                                 self.app_key, period_ms=1000)

    def install_edge_keys(self):
        keys = crypto.derive_edge_keys(bytes(range(32)), self.dev_addr, 1, "gw1")
        ct, tag = crypto.seal_handoff(self.gw_chan_keys, keys, 1)
        self.as_.ingest(sim.make_envelope(
            "edge_key_handoff", gw_id="gw1", dev_addr=self.dev_addr, seq=1,
            egress_time_us=0, ciphertext=ct.hex(), tag=tag.hex()))
        return keys

    def legacy_frame(self, fcnt, payload_len=12):
        plaintext = pack_sensor_payload(SensorReading(22.0, 45.0, 1013.0, 0),
                                        payload_len)
        ct = frames.encrypt_payload(self.app_key, self.dev_addr, fcnt,
                                    frames.DIR_UP, plaintext)
        return frames.make_uplink(self.nwk, self.dev_addr, fcnt,
                                  frames.FPORT_SENSOR_DATA, ct)

    def edge_frame(self, keys, fcnt):
        plaintext = pack_sensor_payload(SensorReading(23.0, 46.0, 1014.0, 0), 12)
        ct = frames.encrypt_payload(keys.edge_s_enc_key, self.dev_addr, fcnt,
                                    frames.DIR_UP, plaintext)
        return frames.make_uplink(self.nwk, self.dev_addr, fcnt,
                                  frames.FPORT_SENSOR_DATA, ct)

    def aggregate_env(self, keys, fcnt_mics, agg_seq=1,
                      values=(23.0, 46.0, 1014.0)):
        import struct
        plaintext = struct.pack("<fff", *values)
        ct = frames.encrypt_payload(keys.edge_s_enc_key, self.dev_addr,
                                    agg_seq, frames.DIR_UP, plaintext)
        frame_ids = [[f, m.hex()] for f, m in fcnt_mics]
        tag = frames.aes_cmac(
            keys.edge_s_int_key,
            aggregate_tag_input(self.dev_addr, agg_seq, "mean", frame_ids,
                                ct))[:8]
        return sim.make_envelope(
            "edge_aggregate", gw_id="gw1", dev_addr=self.dev_addr,
            agg_seq=agg_seq, function="mean", window_len=5,
            window_len_actual=len(frame_ids), frames=frame_ids,
            opened_at_us=0, closed_at_us=self.engine.now_us,
            flush_reason="full", egress_time_us=self.engine.now_us,
            ciphertext=sim.b64(ct), tag=tag.hex())


class TestAsCloudIngest:
    def test_legacy_device_delivers_immediately(self):
        h = AsHarness()
        frame = h.legacy_frame(1)
        h.as_.ingest(uplink_env(frame, type_="ns_uplink"))
        assert h.metrics.get("delivered_cloud_immediate") == 1
        assert h.metrics.deliveries[0]["path"] == "cloud"
        assert h.metrics.deliveries[0]["fallback"] is False

    def test_edge_assigned_device_enters_hold(self):
        h = AsHarness()
        keys = h.install_edge_keys()
        h.as_.ingest(uplink_env(h.edge_frame(keys, 1), type_="ns_uplink"))
        assert h.as_.held_frames() == 1
        assert h.metrics.deliveries == []

    def test_hold_timeout_formula(self):
        h = AsHarness(hold_margin_ms=500)
        keys = h.install_edge_keys()
        h.as_.ingest(uplink_env(h.edge_frame(keys, 1), type_="ns_uplink"))
        entry = h.as_.hold_queue[0]
        # window 5 x period 1000 ms + margin 500 ms
        assert entry.deadline_us - entry.arrival_us == 5_500_000

    def test_covered_frame_dropped_as_duplicate(self):
        h = AsHarness()
        keys = h.install_edge_keys()
        frame = h.edge_frame(keys, 1)
        h.as_.ingest(uplink_env(frame, type_="ns_uplink"))
        h.as_.ingest(h.aggregate_env(keys, [(1, frame.mic)]))
        h.engine.run_until(10_000_000)
        assert h.metrics.get("dup_ddf_hold") == 1
        assert h.metrics.get("delivered_cloud_fallback") == 0
        assert h.metrics.get("delivered_edge_frames") == 1

    def test_never_aggregated_frame_falls_back_at_deadline(self):
        h = AsHarness()
        keys = h.install_edge_keys()
        frame = h.edge_frame(keys, 1)
        h.as_.ingest(uplink_env(frame, type_="ns_uplink"))
        h.engine.run_until(5_499_999)
        assert h.metrics.get("delivered_cloud_fallback") == 0
        h.engine.run_until(5_500_000)
        assert h.metrics.get("delivered_cloud_fallback") == 1
        assert h.metrics.deliveries[0]["fallback"] is True
        assert h.as_.held_frames() == 0

    def test_malformed_decrypt_dropped(self):
        h = AsHarness()
        ct = frames.encrypt_payload(bytes([0xEE]) * 16, h.dev_addr, 1,
                                    frames.DIR_UP, bytes(16))
        frame = frames.make_uplink(h.nwk, h.dev_addr, 1,
                                   frames.FPORT_SENSOR_DATA, ct)
        h.as_.ingest(uplink_env(frame, type_="ns_uplink"))
        assert h.metrics.get("sec_as_bad_format") == 1


class TestAsEdgeIngest:
    def test_valid_aggregate_delivers_and_covers(self):
        h = AsHarness()
        keys = h.install_edge_keys()
        mics = [(i, bytes([i, 0, 0, 0])) for i in range(1, 6)]
        h.as_.ingest(h.aggregate_env(keys, mics))
        assert h.metrics.get("delivered_edge_frames") == 5
        assert h.metrics.get("delivered_edge_msgs") == 1
        assert len(h.as_.ddf) == 5
        record = h.metrics.deliveries[0]
        assert record["path"] == "edge"
        assert record["fcnt_list"] == [1, 2, 3, 4, 5]

    def test_tampered_aggregate_rejected(self):
        h = AsHarness()
        keys = h.install_edge_keys()
        env = h.aggregate_env(keys, [(1, bytes(4))])
        ct = bytearray(sim.unb64(env["ciphertext"]))
        ct[0] ^= 1
        env["ciphertext"] = sim.b64(bytes(ct))
        h.as_.ingest(env)
        assert h.metrics.get("sec_as_bad_tag_frames") == 1
        assert h.metrics.deliveries == []

    def test_aggregate_after_fallback_counts_late_duplicates(self):
        h = AsHarness()
        keys = h.install_edge_keys()
        frame = h.edge_frame(keys, 1)
        h.as_.ingest(uplink_env(frame, type_="ns_uplink"))
        h.engine.run_until(6_000_000)  # fallback delivered
        h.as_.ingest(h.aggregate_env(keys, [(1, frame.mic), (2, bytes(4))]))
        assert h.metrics.get("delivered_cloud_fallback") == 1
        assert h.metrics.get("late_duplicate_frames") == 1
        assert h.metrics.get("delivered_edge_frames") == 1  # fcnt 2 was fresh
        edge_record = h.metrics.deliveries[-1]
        assert edge_record["late"] == [1] and edge_record["covered"] == [2]

    def test_tampered_handoff_aborts_activation(self):
        h = AsHarness()
        keys = crypto.derive_edge_keys(bytes(range(32)), h.dev_addr, 1, "gw1")
        ct, tag = crypto.seal_handoff(h.gw_chan_keys, keys, 1)
        bad = bytearray(ct)
        bad[3] ^= 0x80
        h.as_.ingest(sim.make_envelope(
            "edge_key_handoff", gw_id="gw1", dev_addr=h.dev_addr, seq=1,
            egress_time_us=0, ciphertext=bytes(bad).hex(), tag=tag.hex()))
        assert h.dev_addr not in h.as_.edge_keys
        assert h.metrics.get("sec_as_bad_handoff") == 1

    def test_handoff_installs_identical_keys(self):
        h = AsHarness()
        keys = h.install_edge_keys()
        assert h.as_.edge_keys[h.dev_addr].key_block() == keys.key_block()
