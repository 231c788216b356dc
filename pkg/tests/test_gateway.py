import math
import random
import struct

import pytest

from edgelora import crypto, frames, sim
from edgelora.device import SensorWalk, pack_sensor_payload
from edgelora.gateway import (AggregationSpec, Gateway, GatewayConfig,
                              ServingEntry, aggregate_readings,
                              aggregate_tag_input)
from edgelora.metrics import Metrics


def f32(x):
    return struct.unpack("<f", struct.pack("<f", x))[0]


class TestAggregateReadings:
    def test_mean_of_consecutive_temps(self):
        readings = [(t, 50.0, 1000.0) for t in (20.0, 21.0, 22.0, 23.0, 24.0)]
        assert aggregate_readings("mean", readings)[0] == 22.0

    def test_against_linear_scan_oracle(self):
        rng = random.Random(42)
        for _ in range(200):
            n = rng.randrange(1, 21)
            readings = [(f32(rng.uniform(-40, 85)), f32(rng.uniform(0, 100)),
                         f32(rng.uniform(300, 1100))) for _ in range(n)]
            cols = list(zip(*readings))
            assert aggregate_readings("min", readings) == tuple(min(c) for c in cols)
            assert aggregate_readings("max", readings) == tuple(max(c) for c in cols)
            got_sum = aggregate_readings("sum", readings)
            for got, col in zip(got_sum, cols):
                expect = math.fsum(col)
                assert got == pytest.approx(expect, rel=1e-3)
            got_mean = aggregate_readings("mean", readings)
            for got, col in zip(got_mean, cols):
                expect = f32(math.fsum(col) / n)
                assert abs(got - expect) <= math.ulp(expect)

    def test_empty_window_rejected(self):
        with pytest.raises(ValueError):
            aggregate_readings("mean", [])

    def test_unknown_function_rejected(self):
        with pytest.raises(ValueError):
            aggregate_readings("median", [(1.0, 2.0, 3.0)])


class GatewayHarness:
    def __init__(self, mode="e2gw", suppress=False, window_len=5,
                 period_ms=1000):
        self.engine = sim.Engine(seed=9)
        self.metrics = Metrics()
        self.ns_out: list[dict] = []
        self.as_out: list[dict] = []
        self.downlinks: list[tuple[str, object]] = []
        ns_params = sim.LinkParams("g-ns", "gw1", "ns", 1_000_000, 1000)
        as_params = sim.LinkParams("g-as", "gw1", "as", 1_000_000, 1000)
        self.ns_chan = sim.LinkChannel(self.engine, ns_params, "gw1", "ns")
        self.ns_chan.receiver = self.ns_out.append
        self.as_chan = sim.LinkChannel(self.engine, as_params, "gw1", "as")
        self.as_chan.receiver = self.as_out.append
        static = crypto.generate_keypair(random.Random(1)) if mode == "e2gw" else None
        as_static = crypto.generate_keypair(random.Random(2))
        chan_keys = (crypto.derive_channel_keys(static.private, as_static.public,
                                                "gw1") if static else None)
        self.gw = Gateway(
            self.engine,
            GatewayConfig("gw1", mode, static),
            ns_channel=self.ns_chan,
            as_channel=self.as_chan if mode == "e2gw" else None,
            agg_spec=AggregationSpec("mean", window_len),
            metrics=self.metrics,
            rng=self.engine.rng("gw"),
            send_downlink=lambda name, msg: self.downlinks.append((name, msg)),
            channel_keys=chan_keys,
            suppress_ns_forward_for_e2ed=suppress,
        )
        self.period_ms = period_ms

    def serve_device(self, dev_addr=0x26000001):
        nwk = bytes([0x11]) * 16
        keys = crypto.derive_edge_keys(bytes(range(32)), dev_addr, 1, "gw1")
        self.gw.serving[dev_addr] = ServingEntry(keys, nwk, "dev1",
                                                 self.period_ms)
        return nwk, keys

    def edge_frame(self, nwk, keys, fcnt, reading=(22.0, 45.0, 1013.0),
                   dev_addr=0x26000001, payload_len=12):
        from edgelora.device import SensorReading
        plaintext = pack_sensor_payload(SensorReading(*reading, t_us=0),
                                        payload_len)
        ct = frames.encrypt_payload(keys.edge_s_enc_key, dev_addr, fcnt,
                                    frames.DIR_UP, plaintext)
        return frames.make_uplink(nwk, dev_addr, fcnt,
                                  frames.FPORT_SENSOR_DATA, ct)


class TestPacketForward:
    def test_bridges_every_reception(self):
        h = GatewayHarness(mode="legacy")
        for i in range(100):
            h.gw.on_reception(b"\x40" + bytes(12), 0, -80.0, h.engine.now_us)
        h.engine.run_until(10_000_000)
        assert len(h.ns_out) == 100

    def test_malformed_bytes_still_forwarded(self):
        h = GatewayHarness(mode="legacy")
        h.gw.on_reception(b"\xff\x00\x01", 0, -80.0, 0)
        h.engine.run_until(10_000_000)
        assert len(h.ns_out) == 1

    def test_envelope_schema(self):
        h = GatewayHarness(mode="legacy")
        h.gw.on_reception(b"\x40" + bytes(12), 3, -72.5, 0)
        h.engine.run_until(10_000_000)
        env = h.ns_out[0]
        assert env["type"] == "uplink"
        assert env["gw_id"] == "gw1"
        assert env["channel"] == 3
        assert env["rssi"] == -72.5
        assert env["rx_time_us"] == 0 and env["egress_time_us"] == 0
        assert sim.unb64(env["data"]) == b"\x40" + bytes(12)


class TestE2gwIntercept:
    def test_unserved_device_only_forwarded(self):
        h = GatewayHarness()
        nwk, keys = h.serve_device()
        other = h.edge_frame(nwk, keys, 1, dev_addr=0x26000099)
        h.gw.on_reception(frames.encode_uplink(other), 0, -80.0, 0)
        h.engine.run_until(10_000_000)
        assert len(h.ns_out) == 1
        assert h.gw.buffered_frames() == 0

    def test_served_frame_grows_window(self):
        h = GatewayHarness()
        nwk, keys = h.serve_device()
        frame = h.edge_frame(nwk, keys, 1)
        h.gw.on_reception(frames.encode_uplink(frame), 0, -80.0, 0)
        assert h.gw.buffered_frames() == 1

    def test_replayed_fcnt_ignored_with_counter(self):
        h = GatewayHarness()
        nwk, keys = h.serve_device()
        frame = h.edge_frame(nwk, keys, 1)
        h.gw.on_reception(frames.encode_uplink(frame), 0, -80.0, 0)
        h.gw.on_reception(frames.encode_uplink(frame), 0, -80.0, 0)
        assert h.gw.buffered_frames() == 1
        assert h.metrics.get("dup_window_fcnt") == 1

    def test_bad_mic_dropped_with_counter(self):
        h = GatewayHarness()
        nwk, keys = h.serve_device()
        frame = h.edge_frame(nwk, keys, 1)
        wire = bytearray(frames.encode_uplink(frame))
        wire[-1] ^= 0xFF
        h.gw.on_reception(bytes(wire), 0, -80.0, 0)
        assert h.gw.buffered_frames() == 0
        assert h.metrics.get("sec_gw_bad_mic") == 1

    def test_wrong_key_payload_fails_format(self):
        h = GatewayHarness()
        nwk, keys = h.serve_device()
        # encrypted under the app key instead of the edge key
        from edgelora.device import SensorReading
        plaintext = pack_sensor_payload(SensorReading(22.0, 45.0, 1013.0, 0), 16)
        ct = frames.encrypt_payload(bytes([0xAB]) * 16, 0x26000001, 1,
                                    frames.DIR_UP, plaintext)
        frame = frames.make_uplink(nwk, 0x26000001, 1,
                                   frames.FPORT_SENSOR_DATA, ct)
        h.gw.on_reception(frames.encode_uplink(frame), 0, -80.0, 0)
        assert h.gw.buffered_frames() == 0
        assert h.metrics.get("sec_gw_bad_format") == 1

    def test_fport8_not_intercepted(self):
        h = GatewayHarness()
        nwk, keys = h.serve_device()
        ct = frames.encrypt_payload(bytes(16), 0x26000001, 1, frames.DIR_UP,
                                    bytes(33))
        frame = frames.make_uplink(nwk, 0x26000001, 1, frames.FPORT_EDGE_JOIN, ct)
        h.gw.on_reception(frames.encode_uplink(frame), 0, -80.0, 0)
        h.engine.run_until(1_000_000)
        assert h.gw.buffered_frames() == 0
        assert len(h.ns_out) == 1  # forwarded for the JS

    def test_legacy_mode_gateway_never_intercepts(self):
        h = GatewayHarness(mode="legacy")
        assert h.gw.serving == {}


class TestWindowFlush:
    def _fill(self, h, nwk, keys, n, start_fcnt=1):
        walk = SensorWalk(random.Random(3))
        for i in range(n):
            reading = walk.next_reading(i)
            frame = h.edge_frame(nwk, keys, start_fcnt + i,
                                 (reading.temperature, reading.humidity,
                                  reading.pressure))
            h.gw.on_reception(frames.encode_uplink(frame), 0, -80.0,
                              h.engine.now_us)

    def test_full_window_flushes(self):
        h = GatewayHarness(window_len=5)
        nwk, keys = h.serve_device()
        self._fill(h, nwk, keys, 5)
        h.engine.run_until(1_000_000)
        assert len(h.as_out) == 1
        env = h.as_out[0]
        assert env["type"] == "edge_aggregate"
        assert env["window_len_actual"] == 5
        assert env["flush_reason"] == "full"
        assert [f for f, _m in env["frames"]] == [1, 2, 3, 4, 5]
        assert h.gw.buffered_frames() == 0

    def test_hundred_frames_window_five_gives_twenty(self):
        h = GatewayHarness(window_len=5)
        nwk, keys = h.serve_device()
        self._fill(h, nwk, keys, 100)
        h.engine.run_until(1_000_000)
        assert len(h.as_out) == 20

    def test_aggregate_decrypts_and_verifies(self):
        h = GatewayHarness(window_len=3)
        nwk, keys = h.serve_device()
        self._fill(h, nwk, keys, 3)
        h.engine.run_until(1_000_000)
        env = h.as_out[0]
        ct = sim.unb64(env["ciphertext"])
        tag = frames.aes_cmac(
            keys.edge_s_int_key,
            aggregate_tag_input(env["dev_addr"], env["agg_seq"],
                                env["function"], env["frames"], ct))[:8]
        assert tag.hex() == env["tag"]
        plain = frames.decrypt_payload(keys.edge_s_enc_key, env["dev_addr"],
                                       env["agg_seq"], frames.DIR_UP, ct)
        values = struct.unpack("<fff", plain)
        walk = SensorWalk(random.Random(3))
        readings = [walk.next_reading(i) for i in range(3)]
        expect = aggregate_readings("mean", [
            (f32(r.temperature), f32(r.humidity), f32(r.pressure))
            for r in readings])
        assert values == pytest.approx(expect, abs=1e-4)

    def test_inactivity_timeout_flushes_partial(self):
        h = GatewayHarness(window_len=5, period_ms=1000)
        nwk, keys = h.serve_device()
        self._fill(h, nwk, keys, 2)
        h.engine.run_until(2_999_999)
        assert len(h.as_out) == 0
        h.engine.run_until(3_100_000)  # 3 x period inactivity
        assert len(h.as_out) == 1
        assert h.as_out[0]["window_len_actual"] == 2
        assert h.as_out[0]["flush_reason"] == "timeout"

    def test_steady_traffic_never_times_out(self):
        h = GatewayHarness(window_len=5, period_ms=1000)
        nwk, keys = h.serve_device()
        for i in range(4):
            h.engine.run_until(i * 1_000_000)
            self._fill(h, nwk, keys, 1, start_fcnt=i + 1)
        h.engine.run_until(5_900_000)  # last frame at 3s; timeout due 6s
        assert len(h.as_out) == 0

    def test_fcnt_coverage_no_loss_no_duplication(self):
        h = GatewayHarness(window_len=4)
        nwk, keys = h.serve_device()
        self._fill(h, nwk, keys, 17)
        h.engine.run_until(20_000_000)  # timeout flush for the tail
        covered = [f for env in h.as_out for f, _m in env["frames"]]
        assert covered == list(range(1, 18))


class TestSuppression:
    def test_suppress_off_forwards_everything(self):
        h = GatewayHarness(suppress=False)
        nwk, keys = h.serve_device()
        frame = h.edge_frame(nwk, keys, 1)
        h.gw.on_reception(frames.encode_uplink(frame), 0, -80.0, 0)
        h.engine.run_until(1_000_000)
        assert len(h.ns_out) == 1
        assert h.gw.buffered_frames() == 1

    def test_suppress_on_keeps_edge_frames_off_ns(self):
        h = GatewayHarness(suppress=True)
        nwk, keys = h.serve_device()
        frame = h.edge_frame(nwk, keys, 1)
        h.gw.on_reception(frames.encode_uplink(frame), 0, -80.0, 0)
        h.engine.run_until(1_000_000)
        assert len(h.ns_out) == 0
        assert h.gw.buffered_frames() == 1

    def test_suppress_on_still_forwards_legacy(self):
        h = GatewayHarness(suppress=True)
        h.serve_device()
        legacy = frames.make_uplink(bytes(16), 0x26009999, 1, 1, b"\x00" * 12)
        h.gw.on_reception(frames.encode_uplink(legacy), 0, -80.0, 0)
        h.engine.run_until(1_000_000)
        assert len(h.ns_out) == 1


class TestEdgeServe:
    def test_serve_control_installs_keys_and_answers(self):
        h = GatewayHarness()
        dev_pair = crypto.generate_keypair(random.Random(77))
        h.gw.on_control({
            "type": "edge_serve",
            "gw_id": "gw1",
            "device": "dev1",
            "dev_addr": 0x26000001,
            "device_pub": dev_pair.public.hex(),
            "join_nonce": 4,
            "nwk_s_key": (bytes([0x11]) * 16).hex(),
            "period_ms": 1000,
        })
        h.engine.run_until(1_000_000)
        assert 0x26000001 in h.gw.serving
        handoffs = [e for e in h.as_out if e["type"] == "edge_key_handoff"]
        assert len(handoffs) == 1
        name, msg = h.downlinks[0]
        assert name == "dev1" and msg.kind == "edge_accept"
        assert msg.echo_pub == dev_pair.public
        # the device can now derive the same keys from the accept payload
        payload = frames.decode_edge_join(msg.data)
        shared = crypto.dh_shared(dev_pair.private, payload.ephemeral_pub)
        dev_keys = crypto.derive_edge_keys(shared, 0x26000001, 4, "gw1")
        assert dev_keys.key_block() == h.gw.serving[0x26000001].keys.key_block()

    def test_revoke_flushes_open_window(self):
        h = GatewayHarness(window_len=5)
        nwk, keys = h.serve_device()
        frame = h.edge_frame(nwk, keys, 1)
        h.gw.on_reception(frames.encode_uplink(frame), 0, -80.0, 0)
        h.gw.on_control({"type": "edge_revoke", "gw_id": "gw1",
                         "dev_addr": 0x26000001})
        h.engine.run_until(1_000_000)
        assert len(h.as_out) == 1
        assert h.as_out[0]["flush_reason"] == "revoked"
        assert 0x26000001 not in h.gw.serving
