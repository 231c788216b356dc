import json
import pathlib

import pytest

from edgelora.device import DeviceProfile
from edgelora.scenario import (AggregationConfig, ControlConfig, GatewaySpec,
                               LinkSpec, RadioConfig, ScenarioConfig,
                               ServersConfig)

DATA_DIR = pathlib.Path(__file__).parent / "data"
SCENARIO_DIR = pathlib.Path(__file__).parent.parent / "scenarios"

AS_PRIVATE = bytes([0x77]) * 32


@pytest.fixture(scope="session")
def crypto_vectors():
    return json.loads((DATA_DIR / "crypto_vectors.json").read_text())


@pytest.fixture(scope="session")
def scenario_dir():
    return SCENARIO_DIR


def make_profile(idx: int, mode: str = "legacy", **kw) -> DeviceProfile:
    defaults = dict(
        name=f"dev{idx}",
        dev_eui=idx.to_bytes(8, "big"),
        join_eui=b"\xaa" * 8,
        root_key=bytes([idx % 256]) + bytes(15),
        mode=mode,
        period_ms=1000,
        payload_len=12,
        channel=idx,
    )
    defaults.update(kw)
    return DeviceProfile(**defaults)


def build_config(devices, gateways, *, coverage=None, seed=1, duration_s=30.0,
                 **kw) -> ScenarioConfig:
    """Programmatic scenario with full wiring; gateways as (gw_id, mode) pairs."""
    gw_specs = []
    for i, (gw_id, mode) in enumerate(gateways):
        key = bytes([0x40 + i]) * 32 if mode == "e2gw" else None
        gw_specs.append(GatewaySpec(gw_id=gw_id, mode=mode,
                                    static_private_key=key))
    links = [LinkSpec("ns", "as", 1_000_000, 20.0)]
    for gw_id, mode in gateways:
        links.append(LinkSpec(gw_id, "ns", 125_000, 20.0))
        if mode == "e2gw":
            links.append(LinkSpec(gw_id, "as", 125_000, 20.0))
    if coverage is None:
        coverage = {d.name: {gw_id: 1.0 for gw_id, _ in gateways}
                    for d in devices}
    defaults = dict(
        seed=seed,
        duration_s=duration_s,
        devices=list(devices),
        gateways=gw_specs,
        links=links,
        coverage=coverage,
        aggregation=AggregationConfig("mean", 5),
        control=ControlConfig(downlink_delay_ms=200, ns_processing_ms=50,
                              reassembly_window_ms=200.0),
        radio=RadioConfig(airtime_us_per_byte=1500),
        servers=ServersConfig(as_static_private_key=AS_PRIVATE),
    )
    defaults.update(kw)
    return ScenarioConfig(**defaults)
