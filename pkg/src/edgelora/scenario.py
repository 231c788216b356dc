"""Scenario files: schema, validation, loading.

Scenarios are YAML documents (conventionally *.scn). Validation is strict:
unknown fields are rejected and every error names the offending path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .device import DeviceProfile
from .gateway import AGG_FUNCTIONS

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


@dataclass
class LinkSpec:
    a: str
    b: str
    bandwidth_bps: int  # bytes per second
    delay_ms: float

    @property
    def link_id(self) -> str:
        return f"{self.a}-{self.b}"


@dataclass
class GatewaySpec:
    gw_id: str
    mode: str
    static_private_key: bytes | None = None


@dataclass
class AggregationConfig:
    function: str = "mean"
    window_len: int = 5


@dataclass
class RadioConfig:
    airtime_us_per_byte: int = 1500


@dataclass
class ControlConfig:
    downlink_delay_ms: int = 1000
    ns_processing_ms: int = 50
    reassembly_window_ms: float = 200.0


@dataclass
class ServersConfig:
    as_static_private_key: bytes = b""


@dataclass
class ScenarioConfig:
    seed: int
    duration_s: float
    devices: list[DeviceProfile]
    gateways: list[GatewaySpec]
    links: list[LinkSpec]
    coverage: dict[str, dict[str, float]]
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    pacing: float = 0.0
    hold_margin_ms: int = 500
    suppress_ns_forward_for_e2ed: bool = False
    radio: RadioConfig = field(default_factory=RadioConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    servers: ServersConfig = field(default_factory=ServersConfig)
    schema_version: int = SCHEMA_VERSION


class _Section:
    """Strict field extraction with path-qualified errors."""

    def __init__(self, data: dict, path: str):
        if not isinstance(data, dict):
            raise SchemaError(path, f"expected a mapping, got {type(data).__name__}")
        self.data = dict(data)
        self.path = path

    def take(self, name: str, required: bool = False, default=None):
        if name not in self.data:
            if required:
                raise SchemaError(f"{self.path}.{name}", "required field missing")
            return default
        return self.data.pop(name)

    def finish(self) -> None:
        if self.data:
            unknown = sorted(self.data)[0]
            raise SchemaError(f"{self.path}.{unknown}", "unknown field")


def _as_int(value, path: str, minimum: int | None = None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise SchemaError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise SchemaError(path, f"must be >= {minimum}, got {value}")
    return value


def _as_number(value, path: str, minimum: float | None = None) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise SchemaError(path, f"expected a number, got {value!r}")
    if minimum is not None and value < minimum:
        raise SchemaError(path, f"must be >= {minimum}, got {value}")
    return float(value)


def _as_str(value, path: str, choices: tuple[str, ...] | None = None) -> str:
    if not isinstance(value, str):
        raise SchemaError(path, f"expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise SchemaError(path, f"must be one of {choices}, got {value!r}")
    return value


def _as_hex(value, path: str, nbytes: int) -> bytes:
    text = _as_str(value, path)
    try:
        raw = bytes.fromhex(text)
    except ValueError:
        raise SchemaError(path, "not a hex string") from None
    if len(raw) != nbytes:
        raise SchemaError(path, f"expected {nbytes} bytes, got {len(raw)}")
    return raw


def parse_scenario(doc: dict, source: str = "scenario") -> ScenarioConfig:
    top = _Section(doc, source)
    version = _as_int(top.take("schema_version", required=True), f"{source}.schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{source}.schema_version",
                          f"unsupported version {version} (expected {SCHEMA_VERSION})")
    pacing = _as_number(top.take("pacing", default=0.0), f"{source}.pacing", minimum=0.0)
    seed_raw = top.take("seed")
    if seed_raw is None:
        if pacing == 0.0:
            raise SchemaError(f"{source}.seed", "required in fast (pacing=0) mode")
        seed = 0
    else:
        seed = _as_int(seed_raw, f"{source}.seed", minimum=0)
    duration_s = _as_number(top.take("duration_s", required=True),
                            f"{source}.duration_s", minimum=0.001)

    devices = _parse_devices(top.take("devices", required=True), f"{source}.devices")
    gateways = _parse_gateways(top.take("gateways", required=True), f"{source}.gateways")
    links = _parse_links(top.take("links", required=True), f"{source}.links",
                         [g.gw_id for g in gateways])
    coverage = _parse_coverage(top.take("coverage", required=True),
                               f"{source}.coverage",
                               [d.name for d in devices],
                               [g.gw_id for g in gateways])
    aggregation = _parse_aggregation(top.take("aggregation", default={}),
                                     f"{source}.aggregation")
    hold_margin_ms = _as_int(top.take("hold_margin_ms", default=500),
                             f"{source}.hold_margin_ms", minimum=0)
    suppress = top.take("suppress_ns_forward_for_e2ed", default=False)
    if not isinstance(suppress, bool):
        raise SchemaError(f"{source}.suppress_ns_forward_for_e2ed",
                          "expected a boolean")
    radio = _parse_radio(top.take("radio", default={}), f"{source}.radio")
    control = _parse_control(top.take("control", default={}), f"{source}.control")
    servers = _parse_servers(top.take("servers", default={}), f"{source}.servers")
    top.finish()

    if any(g.mode == "e2gw" for g in gateways) and not servers.as_static_private_key:
        raise SchemaError(f"{source}.servers.as_static_private_key",
                          "required when any gateway runs in e2gw mode")
    return ScenarioConfig(
        seed=seed, duration_s=duration_s, devices=devices, gateways=gateways,
        links=links, coverage=coverage, aggregation=aggregation, pacing=pacing,
        hold_margin_ms=hold_margin_ms, suppress_ns_forward_for_e2ed=suppress,
        radio=radio, control=control, servers=servers, schema_version=version,
    )


def _parse_devices(items, path: str) -> list[DeviceProfile]:
    if not isinstance(items, list) or not items:
        raise SchemaError(path, "expected a non-empty list")
    devices = []
    names: set[str] = set()
    euis: set[bytes] = set()
    for i, item in enumerate(items):
        sec = _Section(item, f"{path}[{i}]")
        name = _as_str(sec.take("name", required=True), f"{path}[{i}].name")
        dev_eui = _as_hex(sec.take("dev_eui", required=True), f"{path}[{i}].dev_eui", 8)
        join_eui = _as_hex(sec.take("join_eui", required=True), f"{path}[{i}].join_eui", 8)
        root_key = _as_hex(sec.take("root_key", required=True), f"{path}[{i}].root_key", 16)
        mode = _as_str(sec.take("mode", required=True), f"{path}[{i}].mode",
                       choices=("legacy", "e2ed"))
        period_ms = _as_int(sec.take("period_ms", required=True),
                            f"{path}[{i}].period_ms", minimum=100)
        payload_len = _as_int(sec.take("payload_len", required=True),
                              f"{path}[{i}].payload_len", minimum=12)
        channel = _as_int(sec.take("channel", default=0), f"{path}[{i}].channel",
                          minimum=0)
        max_frames_raw = sec.take("max_frames")
        max_frames = None if max_frames_raw is None else _as_int(
            max_frames_raw, f"{path}[{i}].max_frames", minimum=1)
        sec.finish()
        if name in names:
            raise SchemaError(f"{path}[{i}].name", f"duplicate device name {name!r}")
        if dev_eui in euis:
            raise SchemaError(f"{path}[{i}].dev_eui",
                              f"duplicate dev_eui {dev_eui.hex()}")
        names.add(name)
        euis.add(dev_eui)
        devices.append(DeviceProfile(
            name=name, dev_eui=dev_eui, join_eui=join_eui, root_key=root_key,
            mode=mode, period_ms=period_ms, payload_len=payload_len,
            channel=channel, max_frames=max_frames))
    return devices


def _parse_gateways(items, path: str) -> list[GatewaySpec]:
    if not isinstance(items, list) or not items:
        raise SchemaError(path, "expected a non-empty list")
    gateways = []
    ids: set[str] = set()
    for i, item in enumerate(items):
        sec = _Section(item, f"{path}[{i}]")
        gw_id = _as_str(sec.take("gw_id", required=True), f"{path}[{i}].gw_id")
        mode = _as_str(sec.take("mode", required=True), f"{path}[{i}].mode",
                       choices=("legacy", "e2gw"))
        key_raw = sec.take("static_private_key")
        key = None if key_raw is None else _as_hex(
            key_raw, f"{path}[{i}].static_private_key", 32)
        sec.finish()
        if gw_id in ids:
            raise SchemaError(f"{path}[{i}].gw_id", f"duplicate gw_id {gw_id!r}")
        if gw_id in ("ns", "as"):
            raise SchemaError(f"{path}[{i}].gw_id", "'ns' and 'as' are reserved")
        if mode == "e2gw" and key is None:
            raise SchemaError(f"{path}[{i}].static_private_key",
                              "required for e2gw mode")
        ids.add(gw_id)
        gateways.append(GatewaySpec(gw_id=gw_id, mode=mode, static_private_key=key))
    return gateways


def _parse_links(items, path: str, gw_ids: list[str]) -> list[LinkSpec]:
    if not isinstance(items, list) or not items:
        raise SchemaError(path, "expected a non-empty list")
    valid = set(gw_ids) | {"ns", "as"}
    links = []
    seen: set[tuple[str, str]] = set()
    for i, item in enumerate(items):
        sec = _Section(item, f"{path}[{i}]")
        a = _as_str(sec.take("a", required=True), f"{path}[{i}].a")
        b = _as_str(sec.take("b", required=True), f"{path}[{i}].b")
        bandwidth = _as_int(sec.take("bandwidth_bps", required=True),
                            f"{path}[{i}].bandwidth_bps", minimum=1)
        delay_ms = _as_number(sec.take("delay_ms", default=0.0),
                              f"{path}[{i}].delay_ms", minimum=0.0)
        sec.finish()
        for end in (a, b):
            if end not in valid:
                raise SchemaError(f"{path}[{i}]", f"unknown endpoint {end!r}")
        pair = (a, b)
        if pair in seen or (b, a) in seen:
            raise SchemaError(f"{path}[{i}]", f"duplicate link {a}<->{b}")
        seen.add(pair)
        links.append(LinkSpec(a=a, b=b, bandwidth_bps=bandwidth, delay_ms=delay_ms))
    return links


def _parse_coverage(data, path: str, device_names: list[str],
                    gw_ids: list[str]) -> dict[str, dict[str, float]]:
    if not isinstance(data, dict):
        raise SchemaError(path, "expected a mapping device -> {gateway: prob}")
    known_gw = set(gw_ids)
    out: dict[str, dict[str, float]] = {}
    for dev, row in data.items():
        if dev not in device_names:
            raise SchemaError(f"{path}.{dev}", "unknown device name")
        if not isinstance(row, dict):
            raise SchemaError(f"{path}.{dev}", "expected a mapping gateway -> prob")
        out[dev] = {}
        for gw, prob in row.items():
            if gw not in known_gw:
                raise SchemaError(f"{path}.{dev}.{gw}", "unknown gateway id")
            p = _as_number(prob, f"{path}.{dev}.{gw}")
            if not 0.0 <= p <= 1.0:
                raise SchemaError(f"{path}.{dev}.{gw}",
                                  f"probability {p} outside [0,1]")
            out[dev][gw] = p
    for dev in device_names:
        if dev not in out:
            raise SchemaError(f"{path}.{dev}", "missing coverage row")
    return out


def _parse_aggregation(data, path: str) -> AggregationConfig:
    sec = _Section(data, path)
    function = _as_str(sec.take("function", default="mean"), f"{path}.function",
                       choices=AGG_FUNCTIONS)
    window_len = _as_int(sec.take("window_len", default=5),
                         f"{path}.window_len", minimum=1)
    sec.finish()
    return AggregationConfig(function=function, window_len=window_len)


def _parse_radio(data, path: str) -> RadioConfig:
    sec = _Section(data, path)
    airtime = _as_int(sec.take("airtime_us_per_byte", default=1500),
                      f"{path}.airtime_us_per_byte", minimum=1)
    sec.finish()
    return RadioConfig(airtime_us_per_byte=airtime)


def _parse_control(data, path: str) -> ControlConfig:
    sec = _Section(data, path)
    downlink = _as_int(sec.take("downlink_delay_ms", default=1000),
                       f"{path}.downlink_delay_ms", minimum=0)
    processing = _as_int(sec.take("ns_processing_ms", default=50),
                         f"{path}.ns_processing_ms", minimum=0)
    reassembly = _as_number(sec.take("reassembly_window_ms", default=200.0),
                            f"{path}.reassembly_window_ms", minimum=0.0)
    sec.finish()
    return ControlConfig(downlink_delay_ms=downlink, ns_processing_ms=processing,
                         reassembly_window_ms=reassembly)


def _parse_servers(data, path: str) -> ServersConfig:
    sec = _Section(data, path)
    key_raw = sec.take("as_static_private_key")
    key = b"" if key_raw is None else _as_hex(
        key_raw, f"{path}.as_static_private_key", 32)
    sec.finish()
    return ServersConfig(as_static_private_key=key)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Parse and validate a scenario file; SchemaError names path and reason."""
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(str(path), f"not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(str(path), "top level must be a mapping")
    return parse_scenario(doc, source=Path(path).name)
