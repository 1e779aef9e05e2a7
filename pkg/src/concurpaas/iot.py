"""Virtual sensors, the IoT gateway, and sensor reprogramming (interface C).

Sensors emit readings taken from a step-interpolated trace, so threshold
crossings happen at exactly scripted instants.  Emission hands the reading
straight to the gateway, which keeps it in a per-port ring buffer and
forwards it over the fabric to whichever instance of the bound service the
registry returns at that moment.

Reprogram commands reach a sensor as fabric messages: the issuing process
sends to the gateway, and the gateway relays to the sensor's interface.
"""

from __future__ import annotations

import bisect
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Deque, Dict, List, Optional, Tuple

from .netfabric import DIRECT, READING, REPROGRAM, Fabric, NetMessage
from .registry import NotFound, Registry
from .simcore import Engine, SimEvent

logger = logging.getLogger(__name__)

TEMPERATURE = "Temperature"
LIGHT = "Light"
SENSOR_KINDS = (TEMPERATURE, LIGHT)

DEFAULT_PORT_CAPACITY = 1024
REPROGRAM_KEYS = ("sample_interval", "enabled", "trace_override")

Breakpoints = List[Tuple[int, float]]


class IoTError(Exception):
    pass


class DuplicateSensor(IoTError):
    pass


class UnknownSensor(IoTError):
    pass


class PortInUse(IoTError):
    pass


class SensorAlreadyBound(IoTError):
    pass


class InvalidParam(IoTError):
    pass


def _check_trace(trace: Breakpoints) -> Breakpoints:
    out = [(int(t), float(v)) for t, v in trace]
    for (t0, _), (t1, _) in zip(out, out[1:]):
        if t1 <= t0:
            raise ValueError("trace times must be strictly increasing")
    return out


@dataclass
class SensorSpec:
    sensor_id: str
    kind: str = TEMPERATURE
    sample_interval: int = 1_000_000
    trace: Breakpoints = field(default_factory=list)
    enabled: bool = True

    def __post_init__(self):
        if self.kind not in SENSOR_KINDS:
            raise ValueError(f"unknown sensor kind {self.kind!r}")
        if self.sample_interval <= 0:
            raise ValueError("sample_interval must be > 0")
        self.trace = _check_trace(self.trace)

    def value_at(self, t: int) -> float:
        """Step interpolation: value of the last breakpoint at or before ``t``."""
        if not self.trace:
            return 0.0
        i = bisect.bisect_right([bt for bt, _ in self.trace], t)
        return self.trace[max(i - 1, 0)][1]

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SensorSpec":
        return cls(
            sensor_id=d["sensor_id"],
            kind=d.get("kind", TEMPERATURE),
            sample_interval=int(d["sample_interval_us"]),
            trace=[tuple(p) for p in d.get("trace", [])],
            enabled=bool(d.get("enabled", True)),
        )


@dataclass(frozen=True)
class SensorReading:
    sensor_id: str
    kind: str
    value: float
    measured_at: int

    def encode(self) -> bytes:
        return json.dumps({"sensor_id": self.sensor_id, "kind": self.kind,
                           "value": self.value, "measured_at": self.measured_at},
                          sort_keys=True).encode()

    @classmethod
    def decode(cls, body: bytes) -> "SensorReading":
        d = json.loads(body)
        return cls(d["sensor_id"], d["kind"], float(d["value"]), int(d["measured_at"]))


@dataclass(frozen=True)
class PortBinding:
    port: int
    sensor_id: str
    service_name: str

    def __post_init__(self):
        if self.port < 1:
            raise ValueError("port must be >= 1")


@dataclass
class ReprogramCommand:
    target_sensor: str
    params: Dict[str, Any]

    def validate(self) -> None:
        if not self.params:
            raise InvalidParam("reprogram command has no parameters")
        unknown = set(self.params) - set(REPROGRAM_KEYS)
        if unknown:
            raise InvalidParam(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        if "sample_interval" in self.params:
            iv = self.params["sample_interval"]
            if isinstance(iv, bool) or not isinstance(iv, int) or iv <= 0:
                raise InvalidParam(f"sample_interval must be a positive integer, got {iv!r}")
        if "enabled" in self.params and not isinstance(self.params["enabled"], bool):
            raise InvalidParam("enabled must be a boolean")
        if "trace_override" in self.params:
            try:
                _check_trace(self.params["trace_override"])
            except (TypeError, ValueError) as exc:
                raise InvalidParam(f"trace_override: {exc}") from None

    def encode(self) -> bytes:
        return json.dumps({"target_sensor": self.target_sensor, "params": self.params},
                          sort_keys=True).encode()

    @classmethod
    def decode(cls, body: bytes) -> "ReprogramCommand":
        d = json.loads(body)
        return cls(d["target_sensor"], dict(d["params"]))


def parse_reprogram_args(sensor_id: str, pairs: List[str]) -> ReprogramCommand:
    """Turn CLI ``key=value`` pairs into a validated command.

    ``sample_interval`` is in microseconds; ``enabled`` takes true/false;
    ``trace_override`` takes a JSON list of ``[t_us, value]`` pairs.
    """
    params: Dict[str, Any] = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep:
            raise InvalidParam(f"expected key=value, got {pair!r}")
        if key == "sample_interval":
            try:
                params[key] = int(raw)
            except ValueError:
                raise InvalidParam(f"sample_interval must be an integer, got {raw!r}") from None
        elif key == "enabled":
            if raw.lower() not in ("true", "false", "1", "0"):
                raise InvalidParam(f"enabled must be true or false, got {raw!r}")
            params[key] = raw.lower() in ("true", "1")
        elif key == "trace_override":
            try:
                params[key] = [list(p) for p in json.loads(raw)]
            except (ValueError, TypeError):
                raise InvalidParam(f"trace_override must be a JSON list of pairs") from None
        else:
            raise InvalidParam(f"unknown parameter {key!r}")
    cmd = ReprogramCommand(sensor_id, params)
    cmd.validate()
    return cmd


class VirtualSensor:
    def __init__(self, spec: SensorSpec, address: int):
        self.spec = spec
        self.address = address
        self.next_event: Optional[int] = None
        self.emissions: List[Tuple[int, float]] = []

    @property
    def target(self) -> str:
        return f"sensor:{self.spec.sensor_id}"

    def state(self) -> Dict[str, Any]:
        return {"sample_interval": self.spec.sample_interval,
                "enabled": self.spec.enabled,
                "trace": [list(p) for p in self.spec.trace]}


class Gateway:
    TARGET = "gateway"

    def __init__(self, engine: Engine, fabric: Fabric, registry: Registry,
                 channel_mode: str = DIRECT, capacity: int = DEFAULT_PORT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.engine = engine
        self.fabric = fabric
        self.registry = registry
        self.channel_mode = channel_mode
        self.capacity = capacity
        self.address = fabric.allocate_interface(self.TARGET)
        fabric.attach(self.address, self._on_message)
        self.sensors: Dict[str, VirtualSensor] = {}
        self.bindings: Dict[int, PortBinding] = {}
        self.buffers: Dict[int, Deque[SensorReading]] = {}
        self._port_of: Dict[str, int] = {}
        self.forwarded = 0
        self.reprogram_listeners: List[Callable[[str, Dict[str, Any], int], None]] = []

    # -- sensors ------------------------------------------------------------

    def create_sensor(self, spec: SensorSpec) -> str:
        if spec.sensor_id in self.sensors:
            raise DuplicateSensor(spec.sensor_id)
        addr = self.fabric.allocate_interface(f"sensor/{spec.sensor_id}")
        sensor = VirtualSensor(spec, addr)
        self.sensors[spec.sensor_id] = sensor
        self.engine.register(sensor.target, lambda ev, s=sensor: self._on_sensor_event(s, ev))
        self.fabric.attach(addr, lambda msg, s=sensor: self._on_sensor_message(s, msg))
        if spec.enabled:
            self._arm(sensor)
        return spec.sensor_id

    def _arm(self, sensor: VirtualSensor) -> None:
        sensor.next_event = self.engine.try_schedule(
            sensor.spec.sample_interval, sensor.target, "Emit")

    def _on_sensor_event(self, sensor: VirtualSensor, ev: SimEvent) -> None:
        if ev.kind == "Emit":
            self._emit(sensor)

    def _emit(self, sensor: VirtualSensor) -> None:
        sensor.next_event = None
        now = self.engine.now
        value = sensor.spec.value_at(now)
        sensor.emissions.append((now, value))
        self.ingest(SensorReading(sensor.spec.sensor_id, sensor.spec.kind, value, now))
        if sensor.spec.enabled:
            self._arm(sensor)

    def sensor(self, sensor_id: str) -> VirtualSensor:
        try:
            return self.sensors[sensor_id]
        except KeyError:
            raise UnknownSensor(sensor_id) from None

    # -- ports --------------------------------------------------------------

    def bind_port(self, port: int, sensor_id: str, service_name: str) -> None:
        if sensor_id not in self.sensors:
            raise UnknownSensor(sensor_id)
        if port in self.bindings:
            raise PortInUse(port)
        if sensor_id in self._port_of:
            raise SensorAlreadyBound(sensor_id)
        self.bindings[port] = PortBinding(port, sensor_id, service_name)
        self.buffers[port] = deque(maxlen=self.capacity)
        self._port_of[sensor_id] = port

    def ingest(self, reading: SensorReading) -> None:
        port = self._port_of.get(reading.sensor_id)
        if port is None:
            self.engine.note(self.TARGET, "Unbound")
            return
        self.buffers[port].append(reading)
        service = self.bindings[port].service_name
        try:
            dst = self.registry.lookup(service)
        except NotFound:
            logger.debug("no live instance of %s; reading buffered only", service)
            self.engine.note(self.TARGET, "ForwardSkipped")
            return
        self.fabric.transmit(self.address, dst, READING, reading.encode(), self.channel_mode)
        self.forwarded += 1

    # -- interface C --------------------------------------------------------

    def apply_reprogram(self, cmd: ReprogramCommand) -> Dict[str, Any]:
        sensor = self.sensor(cmd.target_sensor)
        cmd.validate()
        spec = sensor.spec
        p = cmd.params
        reschedule = False
        if "trace_override" in p:
            spec.trace = _check_trace(p["trace_override"])
        if "sample_interval" in p and p["sample_interval"] != spec.sample_interval:
            spec.sample_interval = p["sample_interval"]
            reschedule = True
        if "enabled" in p and p["enabled"] != spec.enabled:
            spec.enabled = p["enabled"]
            reschedule = True
        if reschedule:
            if sensor.next_event is not None:
                self.engine.cancel(sensor.next_event)
                sensor.next_event = None
            if spec.enabled:
                self._arm(sensor)
        return sensor.state()

    def _on_message(self, msg: NetMessage) -> None:
        if msg.kind != REPROGRAM:
            self.engine.note(self.TARGET, "Ignored")
            return
        cmd = ReprogramCommand.decode(msg.body)
        target = self.sensors.get(cmd.target_sensor)
        if target is None:
            logger.warning("reprogram for unknown sensor %s dropped", cmd.target_sensor)
            self.engine.note(self.TARGET, "UnknownSensor")
            return
        self.fabric.transmit(self.address, target.address, REPROGRAM, msg.body, DIRECT)

    def _on_sensor_message(self, sensor: VirtualSensor, msg: NetMessage) -> None:
        if msg.kind != REPROGRAM:
            return
        cmd = ReprogramCommand.decode(msg.body)
        try:
            applied = self.apply_reprogram(cmd)
        except IoTError as exc:
            logger.warning("reprogram of %s rejected: %s", sensor.spec.sensor_id, exc)
            self.engine.note(sensor.target, "ReprogramRejected")
            return
        self.engine.note(sensor.target, "ReprogramApplied")
        for fn in self.reprogram_listeners:
            fn(sensor.spec.sensor_id, applied, self.engine.now)
