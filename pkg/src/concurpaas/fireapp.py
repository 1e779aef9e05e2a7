"""Forest-fire detection application.

Two behaviors are registered with the runtime catalog:

``fire-detector`` (process A)
    watches temperature readings forwarded by the gateway and alerts the
    manager service when a reading is strictly above the threshold, at most
    once per cooldown window.

``fire-manager`` (process B)
    on each alert, reprograms the target sensor through the gateway and asks
    the runtime for more instances of its own service.

Both are thin wrappers around the pure functions :func:`process_a_on_reading`
and :func:`process_b_on_alert`.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import IO, Any, Dict, List, Optional, Tuple

from .iot import LIGHT, TEMPERATURE, Gateway, ReprogramCommand, SensorReading
from .netfabric import ALERT, READING, REPROGRAM, NetMessage
from .registry import NotFound
from .runtime import Behavior, register_behavior
from .simcore import MS, S

logger = logging.getLogger(__name__)

CROSSED = "Crossed"
ALERT_SENT = "AlertSent"
ALERT_RECEIVED = "AlertReceived"
REPROGRAM_SENT = "ReprogramSent"
REPROGRAM_APPLIED = "ReprogramApplied"
SCALE_REQUESTED = "ScaleRequested"
CAUSAL_ORDER = (CROSSED, ALERT_SENT, ALERT_RECEIVED, REPROGRAM_SENT, REPROGRAM_APPLIED)


class IncompleteScenario(Exception):
    pass


@dataclass(frozen=True)
class FireConfig:
    threshold: float = 50.0
    alert_target: str = "fire-mgr-B"
    reprogram_interval: int = 100 * MS
    alert_cooldown: int = 10 * S
    reprogram_sensor: str = "sensor-B"
    reprogram_on_alert: bool = True
    scale_on_alert: bool = True

    def __post_init__(self):
        if self.threshold != self.threshold or self.threshold in (float("inf"), float("-inf")):
            raise ValueError("threshold must be finite")
        if self.reprogram_interval <= 0:
            raise ValueError("reprogram_interval must be > 0")
        if self.alert_cooldown < 0:
            raise ValueError("alert_cooldown must be >= 0")

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "FireConfig":
        base = cls()
        return cls(
            threshold=float(d.get("threshold_c", base.threshold)),
            alert_target=d.get("alert_target", base.alert_target),
            reprogram_interval=int(d.get("reprogram_interval_us", base.reprogram_interval)),
            alert_cooldown=int(d.get("alert_cooldown_us", base.alert_cooldown)),
            reprogram_sensor=d.get("reprogram_sensor", base.reprogram_sensor),
            reprogram_on_alert=bool(d.get("reprogram_on_alert", base.reprogram_on_alert)),
            scale_on_alert=bool(d.get("scale_on_alert", base.scale_on_alert)),
        )


@dataclass
class FireEventLog:
    entries: List[Tuple[int, str, str]] = field(default_factory=list)

    def record(self, t: int, kind: str, detail: str = "") -> None:
        self.entries.append((t, kind, detail))

    def first(self, kind: str) -> Optional[int]:
        return next((t for t, k, _ in self.entries if k == kind), None)

    def times(self, kind: str) -> List[int]:
        return [t for t, k, _ in self.entries if k == kind]

    def count(self, kind: str) -> int:
        return sum(1 for _, k, _ in self.entries if k == kind)

    def write_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_us", "kind", "detail"])
        w.writerows(self.entries)


@dataclass
class DetectorState:
    last_alert: Optional[int] = None


@dataclass(frozen=True)
class Alert:
    sensor_id: str
    value: float
    measured_at: int
    detected_at: int

    def encode(self) -> bytes:
        return json.dumps(self.__dict__, sort_keys=True).encode()

    @classmethod
    def decode(cls, body: bytes) -> "Alert":
        return cls(**json.loads(body))


@dataclass(frozen=True)
class ScaleRequest:
    app_id: str
    service_name: str


def process_a_on_reading(reading: SensorReading, cfg: FireConfig, state: DetectorState,
                         now: int, log: Optional[FireEventLog] = None) -> Optional[Alert]:
    """Return an Alert when ``reading`` exceeds the threshold outside the cooldown.

    Equality with the threshold does not count as a crossing.
    """
    if reading.kind != TEMPERATURE or not reading.value > cfg.threshold:
        return None
    if log is not None:
        log.record(now, CROSSED, f"{reading.sensor_id}={reading.value}")
    if state.last_alert is not None and now < state.last_alert + cfg.alert_cooldown:
        return None
    state.last_alert = now
    return Alert(reading.sensor_id, reading.value, reading.measured_at, now)


def process_b_on_alert(alert: Alert, cfg: FireConfig, app_id: str, service_name: str
                       ) -> Tuple[Optional[ReprogramCommand], Optional[ScaleRequest]]:
    cmd = None
    if cfg.reprogram_on_alert:
        cmd = ReprogramCommand(cfg.reprogram_sensor, {"sample_interval": cfg.reprogram_interval})
    scale = ScaleRequest(app_id, service_name) if cfg.scale_on_alert else None
    return cmd, scale


def end_to_end_reaction_time(log: FireEventLog) -> int:
    crossed = log.first(CROSSED)
    applied = log.first(REPROGRAM_APPLIED)
    if crossed is None or applied is None:
        missing = [k for k, t in ((CROSSED, crossed), (REPROGRAM_APPLIED, applied)) if t is None]
        raise IncompleteScenario(f"fire log lacks {', '.join(missing)}")
    return applied - crossed


def _config(ctx, params: Dict[str, Any]) -> FireConfig:
    base = ctx.shared.get("fire_config") or FireConfig()
    if not params:
        return base
    merged = {
        "threshold_c": base.threshold,
        "alert_target": base.alert_target,
        "reprogram_interval_us": base.reprogram_interval,
        "alert_cooldown_us": base.alert_cooldown,
        "reprogram_sensor": base.reprogram_sensor,
        "reprogram_on_alert": base.reprogram_on_alert,
        "scale_on_alert": base.scale_on_alert,
    }
    merged.update(params)
    return FireConfig.from_dict(merged)


@register_behavior("fire-detector")
class FireDetector(Behavior):
    def __init__(self, ctx, params):
        super().__init__(ctx, params)
        self.cfg = _config(ctx, params)
        self.log: FireEventLog = ctx.shared.setdefault("fire_log", FireEventLog())
        self.state = DetectorState()
        self.light_readings = 0

    def on_message(self, msg: NetMessage) -> None:
        if msg.kind != READING:
            return
        reading = SensorReading.decode(msg.body)
        if reading.kind == LIGHT:
            # light readings are accepted but play no part in detection
            self.light_readings += 1
            self.ctx.note("LightReading")
            return
        previous = self.state.last_alert
        alert = process_a_on_reading(reading, self.cfg, self.state, self.ctx.now, self.log)
        if alert is None:
            return
        try:
            self.ctx.send_service(self.cfg.alert_target, ALERT, alert.encode())
        except NotFound:
            logger.warning("alert target %s not registered", self.cfg.alert_target)
            self.state.last_alert = previous
            self.ctx.note("AlertUndeliverable")
            return
        self.log.record(self.ctx.now, ALERT_SENT, reading.sensor_id)


@register_behavior("fire-manager")
class FireManager(Behavior):
    def __init__(self, ctx, params):
        super().__init__(ctx, params)
        self.cfg = _config(ctx, params)
        self.log: FireEventLog = ctx.shared.setdefault("fire_log", FireEventLog())
        self.alerts = 0

    def on_message(self, msg: NetMessage) -> None:
        if msg.kind != ALERT:
            return
        self.alerts += 1
        alert = Alert.decode(msg.body)
        now = self.ctx.now
        self.log.record(now, ALERT_RECEIVED, alert.sensor_id)
        h = self.ctx.handle
        cmd, scale = process_b_on_alert(alert, self.cfg, h.app_id, h.process.service_name)
        if cmd is not None:
            self.ctx.send_gateway(REPROGRAM, cmd.encode())
            self.log.record(now, REPROGRAM_SENT, cmd.target_sensor)
        if scale is not None:
            self.log.record(now, SCALE_REQUESTED, scale.service_name)
            self.ctx.request_scale(scale.service_name)


def attach_gateway(log: FireEventLog, gateway: Gateway) -> None:
    """Record every sensor reprogram applied via ``gateway`` in ``log``."""
    gateway.reprogram_listeners.append(
        lambda sensor_id, applied, t: log.record(t, REPROGRAM_APPLIED, sensor_id))
