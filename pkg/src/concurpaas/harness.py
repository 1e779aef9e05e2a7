"""Scenario loading, experiment execution and metrics.

A scenario is one JSON document::

    {
      "sim":      {"rng_seed", "horizon_us", "trace_enabled"},
      "fabric":   {"d_hop_us", "d_proxy_us", "drop_prob", "rto_us", "max_attempts"},
      "registry": {"lease_duration_us", "evict_period_us"},          optional
      "gateway":  {"port_capacity"},                                  optional
      "sensors":  [{sensor_id, kind, sample_interval_us, enabled, trace}],
      "bindings": [{port, sensor_id, service_name}],
      "app":      {app_id, channel_mode, processes, scaling},
      "fire":     {threshold_c, reprogram_interval_us, alert_cooldown_us},
      "workload": {msg_count, payload_bytes, interval_us,
                   target_service, start_us}                          optional
    }

Reports never carry wall-clock data, so two runs of the same scenario and
seed serialize to identical bytes.
"""

from __future__ import annotations

import json
import math
import os
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from . import fireapp  # noqa: F401  (registers the fire behaviors)
from .fireapp import FireConfig, FireEventLog, IncompleteScenario, attach_gateway, end_to_end_reaction_time
from .iot import Gateway, PortBinding, SensorSpec, DEFAULT_PORT_CAPACITY
from .netfabric import CUSTOM, DIRECT, MODES, PROXIED, Fabric, FabricConfig, LatencySample, write_samples_csv
from .registry import DEFAULT_EVICT_PERIOD, DEFAULT_LEASE, NotFound, Registry
from .runtime import BEHAVIORS, AppDescriptor, Runtime
from .simcore import Engine, SimConfig, SimEvent

SEED_ENV = "CONCURPAAS_SEED"
SCENARIO_DIR = Path(__file__).parent / "scenarios"
SECTIONS = ("sim", "fabric", "registry", "gateway", "sensors", "bindings", "app", "fire", "workload")


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    def __init__(self, problems: List[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass(frozen=True)
class Workload:
    msg_count: int
    payload_bytes: int = 0
    interval: int = 1000
    target_service: Optional[str] = None
    start: Optional[int] = None


@dataclass
class Scenario:
    sim: SimConfig
    fabric: FabricConfig
    sensors: List[SensorSpec]
    bindings: List[PortBinding]
    app: AppDescriptor
    fire: FireConfig = field(default_factory=FireConfig)
    workload: Optional[Workload] = None
    lease_duration: int = DEFAULT_LEASE
    evict_period: int = DEFAULT_EVICT_PERIOD
    port_capacity: int = DEFAULT_PORT_CAPACITY

    def with_mode(self, mode: str) -> "Scenario":
        return replace(self, app=replace(self.app, channel_mode=mode))

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, sim=replace(self.sim, rng_seed=seed))


# -- loading -----------------------------------------------------------------

def resolve_path(path) -> Path:
    """Return ``path`` if it exists, else a bundled scenario of that name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = SCENARIO_DIR / p.name
    if p.parent == Path(".") and bundled.exists():
        return bundled
    return p


def _section(doc, name, required=False) -> Dict[str, Any]:
    val = doc.get(name)
    if val is None:
        if required:
            raise ParseError(f"missing required section '{name}'")
        return {}
    if not isinstance(val, dict):
        raise ParseError(f"section '{name}' must be an object")
    return val


def _field(where: str, fn, *args):
    try:
        return fn(*args)
    except KeyError as exc:
        raise ParseError(f"{where}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from None


def parse_scenario(doc: Any, env: Optional[Mapping[str, str]] = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ParseError("scenario must be a JSON object")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ParseError(f"unknown section(s): {', '.join(unknown)}")

    sim = _section(doc, "sim", required=True)
    seed = sim.get("rng_seed", 0)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ParseError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    simcfg = _field("sim", lambda: SimConfig(
        rng_seed=int(seed), horizon=int(sim["horizon_us"]),
        trace_enabled=bool(sim.get("trace_enabled", True))))

    fab = _section(doc, "fabric")
    base = FabricConfig()
    fabcfg = _field("fabric", lambda: FabricConfig(
        d_hop=int(fab.get("d_hop_us", base.d_hop)),
        d_proxy=int(fab.get("d_proxy_us", base.d_proxy)),
        drop_prob=float(fab.get("drop_prob", base.drop_prob)),
        rto=int(fab.get("rto_us", base.rto)),
        max_attempts=int(fab.get("max_attempts", base.max_attempts))))

    reg = _section(doc, "registry")
    gw = _section(doc, "gateway")

    sensors_raw = doc.get("sensors", [])
    bindings_raw = doc.get("bindings", [])
    if not isinstance(sensors_raw, list) or not isinstance(bindings_raw, list):
        raise ParseError("'sensors' and 'bindings' must be arrays")
    sensors = [_field(f"sensors[{i}]", SensorSpec.from_dict, s) for i, s in enumerate(sensors_raw)]
    bindings = [
        _field(f"bindings[{i}]", lambda b: PortBinding(int(b["port"]), b["sensor_id"], b["service_name"]), b)
        for i, b in enumerate(bindings_raw)
    ]
    app = _field("app", AppDescriptor.from_dict, _section(doc, "app", required=True))
    fire = _field("fire", FireConfig.from_dict, _section(doc, "fire"))

    workload = None
    if doc.get("workload") is not None:
        wl = _section(doc, "workload")
        workload = _field("workload", lambda: Workload(
            msg_count=int(wl["msg_count"]),
            payload_bytes=int(wl.get("payload_bytes", 0)),
            interval=int(wl["interval_us"]),
            target_service=wl.get("target_service"),
            start=None if wl.get("start_us") is None else int(wl["start_us"])))

    return Scenario(
        sim=simcfg, fabric=fabcfg, sensors=sensors, bindings=bindings, app=app,
        fire=fire, workload=workload,
        lease_duration=_field("registry", int, reg.get("lease_duration_us", DEFAULT_LEASE)),
        evict_period=_field("registry", int, reg.get("evict_period_us", DEFAULT_EVICT_PERIOD)),
        port_capacity=_field("gateway", int, gw.get("port_capacity", DEFAULT_PORT_CAPACITY)),
    )


def validate(sc: Scenario) -> None:
    problems = []
    services = {p.service_name for p in sc.app.processes}
    for p in sc.app.processes:
        if p.behavior_id not in BEHAVIORS:
            problems.append(f"process {p.service_name!r}: unknown behavior {p.behavior_id!r}")
    sensor_ids = [s.sensor_id for s in sc.sensors]
    for sid in sorted({s for s in sensor_ids if sensor_ids.count(s) > 1}):
        problems.append(f"duplicate sensor {sid!r}")
    ports, bound = set(), set()
    for b in sc.bindings:
        if b.sensor_id not in sensor_ids:
            problems.append(f"binding on port {b.port}: unknown sensor {b.sensor_id!r}")
        if b.service_name not in services:
            problems.append(f"binding on port {b.port}: unknown service {b.service_name!r}")
        if b.port in ports:
            problems.append(f"port {b.port} bound twice")
        if b.sensor_id in bound:
            problems.append(f"sensor {b.sensor_id!r} bound twice")
        ports.add(b.port)
        bound.add(b.sensor_id)
    behaviors = {p.behavior_id for p in sc.app.processes}
    if "fire-detector" in behaviors and sc.fire.alert_target not in services:
        problems.append(f"fire: unknown alert_target service {sc.fire.alert_target!r}")
    if "fire-manager" in behaviors and sc.fire.reprogram_on_alert \
            and sc.fire.reprogram_sensor not in sensor_ids:
        problems.append(f"fire: unknown reprogram_sensor {sc.fire.reprogram_sensor!r}")
    if sc.workload is not None:
        target = sc.workload.target_service or sc.app.processes[0].service_name
        if target not in services:
            problems.append(f"workload: unknown target_service {target!r}")
        if sc.workload.msg_count < 0 or sc.workload.payload_bytes < 0 or sc.workload.interval <= 0:
            problems.append("workload: msg_count/payload_bytes must be >= 0 and interval_us > 0")
    if sc.lease_duration <= 0 or sc.evict_period <= 0:
        problems.append("registry: lease_duration_us and evict_period_us must be > 0")
    if sc.port_capacity < 1:
        problems.append("gateway: port_capacity must be >= 1")
    if problems:
        raise ValidationError(problems)


def load_scenario(path, env: Optional[Mapping[str, str]] = None) -> Scenario:
    p = resolve_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ValidationError([f"cannot read scenario file {str(path)!r}: {exc.strerror}"]) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    sc = parse_scenario(doc, env)
    validate(sc)
    return sc


# -- metrics -------------------------------------------------------------------

def nearest_rank(sorted_values: List[int], pct: float) -> int:
    k = max(1, math.ceil(pct / 100.0 * len(sorted_values)))
    return sorted_values[k - 1]


def latency_stats(values: List[int]) -> Dict[str, Any]:
    if not values:
        return {"count": 0, "mean_us": None, "median_us": None, "p95_us": None, "max_us": None}
    vs = sorted(values)
    return {
        "count": len(vs),
        "mean_us": sum(vs) / len(vs),
        "median_us": float(statistics.median(vs)),
        "p95_us": nearest_rank(vs, 95),
        "max_us": vs[-1],
    }


@dataclass
class MetricsReport:
    seed: int
    channel_mode: str
    horizon_us: int
    latency: Dict[str, Dict[str, Any]]
    delivered: int
    throughput_msg_per_s: float
    reaction_time_us: Optional[int]
    delivery_failures: int
    retransmissions: int
    instances: Dict[str, int]
    events_executed: int
    determinism_digest: str

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# -- simulation ----------------------------------------------------------------

class Simulation:
    """All platform components wired together for one scenario run."""

    def __init__(self, sc: Scenario):
        self.scenario = sc
        self.engine = Engine(sc.sim)
        self.fabric = Fabric(self.engine, sc.fabric)
        self.registry = Registry(self.engine, self.fabric.is_allocated,
                                 sc.lease_duration, sc.evict_period)
        self.fabric.registry = self.registry
        self.gateway = Gateway(self.engine, self.fabric, self.registry,
                               sc.app.channel_mode, sc.port_capacity)
        self.runtime = Runtime(self.engine, self.fabric, self.registry)
        self.runtime.gateway_address = self.gateway.address
        self.fire_log = FireEventLog()
        attach_gateway(self.fire_log, self.gateway)
        self.samples: List[LatencySample] = []
        self._workload_sent = 0
        self._workload_channel: Optional[int] = None
        self._workload_addr: Optional[int] = None

        self.registry.start()
        for spec in sc.sensors:
            self.gateway.create_sensor(replace(spec, trace=list(spec.trace)))
        for b in sc.bindings:
            self.gateway.bind_port(b.port, b.sensor_id, b.service_name)
        self.runtime.deploy(sc.app, shared={"fire_config": sc.fire, "fire_log": self.fire_log})
        if sc.workload is not None and sc.workload.msg_count > 0:
            self._workload_addr = self.fabric.allocate_interface("workload")
            self.engine.register("workload", self._on_workload)
            start = sc.workload.start
            if start is None:
                start = sc.app.scaling.startup_delay
            self.engine.try_schedule(start, "workload", "Send")

    def _on_workload(self, ev: SimEvent) -> None:
        wl = self.scenario.workload
        if self._workload_channel is None:
            target = wl.target_service or self.scenario.app.processes[0].service_name
            try:
                self._workload_channel = self.fabric.open_channel(
                    self._workload_addr, target, self.scenario.app.channel_mode)
            except NotFound:
                self.engine.note("workload", "TargetNotFound")
                self.engine.try_schedule(wl.interval, "workload", "Send")
                return
        self.fabric.send(self._workload_channel, CUSTOM, bytes(wl.payload_bytes))
        self._workload_sent += 1
        if self._workload_sent < wl.msg_count:
            self.engine.try_schedule(wl.interval, "workload", "Send")

    def run(self) -> MetricsReport:
        self.engine.run()
        self.samples.extend(self.fabric.drain_samples())
        return self.report()

    def report(self) -> MetricsReport:
        sc = self.scenario
        by_mode = {m: [s.one_way for s in self.samples if s.mode == m] for m in MODES}
        try:
            reaction = end_to_end_reaction_time(self.fire_log)
        except IncompleteScenario:
            reaction = None
        delivered = len(self.samples)
        instances = {}
        if sc.app.app_id in self.runtime.apps:
            for p in sc.app.processes:
                instances[p.service_name] = self.runtime.instance_count(sc.app.app_id, p.service_name)
        st = self.fabric.stats
        return MetricsReport(
            seed=sc.sim.rng_seed,
            channel_mode=sc.app.channel_mode,
            horizon_us=sc.sim.horizon,
            latency={m: latency_stats(v) for m, v in by_mode.items()},
            delivered=delivered,
            throughput_msg_per_s=delivered * 1_000_000 / sc.sim.horizon,
            reaction_time_us=reaction,
            delivery_failures=st.failures,
            retransmissions=st.attempts - st.sent,
            instances=instances,
            events_executed=self.engine.executed,
            determinism_digest=self.engine.digest(),
        )

    def trace_header(self) -> str:
        sc = self.scenario
        return (f"# seed={sc.sim.rng_seed}\n# mode={sc.app.channel_mode}\n"
                f"# horizon_us={sc.sim.horizon}\n")

    def write_csv(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "latency.csv", "w", newline="") as fh:
            write_samples_csv(self.samples, fh)
        with open(d / "fire_log.csv", "w", newline="") as fh:
            self.fire_log.write_csv(fh)


def run_scenario(path, env: Optional[Mapping[str, str]] = None, mode: Optional[str] = None) -> MetricsReport:
    sc = load_scenario(path, env)
    if mode is not None:
        sc = sc.with_mode(mode)
    return Simulation(sc).run()


@dataclass
class Comparison:
    direct: MetricsReport
    proxied: MetricsReport
    direct_mean_us: Optional[float]
    proxied_mean_us: Optional[float]
    delta_mean_us: Optional[float]
    delta_delivered: int
    regression: bool
    headers: Dict[str, str]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "direct": self.direct.to_dict(),
            "proxied": self.proxied.to_dict(),
            "delta": {"mean_us": self.delta_mean_us, "delivered": self.delta_delivered},
            "regression": self.regression,
        }

    def table(self) -> str:
        def fmt(v):
            return "-" if v is None else (f"{v:.1f}" if isinstance(v, float) else str(v))

        d = self.direct.latency[DIRECT]
        p = self.proxied.latency[PROXIED]
        rows = [("metric", "Direct", "Proxied", "delta")]
        for key in ("count", "mean_us", "median_us", "p95_us", "max_us"):
            delta = None if d[key] is None or p[key] is None else p[key] - d[key]
            rows.append((key, fmt(d[key]), fmt(p[key]), fmt(delta)))
        rows.append(("delivered", str(self.direct.delivered), str(self.proxied.delivered),
                     str(-self.delta_delivered)))
        rows.append(("throughput_msg_per_s", fmt(self.direct.throughput_msg_per_s),
                     fmt(self.proxied.throughput_msg_per_s),
                     fmt(self.proxied.throughput_msg_per_s - self.direct.throughput_msg_per_s)))
        rd, rp = self.direct.reaction_time_us, self.proxied.reaction_time_us
        rows.append(("reaction_time_us", fmt(rd), fmt(rp),
                     fmt(None if rd is None or rp is None else rp - rd)))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.append(f"seed={self.direct.seed}  regression={'yes' if self.regression else 'no'}")
        return "\n".join(lines) + "\n"


def compare_modes(path, env: Optional[Mapping[str, str]] = None, trace_dir=None) -> Comparison:
    """Run the scenario once per channel mode with the same seed."""
    sc = load_scenario(path, env)
    sims = {m: Simulation(sc.with_mode(m)) for m in MODES}
    reports = {m: s.run() for m, s in sims.items()}
    headers = {m: s.trace_header() for m, s in sims.items()}
    if trace_dir is not None:
        d = Path(trace_dir)
        d.mkdir(parents=True, exist_ok=True)
        for m, s in sims.items():
            (d / f"{m.lower()}.trace").write_text(headers[m] + s.engine.trace_text())
    dm = reports[DIRECT].latency[DIRECT]["mean_us"]
    pm = reports[PROXIED].latency[PROXIED]["mean_us"]
    delta = None if dm is None or pm is None else pm - dm
    regression = delta is None or dm >= pm
    return Comparison(
        direct=reports[DIRECT], proxied=reports[PROXIED],
        direct_mean_us=dm, proxied_mean_us=pm, delta_mean_us=delta,
        delta_delivered=reports[DIRECT].delivered - reports[PROXIED].delivered,
        regression=regression, headers=headers,
    )
