"""Elastic runtime: containers, process behaviors and alert-driven scale-out.

Each process of a deployed application lives in its own container with one
fabric interface.  A container is ``Deploying`` until its startup delay has
elapsed; at that instant it registers with the service registry and becomes
``Running`` in the same event, so Running containers and live registry
records always agree at event boundaries.  A single runtime heartbeat renews
the leases of all Running containers every half lease.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

from .netfabric import DIRECT, MODES, Fabric, NetMessage
from .registry import NotFound, Registry
from .simcore import MS, Engine, SimEvent

logger = logging.getLogger(__name__)

DEPLOYING = "Deploying"
RUNNING = "Running"
STOPPED = "Stopped"

ON_ALERT = "OnAlert"
MANUAL = "Manual"

DEFAULT_STARTUP_DELAY = 50 * MS


class PlatformError(Exception):
    pass


class DuplicateApp(PlatformError):
    pass


class UnknownApp(PlatformError):
    pass


class UnknownBehavior(PlatformError):
    pass


class AtCapacity(PlatformError):
    pass


class UnknownContainer(PlatformError):
    pass


class UnknownService(PlatformError):
    pass


@dataclass(frozen=True)
class ProcessSpec:
    service_name: str
    behavior_id: str
    init_params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.service_name:
            raise ValueError("service_name must be non-empty")


@dataclass(frozen=True)
class ScalePolicy:
    trigger: str = ON_ALERT
    instances_per_trigger: int = 1
    max_instances: int = 1
    startup_delay: int = DEFAULT_STARTUP_DELAY

    def __post_init__(self):
        if self.trigger not in (ON_ALERT, MANUAL):
            raise ValueError(f"unknown scale trigger {self.trigger!r}")
        if self.instances_per_trigger < 1 or self.max_instances < 1:
            raise ValueError("instances_per_trigger and max_instances must be >= 1")
        if self.instances_per_trigger > self.max_instances:
            raise ValueError("instances_per_trigger exceeds max_instances")
        if self.startup_delay < 0:
            raise ValueError("startup_delay must be >= 0")


@dataclass(frozen=True)
class AppDescriptor:
    app_id: str
    processes: List[ProcessSpec]
    channel_mode: str = DIRECT
    scaling: ScalePolicy = field(default_factory=ScalePolicy)

    def __post_init__(self):
        if not self.processes:
            raise ValueError("an application needs at least one process")
        if self.channel_mode not in MODES:
            raise ValueError(f"unknown channel_mode {self.channel_mode!r}")

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "AppDescriptor":
        """Build from the JSON descriptor layout (times in microseconds)."""
        sc = d.get("scaling", {})
        policy = ScalePolicy(
            trigger=sc.get("trigger", ON_ALERT),
            instances_per_trigger=int(sc.get("instances_per_trigger", 1)),
            max_instances=int(sc.get("max_instances", 1)),
            startup_delay=int(sc.get("startup_delay_us", DEFAULT_STARTUP_DELAY)),
        )
        procs = [
            ProcessSpec(p["service_name"], p["behavior_id"], dict(p.get("init_params", {})))
            for p in d["processes"]
        ]
        return cls(d["app_id"], procs, d.get("channel_mode", DIRECT), policy)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "app_id": self.app_id,
            "channel_mode": self.channel_mode,
            "processes": [
                {"service_name": p.service_name, "behavior_id": p.behavior_id,
                 "init_params": dict(p.init_params)}
                for p in self.processes
            ],
            "scaling": {
                "trigger": self.scaling.trigger,
                "instances_per_trigger": self.scaling.instances_per_trigger,
                "max_instances": self.scaling.max_instances,
                "startup_delay_us": self.scaling.startup_delay,
            },
        }


@dataclass
class ContainerHandle:
    container_id: str
    app_id: str
    process: ProcessSpec
    instance_id: str
    address: int
    state: str = DEPLOYING
    behavior: Any = field(default=None, repr=False, compare=False)


class Behavior:
    """Base class for process behaviors; subclasses override the hooks they need."""

    def __init__(self, ctx: "ProcessContext", params: Dict[str, Any]):
        self.ctx = ctx
        self.params = params

    def on_start(self) -> None:
        pass

    def on_message(self, msg: NetMessage) -> None:
        pass

    def on_delivery_failed(self, msg: NetMessage) -> None:
        pass


BehaviorFactory = Callable[["ProcessContext", Dict[str, Any]], Behavior]
BEHAVIORS: Dict[str, BehaviorFactory] = {}


def register_behavior(behavior_id: str):
    def deco(factory):
        BEHAVIORS[behavior_id] = factory
        return factory
    return deco


@register_behavior("sink")
class Sink(Behavior):
    """Records the ids of what it receives; the receiver for synthetic workloads."""

    def __init__(self, ctx, params):
        super().__init__(ctx, params)
        self.received: List[int] = []

    def on_message(self, msg):
        self.received.append(msg.msg_id)


@dataclass
class Deployment:
    descriptor: AppDescriptor
    containers: List[ContainerHandle] = field(default_factory=list)
    next_index: Dict[str, int] = field(default_factory=dict)
    shared: Dict[str, Any] = field(default_factory=dict)


class ProcessContext:
    """What a behavior may touch: its own container, the fabric, and the runtime."""

    def __init__(self, runtime: "Runtime", deployment: Deployment, handle: ContainerHandle):
        self.runtime = runtime
        self.deployment = deployment
        self.handle = handle
        self._channels: Dict[str, int] = {}

    @property
    def now(self) -> int:
        return self.runtime.engine.now

    @property
    def shared(self) -> Dict[str, Any]:
        return self.deployment.shared

    @property
    def channel_mode(self) -> str:
        return self.deployment.descriptor.channel_mode

    @property
    def address(self) -> int:
        return self.handle.address

    def send_service(self, service_name: str, kind: str, body: bytes) -> int:
        """Send over a channel bound once, at first use, via registry lookup.

        Raises registry.NotFound if the service has no live instance yet.
        """
        fabric = self.runtime.fabric
        cid = self._channels.get(service_name)
        if cid is None:
            cid = fabric.open_channel(self.address, service_name, self.channel_mode)
            self._channels[service_name] = cid
        return fabric.send(cid, kind, body)

    def send_gateway(self, kind: str, body: bytes) -> int:
        gw = self.runtime.gateway_address
        if gw is None:
            raise NotFound("gateway")
        return self.runtime.fabric.transmit(self.address, gw, kind, body, DIRECT)

    def request_scale(self, service_name: str) -> List[ContainerHandle]:
        return self.runtime.request_scale(self.handle.app_id, service_name)

    def note(self, kind: str) -> None:
        self.runtime.engine.note(self.handle.container_id, kind)


class Runtime:
    TARGET = "runtime"

    def __init__(self, engine: Engine, fabric: Fabric, registry: Registry,
                 catalog: Optional[Dict[str, BehaviorFactory]] = None):
        self.engine = engine
        self.fabric = fabric
        self.registry = registry
        self.catalog = BEHAVIORS if catalog is None else catalog
        self.gateway_address: Optional[int] = None
        self.apps: Dict[str, Deployment] = {}
        self.containers: Dict[str, ContainerHandle] = {}
        self._start_events: Dict[str, int] = {}
        self._heartbeat: Optional[int] = None
        engine.register(self.TARGET, self._on_event)

    # -- lifecycle ----------------------------------------------------------

    def deploy(self, d: AppDescriptor, shared: Optional[Dict[str, Any]] = None) -> List[ContainerHandle]:
        if d.app_id in self.apps:
            raise DuplicateApp(d.app_id)
        for p in d.processes:
            if p.behavior_id not in self.catalog:
                raise UnknownBehavior(p.behavior_id)
        dep = Deployment(d, shared=dict(shared or {}))
        self.apps[d.app_id] = dep
        return [self._spawn(dep, p) for p in d.processes]

    def _spawn(self, dep: Deployment, spec: ProcessSpec) -> ContainerHandle:
        k = dep.next_index.get(spec.service_name, 0) + 1
        dep.next_index[spec.service_name] = k
        instance_id = f"{spec.service_name}-{k}"
        cid = f"{dep.descriptor.app_id}/{instance_id}"
        addr = self.fabric.allocate_interface(cid)
        handle = ContainerHandle(cid, dep.descriptor.app_id, spec, instance_id, addr)
        handle.behavior = self.catalog[spec.behavior_id](
            ProcessContext(self, dep, handle), dict(spec.init_params))
        dep.containers.append(handle)
        self.containers[cid] = handle
        self.fabric.attach(
            addr,
            lambda msg, cid=cid: self.deliver_to_process(cid, msg),
            lambda msg, h=handle: h.behavior.on_delivery_failed(msg),
        )
        ev = self.engine.try_schedule(dep.descriptor.scaling.startup_delay, self.TARGET, "Start", cid)
        if ev is not None:
            self._start_events[cid] = ev
        return handle

    def _on_event(self, ev: SimEvent) -> None:
        if ev.kind == "Start":
            self._start(ev.payload)
        elif ev.kind == "Heartbeat":
            self._heartbeat = None
            running = [h for h in self.containers.values() if h.state == RUNNING]
            for h in running:
                self.registry.renew(h.process.service_name, h.instance_id)
            if running:
                self._arm_heartbeat()

    def _start(self, cid: str) -> None:
        self._start_events.pop(cid, None)
        h = self.containers[cid]
        if h.state != DEPLOYING:
            return
        self.registry.register(h.process.service_name, h.instance_id, h.address)
        h.state = RUNNING
        self._arm_heartbeat()
        h.behavior.on_start()

    def _arm_heartbeat(self) -> None:
        if self._heartbeat is None:
            period = max(1, self.registry.lease_duration // 2)
            self._heartbeat = self.engine.try_schedule(period, self.TARGET, "Heartbeat")

    def instance_count(self, app_id: str, service_name: str) -> int:
        dep = self.apps[app_id]
        return sum(1 for h in dep.containers
                   if h.process.service_name == service_name and h.state != STOPPED)

    def scale_out(self, app_id: str, service_name: str) -> List[ContainerHandle]:
        dep = self.apps.get(app_id)
        if dep is None:
            raise UnknownApp(app_id)
        spec = next((p for p in dep.descriptor.processes if p.service_name == service_name), None)
        if spec is None:
            raise UnknownService(f"{app_id} has no service {service_name!r}")
        policy = dep.descriptor.scaling
        current = self.instance_count(app_id, service_name)
        room = policy.max_instances - current
        if room <= 0:
            if policy.trigger == MANUAL:
                raise AtCapacity(f"{service_name} at {current}/{policy.max_instances}")
            logger.info("scale-out of %s skipped: at capacity", service_name)
            self.engine.note(self.TARGET, "AtCapacity")
            return []
        n = min(policy.instances_per_trigger, room)
        return [self._spawn(dep, spec) for _ in range(n)]

    def request_scale(self, app_id: str, service_name: str) -> List[ContainerHandle]:
        """Alert-originated scale request; a no-op unless the policy is OnAlert."""
        dep = self.apps.get(app_id)
        if dep is None:
            raise UnknownApp(app_id)
        if dep.descriptor.scaling.trigger != ON_ALERT:
            self.engine.note(self.TARGET, "ScaleIgnored")
            return []
        return self.scale_out(app_id, service_name)

    def stop_app(self, app_id: str) -> int:
        dep = self.apps.pop(app_id, None)
        if dep is None:
            raise UnknownApp(app_id)
        stopped = 0
        for h in dep.containers:
            if h.state == STOPPED:
                continue
            ev = self._start_events.pop(h.container_id, None)
            if ev is not None:
                self.engine.cancel(ev)
            if h.state == RUNNING:
                self.registry.deregister(h.process.service_name, h.instance_id)
            h.state = STOPPED
            stopped += 1
        return stopped

    def deliver_to_process(self, container_id: str, msg: NetMessage) -> None:
        h = self.containers.get(container_id)
        if h is None:
            raise UnknownContainer(container_id)
        if h.state != RUNNING:
            self.engine.note(container_id, "DeadLetter")
            return
        h.behavior.on_message(msg)

    # -- introspection -------------------------------------------------------

    def running_keys(self) -> set:
        return {(h.process.service_name, h.instance_id)
                for h in self.containers.values() if h.state == RUNNING}

    def handles(self, app_id: Optional[str] = None) -> List[ContainerHandle]:
        return [h for h in self.containers.values() if app_id is None or h.app_id == app_id]
