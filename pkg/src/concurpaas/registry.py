"""Lease-based service registry (interface A).

Processes register the address of their container interface under a service
name.  Registrations carry a lease that must be renewed; a periodic evictor
marks unrenewed records ``Expired``.  Expired records stay visible in
:meth:`Registry.dump` until the instance registers again.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

from .simcore import S, Engine, SimEvent

logger = logging.getLogger(__name__)

UP = "Up"
EXPIRED = "Expired"

DEFAULT_LEASE = 30 * S
DEFAULT_EVICT_PERIOD = 10 * S


class RegistryError(Exception):
    pass


class InvalidEndpoint(RegistryError):
    pass


class NotRegistered(RegistryError):
    pass


class NotFound(RegistryError):
    pass


@dataclass
class Lease:
    duration: int
    renewed_count: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("lease duration must be > 0")


@dataclass
class ServiceRecord:
    service_name: str
    instance_id: str
    endpoint: int
    registered_at: int
    lease_expiry: int
    lease: Lease
    status: str = UP

    def live(self, now: int) -> bool:
        return self.status == UP and self.lease_expiry > now


class Registry:
    TARGET = "registry"

    def __init__(
        self,
        engine: Engine,
        is_allocated: Callable[[int], bool],
        lease_duration: int = DEFAULT_LEASE,
        evict_period: int = DEFAULT_EVICT_PERIOD,
    ):
        if lease_duration <= 0 or evict_period <= 0:
            raise ValueError("lease_duration and evict_period must be > 0")
        self.engine = engine
        self.is_allocated = is_allocated
        self.lease_duration = lease_duration
        self.evict_period = evict_period
        self._records: Dict[Tuple[str, str], ServiceRecord] = {}
        self._rr: Dict[str, int] = {}
        engine.register(self.TARGET, self._on_event)

    def start(self) -> None:
        """Arm the periodic evictor."""
        self.engine.try_schedule(self.evict_period, self.TARGET, "EvictTick")

    def _on_event(self, ev: SimEvent) -> None:
        if ev.kind == "EvictTick":
            for _ in self.evict_expired():
                self.engine.note(self.TARGET, "Evicted")
            self.engine.try_schedule(self.evict_period, self.TARGET, "EvictTick")

    def register(self, service_name: str, instance_id: str, endpoint: int) -> Lease:
        if not self.is_allocated(endpoint):
            raise InvalidEndpoint(f"address {endpoint} was not allocated by the fabric")
        now = self.engine.now
        lease = Lease(self.lease_duration)
        self._records[(service_name, instance_id)] = ServiceRecord(
            service_name, instance_id, endpoint, now, now + self.lease_duration, lease
        )
        logger.debug("register %s/%s -> %s", service_name, instance_id, endpoint)
        return lease

    def renew(self, service_name: str, instance_id: str) -> Lease:
        rec = self._records.get((service_name, instance_id))
        now = self.engine.now
        if rec is None or not rec.live(now):
            raise NotRegistered(f"{service_name}/{instance_id}")
        rec.lease_expiry = now + self.lease_duration
        rec.lease.renewed_count += 1
        return rec.lease

    def lookup(self, service_name: str) -> int:
        live = self.instances(service_name)
        if not live:
            raise NotFound(service_name)
        k = self._rr.get(service_name, 0)
        self._rr[service_name] = k + 1
        return live[k % len(live)].endpoint

    def deregister(self, service_name: str, instance_id: str) -> bool:
        rec = self._records.pop((service_name, instance_id), None)
        return rec is not None and rec.status == UP

    def evict_expired(self) -> List[Tuple[str, str]]:
        now = self.engine.now
        evicted = []
        for key, rec in self._records.items():
            if rec.status == UP and rec.lease_expiry <= now:
                rec.status = EXPIRED
                evicted.append(key)
        return evicted

    def instances(self, service_name: str) -> List[ServiceRecord]:
        now = self.engine.now
        return [
            r for r in self._records.values()
            if r.service_name == service_name and r.live(now)
        ]

    def live_keys(self) -> set:
        now = self.engine.now
        return {k for k, r in self._records.items() if r.live(now)}

    def get(self, service_name: str, instance_id: str) -> Optional[ServiceRecord]:
        return self._records.get((service_name, instance_id))

    def records(self) -> List[ServiceRecord]:
        return list(self._records.values())

    def dump(self) -> str:
        """One line per record: ``service_name instance_id endpoint status lease_expiry``."""
        return "".join(
            f"{r.service_name} {r.instance_id} {r.endpoint} {r.status} {r.lease_expiry}\n"
            for r in self._records.values()
        )
