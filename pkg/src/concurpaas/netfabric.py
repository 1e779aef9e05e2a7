"""Container network fabric (interface B).

Every container gets exactly one address from a dense, never-reused space.
Messages travel either on a *direct* route (one hop) or through the classical
HTTP-endpoint proxy (sender -> proxy -> receiver, plus proxy processing).

Delivery is at-least-once on the wire and exactly-once to the application:
each attempt arms a retransmission timer, the receiver acks every copy it
sees, and duplicates are filtered by ``msg_id`` before the application
callback runs.  Acks are never dropped.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, IO, List, Optional, Set

from .registry import Registry
from .simcore import MS, Engine, SimEvent

logger = logging.getLogger(__name__)

DIRECT = "Direct"
PROXIED = "Proxied"
MODES = (DIRECT, PROXIED)

READING = "Reading"
ALERT = "Alert"
REPROGRAM = "Reprogram"
ACK = "Ack"
CUSTOM = "Custom"
KINDS = (READING, ALERT, REPROGRAM, ACK, CUSTOM)

SAMPLE_CSV_HEADER = ["msg_id", "mode", "sent_at_us", "delivered_at_us", "one_way_us"]


class FabricError(Exception):
    pass


class AlreadyAllocated(FabricError):
    pass


class UnknownAddress(FabricError):
    pass


class UnknownChannel(FabricError):
    pass


@dataclass(frozen=True)
class FabricConfig:
    d_hop: int = 5 * MS
    d_proxy: int = 2 * MS
    drop_prob: float = 0.0
    rto: int = 20 * MS
    max_attempts: int = 10

    def __post_init__(self):
        if self.d_hop <= 0:
            raise ValueError("d_hop must be > 0")
        if self.d_proxy < 0:
            raise ValueError("d_proxy must be >= 0")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must be in [0, 1)")
        if self.rto <= 0:
            raise ValueError("rto must be > 0")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class NetMessage:
    msg_id: int
    src: int
    dst: int
    kind: str
    body: bytes
    sent_at: int
    attempt: int = 1
    mode: str = DIRECT
    # sent_at of attempt 1; latency is measured from here
    first_sent_at: int = 0


@dataclass(frozen=True)
class LatencySample:
    msg_id: int
    mode: str
    sent_at: int
    delivered_at: int
    one_way: int


@dataclass
class Channel:
    channel_id: int
    src: int
    dst: int
    mode: str
    service: str


@dataclass
class _Outbound:
    msg: NetMessage
    timer: Optional[int] = None


@dataclass
class FabricStats:
    sent: int = 0
    attempts: int = 0
    dropped: int = 0
    delivered: int = 0
    duplicates: int = 0
    failures: int = 0
    delivered_by_mode: Dict[str, int] = field(default_factory=lambda: {m: 0 for m in MODES})


class Fabric:
    TARGET = "fabric"

    def __init__(self, engine: Engine, config: Optional[FabricConfig] = None,
                 registry: Optional[Registry] = None):
        self.engine = engine
        self.config = config or FabricConfig()
        self.registry = registry
        self.stats = FabricStats()
        # test hook: when set, decides per attempt whether the data copy is lost
        self.drop_filter: Optional[Callable[[NetMessage], bool]] = None
        self._owners: Dict[int, str] = {}
        self._by_container: Dict[str, int] = {}
        self._receivers: Dict[int, Callable[[NetMessage], None]] = {}
        self._failure_handlers: Dict[int, Callable[[NetMessage], None]] = {}
        self._channels: Dict[int, Channel] = {}
        self._outbound: Dict[int, _Outbound] = {}
        self._seen: Dict[int, Set[int]] = {}
        self._samples: List[LatencySample] = []
        self._next_addr = 1
        self._next_msg = 1
        self._next_channel = 1
        engine.register(self.TARGET, self._on_event)

    # -- interfaces ---------------------------------------------------------

    def allocate_interface(self, container_id: str) -> int:
        if container_id in self._by_container:
            raise AlreadyAllocated(container_id)
        addr = self._next_addr
        self._next_addr += 1
        self._owners[addr] = container_id
        self._by_container[container_id] = addr
        return addr

    def is_allocated(self, addr: int) -> bool:
        return addr in self._owners

    def owner(self, addr: int) -> str:
        return self._owners[addr]

    def allocations(self) -> Dict[int, str]:
        return dict(self._owners)

    def attach(self, addr: int, receiver: Callable[[NetMessage], None],
               on_failure: Optional[Callable[[NetMessage], None]] = None) -> None:
        if addr not in self._owners:
            raise UnknownAddress(addr)
        self._receivers[addr] = receiver
        if on_failure is not None:
            self._failure_handlers[addr] = on_failure

    def detach(self, addr: int) -> None:
        self._receivers.pop(addr, None)
        self._failure_handlers.pop(addr, None)

    # -- channels -----------------------------------------------------------

    def open_channel(self, src: int, dst_service: str, mode: str) -> int:
        if src not in self._owners:
            raise UnknownAddress(src)
        if mode not in MODES:
            raise ValueError(f"unknown channel mode {mode!r}")
        if self.registry is None:
            raise FabricError("fabric has no registry attached")
        dst = self.registry.lookup(dst_service)
        cid = self._next_channel
        self._next_channel += 1
        self._channels[cid] = Channel(cid, src, dst, mode, dst_service)
        return cid

    def channel(self, channel_id: int) -> Channel:
        try:
            return self._channels[channel_id]
        except KeyError:
            raise UnknownChannel(channel_id) from None

    def one_way_latency(self, mode: str) -> int:
        if mode == DIRECT:
            return self.config.d_hop
        if mode == PROXIED:
            return 2 * self.config.d_hop + self.config.d_proxy
        raise ValueError(f"unknown channel mode {mode!r}")

    def send(self, channel_id: int, kind: str, body: bytes = b"") -> int:
        ch = self.channel(channel_id)
        return self.transmit(ch.src, ch.dst, kind, body, ch.mode)

    def transmit(self, src: int, dst: int, kind: str, body: bytes, mode: str) -> int:
        """Send one logical message between two allocated addresses."""
        if src not in self._owners:
            raise UnknownAddress(src)
        if dst not in self._owners:
            raise UnknownAddress(dst)
        if kind not in KINDS or kind == ACK:
            raise ValueError(f"cannot send message of kind {kind!r}")
        now = self.engine.now
        msg = NetMessage(self._next_msg, src, dst, kind, bytes(body), now, 1, mode, now)
        self._next_msg += 1
        self.stats.sent += 1
        out = _Outbound(msg)
        self._outbound[msg.msg_id] = out
        self._attempt(out)
        return msg.msg_id

    def _attempt(self, out: _Outbound) -> None:
        msg = out.msg
        self.stats.attempts += 1
        if self.drop_filter is not None:
            lost = self.drop_filter(msg)
        else:
            lost = self.config.drop_prob > 0 and self.engine.rng.random() < self.config.drop_prob
        if lost:
            self.stats.dropped += 1
            self.engine.note(self.TARGET, "Drop")
        else:
            self.engine.try_schedule(self.one_way_latency(msg.mode), self.TARGET, "Deliver", msg)
        out.timer = self.engine.try_schedule(self.config.rto, self.TARGET, "Timeout", msg.msg_id)

    # -- event handling -----------------------------------------------------

    def _on_event(self, ev: SimEvent) -> None:
        if ev.kind == "Deliver":
            self._on_deliver(ev.payload)
        elif ev.kind == "Ack":
            self._on_ack(ev.payload)
        elif ev.kind == "Timeout":
            self._on_timeout(ev.payload)
        elif ev.kind == "DeliveryFailed":
            msg = ev.payload
            handler = self._failure_handlers.get(msg.src)
            if handler is not None:
                handler(msg)

    def _on_deliver(self, msg: NetMessage) -> None:
        self.engine.try_schedule(self.one_way_latency(msg.mode), self.TARGET, "Ack", msg.msg_id)
        seen = self._seen.setdefault(msg.dst, set())
        if msg.msg_id in seen:
            self.stats.duplicates += 1
            return
        seen.add(msg.msg_id)
        now = self.engine.now
        self.stats.delivered += 1
        self.stats.delivered_by_mode[msg.mode] += 1
        self._samples.append(LatencySample(
            msg.msg_id, msg.mode, msg.first_sent_at, now, now - msg.first_sent_at))
        receiver = self._receivers.get(msg.dst)
        if receiver is None:
            self.engine.note(self.TARGET, "DeadLetter")
            return
        receiver(msg)

    def _on_ack(self, msg_id: int) -> None:
        out = self._outbound.pop(msg_id, None)
        if out is not None and out.timer is not None:
            self.engine.cancel(out.timer)

    def _on_timeout(self, msg_id: int) -> None:
        out = self._outbound.get(msg_id)
        if out is None:
            return
        if out.msg.attempt >= self.config.max_attempts:
            del self._outbound[msg_id]
            self.stats.failures += 1
            logger.debug("message %d failed after %d attempts", msg_id, out.msg.attempt)
            self.engine.note(self.TARGET, "DeliveryFailed", out.msg)
            return
        out.msg = replace(out.msg, attempt=out.msg.attempt + 1, sent_at=self.engine.now)
        self._attempt(out)

    # -- samples ------------------------------------------------------------

    def drain_samples(self) -> List[LatencySample]:
        samples, self._samples = self._samples, []
        return samples

    def in_flight(self) -> int:
        return len(self._outbound)


def write_samples_csv(samples: List[LatencySample], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SAMPLE_CSV_HEADER)
    for s in samples:
        w.writerow([s.msg_id, s.mode, s.sent_at, s.delivered_at, s.one_way])
