"""Simplified proactive link-state routing node.

Covers periodic HELLO emission, link sensing with the timer-based
symmetric/asymmetric/lost state machine, the hysteresis link-quality
strategy, neighbor and 2-hop bookkeeping, MPR selection and signaling,
minimal topology advertisements relayed by MPRs, and shortest-hop route
computation.

The node sources four cross-layer states/events on its environment bus:
table snapshots, per-neighbor link quality, per-neighbor signalization
freshness records, and unavailable-link events when an expiry breaks the
route of a destination with pending traffic.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterable

from . import registry, wire
from .bus import EnvironmentBus
from .registry import Layer
from .wire import HelloMessage, TcMessage


@dataclass
class OlsrConfig:
    hello_interval: float = 2.0
    refresh_interval: float = 2.0
    vtime: float = 6.0  # 3 x HELLO_INTERVAL
    tc_interval: float = 5.0
    topology_hold: float = 15.0  # 3 x TC_INTERVAL
    hello_jitter: float = 0.25
    neighb_hold_margin: float = 2.0  # L_time extension beyond L_ASYM_time
    hysteresis_enabled: bool = True
    hyst_scaling: float = 0.5
    hyst_high: float = 0.8
    hyst_low: float = 0.3
    silence_factor: float = 1.5
    housekeeping_interval: float = 0.5
    ttl: int = 16


@dataclass
class LinkTuple:
    local_iface: str
    neighbor_iface: str
    sym_time: float = -1.0
    asym_time: float = -1.0
    time: float = 0.0  # tuple expiry; >= max(sym_time, asym_time)
    quality: float = 0.0
    pending: bool = True

    def symmetric(self, now: float) -> bool:
        return self.sym_time >= now

    def asymmetric(self, now: float) -> bool:
        return self.sym_time < now <= self.asym_time

    def lost(self, now: float) -> bool:
        return self.sym_time < now and self.asym_time < now

    def usable(self, now: float, hysteresis: bool) -> bool:
        return self.symmetric(now) and (not hysteresis or not self.pending)


@dataclass
class TwoHopTuple:
    neighbor: str
    two_hop: str
    expiry: float


@dataclass
class MprSelectorTuple:
    selector: str
    ms_time: float


@dataclass
class TopologyTuple:
    destination: str
    last_hop: str
    t_time: float


def hysteresis_step(quality: float, received: bool, scaling: float) -> float:
    """One step of the smoothed success-rate recurrence."""
    if received:
        return (1.0 - scaling) * quality + scaling
    return (1.0 - scaling) * quality


Outcome = bool  # True = Received, False = Lost


class OlsrNode:
    LAYER = Layer.OLSR

    def __init__(
        self,
        node_id: str,
        bus: EnvironmentBus,
        scheduler,
        config: OlsrConfig,
        broadcast: Callable[[bytes], None],
        rng: random.Random,
        pending_traffic: Callable[[], set[str]] | None = None,
        counters: dict[str, float] | None = None,
    ) -> None:
        self.node_id = node_id
        self.bus = bus
        self.scheduler = scheduler
        self.cfg = config
        self.broadcast = broadcast
        self.rng = rng
        self.pending_traffic = pending_traffic or (lambda: set())
        self.counters = counters if counters is not None else {}
        self.alive = True

        self.links: dict[str, LinkTuple] = {}  # keyed by neighbor iface address
        self.two_hop: dict[tuple[str, str], TwoHopTuple] = {}
        self.selectors: dict[str, MprSelectorTuple] = {}
        self.topology: dict[tuple[str, str], TopologyTuple] = {}
        self.mprs: set[str] = set()
        self.routes: dict[str, tuple[str, int]] = {}

        self.packet_seq = 0
        self._last_seq: dict[str, int] = {}  # per neighbor, for gap detection
        self._last_rx: dict[str, float] = {}
        self._last_htime: dict[str, float] = {}
        self._silence_charged: dict[str, int] = {}
        self._seen_tc: dict[tuple[str, int], float] = {}
        self._defer_until = 0.0

    def _count(self, name: str, amount: float = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + amount

    # -- lifecycle ------------------------------------------------------------

    def start(self, now: float) -> None:
        self.scheduler.schedule(now + self.rng.uniform(0, self.cfg.hello_jitter), self._hello_tick)
        self.scheduler.schedule(
            now + self.cfg.tc_interval + self.rng.uniform(0, self.cfg.hello_jitter), self._tc_tick
        )
        self.scheduler.schedule(now + self.cfg.housekeeping_interval, self._housekeeping_tick)

    def _hello_tick(self) -> None:
        now = self.scheduler.now
        if not self.alive:
            return
        if now < self._defer_until:
            self.scheduler.schedule(self._defer_until, self._hello_tick)
            return
        self.emit_hello(now)
        jitter = self.rng.uniform(-self.cfg.hello_jitter, self.cfg.hello_jitter)
        self.scheduler.schedule(now + self.cfg.hello_interval + jitter, self._hello_tick)

    def _tc_tick(self) -> None:
        now = self.scheduler.now
        if not self.alive:
            return
        if now < self._defer_until:
            self.scheduler.schedule(self._defer_until, self._tc_tick)
            return
        self.emit_tc(now)
        jitter = self.rng.uniform(-self.cfg.hello_jitter, self.cfg.hello_jitter)
        self.scheduler.schedule(now + self.cfg.tc_interval + jitter, self._tc_tick)

    def _housekeeping_tick(self) -> None:
        now = self.scheduler.now
        if not self.alive:
            return
        self.detect_losses(now)
        self.expire_and_notify(now, self.pending_traffic())
        self.scheduler.schedule(now + self.cfg.housekeeping_interval, self._housekeeping_tick)

    # -- emission ------------------------------------------------------------

    def emit_hello(self, now: float) -> HelloMessage:
        """Broadcast the current neighborhood view; one link code per address."""
        links: dict[str, str] = {}
        for addr, lt in self.links.items():
            if lt.symmetric(now):
                links[addr] = wire.LINK_SYM
            elif lt.asymmetric(now):
                links[addr] = wire.LINK_ASYM
            else:
                links[addr] = wire.LINK_LOST
        self.packet_seq += 1
        msg = HelloMessage(
            originator=self.node_id,
            packet_seq=self.packet_seq,
            htime=self.cfg.hello_interval,
            vtime=self.cfg.vtime,
            links=links,
            mprs=frozenset(self.mprs),
        )
        self.broadcast(wire.wrap_olsr(self.node_id, self.packet_seq, wire.encode_olsr(msg)))
        self._count("hellos_sent")
        return msg

    def emit_tc(self, now: float) -> TcMessage | None:
        """Advertise MPR selectors; nodes nobody selected stay silent."""
        selectors = sorted(self.selectors)
        if not selectors:
            return None
        self.packet_seq += 1
        msg = TcMessage(self.node_id, self.packet_seq, self.cfg.topology_hold, tuple(selectors))
        self.broadcast(wire.wrap_olsr(self.node_id, self.packet_seq, wire.encode_olsr(msg)))
        self._count("tcs_sent")
        return msg

    # -- reception -----------------------------------------------------------

    def on_olsr_packet(self, data: bytes, prev_hop: str, now: float) -> None:
        try:
            transmitter, seq, msg_bytes = wire.unwrap_olsr(data)
            msg = wire.decode_olsr(msg_bytes)
        except (ValueError, IndexError, UnicodeDecodeError):
            self._count("malformed_dropped")
            return
        self._note_sequence(transmitter, seq, now)
        if isinstance(msg, HelloMessage):
            self.on_hello(msg, True, now)
        else:
            self.on_tc(msg, transmitter, now)

    def _note_sequence(self, sender: str, seq: int, now: float) -> None:
        last = self._last_seq.get(sender)
        if last is not None and seq > last + 1:
            for _ in range(seq - last - 1):
                self._apply_hysteresis(sender, False, now)
        if last is None or seq > last:
            self._last_seq[sender] = seq
        self._last_rx[sender] = now
        self._silence_charged[sender] = 0

    def on_hello(self, msg: HelloMessage, receive_success: bool, now: float) -> None:
        """Update link/neighbor/2-hop/selector state from one HELLO."""
        if not receive_success:
            self._apply_hysteresis(msg.originator, False, now)
            return
        origin = msg.originator
        lt = self.links.get(origin)
        if lt is None:
            lt = LinkTuple(local_iface=self.node_id, neighbor_iface=origin)
            self.links[origin] = lt
        lt.asym_time = now + msg.vtime
        listed_code = msg.links.get(self.node_id)
        if listed_code in (wire.LINK_SYM, wire.LINK_ASYM):
            # the sender hears us, so the link is bidirectional
            lt.sym_time = now + msg.vtime
        elif listed_code == wire.LINK_LOST:
            lt.sym_time = now - 1.0
        lt.time = max(lt.time, lt.asym_time + self.cfg.neighb_hold_margin)
        self._last_htime[origin] = msg.htime
        self._apply_hysteresis(origin, True, now)

        for addr, code in msg.links.items():
            if addr == self.node_id:
                continue
            if code == wire.LINK_SYM:
                self.two_hop[(origin, addr)] = TwoHopTuple(origin, addr, now + msg.vtime)
            elif code == wire.LINK_LOST:
                self.two_hop.pop((origin, addr), None)
        if self.node_id in msg.mprs:
            self.selectors[origin] = MprSelectorTuple(origin, now + msg.vtime)

        self._count("hellos_received")
        self._refresh(now)
        self.export_common_signalization(origin, msg, now)

    def on_tc(self, msg: TcMessage, prev_hop: str, now: float) -> None:
        key = (msg.originator, msg.packet_seq)
        if msg.originator == self.node_id or key in self._seen_tc:
            return
        self._seen_tc[key] = now + msg.vtime
        for dest in msg.advertised:
            if dest != self.node_id:
                self.topology[(dest, msg.originator)] = TopologyTuple(dest, msg.originator, now + msg.vtime)
        self._count("tcs_received")
        self._refresh(now)
        # MPR flooding: only nodes the previous hop selected relay onward
        if prev_hop in self.selectors and self.selectors[prev_hop].ms_time >= now:
            self.packet_seq += 1
            self.broadcast(wire.wrap_olsr(self.node_id, self.packet_seq, wire.encode_olsr(msg)))
            self._count("tcs_forwarded")

    # -- hysteresis and loss detection ----------------------------------------

    def _apply_hysteresis(self, neighbor_iface: str, received: Outcome, now: float) -> None:
        lt = self.links.get(neighbor_iface)
        if lt is None or not self.cfg.hysteresis_enabled:
            return
        self.hysteresis_update(lt, received)

    def hysteresis_update(self, lt: LinkTuple, received: Outcome) -> float:
        """Apply one Received/Lost outcome; flips the pending flag at the thresholds."""
        lt.quality = hysteresis_step(lt.quality, received, self.cfg.hyst_scaling)
        if lt.quality >= self.cfg.hyst_high:
            lt.pending = False
        elif lt.quality <= self.cfg.hyst_low:
            lt.pending = True
        return lt.quality

    def set_quality_from_snr(self, neighbor_iface: str, snr_normalized: float) -> None:
        """Channel-measured quality substitute for the smoothed success rate."""
        lt = self.links.get(neighbor_iface)
        if lt is None:
            return
        lt.quality = max(0.0, min(1.0, snr_normalized))
        if lt.quality >= self.cfg.hyst_high:
            lt.pending = False
        elif lt.quality <= self.cfg.hyst_low:
            lt.pending = True

    def detect_losses(self, now: float) -> int:
        """Charge Lost outcomes for neighbors silent past their advertised Htime."""
        charged = 0
        for neighbor, last_rx in self._last_rx.items():
            htime = self._last_htime.get(neighbor)
            if not htime:
                continue
            silence = now - last_rx
            if silence <= self.cfg.silence_factor * htime:
                continue
            due = int(silence / htime)
            already = self._silence_charged.get(neighbor, 0)
            for _ in range(due - already):
                self._apply_hysteresis(neighbor, False, now)
                charged += 1
            self._silence_charged[neighbor] = max(already, due)
        return charged

    # -- table maintenance ------------------------------------------------------

    def symmetric_neighbors(self, now: float) -> list[str]:
        return sorted(
            a for a, lt in self.links.items() if lt.usable(now, self.cfg.hysteresis_enabled)
        )

    def select_mprs(self, now: float) -> set[str]:
        """Greedy cover of the strict 2-hop neighborhood by symmetric neighbors."""
        one_hop = set(self.symmetric_neighbors(now))
        cover_map: dict[str, set[str]] = {n: set() for n in one_hop}
        targets: set[str] = set()
        for (n1, n2), tup in self.two_hop.items():
            if tup.expiry < now or n1 not in one_hop:
                continue
            if n2 == self.node_id or n2 in one_hop:
                continue  # not a strict 2-hop neighbor
            cover_map[n1].add(n2)
            targets.add(n2)

        chosen: set[str] = set()
        covered: set[str] = set()
        # neighbors that are the only path to some 2-hop node come first
        for target in sorted(targets):
            reachers = [n for n in sorted(one_hop) if target in cover_map[n]]
            if len(reachers) == 1:
                chosen.add(reachers[0])
        for n in chosen:
            covered |= cover_map[n]
        while covered != targets:
            remaining = sorted(one_hop - chosen)
            if not remaining:
                break
            best = max(remaining, key=lambda n: len(cover_map[n] - covered))
            if not cover_map[best] - covered:
                break  # uncoverable targets (stale tuples)
            chosen.add(best)
            covered |= cover_map[best]
        return chosen

    def expire_and_notify(self, now: float, pending_traffic: set[str]) -> list[str]:
        """Drop expired tuples; emit unavailable-link events for broken routes."""
        removed: list[str] = []
        for addr in [a for a, lt in self.links.items() if lt.time < now]:
            del self.links[addr]
            self._last_rx.pop(addr, None)
            removed.append(f"link:{addr}")
        for key in [k for k, t in self.two_hop.items() if t.expiry < now]:
            del self.two_hop[key]
            removed.append(f"two_hop:{key[0]}-{key[1]}")
        for sel in [s for s, t in self.selectors.items() if t.ms_time < now]:
            del self.selectors[sel]
            removed.append(f"selector:{sel}")
        for key in [k for k, t in self.topology.items() if t.t_time < now]:
            del self.topology[key]
            removed.append(f"topology:{key[0]}via{key[1]}")
        self._seen_tc = {k: t for k, t in self._seen_tc.items() if t >= now}

        before = set(self.routes)
        self._refresh(now)
        if removed:
            broken = before - set(self.routes)
            for dest in sorted(broken & pending_traffic):
                self._count("unavailable_link_events")
                if self.bus.is_enabled(registry.UNAVAILABLE_LINK):
                    self.bus.publish_event(
                        Layer.OLSR, registry.UNAVAILABLE_LINK, {"destination": dest}, now
                    )
        return removed

    def _refresh(self, now: float) -> None:
        """Recompute MPRs and routes, then re-export the table snapshot."""
        self.mprs = self.select_mprs(now)
        new_routes = self.compute_routes(now)
        if new_routes != self.routes:
            self._count("route_changes")
            self.routes = new_routes
        self.export_superstructures(now)
        self.export_link_status(now)

    def compute_routes(self, now: float) -> dict[str, tuple[str, int]]:
        """Shortest-hop routes over symmetric links plus learned topology."""
        edges: dict[str, set[str]] = {}
        one_hop = self.symmetric_neighbors(now)
        for (n1, n2), tup in self.two_hop.items():
            if tup.expiry >= now:
                edges.setdefault(n1, set()).add(n2)
        for (dest, last_hop), tup in self.topology.items():
            if tup.t_time >= now:
                edges.setdefault(last_hop, set()).add(dest)

        routes: dict[str, tuple[str, int]] = {}
        frontier: list[str] = []
        for n in one_hop:
            routes[n] = (n, 1)
            frontier.append(n)
        hops = 1
        while frontier:
            hops += 1
            nxt: list[str] = []
            for node in frontier:
                for dest in sorted(edges.get(node, ())):
                    if dest == self.node_id or dest in routes:
                        continue
                    routes[dest] = (routes[node][0], hops)
                    nxt.append(dest)
            frontier = nxt
        return routes

    # -- exports ----------------------------------------------------------------

    def export_superstructures(self, now: float) -> None:
        if not self.bus.is_enabled(registry.SUPERSTRUCTURES):
            return
        sym = self.symmetric_neighbors(now)
        snapshot = {
            "sym_neighbors": sym,
            "routes": {d: nh for d, (nh, _h) in sorted(self.routes.items())},
            "reachable": sorted(set(sym) | set(self.routes)),
            "mprs": sorted(self.mprs),
        }
        self.bus.export_state(Layer.OLSR, registry.SUPERSTRUCTURES, snapshot, now)

    def export_link_status(self, now: float) -> None:
        if not self.bus.is_enabled(registry.WIRELESS_LINK_STATUS):
            return
        for addr, lt in self.links.items():
            self.bus.export_state(
                Layer.OLSR,
                registry.WIRELESS_LINK_STATUS,
                {"quality": lt.quality, "pending": lt.pending},
                now,
                subkey=addr,
            )

    def export_common_signalization(self, origin: str, msg: HelloMessage, now: float) -> None:
        if not self.bus.is_enabled(registry.COMMON_SIGNALIZATION):
            return
        self.bus.export_state(
            Layer.OLSR,
            registry.COMMON_SIGNALIZATION,
            {"last_rx": now, "htime": msg.htime, "vtime": msg.vtime},
            now,
            validity=msg.vtime,
            subkey=origin,
        )

    # -- cross-layer consumption ---------------------------------------------

    def wire_claa(self) -> None:
        """Subscribe to the events this layer consumes, per enabled flags."""
        if self.bus.is_enabled(registry.RETRANS_AVOIDANCE):
            self.bus.subscribe(Layer.OLSR, registry.RETRANS_AVOIDANCE, self._on_retrans_avoidance)
        if self.bus.is_enabled(registry.ACKNOWLEDGEMENT):
            self.bus.subscribe(Layer.OLSR, registry.ACKNOWLEDGEMENT, self._on_link_ack)

    def _on_retrans_avoidance(self, record) -> None:
        # saturation below: hold our own periodic emissions for one interval
        duration = record.payload.get("duration", self.cfg.hello_interval)
        self._defer_until = max(self._defer_until, record.emit_time + duration)
        self._count("emission_deferrals")

    def _on_link_ack(self, record) -> None:
        if record.stage != 2:
            return
        now = record.emit_time
        peer = record.payload.get("peer")
        enriched = dict(record.payload)
        lt = self.links.get(peer) if peer else None
        enriched["sym_one_hop"] = bool(
            lt is not None and lt.usable(now, self.cfg.hysteresis_enabled)
        )
        self.bus.publish_event(Layer.OLSR, registry.ACKNOWLEDGEMENT, enriched, now)

    # -- inspection -------------------------------------------------------------

    def dump_tables(self, now: float) -> dict:
        return {
            "node": self.node_id,
            "time": now,
            "links": [
                {
                    "neighbor": a,
                    "sym_time": lt.sym_time,
                    "asym_time": lt.asym_time,
                    "time": lt.time,
                    "quality": round(lt.quality, 6),
                    "pending": lt.pending,
                }
                for a, lt in sorted(self.links.items())
            ],
            "two_hop": [
                {"neighbor": t.neighbor, "two_hop": t.two_hop, "expiry": t.expiry}
                for t in sorted(self.two_hop.values(), key=lambda t: (t.neighbor, t.two_hop))
            ],
            "mprs": sorted(self.mprs),
            "selectors": sorted(self.selectors),
            "topology": [
                {"destination": t.destination, "last_hop": t.last_hop, "t_time": t.t_time}
                for t in sorted(self.topology.values(), key=lambda t: (t.destination, t.last_hop))
            ],
            "routes": {d: {"next_hop": nh, "hops": h} for d, (nh, h) in sorted(self.routes.items())},
        }
