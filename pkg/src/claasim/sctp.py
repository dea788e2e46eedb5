"""Simplified SCTP endpoint.

Implements the four transport functions the experiments measure: transferred
data control (TSN assignment, cwnd gating, rule-of-four fast retransmit),
error correction (retransmit timers with backoff, transport checksum),
congestion control (coarse slow start, halving on loss/ECN, collapse on RTO
expiry), and path management (per-destination error and heartbeat counters,
active/inactive transitions, failover across a multi-homed peer's address
list).

Every exploitation directive of the interaction matrix is wired in
`on_claa`: freeze windows, congestion invocation, anticipated delivery from
link acknowledgements, rate adaptation from channel states, heartbeat
disabling on energy events, checksum skipping, and the FEC/ARQ link
services. With every flag off the endpoint never touches the bus and its
emissions depend on nothing but its own traffic.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from . import registry, wire
from .bus import ABSENT, EXPIRED, EnvironmentBus, EventRecord, StateEntry
from .registry import Layer
from .wire import DataChunk, HeartbeatChunk, SackChunk


class NoActivePath(Exception):
    """All destination addresses of the association are inactive."""


@dataclass
class SctpConfig:
    rto_initial: float = 3.0
    rto_min: float = 1.0
    rto_max: float = 60.0
    srtt_gain: float = 0.125  # smoothing gain for the RTT mean
    rttvar_gain: float = 0.25  # smoothing gain for the RTT deviation
    path_max_retrans: int = 5
    hb_max_unacked: int = 5
    hb_delay: float = 30.0
    mtu: int = 1400
    initial_cwnd_mtus: int = 4
    ssthresh_mtus: int = 16
    consult_retry: float = 0.5
    rss_direct_threshold: float = 0.7
    link_quality_send_threshold: float = 0.3
    loss_ratio_bad: float = 0.2
    loss_ratio_good: float = 0.05
    snr_bad_db: float = 5.0
    snr_good_db: float = 10.0
    adaptation_factor: float = 2.0
    energy_low_fraction: float = 0.25
    initial_tsn: int = 1


class PathStatus(str, Enum):
    ACTIVE = "Active"
    INACTIVE = "Inactive"


@dataclass
class PathState:
    address: str
    rto: float
    status: PathStatus = PathStatus.ACTIVE
    error_count: int = 0
    hb_unacked_count: int = 0
    srtt: float | None = None
    rttvar: float | None = None
    next_hb_time: float = 0.0
    frozen_until: float = 0.0
    rate_scale: float = 1.0
    rto_timer: object | None = None
    hb_timer: object | None = None


@dataclass
class TxRecord:
    tsn: int
    stream_id: int
    payload: bytes
    size: int  # transport packet bytes on the wire
    sent_time: float
    path: str
    retransmitted: bool = False
    miss_reports: int = 0
    link_confirmed: bool = False


@dataclass
class Association:
    peer: str  # peer main address
    remote_addrs: tuple[str, ...]
    paths: list[PathState]
    primary: int = 0
    tsn_next: int = 1
    highest_sent: int = 0
    retransmit_queue: dict[int, TxRecord] = field(default_factory=dict)
    send_buffer: deque = field(default_factory=deque)  # (stream_id, payload)
    cwnd: int = 0
    ssthresh: int = 0
    flight: int = 0
    # receiver state
    cum_tsn: int = 0
    received_above: set[int] = field(default_factory=set)
    reorder: dict[int, tuple[int, bytes]] = field(default_factory=dict)
    unavailable_since: float | None = None
    fec_active: bool = False
    arq_active: bool = False
    drain_timer: object | None = None

    def path_by_addr(self, addr: str) -> PathState | None:
        for p in self.paths:
            if p.address == addr:
                return p
        return None

    def active_path(self) -> PathState | None:
        primary = self.paths[self.primary]
        if primary.status is PathStatus.ACTIVE:
            return primary
        for p in self.paths:
            if p.status is PathStatus.ACTIVE:
                return p
        return None

    def pending(self) -> bool:
        return bool(self.retransmit_queue or self.send_buffer)


class SctpEndpoint:
    LAYER = Layer.SCTP

    def __init__(
        self,
        node_id: str,
        bus: EnvironmentBus,
        scheduler,
        config: SctpConfig,
        send_datagram: Callable[[str, bytes, dict], None],
        deliver_to_app: Callable[[str, int, bytes, float], None],
        counters: dict[str, float] | None = None,
        debug_trace: bool = False,
    ) -> None:
        self.node_id = node_id
        self.bus = bus
        self.scheduler = scheduler
        self.cfg = config
        self.send_datagram = send_datagram
        self.deliver_to_app = deliver_to_app
        self.counters = counters if counters is not None else {}
        self.alive = True
        self.hb_disabled = False
        self.associations: dict[str, Association] = {}
        self._addr_owner: dict[str, str] = {}
        self.detect_times: dict[str, float] = {}  # peer -> unavailability time
        # debug traces for freeze-soundness assertions
        self.debug_trace = debug_trace
        self.emission_log: list[tuple[float, str, str]] = []  # (time, kind, peer)
        self.freeze_log: list[tuple[float, float, str]] = []  # (start, until, peer)

    def _count(self, name: str, amount: float = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + amount

    # -- association lifecycle -------------------------------------------------

    def open_association(self, peer: str, remote_addrs: tuple[str, ...], now: float) -> Association:
        if peer in self.associations:
            return self.associations[peer]
        if not remote_addrs:
            raise ValueError("association needs at least one remote address")
        paths = [PathState(addr, rto=self.cfg.rto_initial) for addr in remote_addrs]
        assoc = Association(
            peer=peer,
            remote_addrs=tuple(remote_addrs),
            paths=paths,
            tsn_next=self.cfg.initial_tsn,
            cwnd=self.cfg.initial_cwnd_mtus * self.cfg.mtu,
            ssthresh=self.cfg.ssthresh_mtus * self.cfg.mtu,
            cum_tsn=self.cfg.initial_tsn - 1,
        )
        self.associations[peer] = assoc
        for addr in remote_addrs:
            self._addr_owner[addr] = peer
        for p in paths:
            self._schedule_heartbeat(assoc, p, now)
        self._maybe_activate_link_services(assoc, now)
        return assoc

    # -- sending ----------------------------------------------------------------

    def send_message(self, peer: str, stream_id: int, payload: bytes, now: float) -> int:
        """Queue one application message; returns packets emitted right away."""
        assoc = self.associations[peer]
        if assoc.active_path() is None:
            self._count("send_failures_no_path")
            raise NoActivePath(f"no active path toward {peer}")
        assoc.send_buffer.append((stream_id, payload))
        return self._drain(assoc, now)

    def _drain(self, assoc: Association, now: float) -> int:
        emitted = 0
        while assoc.send_buffer:
            path = assoc.active_path()
            if path is None:
                break
            stream_id, payload = assoc.send_buffer[0]
            size = len(wire.encode_sctp(DataChunk(0, stream_id, payload)))
            if assoc.flight + size > assoc.cwnd:
                break
            if now < path.frozen_until:
                self._arm_drain_retry(assoc, path.frozen_until)
                break
            if not self._consult_ok(assoc, now):
                self._count("data_deferred")
                self._arm_drain_retry(assoc, now + self.cfg.consult_retry)
                break
            assoc.send_buffer.popleft()
            tsn = assoc.tsn_next
            assoc.tsn_next += 1
            assoc.highest_sent = tsn
            rec = TxRecord(tsn, stream_id, payload, size, now, path.address)
            assoc.retransmit_queue[tsn] = rec
            assoc.flight += size
            self._emit_data(assoc, rec, path, now)
            emitted += 1
        return emitted

    def _arm_drain_retry(self, assoc: Association, when: float) -> None:
        if assoc.drain_timer is not None and not assoc.drain_timer.cancelled:
            return
        def retry() -> None:
            assoc.drain_timer = None
            if self.alive:
                self._drain(assoc, self.scheduler.now)
        assoc.drain_timer = self.scheduler.schedule(when, retry)

    def _emit_data(self, assoc: Association, rec: TxRecord, path: PathState, now: float) -> None:
        packet = self._encode_packet(DataChunk(rec.tsn, rec.stream_id, rec.payload))
        self._count("data_sent")
        self._count("data_bytes_sent", len(rec.payload))
        if self.debug_trace:
            self.emission_log.append((now, "data", assoc.peer))
        self.send_datagram(path.address, packet, {"kind": "data", "tsn": rec.tsn, "peer": assoc.peer})
        self._arm_rto(assoc, path, now)

    def _encode_packet(self, chunk) -> bytes:
        # With the shared-checksum event enabled the link CRC covers the
        # transport bytes, so generation is skipped and the field rides zero.
        if self.bus.is_enabled(registry.COMMON_CHECKSUM):
            return wire.encode_sctp(chunk, with_checksum=False)
        self._count("checksum_operations")
        return wire.encode_sctp(chunk, with_checksum=True)

    def _consult_ok(self, assoc: Association, now: float) -> bool:
        """ConsultBeforeSend: defer on positive evidence the peer is unreachable."""
        peer = assoc.peer
        if self.bus.is_enabled(registry.SUPERSTRUCTURES):
            entry = self.bus.read_state(Layer.SCTP, registry.SUPERSTRUCTURES, now)
            if entry is EXPIRED:
                return False
            if isinstance(entry, StateEntry) and peer not in entry.value.get("reachable", ()):
                return False
        if self.bus.is_enabled(registry.WIRELESS_LINK_STATUS):
            entry = self.bus.read_state(Layer.SCTP, registry.WIRELESS_LINK_STATUS, now, subkey=peer)
            if isinstance(entry, StateEntry) and entry.value.get("quality", 1.0) < self.cfg.link_quality_send_threshold:
                return False
        if self.bus.is_enabled(registry.COMMON_SIGNALIZATION):
            entry = self.bus.read_state(Layer.SCTP, registry.COMMON_SIGNALIZATION, now, subkey=peer)
            if entry is EXPIRED:
                return False
        return True

    # -- inbound ------------------------------------------------------------------

    def on_packet(self, src_addr: str, packet: bytes, now: float, checksum_skipped: bool = False) -> None:
        peer = self._addr_owner.get(src_addr, src_addr)
        assoc = self.associations.get(peer)
        if assoc is None:
            self._count("packets_no_association")
            return
        if checksum_skipped and self.bus.is_enabled(registry.COMMON_CHECKSUM):
            self._count("checksum_verifications_skipped")
        elif assoc.fec_active and self.bus.is_enabled(registry.FEC):
            # link-level error correction stands in for the transport check
            self._count("checksum_verifications_skipped")
        else:
            self._count("checksum_operations")
            if not wire.sctp_checksum_ok(packet):
                self._count("transport_checksum_drops")
                return
        try:
            chunk = wire.decode_sctp(packet)
        except (ValueError, IndexError):
            self._count("malformed_dropped")
            return
        if isinstance(chunk, DataChunk):
            self._on_data(assoc, src_addr, chunk, now)
        elif isinstance(chunk, SackChunk):
            self.on_sack(assoc, chunk, now, src_addr)
        elif chunk.ack:
            self._on_heartbeat_ack(assoc, src_addr, chunk, now)
        else:
            self._on_heartbeat(assoc, src_addr, chunk, now)

    def _on_data(self, assoc: Association, src_addr: str, chunk: DataChunk, now: float) -> None:
        tsn = chunk.tsn
        if tsn <= assoc.cum_tsn or tsn in assoc.received_above:
            # duplicate: the original already arrived, so any retransmission
            # that produced this copy was spurious
            self._count("duplicates_received")
        else:
            assoc.received_above.add(tsn)
            assoc.reorder[tsn] = (chunk.stream_id, chunk.payload)
            while assoc.cum_tsn + 1 in assoc.received_above:
                assoc.cum_tsn += 1
                assoc.received_above.discard(assoc.cum_tsn)
                stream_id, payload = assoc.reorder.pop(assoc.cum_tsn)
                self._count("data_delivered")
                self._count("data_bytes_delivered", len(payload))
                self.deliver_to_app(assoc.peer, stream_id, payload, now)
        self._send_sack(assoc, src_addr, now)

    def _send_sack(self, assoc: Association, dst_addr: str, now: float) -> None:
        gaps: list[tuple[int, int]] = []
        for tsn in sorted(assoc.received_above):
            if gaps and tsn == gaps[-1][1] + 1:
                gaps[-1] = (gaps[-1][0], tsn)
            else:
                gaps.append((tsn, tsn))
        packet = self._encode_packet(SackChunk(assoc.cum_tsn, tuple(gaps[:16])))
        self._count("sacks_sent")
        self.send_datagram(dst_addr, packet, {"kind": "sack", "peer": assoc.peer})

    def on_sack(self, assoc: Association, sack: SackChunk, now: float, src_addr: str) -> None:
        """Cumulative ack, RTT sampling, rule-of-four miss counting."""
        if sack.cumulative_tsn > assoc.highest_sent:
            self._count("sacks_ignored")
            return

        def gap_acked(tsn: int) -> bool:
            return any(start <= tsn <= end for start, end in sack.gap_reports)

        newly = [
            tsn
            for tsn in assoc.retransmit_queue
            if tsn <= sack.cumulative_tsn or gap_acked(tsn)
        ]
        rtt_candidates = [t for t in newly if not assoc.retransmit_queue[t].retransmitted]
        new_cum = any(tsn <= sack.cumulative_tsn for tsn in newly)
        for tsn in newly:
            rec = assoc.retransmit_queue.pop(tsn)
            if not rec.link_confirmed:
                assoc.flight -= rec.size
        if newly:
            path = assoc.path_by_addr(assoc.retransmit_queue[newly[0]].path) if False else None
            # the acknowledgement proves the address the data used is alive
            path = assoc.active_path() or assoc.paths[assoc.primary]
            self._on_ack_evidence(assoc, src_addr, now)
            if rtt_candidates:
                rec_tsn = max(rtt_candidates)
                # measurement is only valid for never-retransmitted data
                sample_rec = None
            # congestion: grow cwnd on new cumulative progress
            if new_cum:
                if assoc.cwnd < assoc.ssthresh:
                    assoc.cwnd += min(self.cfg.mtu, assoc.cwnd)
                else:
                    assoc.cwnd += self.cfg.mtu

        # rule of four: count misses for outstanding TSNs below the highest
        # reported gap that this SACK did not cover
        frozen = self._frozen_now(assoc, now)
        if sack.gap_reports:
            bar = max(end for _s, end in sack.gap_reports)
            halved = False
            for tsn in sorted(assoc.retransmit_queue):
                rec = assoc.retransmit_queue[tsn]
                if tsn >= bar or tsn <= sack.cumulative_tsn or gap_acked(tsn):
                    continue
                rec.miss_reports += 1
                if rec.miss_reports >= 4:
                    rec.miss_reports = 0
                    if not frozen and not (assoc.arq_active and self.bus.is_enabled(registry.ARQ)):
                        self._fast_retransmit(assoc, rec, now)
                        if not halved:
                            self._congestion_halve(assoc)
                            halved = True

        if not assoc.retransmit_queue:
            self._cancel_rto(assoc)
        elif new_cum:
            self._restart_rto(assoc, now)
        self._drain(assoc, now)

    def _on_ack_evidence(self, assoc: Association, src_addr: str, now: float) -> None:
        """Any transport ack from the peer clears error state for its path."""
        path = assoc.path_by_addr(src_addr) or assoc.paths[assoc.primary]
        path.error_count = 0
        if path.status is PathStatus.INACTIVE:
            path.status = PathStatus.ACTIVE
            self._count("path_reactivations")
            if assoc.unavailable_since is not None:
                assoc.unavailable_since = None

    def _fast_retransmit(self, assoc: Association, rec: TxRecord, now: float) -> None:
        path = assoc.active_path()
        if path is None or now < path.frozen_until:
            return
        rec.retransmitted = True
        rec.sent_time = now
        rec.path = path.address
        self._count("retransmissions")
        self._count("fast_retransmissions")
        if self.debug_trace:
            self.emission_log.append((now, "retransmit", assoc.peer))
        packet = self._encode_packet(DataChunk(rec.tsn, rec.stream_id, rec.payload))
        self.send_datagram(path.address, packet, {"kind": "data", "tsn": rec.tsn, "peer": assoc.peer})

    def _congestion_halve(self, assoc: Association) -> None:
        assoc.cwnd = max(assoc.cwnd // 2, self.cfg.mtu)
        assoc.ssthresh = assoc.cwnd
        self._count("congestion_halvings")

    # -- RTT / RTO ---------------------------------------------------------------

    def _update_rto(self, path: PathState, sample: float) -> None:
        if path.srtt is None:
            path.srtt = sample
            path.rttvar = sample / 2.0
        else:
            path.rttvar = (1 - self.cfg.rttvar_gain) * path.rttvar + self.cfg.rttvar_gain * abs(
                path.srtt - sample
            )
            path.srtt = (1 - self.cfg.srtt_gain) * path.srtt + self.cfg.srtt_gain * sample
        path.rto = min(max(path.srtt + 4 * path.rttvar, self.cfg.rto_min), self.cfg.rto_max)

    def _arm_rto(self, assoc: Association, path: PathState, now: float) -> None:
        if path.rto_timer is not None and not path.rto_timer.cancelled:
            return
        path.rto_timer = self.scheduler.schedule(
            now + path.rto * path.rate_scale, lambda: self.on_rto_expiry(assoc, path)
        )

    def _restart_rto(self, assoc: Association, now: float) -> None:
        path = assoc.active_path()
        if path is None:
            return
        self._cancel_rto(assoc)
        path.rto_timer = self.scheduler.schedule(
            now + path.rto * path.rate_scale, lambda: self.on_rto_expiry(assoc, path)
        )

    def _cancel_rto(self, assoc: Association) -> None:
        for p in assoc.paths:
            if p.rto_timer is not None:
                p.rto_timer.cancel()
                p.rto_timer = None

    def on_rto_expiry(self, assoc: Association, path: PathState) -> None:
        now = self.scheduler.now
        path.rto_timer = None
        if not self.alive or not assoc.retransmit_queue:
            return
        if now < path.frozen_until:
            # freeze window: reschedule, no retransmission, no counter change
            self._count("rto_deferrals_frozen")
            path.rto_timer = self.scheduler.schedule(
                path.frozen_until, lambda: self.on_rto_expiry(assoc, path)
            )
            return
        if assoc.arq_active and self.bus.is_enabled(registry.ARQ):
            # link-layer retransmission owns error recovery for this peer
            path.rto_timer = self.scheduler.schedule(
                now + path.rto, lambda: self.on_rto_expiry(assoc, path)
            )
            return
        self._count("rto_expiries")
        oldest = min(assoc.retransmit_queue)
        rec = assoc.retransmit_queue[oldest]
        send_path = assoc.active_path() or path
        rec.retransmitted = True
        rec.sent_time = now
        rec.path = send_path.address
        self._count("retransmissions")
        if self.debug_trace:
            self.emission_log.append((now, "retransmit", assoc.peer))
        packet = self._encode_packet(DataChunk(rec.tsn, rec.stream_id, rec.payload))
        self.send_datagram(send_path.address, packet, {"kind": "data", "tsn": rec.tsn, "peer": assoc.peer})

        old_cwnd = assoc.cwnd
        assoc.cwnd = self.cfg.mtu
        assoc.ssthresh = max(old_cwnd // 2, 2 * self.cfg.mtu)
        path.rto = min(path.rto * 2, self.cfg.rto_max)
        if path.error_count <= self.cfg.path_max_retrans:
            path.error_count += 1
        if path.error_count > self.cfg.path_max_retrans:
            self.mark_path_inactive(assoc, path, now)
        if assoc.retransmit_queue:
            nxt = assoc.active_path() or path
            nxt.rto_timer = self.scheduler.schedule(
                now + nxt.rto * nxt.rate_scale, lambda: self.on_rto_expiry(assoc, nxt)
            )

    # -- path management ------------------------------------------------------------

    def mark_path_inactive(self, assoc: Association, path: PathState, now: float) -> None:
        if path.status is PathStatus.INACTIVE:
            return
        path.status = PathStatus.INACTIVE
        alternate = assoc.active_path()
        if alternate is not None:
            self._count("path_failovers")
            assoc.primary = assoc.paths.index(alternate)
            # outstanding data moves to the surviving address
            for tsn in sorted(assoc.retransmit_queue):
                rec = assoc.retransmit_queue[tsn]
                if rec.path == path.address:
                    rec.path = alternate.address
                    rec.retransmitted = True
                    rec.sent_time = now
                    self._count("retransmissions")
                    packet = self._encode_packet(DataChunk(rec.tsn, rec.stream_id, rec.payload))
                    self.send_datagram(
                        alternate.address, packet, {"kind": "data", "tsn": rec.tsn, "peer": assoc.peer}
                    )
            if assoc.retransmit_queue:
                self._restart_rto(assoc, now)
            return
        # no alternate: the peer node is unreachable
        if assoc.unavailable_since is None:
            assoc.unavailable_since = now
            self.detect_times[assoc.peer] = now
            self._count("unavailability_detections")
            if self.bus.is_enabled(registry.NODE_UNAVAILABLE):
                self.bus.publish_event(
                    Layer.SCTP, registry.NODE_UNAVAILABLE, {"peer": assoc.peer, "time": now}, now
                )

    # -- heartbeats -------------------------------------------------------------------

    def _hb_period(self, path: PathState) -> float:
        return (path.rto + self.cfg.hb_delay) * path.rate_scale

    def _schedule_heartbeat(self, assoc: Association, path: PathState, now: float) -> None:
        path.next_hb_time = now + self._hb_period(path)
        path.hb_timer = self.scheduler.schedule(
            path.next_hb_time, lambda: self.heartbeat_tick(assoc, path)
        )

    def heartbeat_tick(self, assoc: Association, path: PathState) -> int:
        """Emit one heartbeat unless a suppression source applies."""
        now = self.scheduler.now
        if not self.alive:
            return 0
        self._update_adaptation(assoc, path, now)
        emitted = 0
        if self._hb_suppressed(assoc, path, now):
            self._count("heartbeats_suppressed")
        else:
            self._count("heartbeats_sent")
            path.hb_unacked_count += 1
            if self.debug_trace:
                self.emission_log.append((now, "heartbeat", assoc.peer))
            packet = self._encode_packet(HeartbeatChunk(path.address, now))
            self.send_datagram(path.address, packet, {"kind": "heartbeat", "peer": assoc.peer})
            emitted = 1
            if path.hb_unacked_count >= self.cfg.hb_max_unacked and path.status is PathStatus.ACTIVE:
                self.mark_path_inactive(assoc, path, now)
        self._schedule_heartbeat(assoc, path, now)
        return emitted

    def _hb_suppressed(self, assoc: Association, path: PathState, now: float) -> bool:
        if self.hb_disabled:
            return True
        if now < path.frozen_until:
            return True
        if self.bus.is_enabled(registry.COMMON_SIGNALIZATION):
            entry = self.bus.read_state(Layer.SCTP, registry.COMMON_SIGNALIZATION, now, subkey=assoc.peer)
            if isinstance(entry, StateEntry):
                # a fresh HELLO already proves the destination is alive
                return True
        return False

    def _on_heartbeat(self, assoc: Association, src_addr: str, chunk: HeartbeatChunk, now: float) -> None:
        self._count("heartbeats_received")
        packet = self._encode_packet(HeartbeatChunk(chunk.path_addr, chunk.sent_time, ack=True))
        self.send_datagram(src_addr, packet, {"kind": "heartbeat_ack", "peer": assoc.peer})

    def _on_heartbeat_ack(self, assoc: Association, src_addr: str, chunk: HeartbeatChunk, now: float) -> None:
        path = assoc.path_by_addr(chunk.path_addr) or assoc.path_by_addr(src_addr)
        if path is None:
            return
        path.hb_unacked_count = 0
        self._update_rto(path, max(now - chunk.sent_time, 1e-6))
        self._on_ack_evidence(assoc, path.address, now)

    # -- adaptation from exported channel states ------------------------------------

    def _update_adaptation(self, assoc: Association, path: PathState, now: float) -> None:
        bad = None
        if self.bus.is_enabled(registry.PACKET_LOSS_RATIO):
            entry = self.bus.read_state(Layer.SCTP, registry.PACKET_LOSS_RATIO, now, subkey=assoc.peer)
            if isinstance(entry, StateEntry):
                ratio = float(entry.value)
                if ratio >= self.cfg.loss_ratio_bad:
                    bad = True
                elif ratio <= self.cfg.loss_ratio_good:
                    bad = False
        if self.bus.is_enabled(registry.SNR):
            entry = self.bus.read_state(Layer.SCTP, registry.SNR, now, subkey=assoc.peer)
            if isinstance(entry, StateEntry):
                snr = float(entry.value)
                if snr <= self.cfg.snr_bad_db:
                    bad = True
                elif snr >= self.cfg.snr_good_db and bad is None:
                    bad = False
        if self.bus.is_enabled(registry.BER):
            entry = self.bus.read_state(Layer.SCTP, registry.BER, now, subkey=assoc.peer)
            if isinstance(entry, StateEntry):
                ber = float(entry.value)
                if ber >= self.cfg.loss_ratio_bad / 100.0:
                    bad = True
        if self.bus.is_enabled(registry.ENERGY_LEVEL):
            entry = self.bus.read_state(Layer.SCTP, registry.ENERGY_LEVEL, now)
            if isinstance(entry, StateEntry) and float(entry.value) < self.cfg.energy_low_fraction:
                self.hb_disabled = True
        if bad is True and path.rate_scale == 1.0:
            path.rate_scale = self.cfg.adaptation_factor
            self._count("rate_adaptations")
        elif bad is False and path.rate_scale != 1.0:
            path.rate_scale = 1.0
            self._count("rate_adaptations")

    # -- CLAA dispatch ------------------------------------------------------------------

    def wire_claa(self) -> None:
        """Subscribe to every enabled event this layer consumes."""
        handlers = {
            registry.JITTER: self.on_claa,
            registry.RETRANS_AVOIDANCE: self.on_claa,
            registry.UNAVAILABLE_LINK: self.on_claa,
            registry.EXPLICIT_CONGESTION: self.on_claa,
            registry.ENERGY_DECREASE: self.on_claa,
            registry.ACKNOWLEDGEMENT: self.on_claa,
            registry.COMMON_CHECKSUM: self.on_claa,
            registry.EXPLICIT_LOSS: self.on_claa,
        }
        for claa_id, handler in handlers.items():
            if self.bus.is_enabled(claa_id):
                self.bus.subscribe(Layer.SCTP, claa_id, handler)

    def on_claa(self, record: EventRecord) -> None:
        """Apply the exploitation directive for one delivered event."""
        now = record.emit_time
        claa = record.claa_id
        if claa in (registry.JITTER, registry.RETRANS_AVOIDANCE):
            duration = record.payload.get("duration") or record.payload.get("excess_delay")
            self._freeze(record.payload.get("peer"), duration, now)
        elif claa == registry.UNAVAILABLE_LINK:
            self._on_unavailable_link(record.payload.get("destination"), now)
        elif claa == registry.EXPLICIT_CONGESTION:
            peer = record.payload.get("peer")
            for assoc in self._assocs_for(peer):
                self._congestion_halve(assoc)
                self._count("ecn_reactions")
        elif claa == registry.ENERGY_DECREASE:
            self.hb_disabled = True
            for assoc in self.associations.values():
                assoc.cwnd = max(assoc.cwnd // 2, self.cfg.mtu)
            self._count("energy_reactions")
        elif claa == registry.ACKNOWLEDGEMENT:
            if record.stage == 3:
                self._on_link_ack(record, now)
        elif claa == registry.COMMON_CHECKSUM:
            self._count("checksum_marks_seen")
        elif claa == registry.EXPLICIT_LOSS:
            self._on_explicit_loss(record.payload.get("peer"), now)
        else:
            self._count("unknown_claa_events")

    def _assocs_for(self, peer: str | None) -> list[Association]:
        if peer is None:
            return list(self.associations.values())
        owner = self._addr_owner.get(peer, peer)
        assoc = self.associations.get(owner)
        return [assoc] if assoc is not None else []

    def _freeze(self, peer: str | None, duration: float | None, now: float) -> None:
        """Open a freeze window: no emissions, no counter increments, no
        congestion reaction for the destination until it closes."""
        for assoc in self._assocs_for(peer):
            for path in assoc.paths:
                window = duration if duration else path.rto
                until = max(path.frozen_until, now + window)
                path.frozen_until = until
                self.freeze_log.append((now, until, assoc.peer))
                # reset the retransmission timer to fire after the window,
                # without backoff and without touching the error counter
                if path.rto_timer is not None:
                    path.rto_timer.cancel()
                if assoc.retransmit_queue:
                    path.rto_timer = self.scheduler.schedule(
                        max(until, now + path.rto), lambda a=assoc, p=path: self.on_rto_expiry(a, p)
                    )
            self._count("freeze_windows")

    def _frozen_now(self, assoc: Association, now: float) -> bool:
        return any(now < p.frozen_until for p in assoc.paths)

    def _on_unavailable_link(self, destination: str | None, now: float) -> None:
        """Routing lost the destination: freeze the burn, update reachability."""
        for assoc in self._assocs_for(destination):
            if not assoc.pending():
                continue
            primary = assoc.paths[assoc.primary]
            self._freeze(assoc.peer, None, now)
            self.mark_path_inactive(assoc, primary, now)

    def _on_link_ack(self, record: EventRecord, now: float) -> None:
        meta = record.payload.get("meta") or {}
        if meta.get("kind") != "data":
            return
        peer = meta.get("peer")
        assoc = self.associations.get(peer) if peer else None
        if assoc is None:
            return
        if not record.payload.get("sym_one_hop"):
            return
        if not self._rss_direct(record.payload, now):
            return
        rec = assoc.retransmit_queue.get(meta.get("tsn"))
        if rec is not None and not rec.link_confirmed:
            # anticipated delivery: release the window before the SACK lands
            rec.link_confirmed = True
            assoc.flight -= rec.size
            self._count("anticipated_releases")
            self._drain(assoc, now)

    def _rss_direct(self, payload: dict, now: float) -> bool:
        if self.bus.is_enabled(registry.RSS):
            peer = payload.get("peer")
            entry = self.bus.read_state(Layer.SCTP, registry.RSS, now, subkey=peer)
            if isinstance(entry, StateEntry):
                return float(entry.value) >= self.cfg.rss_direct_threshold
        rss = payload.get("rss")
        return rss is not None and rss >= self.cfg.rss_direct_threshold

    def _on_explicit_loss(self, peer: str | None, now: float) -> None:
        """Loss that is not congestion: retransmit without backoff or halving."""
        for assoc in self._assocs_for(peer):
            if not assoc.retransmit_queue:
                continue
            path = assoc.active_path()
            if path is None or now < path.frozen_until:
                continue
            oldest = min(assoc.retransmit_queue)
            rec = assoc.retransmit_queue[oldest]
            rec.retransmitted = True
            rec.sent_time = now
            self._count("retransmissions")
            self._count("eln_retransmissions")
            packet = self._encode_packet(DataChunk(rec.tsn, rec.stream_id, rec.payload))
            self.send_datagram(path.address, packet, {"kind": "data", "tsn": rec.tsn, "peer": assoc.peer})

    # -- link services ---------------------------------------------------------------

    def _maybe_activate_link_services(self, assoc: Association, now: float) -> None:
        if not (self.bus.is_enabled(registry.FEC) or self.bus.is_enabled(registry.ARQ)):
            return
        entry = None
        if self.bus.is_enabled(registry.SUPERSTRUCTURES):
            entry = self.bus.read_state(Layer.SCTP, registry.SUPERSTRUCTURES, now)
        direct = isinstance(entry, StateEntry) and assoc.peer in entry.value.get("sym_neighbors", ())
        if not direct:
            # без routing evidence, a configured single-hop address list counts
            direct = len(assoc.remote_addrs) >= 1 and self.bus.is_enabled(registry.SUPERSTRUCTURES) is False
        if self.bus.is_enabled(registry.FEC) and not assoc.fec_active and direct:
            try:
                self.bus.invoke_service(Layer.SCTP, registry.FEC, {"peer": assoc.peer, "enable": True}, now)
                assoc.fec_active = True
                self._count("fec_activations")
            except Exception:
                pass
        if self.bus.is_enabled(registry.ARQ) and not assoc.arq_active and direct:
            try:
                self.bus.invoke_service(Layer.SCTP, registry.ARQ, {"peer": assoc.peer, "enable": True}, now)
                assoc.arq_active = True
                self._count("arq_activations")
            except Exception:
                pass

    # -- introspection -----------------------------------------------------------------

    def pending_peers(self) -> set[str]:
        return {peer for peer, a in self.associations.items() if a.pending()}
