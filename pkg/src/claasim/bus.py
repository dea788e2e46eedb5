"""Per-node environment subsystem.

All cross-layer communication on a node flows through one of these buses: a
store for exported states, a synchronous publish/subscribe channel for
notified events, and an invocation registry for activable services. Every
access is gated by the interaction matrix routing rules, so a layer can only
reach the (layer, CLAA) edges the matrix declares.

One bus per simulated node, driven from the single simulation thread.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .registry import ClaaKind, InteractionMatrix, Layer, Role, may_consume, may_emit


class RoutingViolation(Exception):
    """The layer holds no role that permits this access."""


class KindMismatch(Exception):
    """Operation does not match the descriptor kind (ES/NE/AS)."""


class ChainOrderViolation(Exception):
    """A chained event stage was emitted out of order."""


class NoProvider(Exception):
    """Service invocation with no registered provider."""


class _Sentinel:
    def __init__(self, name: str) -> None:
        self._name = name

    def __repr__(self) -> str:
        return self._name


ABSENT = _Sentinel("ABSENT")
EXPIRED = _Sentinel("EXPIRED")


@dataclass
class StateEntry:
    claa_id: str
    value: object
    exporter: Layer
    export_time: float
    validity: float | None = None
    # Per-destination states (one record per neighbor) are kept as separate
    # entries keyed by subkey rather than one aggregate value, so freshness
    # is tracked per record.
    subkey: str | None = None

    def fresh(self, now: float) -> bool:
        return self.validity is None or self.export_time + self.validity >= now


@dataclass
class EventRecord:
    claa_id: str
    payload: dict
    emitter: Layer
    emit_time: float
    stage: int | None = None


@dataclass
class _Subscription:
    sub_id: int
    layer: Layer
    claa_id: str
    handler: Callable[[EventRecord], None]


TraceFn = Callable[[float, Layer, str, str], None]


class EnvironmentBus:
    """State store + event channel + service registry for one node."""

    def __init__(
        self,
        matrix: InteractionMatrix,
        node_id: str = "",
        enabled: set[str] | None = None,
        trace: TraceFn | None = None,
    ) -> None:
        self.matrix = matrix
        self.node_id = node_id
        self.enabled = set(matrix.default_enabled_ids()) if enabled is None else set(enabled)
        self.trace = trace
        self._store: dict[tuple[str, Layer, str | None], StateEntry] = {}
        self._subs: list[_Subscription] = []
        self._next_sub_id = 1
        self._providers: dict[str, tuple[Layer, Callable[[dict], object]]] = {}
        self._chain_progress: dict[str, int] = {}

    def is_enabled(self, claa_id: str) -> bool:
        return claa_id in self.enabled

    def _trace(self, now: float, layer: Layer, claa_id: str, verdict: str) -> None:
        if self.trace is not None:
            self.trace(now, layer, claa_id, verdict)

    def _check(self, ok: bool, exc: type[Exception], now: float, layer: Layer, claa_id: str, why: str):
        if not ok:
            self._trace(now, layer, claa_id, f"violation:{exc.__name__}:{why}")
            raise exc(f"{why} ({layer.value}, {claa_id!r})")

    # -- exported states ----------------------------------------------------

    def export_state(
        self,
        layer: Layer,
        claa_id: str,
        value: object,
        now: float,
        validity: float | None = None,
        subkey: str | None = None,
    ) -> StateEntry:
        d = self.matrix.descriptor(claa_id)
        self._check(may_emit(self.matrix, claa_id, layer), RoutingViolation, now, layer, claa_id, "layer may not export")
        self._check(d.kind is ClaaKind.EXPORTED_STATE, KindMismatch, now, layer, claa_id, f"{d.kind.value} is not an exported state")
        if validity is not None and validity <= 0:
            raise ValueError("validity must be > 0")
        entry = StateEntry(claa_id, value, layer, now, validity, subkey)
        self._store[(claa_id, layer, subkey)] = entry
        self._trace(now, layer, claa_id, "export")
        return entry

    def read_state(self, layer: Layer, claa_id: str, now: float, subkey: str | None = None):
        """Latest entry for the CLAA, or ABSENT / EXPIRED. Never mutates."""
        d = self.matrix.descriptor(claa_id)
        self._check(
            any(r.layer is layer and r.role is Role.USER for r in d.roles),
            RoutingViolation, now, layer, claa_id, "layer is not a declared user",
        )
        found = None
        for (cid, _exporter, key), entry in self._store.items():
            if cid == claa_id and key == subkey:
                if found is None or entry.export_time >= found.export_time:
                    found = entry
        if found is None:
            return ABSENT
        if not found.fresh(now):
            return EXPIRED
        return found

    # -- notified events ----------------------------------------------------

    def subscribe(self, layer: Layer, claa_id: str, handler: Callable[[EventRecord], None]) -> int:
        d = self.matrix.descriptor(claa_id)
        self._check(may_consume(self.matrix, claa_id, layer), RoutingViolation, 0.0, layer, claa_id, "layer may not consume")
        self._check(d.kind is ClaaKind.NOTIFIED_EVENT, KindMismatch, 0.0, layer, claa_id, f"{d.kind.value} is not a notified event")
        sub = _Subscription(self._next_sub_id, layer, claa_id, handler)
        self._next_sub_id += 1
        self._subs.append(sub)
        return sub.sub_id

    def unsubscribe(self, sub_id: int) -> None:
        self._subs = [s for s in self._subs if s.sub_id != sub_id]

    def publish_event(self, layer: Layer, claa_id: str, payload: dict, now: float) -> int:
        d = self.matrix.descriptor(claa_id)
        self._check(may_emit(self.matrix, claa_id, layer), RoutingViolation, now, layer, claa_id, "layer may not emit")
        self._check(d.kind is ClaaKind.NOTIFIED_EVENT, KindMismatch, now, layer, claa_id, f"{d.kind.value} is not a notified event")

        stage = None
        if d.is_chained():
            stage = d.source_stage(layer)
            progress = self._chain_progress.get(claa_id, 0)
            if stage is not None and stage > 1 and progress != stage - 1:
                self._check(False, ChainOrderViolation, now, layer, claa_id, f"stage {stage} emitted after stage {progress}")
            self._chain_progress[claa_id] = stage or 0

        record = EventRecord(claa_id, payload, layer, now, stage)
        # Destinations of the emitted stage only, in subscription order.
        targets = [
            s
            for s in self._subs
            if s.claa_id == claa_id
            and any(
                r.layer is s.layer and r.role is Role.DESTINATION and (stage is None or r.stage == stage)
                for r in d.roles
            )
        ]
        self._trace(now, layer, claa_id, f"publish:{len(targets)}" + (f":stage{stage}" if stage else ""))
        for s in targets:
            s.handler(record)
        if stage is not None and stage == d.max_stage():
            self._chain_progress[claa_id] = 0
        return len(targets)

    # -- activable services ---------------------------------------------------

    def register_service(self, layer: Layer, claa_id: str, handler: Callable[[dict], object]) -> None:
        d = self.matrix.descriptor(claa_id)
        self._check(may_emit(self.matrix, claa_id, layer), RoutingViolation, 0.0, layer, claa_id, "layer is not the service source")
        self._check(d.kind is ClaaKind.ACTIVABLE_SERVICE, KindMismatch, 0.0, layer, claa_id, f"{d.kind.value} is not an activable service")
        if claa_id in self._providers:
            raise ValueError(f"provider already registered for {claa_id!r}")
        self._providers[claa_id] = (layer, handler)

    def invoke_service(self, layer: Layer, claa_id: str, params: dict, now: float = 0.0) -> object:
        d = self.matrix.descriptor(claa_id)
        self._check(may_consume(self.matrix, claa_id, layer), RoutingViolation, now, layer, claa_id, "layer may not invoke")
        self._check(d.kind is ClaaKind.ACTIVABLE_SERVICE, KindMismatch, now, layer, claa_id, f"{d.kind.value} is not an activable service")
        if claa_id not in self._providers:
            self._trace(now, layer, claa_id, "violation:NoProvider")
            raise NoProvider(f"no provider for {claa_id!r}")
        self._trace(now, layer, claa_id, "invoke")
        return self._providers[claa_id][1](params)
