"""Cross-layer atomic action (CLAA) registry.

A CLAA is one named cross-layer interaction: an activable service another
layer may invoke, an exported state another layer may read, or a notified
event pushed to consumers. This module encodes the full interaction matrix
for the six-layer SCTP/OLSR/802.11 stack as validated data, and answers the
routing questions the environment bus needs ("who may publish X, who may
consume X").

The matrix is data, not code: it round-trips through a documented JSON form
so alternative stacks can be described without touching the simulator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum


class Layer(str, Enum):
    """The six layers of the modeled stack."""

    APPLICATION = "Application"
    SCTP = "Sctp"
    OLSR = "Olsr"
    IP = "Ip"
    LINK = "Link"
    PHYSICAL = "Physical"


class ClaaKind(str, Enum):
    ACTIVABLE_SERVICE = "ActivableService"
    EXPORTED_STATE = "ExportedState"
    NOTIFIED_EVENT = "NotifiedEvent"


class Role(str, Enum):
    SOURCE = "Source"
    DESTINATION = "Destination"
    USER = "User"


class SctpFunction(str, Enum):
    """Transport functions a CLAA binds to."""

    TRANSFERRED_DATA_CONTROL = "TransferredDataControl"
    ERROR_CORRECTION = "ErrorCorrection"
    CONGESTION_CONTROL = "CongestionControl"
    PATH_MANAGEMENT = "PathManagement"


class Directive(str, Enum):
    """Normalized exploitation action the transport applies for a CLAA."""

    FREEZE_TIMERS = "FreezeTimers"
    RESET_SACK_TIMER_NO_BACKOFF = "ResetSackTimerNoBackoff"
    UPDATE_REACHABILITY = "UpdateReachability"
    ANTICIPATE_SEND = "AnticipateSend"
    INVOKE_CONGESTION_CONTROL = "InvokeCongestionControl"
    CONSULT_BEFORE_SEND = "ConsultBeforeSend"
    ADAPT_RATES = "AdaptRates"
    DISABLE_HEARTBEATS = "DisableHeartbeats"
    SKIP_CHECKSUM = "SkipChecksum"
    SKIP_ERROR_CORRECTION = "SkipErrorCorrection"
    USE_LINK_ACK = "UseLinkAck"


# Canonical descriptor ids, importable so the rest of the stack never
# spells them ad hoc.
NODE_UNAVAILABLE = "Node unavailable NE"
JITTER = "Jitter of sent packets NE"
RETRANS_AVOIDANCE = "Retransmission avoidance NE"
ACKNOWLEDGEMENT = "Acknowledgement NE"
EXPLICIT_CONGESTION = "Explicit Congestion NE"
ENERGY_DECREASE = "Significant energy decrease NE"
UNAVAILABLE_LINK = "Unavailable link NE"
SUPERSTRUCTURES = "Superstructures ES"
WIRELESS_LINK_STATUS = "Wireless link status ES"
COMMON_SIGNALIZATION = "Common Signalization ES"
PACKET_LOSS_RATIO = "Packet loss ratio ES"
SNR = "SNR ES"
RSS = "RSS ES"
BER = "BER ES"
ENERGY_LEVEL = "Energy level ES"
FEC = "FEC AS"
COMMON_CHECKSUM = "Common Checksum Calculus NE"
ARQ = "ARQ AS"
EXPLICIT_LOSS = "Explicit Lost Notification NE"


class UnknownClaaError(KeyError):
    """Raised when a CLAA id is not present in the matrix."""


@dataclass(frozen=True)
class RoleEntry:
    """One (layer, role) mark of the interaction matrix.

    stage is set only on chained CLAAs (the acknowledgement chain) and gives
    the position of this mark in the chain. remote flags marks whose source
    lives on a peer node rather than the local stack.
    """

    layer: Layer
    role: Role
    stage: int | None = None
    remote: bool = False


@dataclass(frozen=True)
class ClaaDescriptor:
    id: str
    kind: ClaaKind
    roles: tuple[RoleEntry, ...]
    enabled_by_default: bool = True

    def sources(self) -> tuple[RoleEntry, ...]:
        return tuple(r for r in self.roles if r.role is Role.SOURCE)

    def consumers(self) -> tuple[RoleEntry, ...]:
        return tuple(r for r in self.roles if r.role is not Role.SOURCE)

    def is_chained(self) -> bool:
        return any(r.stage is not None for r in self.roles)

    def max_stage(self) -> int:
        return max((r.stage or 0) for r in self.roles) if self.roles else 0

    def source_stage(self, layer: Layer) -> int | None:
        for r in self.roles:
            if r.role is Role.SOURCE and r.layer is layer:
                return r.stage
        return None


@dataclass(frozen=True)
class Violation:
    descriptor_id: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.descriptor_id}: {self.rule}: {self.message}"


@dataclass(frozen=True)
class InteractionMatrix:
    """Descriptors plus the transport-side bindings and exploitation map."""

    descriptors: tuple[ClaaDescriptor, ...]
    function_bindings: dict[str, frozenset[SctpFunction]] = field(default_factory=dict)
    exploitation_directives: dict[str, Directive] = field(default_factory=dict)

    def ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.descriptors)

    def descriptor(self, claa_id: str) -> ClaaDescriptor:
        for d in self.descriptors:
            if d.id == claa_id:
                return d
        raise UnknownClaaError(f"unknown CLAA: {claa_id!r}")

    def default_enabled_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.descriptors if d.enabled_by_default)


def _src(layer: Layer, stage: int | None = None, remote: bool = False) -> RoleEntry:
    return RoleEntry(layer, Role.SOURCE, stage=stage, remote=remote)


def _dst(layer: Layer, stage: int | None = None) -> RoleEntry:
    return RoleEntry(layer, Role.DESTINATION, stage=stage)


def _usr(layer: Layer) -> RoleEntry:
    return RoleEntry(layer, Role.USER)


_APP = Layer.APPLICATION
_SCTP = Layer.SCTP
_OLSR = Layer.OLSR
_IP = Layer.IP
_LINK = Layer.LINK
_PHY = Layer.PHYSICAL

_F = SctpFunction
_D = Directive


def _builtin_descriptors() -> tuple[ClaaDescriptor, ...]:
    ne = ClaaKind.NOTIFIED_EVENT
    es = ClaaKind.EXPORTED_STATE
    asv = ClaaKind.ACTIVABLE_SERVICE
    return (
        ClaaDescriptor(NODE_UNAVAILABLE, ne, (_dst(_APP), _src(_SCTP))),
        ClaaDescriptor(JITTER, ne, (_dst(_SCTP), _src(_LINK))),
        ClaaDescriptor(RETRANS_AVOIDANCE, ne, (_dst(_SCTP), _dst(_OLSR), _src(_LINK))),
        ClaaDescriptor(
            ACKNOWLEDGEMENT,
            ne,
            (
                _dst(_SCTP, stage=3),
                _dst(_OLSR, stage=2),
                _src(_OLSR, stage=3),
                _dst(_LINK, stage=1),
                _src(_LINK, stage=2),
                _src(_PHY, stage=1),
            ),
        ),
        ClaaDescriptor(EXPLICIT_CONGESTION, ne, (_dst(_SCTP), _src(_IP, remote=True))),
        # The energy-decrease row marks every column as a destination; the
        # physical layer is the only plausible emitter (it owns the battery
        # reading), so it is registered as source and the self-destination
        # mark is dropped.
        ClaaDescriptor(
            ENERGY_DECREASE,
            ne,
            (_dst(_APP), _dst(_SCTP), _dst(_OLSR), _dst(_IP), _dst(_LINK), _src(_PHY)),
        ),
        ClaaDescriptor(UNAVAILABLE_LINK, ne, (_dst(_APP), _dst(_SCTP), _src(_OLSR))),
        ClaaDescriptor(SUPERSTRUCTURES, es, (_usr(_APP), _usr(_SCTP), _src(_OLSR))),
        ClaaDescriptor(WIRELESS_LINK_STATUS, es, (_usr(_APP), _usr(_SCTP), _src(_OLSR))),
        ClaaDescriptor(COMMON_SIGNALIZATION, es, (_usr(_APP), _usr(_SCTP), _src(_OLSR))),
        ClaaDescriptor(PACKET_LOSS_RATIO, es, (_usr(_APP), _usr(_SCTP), _src(_LINK))),
        ClaaDescriptor(SNR, es, (_usr(_APP), _usr(_SCTP), _usr(_LINK), _src(_PHY))),
        ClaaDescriptor(RSS, es, (_usr(_APP), _usr(_SCTP), _usr(_LINK), _src(_PHY))),
        ClaaDescriptor(BER, es, (_usr(_APP), _usr(_SCTP), _usr(_LINK), _src(_PHY))),
        # Energy level is marked U in every column; the physical layer both
        # sources the value and may consult it.
        ClaaDescriptor(
            ENERGY_LEVEL,
            es,
            (
                _usr(_APP),
                _usr(_SCTP),
                _usr(_OLSR),
                _usr(_IP),
                _usr(_LINK),
                _usr(_PHY),
                _src(_PHY),
            ),
        ),
        ClaaDescriptor(FEC, asv, (_usr(_SCTP), _src(_LINK))),
        ClaaDescriptor(COMMON_CHECKSUM, ne, (_dst(_SCTP), _src(_LINK))),
        ClaaDescriptor(ARQ, asv, (_usr(_SCTP), _src(_LINK))),
        # Kept in the census prose but absent from the interaction array;
        # shipped as an optional descriptor so experiments can exercise it.
        ClaaDescriptor(EXPLICIT_LOSS, ne, (_dst(_SCTP), _src(_LINK)), enabled_by_default=False),
    )


_BUILTIN_BINDINGS: dict[str, frozenset[SctpFunction]] = {
    NODE_UNAVAILABLE: frozenset({_F.PATH_MANAGEMENT}),
    JITTER: frozenset({_F.TRANSFERRED_DATA_CONTROL}),
    RETRANS_AVOIDANCE: frozenset({_F.TRANSFERRED_DATA_CONTROL, _F.PATH_MANAGEMENT}),
    ACKNOWLEDGEMENT: frozenset({_F.TRANSFERRED_DATA_CONTROL}),
    EXPLICIT_CONGESTION: frozenset({_F.CONGESTION_CONTROL}),
    ENERGY_DECREASE: frozenset({_F.TRANSFERRED_DATA_CONTROL}),
    UNAVAILABLE_LINK: frozenset({_F.TRANSFERRED_DATA_CONTROL, _F.PATH_MANAGEMENT}),
    SUPERSTRUCTURES: frozenset({_F.TRANSFERRED_DATA_CONTROL, _F.PATH_MANAGEMENT}),
    WIRELESS_LINK_STATUS: frozenset({_F.TRANSFERRED_DATA_CONTROL, _F.PATH_MANAGEMENT}),
    COMMON_SIGNALIZATION: frozenset({_F.PATH_MANAGEMENT}),
    PACKET_LOSS_RATIO: frozenset({_F.TRANSFERRED_DATA_CONTROL}),
    SNR: frozenset({_F.TRANSFERRED_DATA_CONTROL}),
    RSS: frozenset({_F.TRANSFERRED_DATA_CONTROL}),
    BER: frozenset({_F.TRANSFERRED_DATA_CONTROL}),
    ENERGY_LEVEL: frozenset({_F.TRANSFERRED_DATA_CONTROL, _F.PATH_MANAGEMENT}),
    FEC: frozenset({_F.ERROR_CORRECTION}),
    COMMON_CHECKSUM: frozenset({_F.ERROR_CORRECTION}),
    ARQ: frozenset({_F.ERROR_CORRECTION}),
    EXPLICIT_LOSS: frozenset({_F.TRANSFERRED_DATA_CONTROL}),
}

_BUILTIN_DIRECTIVES: dict[str, Directive] = {
    NODE_UNAVAILABLE: _D.UPDATE_REACHABILITY,
    JITTER: _D.FREEZE_TIMERS,
    RETRANS_AVOIDANCE: _D.RESET_SACK_TIMER_NO_BACKOFF,
    ACKNOWLEDGEMENT: _D.ANTICIPATE_SEND,
    EXPLICIT_CONGESTION: _D.INVOKE_CONGESTION_CONTROL,
    ENERGY_DECREASE: _D.DISABLE_HEARTBEATS,
    UNAVAILABLE_LINK: _D.FREEZE_TIMERS,
    SUPERSTRUCTURES: _D.CONSULT_BEFORE_SEND,
    WIRELESS_LINK_STATUS: _D.CONSULT_BEFORE_SEND,
    COMMON_SIGNALIZATION: _D.CONSULT_BEFORE_SEND,
    PACKET_LOSS_RATIO: _D.ADAPT_RATES,
    SNR: _D.ADAPT_RATES,
    RSS: _D.USE_LINK_ACK,
    BER: _D.ADAPT_RATES,
    ENERGY_LEVEL: _D.DISABLE_HEARTBEATS,
    FEC: _D.SKIP_CHECKSUM,
    COMMON_CHECKSUM: _D.SKIP_CHECKSUM,
    ARQ: _D.SKIP_ERROR_CORRECTION,
    EXPLICIT_LOSS: _D.RESET_SACK_TIMER_NO_BACKOFF,
}


def load_builtin_matrix() -> InteractionMatrix:
    """Return the built-in interaction matrix for the six-layer stack."""
    return InteractionMatrix(
        descriptors=_builtin_descriptors(),
        function_bindings=dict(_BUILTIN_BINDINGS),
        exploitation_directives=dict(_BUILTIN_DIRECTIVES),
    )


def may_emit(matrix: InteractionMatrix, claa_id: str, layer: Layer) -> bool:
    """True iff layer holds a Source role for the CLAA."""
    d = matrix.descriptor(claa_id)
    return any(r.layer is layer for r in d.sources())


def may_consume(matrix: InteractionMatrix, claa_id: str, layer: Layer) -> bool:
    """True iff layer holds a Destination or User role for the CLAA."""
    d = matrix.descriptor(claa_id)
    return any(r.layer is layer for r in d.consumers())


def validate(matrix: InteractionMatrix) -> list[Violation]:
    """Check every matrix invariant; returns violations instead of raising."""
    out: list[Violation] = []
    seen: set[str] = set()
    for d in matrix.descriptors:
        if d.id in seen:
            out.append(Violation(d.id, "duplicate id", "descriptor id appears more than once"))
        seen.add(d.id)

        if not d.sources():
            out.append(Violation(d.id, "missing source", "no layer holds a Source role"))
        if not d.consumers():
            out.append(Violation(d.id, "missing consumer", "no Destination or User role"))

        kinds_wanted = Role.DESTINATION if d.kind is ClaaKind.NOTIFIED_EVENT else Role.USER
        if d.consumers() and not any(r.role is kinds_wanted for r in d.roles):
            out.append(
                Violation(
                    d.id,
                    "consumer kind mismatch",
                    f"{d.kind.value} descriptors need a {kinds_wanted.value} consumer",
                )
            )

        if d.is_chained():
            src_stages = sorted(r.stage or 0 for r in d.sources())
            if src_stages != list(range(1, len(src_stages) + 1)):
                out.append(
                    Violation(d.id, "broken chain", f"source stages {src_stages} are not 1..k")
                )
            top = d.max_stage()
            for r in d.roles:
                if r.stage is not None and not 1 <= r.stage <= top:
                    out.append(
                        Violation(d.id, "broken chain", f"stage {r.stage} outside 1..{top}")
                    )
            if not any(r.role is Role.DESTINATION and r.stage == top for r in d.roles):
                out.append(
                    Violation(d.id, "broken chain", f"no Destination at final stage {top}")
                )

        sctp_roles = [r for r in d.roles if r.layer is Layer.SCTP]
        if sctp_roles and not matrix.function_bindings.get(d.id):
            out.append(
                Violation(d.id, "unbound SCTP consumer", "descriptor has an SCTP role but no function binding")
            )
        if any(r.role is not Role.SOURCE for r in sctp_roles) and d.id not in matrix.exploitation_directives:
            out.append(
                Violation(d.id, "missing directive", "SCTP consumes this CLAA but no exploitation directive is mapped")
            )

    for claa_id in list(matrix.function_bindings) + list(matrix.exploitation_directives):
        if claa_id not in seen:
            out.append(Violation(claa_id, "dangling binding", "binding refers to no descriptor"))
    return out


# --- JSON external form ----------------------------------------------------
#
# One object per descriptor:
#   {"id": str, "kind": str,
#    "roles": [{"layer": str, "role": str, "stage": int?, "remote": bool?}],
#    "sctp_functions": [str], "directive": str?,
#    "enabled_by_default": bool}


def matrix_to_jsonable(matrix: InteractionMatrix) -> list[dict]:
    out = []
    for d in matrix.descriptors:
        roles = []
        for r in d.roles:
            entry: dict = {"layer": r.layer.value, "role": r.role.value}
            if r.stage is not None:
                entry["stage"] = r.stage
            if r.remote:
                entry["remote"] = True
            roles.append(entry)
        obj: dict = {
            "id": d.id,
            "kind": d.kind.value,
            "roles": roles,
            "enabled_by_default": d.enabled_by_default,
            "sctp_functions": sorted(f.value for f in matrix.function_bindings.get(d.id, ())),
        }
        directive = matrix.exploitation_directives.get(d.id)
        if directive is not None:
            obj["directive"] = directive.value
        out.append(obj)
    return out


def matrix_from_jsonable(objs: list[dict]) -> InteractionMatrix:
    descriptors = []
    bindings: dict[str, frozenset[SctpFunction]] = {}
    directives: dict[str, Directive] = {}
    for obj in objs:
        roles = tuple(
            RoleEntry(
                layer=Layer(r["layer"]),
                role=Role(r["role"]),
                stage=r.get("stage"),
                remote=bool(r.get("remote", False)),
            )
            for r in obj["roles"]
        )
        descriptors.append(
            ClaaDescriptor(
                id=obj["id"],
                kind=ClaaKind(obj["kind"]),
                roles=roles,
                enabled_by_default=bool(obj.get("enabled_by_default", True)),
            )
        )
        funcs = obj.get("sctp_functions", [])
        if funcs:
            bindings[obj["id"]] = frozenset(SctpFunction(f) for f in funcs)
        if "directive" in obj:
            directives[obj["id"]] = Directive(obj["directive"])
    return InteractionMatrix(tuple(descriptors), bindings, directives)


def dump_matrix(matrix: InteractionMatrix) -> str:
    return json.dumps(matrix_to_jsonable(matrix), indent=2)


def load_matrix(text: str) -> InteractionMatrix:
    return matrix_from_jsonable(json.loads(text))
