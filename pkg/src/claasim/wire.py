"""Byte encodings for the simulated stack.

Everything that crosses the channel is real bytes: transport packets carry a
CRC-32c in a fixed header field (computed over the packet with that field
zeroed), and link frames carry a trailing CRC-32c over the whole frame body,
so the link coverage strictly contains the transport coverage.

Encodings are deterministic: set-valued fields are sorted before packing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from . import checksum

ADDR_LEN = 8
BROADCAST = "*"

PROTO_SCTP = 1
PROTO_OLSR = 2


def encode_addr(addr: str) -> bytes:
    raw = addr.encode("utf-8")
    if len(raw) > ADDR_LEN:
        raise ValueError(f"address too long: {addr!r}")
    return raw.ljust(ADDR_LEN, b"\x00")


def decode_addr(raw: bytes) -> str:
    return raw.rstrip(b"\x00").decode("utf-8")


# --- IP datagram -------------------------------------------------------------

_IP_HDR = struct.Struct("!BBB8s8sH")  # proto, ttl, ecn, src, dst, payload len


@dataclass
class IpDatagram:
    proto: int
    src: str
    dst: str
    payload: bytes
    ttl: int = 16
    ecn: bool = False

    def encode(self) -> bytes:
        return _IP_HDR.pack(
            self.proto, self.ttl, 1 if self.ecn else 0,
            encode_addr(self.src), encode_addr(self.dst), len(self.payload),
        ) + self.payload


def decode_ip(data: bytes) -> IpDatagram:
    proto, ttl, ecn, src, dst, plen = _IP_HDR.unpack_from(data)
    payload = data[_IP_HDR.size : _IP_HDR.size + plen]
    if len(payload) != plen:
        raise ValueError("truncated IP datagram")
    return IpDatagram(proto, decode_addr(src), decode_addr(dst), payload, ttl, bool(ecn))


# --- transport chunks ---------------------------------------------------------

CHUNK_DATA = 1
CHUNK_SACK = 2
CHUNK_HEARTBEAT = 3
CHUNK_HEARTBEAT_ACK = 4

_SCTP_HDR = struct.Struct("!BBI")  # chunk type, flags, checksum
SCTP_CHECKSUM_OFFSET = 2

_DATA_HDR = struct.Struct("!IHH")  # tsn, stream id, payload len
_SACK_HDR = struct.Struct("!IB")  # cumulative tsn, gap count
_GAP = struct.Struct("!II")
_HB = struct.Struct("!8sd")  # path address, sent time


@dataclass
class DataChunk:
    tsn: int
    stream_id: int
    payload: bytes

    def body(self) -> bytes:
        return _DATA_HDR.pack(self.tsn, self.stream_id, len(self.payload)) + self.payload


@dataclass
class SackChunk:
    cumulative_tsn: int
    gap_reports: tuple[tuple[int, int], ...] = ()

    def body(self) -> bytes:
        out = _SACK_HDR.pack(self.cumulative_tsn, len(self.gap_reports))
        for start, end in self.gap_reports:
            out += _GAP.pack(start, end)
        return out


@dataclass
class HeartbeatChunk:
    path_addr: str
    sent_time: float
    ack: bool = False

    def body(self) -> bytes:
        return _HB.pack(encode_addr(self.path_addr), self.sent_time)


Chunk = DataChunk | SackChunk | HeartbeatChunk


def encode_sctp(chunk: Chunk, with_checksum: bool = True) -> bytes:
    """Serialize one chunk; checksum is CRC-32c over the field-zeroed packet."""
    if isinstance(chunk, DataChunk):
        ctype = CHUNK_DATA
    elif isinstance(chunk, SackChunk):
        ctype = CHUNK_SACK
    else:
        ctype = CHUNK_HEARTBEAT_ACK if chunk.ack else CHUNK_HEARTBEAT
    body = chunk.body()
    packet = bytearray(_SCTP_HDR.pack(ctype, 0, 0) + body)
    if with_checksum:
        value = checksum.crc32c(bytes(packet))
        packet[SCTP_CHECKSUM_OFFSET : SCTP_CHECKSUM_OFFSET + 4] = value.to_bytes(4, "big")
    return bytes(packet)


def sctp_checksum_ok(packet: bytes) -> bool:
    stored = int.from_bytes(packet[SCTP_CHECKSUM_OFFSET : SCTP_CHECKSUM_OFFSET + 4], "big")
    zeroed = bytearray(packet)
    zeroed[SCTP_CHECKSUM_OFFSET : SCTP_CHECKSUM_OFFSET + 4] = b"\x00\x00\x00\x00"
    return checksum.crc32c(bytes(zeroed)) == stored


def decode_sctp(packet: bytes) -> Chunk:
    ctype, _flags, _stored = _SCTP_HDR.unpack_from(packet)
    body = packet[_SCTP_HDR.size :]
    if ctype == CHUNK_DATA:
        tsn, stream_id, plen = _DATA_HDR.unpack_from(body)
        return DataChunk(tsn, stream_id, body[_DATA_HDR.size : _DATA_HDR.size + plen])
    if ctype == CHUNK_SACK:
        cum, ngaps = _SACK_HDR.unpack_from(body)
        gaps = []
        off = _SACK_HDR.size
        for _ in range(ngaps):
            gaps.append(_GAP.unpack_from(body, off))
            off += _GAP.size
        return SackChunk(cum, tuple(gaps))
    if ctype in (CHUNK_HEARTBEAT, CHUNK_HEARTBEAT_ACK):
        addr, sent = _HB.unpack_from(body)
        return HeartbeatChunk(decode_addr(addr), sent, ack=(ctype == CHUNK_HEARTBEAT_ACK))
    raise ValueError(f"unknown chunk type {ctype}")


# --- routing-protocol messages ------------------------------------------------

MSG_HELLO = 1
MSG_TC = 2

# Packet wrapper: the transmitter-scoped sequence drives loss detection, so
# forwarded messages get a fresh wrapper while keeping their originator seq.
_OLSR_PKT_HDR = struct.Struct("!8sH")  # transmitter iface, packet seq

_OLSR_HDR = struct.Struct("!B8sH")  # msg type, originator, originator msg seq
_HELLO_HDR = struct.Struct("!ffBBBB")  # htime, vtime, n sym, n asym, n lost, n mpr
_TC_HDR = struct.Struct("!fB")  # vtime, advertised count

LINK_SYM = "sym"
LINK_ASYM = "asym"
LINK_LOST = "lost"


@dataclass
class HelloMessage:
    originator: str
    packet_seq: int
    htime: float
    vtime: float
    # each neighbor address appears under exactly one link code
    links: dict[str, str] = field(default_factory=dict)  # addr -> LINK_*
    mprs: frozenset[str] = frozenset()

    def listed(self, code: str) -> list[str]:
        return sorted(a for a, c in self.links.items() if c == code)


@dataclass
class TcMessage:
    originator: str
    packet_seq: int
    vtime: float
    advertised: tuple[str, ...] = ()  # MPR-selector main addresses


OlsrMessage = HelloMessage | TcMessage


def wrap_olsr(transmitter: str, packet_seq: int, msg_bytes: bytes) -> bytes:
    return _OLSR_PKT_HDR.pack(encode_addr(transmitter), packet_seq) + msg_bytes


def unwrap_olsr(data: bytes) -> tuple[str, int, bytes]:
    transmitter, seq = _OLSR_PKT_HDR.unpack_from(data)
    return decode_addr(transmitter), seq, data[_OLSR_PKT_HDR.size :]


def encode_olsr(msg: OlsrMessage) -> bytes:
    if isinstance(msg, HelloMessage):
        sym = msg.listed(LINK_SYM)
        asym = msg.listed(LINK_ASYM)
        lost = msg.listed(LINK_LOST)
        mpr = sorted(msg.mprs)
        out = _OLSR_HDR.pack(MSG_HELLO, encode_addr(msg.originator), msg.packet_seq)
        out += _HELLO_HDR.pack(msg.htime, msg.vtime, len(sym), len(asym), len(lost), len(mpr))
        for addr in sym + asym + lost + mpr:
            out += encode_addr(addr)
        return out
    out = _OLSR_HDR.pack(MSG_TC, encode_addr(msg.originator), msg.packet_seq)
    out += _TC_HDR.pack(msg.vtime, len(msg.advertised))
    for addr in sorted(msg.advertised):
        out += encode_addr(addr)
    return out


def decode_olsr(data: bytes) -> OlsrMessage:
    mtype, orig, seq = _OLSR_HDR.unpack_from(data)
    off = _OLSR_HDR.size
    originator = decode_addr(orig)
    if mtype == MSG_HELLO:
        htime, vtime, n_sym, n_asym, n_lost, n_mpr = _HELLO_HDR.unpack_from(data, off)
        off += _HELLO_HDR.size
        addrs = []
        for _ in range(n_sym + n_asym + n_lost + n_mpr):
            addrs.append(decode_addr(data[off : off + ADDR_LEN]))
            off += ADDR_LEN
        links: dict[str, str] = {}
        i = 0
        for count, code in ((n_sym, LINK_SYM), (n_asym, LINK_ASYM), (n_lost, LINK_LOST)):
            for _ in range(count):
                links[addrs[i]] = code
                i += 1
        mprs = frozenset(addrs[i : i + n_mpr])
        return HelloMessage(originator, seq, htime, vtime, links, mprs)
    if mtype == MSG_TC:
        vtime, count = _TC_HDR.unpack_from(data, off)
        off += _TC_HDR.size
        advertised = []
        for _ in range(count):
            advertised.append(decode_addr(data[off : off + ADDR_LEN]))
            off += ADDR_LEN
        return TcMessage(originator, seq, vtime, tuple(advertised))
    raise ValueError(f"unknown message type {mtype}")


# --- link frame ----------------------------------------------------------------

_FRAME_HDR = struct.Struct("!8s8sBH")  # src iface, dst iface, needs ack, payload len


@dataclass
class Frame:
    src: str
    dst: str  # BROADCAST for broadcast frames
    payload: bytes  # an encoded IP datagram
    needs_ack: bool = False
    meta: dict = field(default_factory=dict)  # sender-side annotations, not on the wire
    frame_id: int = 0
    enqueue_time: float = 0.0
    tx_time: float = 0.0

    @property
    def broadcast(self) -> bool:
        return self.dst == BROADCAST

    def encode(self) -> bytes:
        """Frame body plus trailing link CRC over everything before it."""
        body = _FRAME_HDR.pack(
            encode_addr(self.src), encode_addr(self.dst),
            1 if self.needs_ack else 0, len(self.payload),
        ) + self.payload
        return body + checksum.crc32c(body).to_bytes(4, "big")

    @property
    def size(self) -> int:
        return _FRAME_HDR.size + len(self.payload) + 4


def frame_crc_ok(encoded: bytes) -> bool:
    if len(encoded) < 4:
        return False
    return checksum.crc32c(encoded[:-4]) == int.from_bytes(encoded[-4:], "big")


def decode_frame(encoded: bytes) -> Frame:
    src, dst, needs_ack, plen = _FRAME_HDR.unpack_from(encoded)
    payload = encoded[_FRAME_HDR.size : _FRAME_HDR.size + plen]
    if len(payload) != plen:
        raise ValueError("truncated frame")
    return Frame(decode_addr(src), decode_addr(dst), payload, bool(needs_ack))
