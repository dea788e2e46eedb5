"""Transport and link checksums.

CRC-32c over the transport byte mapping (reflected: the first byte of the
message carries the eight highest polynomial coefficients, and within a byte
the least-significant bit is the most significant coefficient), Adler-32 for
the short-packet weakness demonstration, and the shared link/transport
verification protocol where the link CRC stands in for the transport check.

Two CRC implementations ship on purpose: `crc32c_bitserial` is the
authoritative reference (explicit polynomial long division in normal form
over the transport bit mapping) and `crc32c` is the byte-indexed table
variant used on the hot path. Tests hold the table to the reference.
"""

from __future__ import annotations

import random
import statistics
import zlib
from dataclasses import dataclass
from enum import Enum

CASTAGNOLI_NORMAL = 0x11EDC6F41  # degree-32 generator, normal form
CASTAGNOLI_REFLECTED = 0x82F63B78

ADLER_MODULUS = 65521


class ChecksumAlgorithm(str, Enum):
    CRC32C_REFLECTED = "crc32c"
    ADLER32 = "adler32"


def _reflect32(v: int) -> int:
    out = 0
    for i in range(32):
        if v & (1 << i):
            out |= 1 << (31 - i)
    return out


def crc32c_bitserial(data: bytes) -> int:
    """Reference CRC-32c: polynomial long division, one bit at a time.

    Builds the message polynomial with the transport mapping (byte 0 highest,
    LSB-first within each byte), folds in the all-ones initial register,
    divides by the normal-form generator, and maps the remainder back out
    through the same reflected convention with the final complement.
    """
    bits: list[int] = []
    for byte in data:
        for i in range(8):  # LSB first: least-significant bit is the highest coefficient
            bits.append((byte >> i) & 1)
    n = len(bits)
    num = 0
    for b in bits:
        num = (num << 1) | b
    num <<= 32
    num ^= 0xFFFFFFFF << n  # all-ones initial register
    for pos in range(max(n + 32, 32) - 1, 31, -1):
        if num & (1 << pos):
            num ^= CASTAGNOLI_NORMAL << (pos - 32)
    return _reflect32(num & 0xFFFFFFFF) ^ 0xFFFFFFFF


def _make_table() -> tuple[int, ...]:
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ CASTAGNOLI_REFLECTED if c & 1 else c >> 1
        table.append(c)
    return tuple(table)


_TABLE = _make_table()


def crc32c(data: bytes) -> int:
    """Table-driven CRC-32c over the transport byte mapping."""
    crc = 0xFFFFFFFF
    table = _TABLE
    for byte in data:
        crc = table[(crc ^ byte) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFF


def adler32(data: bytes, value: int = 1) -> int:
    """Adler-32 (two mod-65521 sums, A seeded with 1); incremental via value."""
    return zlib.adler32(data, value) & 0xFFFFFFFF


def checksum(algorithm: ChecksumAlgorithm, data: bytes) -> int:
    if algorithm is ChecksumAlgorithm.CRC32C_REFLECTED:
        return crc32c(data)
    return adler32(data)


# --- short-packet value distribution ----------------------------------------


def chi_square_critical(dof: int, alpha: float) -> float:
    """Upper critical value via the Wilson-Hilferty cube approximation."""
    z = statistics.NormalDist().inv_cdf(1.0 - alpha)
    c = 2.0 / (9.0 * dof)
    return dof * (1.0 - c + z * (c ** 0.5)) ** 3


@dataclass
class DistributionSummary:
    algorithm: ChecksumAlgorithm
    packet_len: int
    sample_count: int
    buckets: list[int]  # 256 equal-width buckets over the 32-bit value space
    chi_square: float
    dof: int
    alpha: float
    critical_value: float

    @property
    def uniform(self) -> bool:
        return self.chi_square <= self.critical_value


def short_packet_distribution(
    algorithm: ChecksumAlgorithm,
    packet_len: int,
    sample_count: int,
    seed: int,
    alpha: float = 1e-3,
) -> DistributionSummary:
    """Histogram checksum values of random packets and test uniformity.

    Buckets are the 256 top-byte classes of the 32-bit value space; the
    chi-square statistic is taken against the uniform expectation.
    """
    if packet_len < 1 or sample_count < 1:
        raise ValueError("packet_len and sample_count must be >= 1")
    rng = random.Random(seed)
    buckets = [0] * 256
    for _ in range(sample_count):
        value = checksum(algorithm, rng.randbytes(packet_len))
        buckets[value >> 24] += 1
    expected = sample_count / 256.0
    chi = sum((n - expected) ** 2 for n in buckets) / expected
    return DistributionSummary(
        algorithm=algorithm,
        packet_len=packet_len,
        sample_count=sample_count,
        buckets=buckets,
        chi_square=chi,
        dof=255,
        alpha=alpha,
        critical_value=chi_square_critical(255, alpha),
    )


# --- shared link/transport verification -------------------------------------


class Verdict(str, Enum):
    BOTH_VALID = "BothValid"
    LINK_VALID_ONLY = "LinkValidOnly"
    INVALID = "Invalid"


class FrameFormatError(ValueError):
    """Coverage descriptors fall outside the frame."""


@dataclass(frozen=True)
class ByteRange:
    offset: int
    length: int

    @property
    def end(self) -> int:
        return self.offset + self.length

    def contains(self, other: "ByteRange") -> bool:
        return self.offset <= other.offset and other.end <= self.end


@dataclass(frozen=True)
class SharedChecksumConfig:
    """Coverage layout for the shared-verification protocol.

    link_coverage is everything the link CRC protects; transport_coverage is
    the transport segment (checksum field zeroed before computing). The link
    coverage must strictly contain the transport coverage, including the
    embedded transport checksum bytes.
    """

    link_coverage: ByteRange
    transport_coverage: ByteRange
    transport_checksum_offset: int  # absolute offset of the 4-byte transport field
    link_crc_offset: int  # absolute offset of the 4-byte link trailer

    def __post_init__(self) -> None:
        if not self.link_coverage.contains(self.transport_coverage):
            raise ValueError("link coverage must contain transport coverage")
        if self.link_coverage.length <= self.transport_coverage.length:
            raise ValueError("link coverage must strictly contain transport coverage")
        t = self.transport_coverage
        if not (t.offset <= self.transport_checksum_offset and self.transport_checksum_offset + 4 <= t.end):
            raise ValueError("transport checksum field must lie inside transport coverage")


def transport_checksum(config: SharedChecksumConfig, frame: bytes) -> int:
    """P_SCTP value: transport coverage with its checksum field zeroed."""
    t = config.transport_coverage
    body = bytearray(frame[t.offset : t.end])
    rel = config.transport_checksum_offset - t.offset
    body[rel : rel + 4] = b"\x00\x00\x00\x00"
    return crc32c(bytes(body))


def link_checksum(config: SharedChecksumConfig, frame: bytes) -> int:
    """P_LL value: full link coverage, including the embedded transport field."""
    c = config.link_coverage
    return crc32c(frame[c.offset : c.end])


def build_shared_frame(link_header: bytes, transport_body: bytes, checksum_offset_in_transport: int) -> tuple[bytes, SharedChecksumConfig]:
    """Assemble header|transport|link-trailer with both checksums filled in."""
    t_off = len(link_header)
    config = SharedChecksumConfig(
        link_coverage=ByteRange(0, t_off + len(transport_body)),
        transport_coverage=ByteRange(t_off, len(transport_body)),
        transport_checksum_offset=t_off + checksum_offset_in_transport,
        link_crc_offset=t_off + len(transport_body),
    )
    frame = bytearray(link_header + transport_body + b"\x00\x00\x00\x00")
    tsum = transport_checksum(config, bytes(frame))
    o = config.transport_checksum_offset
    frame[o : o + 4] = tsum.to_bytes(4, "big")
    lsum = link_checksum(config, bytes(frame))
    frame[config.link_crc_offset : config.link_crc_offset + 4] = lsum.to_bytes(4, "big")
    return bytes(frame), config


def shared_verify(config: SharedChecksumConfig, frame: bytes, cross_check: bool = False) -> Verdict:
    """Verify a frame through the link CRC alone, or cross-check the transport.

    Without cross_check this is the sharing protocol: a passing link CRC is
    reported as BothValid and the transport checksum is never recomputed.
    With cross_check the transport value is recomputed too; a frame the link
    accepts but the transport would reject comes back LinkValidOnly.
    """
    if config.link_crc_offset + 4 > len(frame) or config.link_coverage.end > len(frame):
        raise FrameFormatError("coverage descriptors out of bounds")
    stored_link = int.from_bytes(frame[config.link_crc_offset : config.link_crc_offset + 4], "big")
    if link_checksum(config, frame) != stored_link:
        return Verdict.INVALID
    if cross_check:
        stored_transport = int.from_bytes(
            frame[config.transport_checksum_offset : config.transport_checksum_offset + 4], "big"
        )
        if transport_checksum(config, frame) != stored_transport:
            return Verdict.LINK_VALID_ONLY
    return Verdict.BOTH_VALID


@dataclass
class SharingAgreement:
    samples: int
    invalid: int            # link CRC caught the corruption
    both_valid: int         # corruption survived both checks (undetected)
    link_valid_only: int    # link passed where the transport check would not


def corruption_agreement(
    config: SharedChecksumConfig,
    frame: bytes,
    samples: int,
    seed: int,
    flips: int = 2,
) -> SharingAgreement:
    """Monte-Carlo measurement of the sharing condition.

    Flips `flips` distinct bits of the frame per trial and cross-checks; the
    interesting count is link_valid_only, the cases where trusting the link
    CRC alone would admit a frame the transport checksum rejects.
    """
    rng = random.Random(seed)
    nbits = len(frame) * 8
    result = SharingAgreement(samples=samples, invalid=0, both_valid=0, link_valid_only=0)
    for _ in range(samples):
        corrupted = bytearray(frame)
        for pos in rng.sample(range(nbits), flips):
            corrupted[pos // 8] ^= 1 << (pos % 8)
        verdict = shared_verify(config, bytes(corrupted), cross_check=True)
        if verdict is Verdict.INVALID:
            result.invalid += 1
        elif verdict is Verdict.LINK_VALID_ONLY:
            result.link_valid_only += 1
        else:
            result.both_valid += 1
    return result
