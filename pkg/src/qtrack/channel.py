"""Bit-exact wire format and transports for the host-chip link.

Message byte layout (big-endian, normative, see PROTOCOL.md):

  acquisition: 0xA1 | frame_index u32 | depth_max u8 | tree_bit_count u32 |
               tree bits MSB-first zero-padded to a byte | value_count u16 |
               raw value bytes
  roi:         0xB2 | frame_index u32 | box_count u16 | per box x,y,w,h u16

Transport framing adds a u32 payload length prefix and a CRC-32 trailer so
that any corruption of a message in flight is detected rather than decoded
into silent reconstruction drift. The in-process transport pushes the same
framed bytes through a queue, so both transports behave identically.
"""

from __future__ import annotations

import queue
import socket
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from .codec import AcquisitionMessage
from . import qtree

MAGIC_ACQ = 0xA1
MAGIC_ROI = 0xB2


class ChannelError(Exception):
    pass


class BadMagic(ChannelError):
    pass


class Truncated(ChannelError):
    pass


class CountMismatch(ChannelError):
    """Tree bits, value count and declared counts disagree."""


class Overflow(ChannelError):
    """A count or coordinate exceeds its field width."""


class CorruptFrame(ChannelError):
    """Framing CRC check failed."""


class Closed(ChannelError):
    pass


class IoFailure(ChannelError):
    pass


IntBox = Tuple[int, int, int, int]


@dataclass(frozen=True)
class RoiMessage:
    frame_index: int
    boxes: Tuple[IntBox, ...]


Message = Union[AcquisitionMessage, RoiMessage]


def pack_bits(bits: str) -> bytes:
    """MSB-first within bytes, final partial byte zero-padded."""
    if not bits:
        return b""
    pad = (-len(bits)) % 8
    padded = bits + "0" * pad
    return int(padded, 2).to_bytes(len(padded) // 8, "big")


def unpack_bits(data: bytes, nbits: int) -> str:
    if nbits == 0:
        return ""
    if len(data) * 8 < nbits:
        raise Truncated(f"{len(data)} bytes cannot hold {nbits} bits")
    return bin(int.from_bytes(data, "big"))[2:].zfill(len(data) * 8)[:nbits]


def _check_u(value: int, bits: int, what: str) -> int:
    if not 0 <= value < (1 << bits):
        raise Overflow(f"{what} {value} does not fit in u{bits}")
    return value


def serialize(msg: Message) -> bytes:
    if isinstance(msg, AcquisitionMessage):
        out = bytearray([MAGIC_ACQ])
        out += struct.pack(">I", _check_u(msg.frame_index, 32, "frame_index"))
        out.append(_check_u(msg.depth_max, 8, "depth_max"))
        out += struct.pack(">I", _check_u(len(msg.tree_bits), 32, "tree bit count"))
        out += pack_bits(msg.tree_bits)
        out += struct.pack(">H", _check_u(len(msg.values), 16, "value count"))
        out += msg.values
        return bytes(out)
    if isinstance(msg, RoiMessage):
        out = bytearray([MAGIC_ROI])
        out += struct.pack(">I", _check_u(msg.frame_index, 32, "frame_index"))
        out += struct.pack(">H", _check_u(len(msg.boxes), 16, "box count"))
        for box in msg.boxes:
            for name, v in zip("xywh", box):
                out += struct.pack(">H", _check_u(v, 16, f"box {name}"))
        return bytes(out)
    raise TypeError(f"cannot serialize {type(msg).__name__}")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated(f"needed {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]


def deserialize(data: bytes) -> Message:
    """Exact inverse of serialize; validates tree structure and counts."""
    rd = _Reader(data)
    magic = rd.u8()
    if magic == MAGIC_ACQ:
        frame_index = rd.u32()
        depth_max = rd.u8()
        nbits = rd.u32()
        tree_bits = unpack_bits(rd.take((nbits + 7) // 8), nbits)
        nvalues = rd.u16()
        values = rd.take(nvalues)
        if rd.pos != len(data):
            raise Truncated(f"{len(data) - rd.pos} trailing bytes")
        try:
            qtree.decode_structure_modes(tree_bits, values, depth_max)
        except qtree.QTreeError as exc:
            raise CountMismatch(str(exc)) from exc
        return AcquisitionMessage(frame_index=frame_index, depth_max=depth_max,
                                  tree_bits=tree_bits, values=values)
    if magic == MAGIC_ROI:
        frame_index = rd.u32()
        nboxes = rd.u16()
        boxes = tuple(
            (rd.u16(), rd.u16(), rd.u16(), rd.u16()) for _ in range(nboxes))
        if rd.pos != len(data):
            raise Truncated(f"{len(data) - rd.pos} trailing bytes")
        return RoiMessage(frame_index=frame_index, boxes=boxes)
    raise BadMagic(f"unknown magic byte 0x{magic:02X}")


# -- framing ---------------------------------------------------------------

def frame_payload(payload: bytes) -> bytes:
    return struct.pack(">I", len(payload)) + payload + struct.pack(
        ">I", zlib.crc32(payload))


def unframe_payload(framed: bytes) -> bytes:
    if len(framed) < 8:
        raise Truncated("framed message shorter than its headers")
    (length,) = struct.unpack(">I", framed[:4])
    if len(framed) != 8 + length:
        raise Truncated(f"frame declares {length} payload bytes, has {len(framed) - 8}")
    payload = framed[4:4 + length]
    (crc,) = struct.unpack(">I", framed[4 + length:])
    if crc != zlib.crc32(payload):
        raise CorruptFrame("CRC-32 mismatch")
    return payload


# -- bandwidth accounting --------------------------------------------------

@dataclass
class LedgerEntry:
    frame_index: int
    chip_to_host_bits: int = 0
    host_to_chip_bits: int = 0


@dataclass
class BandwidthLedger:
    """Per-frame bit accounting against a chip-to-host budget.

    Chip-to-host bits are the declared payload rates of acquisition
    messages (the quantity the optimizer constrains); ROI messages are
    tallied separately and do not count against the budget.
    """
    budget: Optional[int] = None  # bits per frame, None = unlimited
    entries: Dict[int, LedgerEntry] = field(default_factory=dict)
    violations: List[int] = field(default_factory=list)

    def _entry(self, frame_index: int) -> LedgerEntry:
        return self.entries.setdefault(frame_index, LedgerEntry(frame_index))

    def record_chip_to_host(self, frame_index: int, bits: int) -> None:
        entry = self._entry(frame_index)
        entry.chip_to_host_bits += bits
        if self.budget is not None and entry.chip_to_host_bits > self.budget:
            if frame_index not in self.violations:
                self.violations.append(frame_index)

    def record_host_to_chip(self, frame_index: int, bits: int) -> None:
        self._entry(frame_index).host_to_chip_bits += bits

    def rows(self) -> List[LedgerEntry]:
        return [self.entries[k] for k in sorted(self.entries)]

    def total_chip_to_host(self) -> int:
        return sum(e.chip_to_host_bits for e in self.entries.values())


def _record_send(ledger: Optional[BandwidthLedger], msg: Message) -> None:
    if ledger is None:
        return
    if isinstance(msg, AcquisitionMessage):
        ledger.record_chip_to_host(msg.frame_index, msg.declared_rate)
    else:
        ledger.record_host_to_chip(msg.frame_index, 8 * len(serialize(msg)))


# -- transports ------------------------------------------------------------

class Endpoint:
    """One side of a bidirectional, ordered, exactly-once message link."""

    def send(self, msg: Message) -> None:
        raise NotImplementedError

    def recv(self, timeout: Optional[float] = None) -> Message:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcEndpoint(Endpoint):
    def __init__(self, outbox: "queue.Queue[bytes]", inbox: "queue.Queue[bytes]",
                 ledger: Optional[BandwidthLedger] = None):
        self._outbox = outbox
        self._inbox = inbox
        self.ledger = ledger

    def send(self, msg: Message) -> None:
        _record_send(self.ledger, msg)
        self._outbox.put(frame_payload(serialize(msg)))

    def recv(self, timeout: Optional[float] = None) -> Message:
        try:
            framed = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise IoFailure("receive timed out") from None
        if framed is None:
            raise Closed("peer closed the link")
        return deserialize(unframe_payload(framed))

    def close(self) -> None:
        self._outbox.put(None)


def inproc_pair(ledger: Optional[BandwidthLedger] = None
                ) -> Tuple[InProcEndpoint, InProcEndpoint]:
    """(host endpoint, chip endpoint) sharing one ledger: ROI sends tally
    host-to-chip bits, acquisition sends tally chip-to-host bits."""
    to_chip: "queue.Queue[bytes]" = queue.Queue()
    to_host: "queue.Queue[bytes]" = queue.Queue()
    host = InProcEndpoint(outbox=to_chip, inbox=to_host, ledger=ledger)
    chip = InProcEndpoint(outbox=to_host, inbox=to_chip, ledger=ledger)
    return host, chip


class TcpEndpoint(Endpoint):
    def __init__(self, sock: socket.socket,
                 ledger: Optional[BandwidthLedger] = None):
        self._sock = sock
        self.ledger = ledger

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self._sock.recv(n - len(buf))
            except socket.timeout:
                raise IoFailure("receive timed out") from None
            except OSError as exc:
                raise IoFailure(str(exc)) from exc
            if not chunk:
                raise Closed("peer closed the connection")
            buf += chunk
        return bytes(buf)

    def send(self, msg: Message) -> None:
        _record_send(self.ledger, msg)
        try:
            self._sock.sendall(frame_payload(serialize(msg)))
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    def recv(self, timeout: Optional[float] = None) -> Message:
        self._sock.settimeout(timeout)
        header = self._read_exact(4)
        (length,) = struct.unpack(">I", header)
        body = self._read_exact(length + 4)
        return deserialize(unframe_payload(header + body))

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def tcp_pair(address: Tuple[str, int] = ("127.0.0.1", 0),
             ledger: Optional[BandwidthLedger] = None,
             ) -> Tuple[TcpEndpoint, TcpEndpoint]:
    """Connected (host endpoint, chip endpoint) over localhost TCP."""
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        listener.bind(address)
        listener.listen(1)
        client = socket.create_connection(listener.getsockname(), timeout=10)
        server, _ = listener.accept()
    finally:
        listener.close()
    return TcpEndpoint(server, ledger=ledger), TcpEndpoint(client, ledger=ledger)
