"""Normative range coder and the two-substream container format.

The coder is rANS with a 32-bit state, 16-bit renormalization, and 16-bit
frequency precision. Symbols are encoded in reverse so the decoder consumes
the byte stream forward. The flushed final state is 4 little-endian bytes;
an empty stream is exactly that flush. These bytes are the normative format
that any accelerated implementation must reproduce exactly.
"""

import struct
import zlib
from dataclasses import dataclass
from typing import List

import numpy as np

from .entropy_model import CdfTable, SYMBOL_MIN, SYMBOL_MAX

RANS_L = 1 << 16
MASK16 = 0xFFFF

MAGIC = b"SEVC"
FORMAT_VERSION = 1

FRAME_I = 0
FRAME_P = 1

# substream counts per frame type: I = [intra], P = [base_motion, base_frame, full_latent]
_SUBSTREAMS = {FRAME_I: 1, FRAME_P: 3}


class BitstreamError(RuntimeError):
    pass


def rans_encode(symbols, cdf: CdfTable) -> bytes:
    """Encode integer symbols against per-element CDF rows (one row per symbol)."""
    symbols = np.asarray(symbols)
    n = symbols.shape[0] if symbols.ndim else 0
    cdf.validate()
    if cdf.rows != n:
        raise BitstreamError(f"{n} symbols but {cdf.rows} cdf rows")
    if n and (symbols.min() < SYMBOL_MIN or symbols.max() > SYMBOL_MAX):
        raise BitstreamError("symbol outside the coded range")
    table = cdf.table
    state = RANS_L
    words: List[int] = []
    for i in range(n - 1, -1, -1):
        s = int(symbols[i]) - SYMBOL_MIN
        row = table[i]
        start = int(row[s])
        freq = int(row[s + 1]) - start
        x_max = freq << 16
        while state >= x_max:
            words.append(state & MASK16)
            state >>= 16
        state = ((state // freq) << 16) + (state % freq) + start
    out = bytearray(state.to_bytes(4, "little"))
    for w in reversed(words):
        out += w.to_bytes(2, "little")
    return bytes(out)


def rans_decode(data: bytes, count: int, cdf: CdfTable) -> np.ndarray:
    """Decode `count` symbols; any inconsistency raises a corrupt-stream error."""
    cdf.validate()
    if cdf.rows != count:
        raise BitstreamError(f"{count} symbols but {cdf.rows} cdf rows")
    if len(data) < 4:
        raise BitstreamError("corrupt stream: missing state flush")
    state = int.from_bytes(data[:4], "little")
    pos = 4
    table = cdf.table
    out = np.empty(count, dtype=np.int16)
    for i in range(count):
        row = table[i]
        cf = state & MASK16
        s = int(np.searchsorted(row, cf, side="right")) - 1
        start = int(row[s])
        freq = int(row[s + 1]) - start
        out[i] = s + SYMBOL_MIN
        state = freq * (state >> 16) + cf - start
        while state < RANS_L:
            if pos + 2 > len(data):
                raise BitstreamError("corrupt stream: ran out of bytes")
            state = (state << 16) | int.from_bytes(data[pos:pos + 2], "little")
            pos += 2
    if state != RANS_L or pos != len(data):
        raise BitstreamError("corrupt stream: trailing state mismatch")
    return out


@dataclass
class ContainerHeader:
    width: int
    height: int
    frame_count: int
    intra_period: int
    lambda_index: int


@dataclass
class FrameRecord:
    frame_type: int
    substreams: List[bytes]

    def __post_init__(self):
        if self.frame_type not in _SUBSTREAMS:
            raise ValueError(f"unknown frame type {self.frame_type}")
        if len(self.substreams) != _SUBSTREAMS[self.frame_type]:
            raise ValueError("substream count does not match the frame type")


def serialize_container(header: ContainerHeader, records: List[FrameRecord]) -> bytes:
    if header.frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    if header.frame_count != len(records):
        raise ValueError("record count does not match the header")
    if not 0 <= header.lambda_index <= 255:
        raise ValueError("lambda_index out of range")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<B", FORMAT_VERSION)
    out += struct.pack("<IIiB", header.width, header.height,
                       header.intra_period, header.lambda_index)
    out += struct.pack("<I", header.frame_count)
    for rec in records:
        payload = b"".join(rec.substreams)
        out += struct.pack("<BI", rec.frame_type, zlib.crc32(payload))
        for sub in rec.substreams:
            out += struct.pack("<I", len(sub))
        out += payload
    return bytes(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.frame = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise BitstreamError(f"container truncated at frame {self.frame}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def parse_container(data: bytes):
    rd = _Reader(data)
    rd.frame = -1
    if rd.take(4) != MAGIC:
        raise BitstreamError("not a recognized bitstream (bad magic)")
    version = rd.take(1)[0]
    if version != FORMAT_VERSION:
        raise BitstreamError(f"unsupported bitstream version {version}")
    width, height, intra_period, lambda_index = struct.unpack("<IIiB", rd.take(13))
    (frame_count,) = struct.unpack("<I", rd.take(4))
    if frame_count < 1:
        raise BitstreamError("container holds no frames")
    header = ContainerHeader(width=width, height=height, frame_count=frame_count,
                             intra_period=intra_period, lambda_index=lambda_index)
    records = []
    for f in range(frame_count):
        rd.frame = f
        frame_type, crc = struct.unpack("<BI", rd.take(5))
        if frame_type not in _SUBSTREAMS:
            raise BitstreamError(f"corrupt stream: bad frame type at frame {f}")
        lengths = [struct.unpack("<I", rd.take(4))[0]
                   for _ in range(_SUBSTREAMS[frame_type])]
        payload = rd.take(sum(lengths))
        if zlib.crc32(payload) != crc:
            raise BitstreamError(f"corrupt stream: checksum mismatch at frame {f}")
        subs = []
        off = 0
        for ln in lengths:
            subs.append(payload[off:off + ln])
            off += ln
        records.append(FrameRecord(frame_type=frame_type, substreams=subs))
    if rd.pos != len(data):
        raise BitstreamError("trailing bytes after the last frame")
    return header, records


def record_num_bytes(rec: FrameRecord) -> int:
    """On-disk size of one frame record including framing."""
    return 5 + 4 * len(rec.substreams) + sum(len(s) for s in rec.substreams)


def write_container(path, header, records):
    with open(path, "wb") as f:
        f.write(serialize_container(header, records))


def read_container(path):
    with open(path, "rb") as f:
        return parse_container(f.read())
