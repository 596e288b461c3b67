"""Canonical binary encoding used for every hash and signature.

Rules: unsigned integers are big-endian fixed width; byte-strings and UTF-8
strings carry a u32 length prefix; lists carry a u32 count prefix; maps are
encoded as lists of (key, value) sorted by raw key bytes; enum values are a
single u8. The encoding is injective, so equal bytes mean equal values.
"""

from __future__ import annotations

import struct
from collections.abc import Iterable

from .errors import CorruptFile

U32_MAX = 0xFFFFFFFF
U64_MAX = 0xFFFFFFFFFFFFFFFF


class Encoder:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, value: int) -> "Encoder":
        if not 0 <= value <= 0xFF:
            raise ValueError(f"u8 out of range: {value}")
        self._parts.append(struct.pack(">B", value))
        return self

    def u32(self, value: int) -> "Encoder":
        if not 0 <= value <= U32_MAX:
            raise ValueError(f"u32 out of range: {value}")
        self._parts.append(struct.pack(">I", value))
        return self

    def u64(self, value: int) -> "Encoder":
        if not 0 <= value <= U64_MAX:
            raise ValueError(f"u64 out of range: {value}")
        self._parts.append(struct.pack(">Q", value))
        return self

    def raw(self, data: bytes) -> "Encoder":
        """Fixed-width field, no length prefix (hashes, nonces)."""
        self._parts.append(bytes(data))
        return self

    def bytes(self, data: bytes) -> "Encoder":
        self.u32(len(data))
        self._parts.append(bytes(data))
        return self

    def str(self, text: str) -> "Encoder":
        return self.bytes(text.encode("utf-8"))

    def count(self, n: int) -> "Encoder":
        """List-length prefix; items are appended by the caller."""
        return self.u32(n)

    def done(self) -> bytes:
        return b"".join(self._parts)


class Decoder:
    """Strict inverse of Encoder; any malformed input raises CorruptFile."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise CorruptFile("truncated input")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def bytes(self) -> bytes:
        return self._take(self.u32())

    def str(self) -> str:
        try:
            return self.bytes().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptFile("invalid utf-8") from exc

    def count(self) -> int:
        return self.u32()

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def expect_end(self) -> None:
        if self.remaining:
            raise CorruptFile(f"{self.remaining} trailing bytes")


def encode_bytes_list(items: Iterable[bytes]) -> bytes:
    items = list(items)
    enc = Encoder().count(len(items))
    for item in items:
        enc.bytes(item)
    return enc.done()


def decode_bytes_list(dec: Decoder) -> list[bytes]:
    return [dec.bytes() for _ in range(dec.count())]


def encode_bytes_map(mapping: dict[bytes, bytes]) -> bytes:
    """Map as a (key, value) list sorted by raw key bytes."""
    enc = Encoder().count(len(mapping))
    for key in sorted(mapping):
        enc.bytes(key).bytes(mapping[key])
    return enc.done()


def decode_bytes_map(dec: Decoder) -> dict[bytes, bytes]:
    out: dict[bytes, bytes] = {}
    for _ in range(dec.count()):
        key = dec.bytes()
        out[key] = dec.bytes()
    return out


def encode_str_map(mapping: dict[str, bytes]) -> bytes:
    return encode_bytes_map({k.encode("utf-8"): v for k, v in mapping.items()})


def decode_str_map(dec: Decoder) -> dict[str, bytes]:
    return {k.decode("utf-8"): v for k, v in decode_bytes_map(dec).items()}
