"""
CMAP concentration-map codec.

Layout (little-endian):
    b"CMAP" | u8 version | u32 width | u32 height | u32 stains
    | f32 scale * stains | f32 payload * (height * width * stains), row-major
"""

import struct

import numpy as np

from src.core.errors import (
    BadMagicError,
    DimensionOverflowError,
    TrailingBytesError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from src.core.imaging import ConcentrationMap

MAGIC = b"CMAP"
VERSION = 1
MAX_STAINS = 3
# payload element count must stay addressable with a u32 byte length
MAX_ELEMENTS = (2**32 - 1) // 4

_HEADER = struct.Struct("<4sBIII")


def encode_cmap(cmap: ConcentrationMap) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, cmap.width, cmap.height, cmap.stains)
    scale = np.asarray(cmap.scale, dtype="<f4").tobytes()
    payload = np.ascontiguousarray(cmap.data, dtype="<f4").tobytes()
    return header + scale + payload


def decode_cmap(blob: bytes) -> ConcentrationMap:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError("bad magic: not a CMAP file")
    if len(blob) < _HEADER.size:
        raise TruncatedPayloadError("truncated payload: incomplete header")
    _, version, width, height, stains = _HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported CMAP version {version}")
    if stains == 0 or stains > MAX_STAINS or width == 0 or height == 0:
        raise DimensionOverflowError(
            f"dimension overflow: {width}x{height}x{stains} is not a valid map"
        )
    elements = width * height * stains
    if elements > MAX_ELEMENTS:
        raise DimensionOverflowError(
            f"dimension overflow: {width}x{height}x{stains} exceeds {MAX_ELEMENTS} values"
        )

    offset = _HEADER.size
    expected = offset + 4 * stains + 4 * elements
    if len(blob) < expected:
        raise TruncatedPayloadError(
            f"truncated payload: expected {expected} bytes, got {len(blob)}"
        )
    if len(blob) > expected:
        raise TrailingBytesError(
            f"trailing bytes: expected {expected} bytes, got {len(blob)}"
        )

    scale = np.frombuffer(blob, dtype="<f4", count=stains, offset=offset)
    offset += 4 * stains
    data = np.frombuffer(blob, dtype="<f4", count=elements, offset=offset)
    return ConcentrationMap(
        data.reshape(height, width, stains).astype(np.float64),
        scale.astype(np.float64),
    )


def write_cmap(path, cmap: ConcentrationMap) -> None:
    from src.data.file_artifact_store import atomic_write_bytes

    atomic_write_bytes(path, encode_cmap(cmap))


def read_cmap(path) -> ConcentrationMap:
    with open(path, "rb") as f:
        return decode_cmap(f.read())
