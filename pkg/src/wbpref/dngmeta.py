"""Minimal TIFF/DNG metadata parser for the color calibration tags.

Walks IFD0, SubIFDs, and the Exif IFD of an in-memory byte string and
extracts ColorMatrix1/2, CalibrationIlluminant1/2, AsShotNeutral, and the
camera model. Strip/tile pixel data is never touched. Every read is bounds
checked; crafted offsets, cycles, or truncation terminate with ParseError,
never a crash.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .camera import CameraProfile, as_mat3, invert_mat3
from .colorimetry import Cct, ColorVec, raw_space
from .errors import NumericError, ParseError, UsageError

TAG_MODEL = 0x0110
TAG_SUBIFDS = 0x014A
TAG_EXIF_IFD = 0x8769
TAG_COLOR_MATRIX_1 = 0xC621
TAG_COLOR_MATRIX_2 = 0xC622
TAG_AS_SHOT_NEUTRAL = 0xC628
TAG_CALIBRATION_ILLUMINANT_1 = 0xC65A
TAG_CALIBRATION_ILLUMINANT_2 = 0xC65B

# EXIF/DNG LightSource codes -> published standard-illuminant CCTs (kelvin)
ILLUMINANT_CCT_BY_CODE = {
    17: 2856.0,   # Standard illuminant A
    18: 4874.0,   # Standard illuminant B
    19: 6774.0,   # Standard illuminant C
    20: 5503.0,   # D55
    21: 6504.0,   # D65
    22: 7504.0,   # D75
    23: 5003.0,   # D50
    24: 3200.0,   # ISO studio tungsten
}

# TIFF field types: type id -> (struct code or None, element size)
_TYPE_SIZES = {
    1: 1, 2: 1, 3: 2, 4: 4, 5: 8, 6: 1, 7: 1, 8: 2, 9: 4, 10: 8, 11: 4, 12: 8,
}

_MAX_IFD_DEPTH = 8
_MAX_IFD_COUNT = 64
_MAX_MODEL_BYTES = 65536


@dataclass(frozen=True)
class DngColorMetadata:
    color_matrix_1: np.ndarray | None
    color_matrix_2: np.ndarray | None
    calibration_illuminant_1: int | None
    calibration_illuminant_2: int | None
    as_shot_neutral: ColorVec | None
    camera_model: str | None


def calibration_illuminant_cct(code: int) -> Cct:
    """CCT of an EXIF LightSource code, per the published illuminant tables."""
    if code not in ILLUMINANT_CCT_BY_CODE:
        raise UsageError(f"unsupported calibration illuminant code {code}")
    return Cct(ILLUMINANT_CCT_BY_CODE[code])


class _Reader:
    def __init__(self, data: bytes, byte_order: str):
        self.data = data
        self.bo = byte_order  # "<" or ">"

    def bytes_at(self, offset: int, size: int) -> bytes:
        if offset < 0 or size < 0 or offset + size > len(self.data):
            raise ParseError(
                f"read of {size} bytes out of bounds (file is {len(self.data)} bytes)",
                offset=offset,
            )
        return self.data[offset:offset + size]

    def unpack(self, fmt: str, offset: int):
        size = struct.calcsize(self.bo + fmt)
        return struct.unpack(self.bo + fmt, self.bytes_at(offset, size))


def _decode_values(reader: _Reader, ftype: int, count: int, offset: int):
    """Decode `count` values of TIFF type `ftype` starting at `offset`."""
    if ftype == 2:  # ASCII
        raw = reader.bytes_at(offset, count)
        return raw.split(b"\x00", 1)[0].decode("ascii", errors="replace")
    if ftype in (1, 7):
        return list(reader.bytes_at(offset, count))
    if ftype == 6:
        return [v if v < 128 else v - 256 for v in reader.bytes_at(offset, count)]
    code = {3: "H", 4: "I", 8: "h", 9: "i", 11: "f", 12: "d"}.get(ftype)
    if code is not None:
        return list(reader.unpack(f"{count}{code}", offset))
    if ftype in (5, 10):  # RATIONAL / SRATIONAL: numerator, denominator pairs
        code = "I" if ftype == 5 else "i"
        flat = reader.unpack(f"{2 * count}{code}", offset)
        vals = []
        for i in range(count):
            num, den = flat[2 * i], flat[2 * i + 1]
            if den == 0:
                raise ParseError(f"rational with zero denominator", offset=offset)
            vals.append(num / den)
        return vals
    raise ParseError(f"unknown TIFF field type {ftype}", offset=offset)


@dataclass
class _Entry:
    tag: int
    ftype: int
    count: int
    value_offset: int  # resolved: where the value bytes actually live


def _read_ifd_entries(reader: _Reader, ifd_offset: int) -> tuple[list[_Entry], int]:
    (count,) = reader.unpack("H", ifd_offset)
    entries = []
    for i in range(count):
        base = ifd_offset + 2 + 12 * i
        tag, ftype, vcount = reader.unpack("HHI", base)
        if ftype not in _TYPE_SIZES:
            continue  # unknown field type: skip, per TIFF practice
        size = _TYPE_SIZES[ftype] * vcount
        if size <= 4:
            value_offset = base + 8
        else:
            (value_offset,) = reader.unpack("I", base + 8)
        entries.append(_Entry(tag, ftype, vcount, value_offset))
    (next_ifd,) = reader.unpack("I", ifd_offset + 2 + 12 * count)
    return entries, next_ifd


def parse_dng_metadata(data: bytes) -> DngColorMetadata:
    """Extract DNG color calibration metadata from a TIFF container."""
    if len(data) < 8:
        raise ParseError("file too short for a TIFF header", offset=0)
    if data[:2] == b"II":
        bo = "<"
    elif data[:2] == b"MM":
        bo = ">"
    else:
        raise ParseError(f"not a TIFF: bad byte-order marker {data[:2]!r}", offset=0)
    reader = _Reader(data, bo)
    (magic,) = reader.unpack("H", 2)
    if magic != 42:
        raise ParseError(f"not a TIFF: magic {magic} != 42", offset=2)
    (ifd0,) = reader.unpack("I", 4)

    found: dict[int, object] = {}
    visited: set[int] = set()
    ifd_total = 0

    def walk(offset: int, depth: int):
        nonlocal ifd_total
        if depth > _MAX_IFD_DEPTH:
            raise ParseError("IFD nesting deeper than supported", offset=offset)
        while offset != 0:
            if offset in visited:
                raise ParseError("cyclic IFD chain", offset=offset)
            visited.add(offset)
            ifd_total += 1
            if ifd_total > _MAX_IFD_COUNT:
                raise ParseError("more IFDs than supported", offset=offset)
            entries, next_ifd = _read_ifd_entries(reader, offset)
            for e in entries:
                _collect(reader, e, found, depth)
            offset = next_ifd

    def _collect(reader: _Reader, e: _Entry, found: dict, depth: int):
        if e.tag == TAG_SUBIFDS:
            if e.ftype in (4, 13) and e.count <= _MAX_IFD_COUNT:
                for off in reader.unpack(f"{e.count}I", e.value_offset):
                    walk(off, depth + 1)
        elif e.tag == TAG_EXIF_IFD:
            if e.ftype == 4 and e.count == 1:
                (off,) = reader.unpack("I", e.value_offset)
                walk(off, depth + 1)
        elif e.tag in (TAG_COLOR_MATRIX_1, TAG_COLOR_MATRIX_2):
            if e.ftype not in (5, 10):
                raise ParseError(
                    f"ColorMatrix tag 0x{e.tag:04X} has type {e.ftype}, expected (S)RATIONAL",
                    offset=e.value_offset,
                )
            if e.count != 9:
                raise ParseError(
                    f"ColorMatrix tag 0x{e.tag:04X} has {e.count} values, expected 9",
                    offset=e.value_offset,
                )
            vals = _decode_values(reader, e.ftype, 9, e.value_offset)
            found[e.tag] = np.asarray(vals, dtype=np.float64).reshape(3, 3)
        elif e.tag == TAG_AS_SHOT_NEUTRAL:
            if e.ftype in (5, 10) and e.count == 3:
                found[e.tag] = _decode_values(reader, e.ftype, 3, e.value_offset)
        elif e.tag in (TAG_CALIBRATION_ILLUMINANT_1, TAG_CALIBRATION_ILLUMINANT_2):
            if e.ftype in (3, 4) and e.count == 1:
                found[e.tag] = int(_decode_values(reader, e.ftype, 1, e.value_offset)[0])
        elif e.tag == TAG_MODEL:
            if e.ftype == 2 and e.count <= _MAX_MODEL_BYTES:
                found[e.tag] = _decode_values(reader, 2, e.count, e.value_offset)

    walk(ifd0, 0)

    for tag, name in ((TAG_COLOR_MATRIX_1, "ColorMatrix1 (0xC621)"),
                      (TAG_COLOR_MATRIX_2, "ColorMatrix2 (0xC622)")):
        if tag not in found:
            raise ParseError(f"required tag {name} is missing")

    model = found.get(TAG_MODEL)
    neutral = None
    if TAG_AS_SHOT_NEUTRAL in found:
        vals = found[TAG_AS_SHOT_NEUTRAL]
        if min(vals) <= 0.0:
            raise ParseError(f"AsShotNeutral must be strictly positive, got {vals}")
        neutral = ColorVec.create(vals, raw_space(model or "unknown"))

    return DngColorMetadata(
        color_matrix_1=found[TAG_COLOR_MATRIX_1],
        color_matrix_2=found[TAG_COLOR_MATRIX_2],
        calibration_illuminant_1=found.get(TAG_CALIBRATION_ILLUMINANT_1),
        calibration_illuminant_2=found.get(TAG_CALIBRATION_ILLUMINANT_2),
        as_shot_neutral=neutral,
        camera_model=model,
    )


def profile_from_dng(meta: DngColorMetadata, sensor_name: str) -> CameraProfile:
    """Build a CameraProfile from parsed DNG metadata.

    ColorMatrix1/2 are the XYZ->raw forward matrices; the calibration CCTs
    come from the CalibrationIlluminant tag codes.
    """
    if meta.color_matrix_1 is None or meta.color_matrix_2 is None:
        raise UsageError("metadata lacks one of the color matrices")
    if meta.calibration_illuminant_1 is None or meta.calibration_illuminant_2 is None:
        raise UsageError("metadata lacks a CalibrationIlluminant tag")
    m1 = as_mat3(meta.color_matrix_1, "ColorMatrix1")
    m2 = as_mat3(meta.color_matrix_2, "ColorMatrix2")
    invert_mat3(m1, "ColorMatrix1")
    invert_mat3(m2, "ColorMatrix2")
    return CameraProfile(
        sensor_name=sensor_name,
        forward_matrix_1=m1,
        forward_matrix_2=m2,
        calib_cct_1=calibration_illuminant_cct(meta.calibration_illuminant_1),
        calib_cct_2=calibration_illuminant_cct(meta.calibration_illuminant_2),
    )
