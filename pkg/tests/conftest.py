import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make `oracles` importable

from wbpref.camera import CameraProfile
from wbpref.colorimetry import Cct


# ---------------------------------------------------------------------------
# TIFF/DNG fixture builder

TIFF_TYPE_SIZES = {1: 1, 2: 1, 3: 2, 4: 4, 5: 8, 10: 8}


class TiffBuilder:
    """Hand-built single-IFD (plus optional sub-IFDs) TIFF writer for tests."""

    def __init__(self, byte_order="<"):
        self.bo = byte_order
        self.entries = []  # (tag, type, count, payload_bytes or inline)
        self.subifds = []  # nested TiffBuilder IFDs

    def add(self, tag, ftype, values):
        bo = self.bo
        if ftype == 2:  # ASCII, values is str
            payload = values.encode("ascii") + b"\x00"
            count = len(payload)
        elif ftype in (5, 10):  # (S)RATIONAL pairs
            code = "I" if ftype == 5 else "i"
            payload = b"".join(struct.pack(bo + 2 * code, n, d) for n, d in values)
            count = len(values)
        elif ftype == 3:
            payload = b"".join(struct.pack(bo + "H", v) for v in values)
            count = len(values)
        elif ftype == 4:
            payload = b"".join(struct.pack(bo + "I", v) for v in values)
            count = len(values)
        else:
            raise ValueError(f"fixture builder does not handle type {ftype}")
        self.entries.append((tag, ftype, count, payload))
        return self

    def add_matrix(self, tag, matrix, scale=10000):
        vals = [(int(round(v * scale)), scale) for v in np.asarray(matrix).reshape(-1)]
        return self.add(tag, 10, vals)

    def build(self) -> bytes:
        bo = self.bo
        # layout: header (8) | IFD0 | value area | sub-IFDs...
        entries = sorted(self.entries, key=lambda e: e[0])
        n = len(entries) + (1 if self.subifds else 0)
        ifd_offset = 8
        value_offset = ifd_offset + 2 + 12 * n + 4
        value_area = b""
        packed = []

        sub_offsets_slot = None
        for tag, ftype, count, payload in entries:
            if len(payload) <= 4:
                inline = payload + b"\x00" * (4 - len(payload))
                packed.append(struct.pack(bo + "HHI", tag, ftype, count) + inline)
            else:
                packed.append(struct.pack(bo + "HHII", tag, ftype, count,
                                          value_offset + len(value_area)))
                value_area += payload

        sub_blob = b""
        if self.subifds:
            # sub-IFD offsets are patched after the value area is sized
            sub_count = len(self.subifds)
            if sub_count == 1:
                slot = struct.pack(bo + "HHI", 0x014A, 4, 1)
                sub_offsets_slot = len(packed)
                packed.append(slot + b"\x00\x00\x00\x00")
            else:
                slot = struct.pack(bo + "HHII", 0x014A, 4, sub_count,
                                   value_offset + len(value_area))
                sub_offsets_slot = ("area", len(value_area))
                value_area += b"\x00" * 4 * sub_count
                packed.append(slot)
            packed.sort(key=lambda raw: struct.unpack(bo + "H", raw[:2])[0])

        base_end = value_offset + len(value_area)
        sub_bytes = []
        sub_offsets = []
        cursor = base_end
        for sub in self.subifds:
            blob = sub._build_at(cursor)
            sub_offsets.append(cursor)
            sub_bytes.append(blob)
            cursor += len(blob)
        sub_blob = b"".join(sub_bytes)

        if self.subifds:
            if isinstance(sub_offsets_slot, tuple):
                _, area_pos = sub_offsets_slot
                patch = b"".join(struct.pack(bo + "I", off) for off in sub_offsets)
                value_area = (value_area[:area_pos] + patch
                              + value_area[area_pos + len(patch):])
            else:
                raw = packed[sub_offsets_slot]
                packed[sub_offsets_slot] = raw[:8] + struct.pack(bo + "I", sub_offsets[0])
                # keep tag ordering after patch
                packed.sort(key=lambda raw: struct.unpack(bo + "H", raw[:2])[0])

        header = (b"II" if bo == "<" else b"MM") + struct.pack(bo + "H", 42) \
            + struct.pack(bo + "I", ifd_offset)
        ifd = struct.pack(bo + "H", len(packed)) + b"".join(packed) \
            + struct.pack(bo + "I", 0)
        return header + ifd + value_area + sub_blob

    def _build_at(self, offset: int) -> bytes:
        # sub-IFD without header, values inline-or-after
        bo = self.bo
        entries = sorted(self.entries, key=lambda e: e[0])
        n = len(entries)
        value_offset = offset + 2 + 12 * n + 4
        value_area = b""
        packed = []
        for tag, ftype, count, payload in entries:
            if len(payload) <= 4:
                inline = payload + b"\x00" * (4 - len(payload))
                packed.append(struct.pack(bo + "HHI", tag, ftype, count) + inline)
            else:
                packed.append(struct.pack(bo + "HHII", tag, ftype, count,
                                          value_offset + len(value_area)))
                value_area += payload
        return struct.pack(bo + "H", n) + b"".join(packed) \
            + struct.pack(bo + "I", 0) + value_area


def identity_dng(byte_order="<", illum1=17, illum2=21, with_neutral=True,
                 model="TestCam", matrix2=None):
    b = TiffBuilder(byte_order)
    b.add(0x0110, 2, model)
    b.add_matrix(0xC621, np.eye(3))
    b.add_matrix(0xC622, np.eye(3) if matrix2 is None else matrix2)
    b.add(0xC65A, 3, [illum1])
    b.add(0xC65B, 3, [illum2])
    if with_neutral:
        b.add(0xC628, 5, [(5, 10), (10, 10), (8, 10)])
    return b.build()


@pytest.fixture
def transparent_profile():
    """Identity forward matrices: raw space equals XYZ."""
    return CameraProfile("flat", np.eye(3), np.eye(3), Cct(2856.0), Cct(6504.0))


@pytest.fixture(scope="session")
def identity_fit():
    """A mapping trained to reproduce its input (identity preference).

    Returns (MappingModel, CameraProfile, records). Shared fixture: training
    takes a couple of seconds.
    """
    from wbpref.datakit import PreferencePolicy, generate_synthetic_dataset, make_virtual_sensor
    from wbpref.training import TrainConfig, train

    sensor, profile = make_virtual_sensor(95776, "fitcam")
    records = generate_synthetic_dataset(
        sensor, profile, 512, PreferencePolicy(lam=0.0), 0.0, seed=21)
    cfg = TrainConfig(epochs=300, seed=3)
    model, report = train(records[:448], "synthetic", cfg, profile,
                          val_records=records[448:])
    assert report.val_errors[-1] < 0.2, "identity fit did not converge"
    return model, profile, records


@pytest.fixture
def small_sensor_pair():
    from wbpref.datakit import make_virtual_sensor
    a = make_virtual_sensor(95776, "camA")
    b = make_virtual_sensor(48293, "camB")
    return a, b
