import numpy as np
import pytest

from conftest import TiffBuilder, identity_dng
from wbpref import dngmeta
from wbpref.errors import ParseError, UsageError, WbprefError


class TestHeader:
    def test_not_a_tiff(self):
        with pytest.raises(ParseError):
            dngmeta.parse_dng_metadata(b"JFIF....")

    def test_bad_magic(self):
        with pytest.raises(ParseError):
            dngmeta.parse_dng_metadata(b"II\x2b\x00\x08\x00\x00\x00")

    def test_too_short(self):
        with pytest.raises(ParseError):
            dngmeta.parse_dng_metadata(b"II")


class TestParsing:
    def test_little_endian_identity(self):
        meta = dngmeta.parse_dng_metadata(identity_dng("<"))
        assert np.allclose(meta.color_matrix_1, np.eye(3))
        assert np.allclose(meta.color_matrix_2, np.eye(3))
        assert meta.calibration_illuminant_1 == 17
        assert meta.calibration_illuminant_2 == 21
        assert meta.camera_model == "TestCam"
        assert np.allclose(meta.as_shot_neutral.v, (0.5, 1.0, 0.8))

    def test_endianness_invariance(self):
        le = dngmeta.parse_dng_metadata(identity_dng("<"))
        be = dngmeta.parse_dng_metadata(identity_dng(">"))
        assert np.array_equal(le.color_matrix_1, be.color_matrix_1)
        assert np.array_equal(le.color_matrix_2, be.color_matrix_2)
        assert le.calibration_illuminant_1 == be.calibration_illuminant_1
        assert le.calibration_illuminant_2 == be.calibration_illuminant_2
        assert le.camera_model == be.camera_model
        assert np.array_equal(le.as_shot_neutral.v, be.as_shot_neutral.v)

    def test_missing_color_matrix_2(self):
        b = TiffBuilder("<")
        b.add_matrix(0xC621, np.eye(3))
        b.add(0xC65A, 3, [17])
        b.add(0xC65B, 3, [21])
        with pytest.raises(ParseError) as exc:
            dngmeta.parse_dng_metadata(b.build())
        assert "C622" in str(exc.value)

    def test_malformed_color_matrix_count(self):
        b = TiffBuilder("<")
        b.add(0xC621, 10, [(1, 1)] * 6)  # 6 rationals, not 9
        b.add_matrix(0xC622, np.eye(3))
        with pytest.raises(ParseError) as exc:
            dngmeta.parse_dng_metadata(b.build())
        assert "9" in str(exc.value)

    def test_nonidentity_matrix_values(self):
        m = np.array([[1.25, -0.3, 0.01], [0.07, 0.95, -0.12], [0.0, 0.2, 0.81]])
        meta = dngmeta.parse_dng_metadata(identity_dng("<", matrix2=m))
        assert np.allclose(meta.color_matrix_2, m, atol=1e-4)  # rationals at 1e-4 scale

    def test_as_shot_neutral_exact(self):
        meta = dngmeta.parse_dng_metadata(identity_dng("<"))
        # stored as 5/10, 10/10, 8/10: returned exactly as stored, unnormalized
        assert meta.as_shot_neutral.components() == (0.5, 1.0, 0.8)

    def test_neutral_optional(self):
        meta = dngmeta.parse_dng_metadata(identity_dng("<", with_neutral=False))
        assert meta.as_shot_neutral is None

    def test_subifd_walking(self):
        outer = TiffBuilder("<")
        outer.add(0x0110, 2, "SubCam")
        inner = TiffBuilder("<")
        inner.add_matrix(0xC621, np.eye(3))
        inner.add_matrix(0xC622, 2.0 * np.eye(3))
        inner.add(0xC65A, 3, [17])
        inner.add(0xC65B, 3, [21])
        outer.subifds.append(inner)
        meta = dngmeta.parse_dng_metadata(outer.build())
        assert np.allclose(meta.color_matrix_1, np.eye(3))
        assert np.allclose(meta.color_matrix_2, 2.0 * np.eye(3))
        assert meta.camera_model == "SubCam"

    def test_cyclic_ifd_detected(self):
        data = bytearray(identity_dng("<"))
        # IFD0 lives at offset 8; patch its next-IFD pointer back to itself
        import struct
        (count,) = struct.unpack_from("<H", data, 8)
        next_ptr = 8 + 2 + 12 * count
        struct.pack_into("<I", data, next_ptr, 8)
        with pytest.raises(ParseError) as exc:
            dngmeta.parse_dng_metadata(bytes(data))
        assert "cyclic" in str(exc.value).lower()

    def test_ifd_offset_out_of_bounds(self):
        data = bytearray(identity_dng("<"))
        import struct
        struct.pack_into("<I", data, 4, len(data) + 100)
        with pytest.raises(ParseError):
            dngmeta.parse_dng_metadata(bytes(data))


class TestIlluminantCodes:
    def test_code_table(self):
        expected = {17: 2856.0, 18: 4874.0, 19: 6774.0, 20: 5503.0,
                    21: 6504.0, 22: 7504.0, 23: 5003.0, 24: 3200.0}
        for code, kelvin in expected.items():
            assert dngmeta.calibration_illuminant_cct(code).kelvin == kelvin

    def test_unknown_code(self):
        with pytest.raises(UsageError) as exc:
            dngmeta.calibration_illuminant_cct(99)
        assert "99" in str(exc.value)


class TestProfileFromDng:
    def test_pass_through(self):
        meta = dngmeta.parse_dng_metadata(identity_dng("<"))
        profile = dngmeta.profile_from_dng(meta, "cam1")
        assert profile.calib_cct_1.kelvin == 2856.0
        assert profile.calib_cct_2.kelvin == 6504.0
        assert np.allclose(profile.forward_matrix_1, np.eye(3))

    def test_swapped_codes(self):
        meta = dngmeta.parse_dng_metadata(identity_dng("<", illum1=21, illum2=17))
        profile = dngmeta.profile_from_dng(meta, "cam1")
        assert profile.calib_cct_1.kelvin == 6504.0
        assert profile.calib_cct_2.kelvin == 2856.0
        # order symmetry of the interpolation weight: alpha flips, blend agrees
        from wbpref.camera import interpolation_weight
        from wbpref.colorimetry import Cct
        a1 = interpolation_weight(Cct(5003.0), profile.calib_cct_1, profile.calib_cct_2)
        a2 = interpolation_weight(Cct(5003.0), profile.calib_cct_2, profile.calib_cct_1)
        assert a1 + a2 == pytest.approx(1.0, abs=1e-12)

    def test_singular_matrix_rejected(self):
        meta = dngmeta.parse_dng_metadata(identity_dng("<", matrix2=np.zeros((3, 3))))
        from wbpref.errors import NumericError
        with pytest.raises(NumericError):
            dngmeta.profile_from_dng(meta, "cam1")

    def test_missing_illuminant_code(self):
        b = TiffBuilder("<")
        b.add_matrix(0xC621, np.eye(3))
        b.add_matrix(0xC622, np.eye(3))
        meta = dngmeta.parse_dng_metadata(b.build())
        with pytest.raises(UsageError):
            dngmeta.profile_from_dng(meta, "cam1")


class TestFuzz:
    def test_truncations_never_crash(self):
        base = identity_dng("<")
        for cut in range(0, len(base), 3):
            try:
                dngmeta.parse_dng_metadata(base[:cut])
            except WbprefError:
                pass

    def test_bit_flips_never_crash(self):
        rng = np.random.default_rng(11)
        base = bytearray(identity_dng("<"))
        for _ in range(2000):
            data = bytearray(base)
            for _ in range(rng.integers(1, 4)):
                pos = int(rng.integers(0, len(data)))
                data[pos] ^= 1 << int(rng.integers(0, 8))
            try:
                dngmeta.parse_dng_metadata(bytes(data))
            except WbprefError:
                pass
