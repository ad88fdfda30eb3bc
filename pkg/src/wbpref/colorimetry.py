"""Foundational color math: tagged 3-vectors, angular error, CIE 1960
chromaticity, and Robertson's correlated color temperature solver.

All operations are pure; ColorVec/Cct values are immutable and safe to share
across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GamutError, UsageError

XYZ_SPACE = "xyz"

# arccos is clamped to +/-(1 - DOT_CLAMP) so rounding can never produce a NaN
# and the training loss keeps a finite gradient at zero error.
DOT_CLAMP = 1e-7

# Valid correlated color temperatures: mired in [0.01, 600].
CCT_KELVIN_MIN = 1e6 / 600.0   # ~1667 K
CCT_KELVIN_MAX = 1e8

DEG_PER_RAD = 180.0 / math.pi


def raw_space(sensor_name: str) -> str:
    """Space tag for the raw RGB space of a named sensor."""
    return f"raw:{sensor_name}"


def _as_unit_components(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (3,):
        raise UsageError(f"color vector needs exactly 3 components, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DomainError(f"color vector has non-finite components: {v}")
    return v


@dataclass(frozen=True, slots=True)
class ColorVec:
    """A 3-component illuminant color tagged with its color space.

    Components are clamped at zero during construction; the L2 norm must be
    strictly positive afterwards.
    """

    v: np.ndarray
    space: str

    @staticmethod
    def create(values, space: str) -> "ColorVec":
        v = np.maximum(_as_unit_components(values), 0.0)
        if float(v @ v) <= 0.0:
            raise DomainError(f"color vector has zero norm after clamping: {values}")
        v.flags.writeable = False
        return ColorVec(v, space)

    @property
    def norm(self) -> float:
        return float(math.sqrt(self.v @ self.v))

    def components(self) -> tuple[float, float, float]:
        return (float(self.v[0]), float(self.v[1]), float(self.v[2]))


def xyz_vec(values) -> ColorVec:
    return ColorVec.create(values, XYZ_SPACE)


def raw_vec(values, sensor_name: str) -> ColorVec:
    return ColorVec.create(values, raw_space(sensor_name))


def normalize_l2(v: ColorVec) -> ColorVec:
    """Scale to unit L2 norm, preserving direction and space tag."""
    n = v.norm
    if n <= 0.0:
        raise DomainError("cannot normalize a zero-norm vector")
    out = v.v / n
    out.flags.writeable = False
    return ColorVec(out, v.space)


def angle_between(a, b) -> float:
    """Angle in degrees between two bare 3-vectors (no space tags).

    Internal building block; the public API is angular_error_degrees.
    The cosine is formed from dot^2/(|a|^2 |b|^2), which is exact (and
    yields exactly zero) for identical inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aa = float(a @ a)
    bb = float(b @ b)
    if aa <= 0.0 or bb <= 0.0:
        raise DomainError("angular error undefined for zero-norm vectors")
    dot = float(a @ b)
    cos2 = min((dot * dot) / (aa * bb), 1.0)
    cos = math.copysign(math.sqrt(cos2), dot)
    return math.degrees(math.acos(cos))


def angular_error_degrees(a: ColorVec, b: ColorVec) -> float:
    """Angle in degrees between two same-space colors, in [0, 180].

    Scale-invariant: only the directions matter.
    """
    if a.space != b.space:
        raise UsageError(f"cannot compare colors across spaces: {a.space!r} vs {b.space!r}")
    return angle_between(a.v, b.v)


@dataclass(frozen=True, slots=True)
class ChromaticityUv:
    """CIE 1960 uniform chromaticity coordinates."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise DomainError(f"non-finite chromaticity ({self.u}, {self.v})")
        if not (0.0 < self.u < 1.0 and 0.0 < self.v < 1.0):
            raise DomainError(f"chromaticity out of range ({self.u}, {self.v})")


@dataclass(frozen=True, slots=True)
class Cct:
    """Correlated color temperature in kelvin, with its mired twin."""

    kelvin: float

    def __post_init__(self):
        if not (CCT_KELVIN_MIN <= self.kelvin <= CCT_KELVIN_MAX):
            raise DomainError(
                f"CCT {self.kelvin} K outside the supported range "
                f"[{CCT_KELVIN_MIN:.0f}, {CCT_KELVIN_MAX:.0f}] K"
            )

    @property
    def mired(self) -> float:
        return 1e6 / self.kelvin

    @staticmethod
    def from_mired(mired: float) -> "Cct":
        if mired <= 0.0:
            raise DomainError(f"mired must be positive, got {mired}")
        return Cct(1e6 / mired)


def xyz_to_uv(xyz: ColorVec) -> ChromaticityUv:
    """CIE 1960 uv from an XYZ color: u = 4X/(X+15Y+3Z), v = 6Y/(X+15Y+3Z)."""
    if xyz.space != XYZ_SPACE:
        raise UsageError(f"xyz_to_uv needs an XYZ-tagged color, got {xyz.space!r}")
    x, y, z = xyz.components()
    return uv_from_xyz_components(x, y, z)


def uv_from_xyz_components(x: float, y: float, z: float) -> ChromaticityUv:
    d = x + 15.0 * y + 3.0 * z
    if d <= 0.0:
        raise DomainError("degenerate XYZ: X + 15Y + 3Z must be positive")
    return ChromaticityUv(4.0 * x / d, 6.0 * y / d)


def uv_to_xyz_components(u: float, v: float, big_y: float = 1.0) -> tuple[float, float, float]:
    """Invert the 1960 uv projection at luminance Y = big_y."""
    if v <= 0.0:
        raise DomainError("uv with non-positive v cannot be lifted to XYZ")
    big_x = 1.5 * u / v * big_y
    big_z = (2.0 - 0.5 * u - 5.0 * v) / v * big_y  # from u+v+w terms of the 1960 diagram
    return (big_x, big_y, big_z)


# Robertson's isotemperature-line table: (mired, u, v, isotherm slope dv/du).
# Values are the published tabulation from Wyszecki & Stiles, "Color Science",
# 2nd ed., p. 228 (Robertson 1968), recorded verbatim. 31 rows, mired 0..600.
ROBERTSON_TABLE: tuple[tuple[float, float, float, float], ...] = (
    (0.0, 0.18006, 0.26352, -0.24341),
    (10.0, 0.18066, 0.26589, -0.25479),
    (20.0, 0.18133, 0.26846, -0.26876),
    (30.0, 0.18208, 0.27119, -0.28539),
    (40.0, 0.18293, 0.27407, -0.30470),
    (50.0, 0.18388, 0.27709, -0.32675),
    (60.0, 0.18494, 0.28021, -0.35156),
    (70.0, 0.18611, 0.28342, -0.37915),
    (80.0, 0.18740, 0.28668, -0.40955),
    (90.0, 0.18880, 0.28997, -0.44278),
    (100.0, 0.19032, 0.29326, -0.47888),
    (125.0, 0.19462, 0.30141, -0.58204),
    (150.0, 0.19962, 0.30921, -0.70471),
    (175.0, 0.20525, 0.31647, -0.84901),
    (200.0, 0.21142, 0.32312, -1.0182),
    (225.0, 0.21807, 0.32909, -1.2168),
    (250.0, 0.22511, 0.33439, -1.4512),
    (275.0, 0.23247, 0.33904, -1.7298),
    (300.0, 0.24010, 0.34308, -2.0637),
    (325.0, 0.24702, 0.34655, -2.4681),
    (350.0, 0.25591, 0.34951, -2.9641),
    (375.0, 0.26400, 0.35200, -3.5814),
    (400.0, 0.27218, 0.35407, -4.3633),
    (425.0, 0.28039, 0.35577, -5.3762),
    (450.0, 0.28863, 0.35714, -6.7262),
    (475.0, 0.29685, 0.35823, -8.5955),
    (500.0, 0.30505, 0.35907, -11.324),
    (525.0, 0.31320, 0.35968, -15.628),
    (550.0, 0.32129, 0.36011, -23.325),
    (575.0, 0.32931, 0.36038, -40.770),
    (600.0, 0.33724, 0.36051, -116.45),
)

# Maximum uv distance from the Planckian locus for which a CCT is meaningful.
MAX_LOCUS_DISTANCE_UV = 0.05

# Precomputed unit direction (du, dv) of each isotemperature line.
_ISO_DIRS: tuple[tuple[float, float], ...] = tuple(
    (1.0 / math.sqrt(1.0 + t * t), t / math.sqrt(1.0 + t * t))
    for (_, _, _, t) in ROBERTSON_TABLE
)


def _signed_isotherm_distance(u: float, v: float, i: int) -> float:
    """Signed uv distance from (u, v) to isotherm i (positive on one side)."""
    _, ui, vi, _ = ROBERTSON_TABLE[i]
    du, dv = _ISO_DIRS[i]
    # perpendicular distance: cross product of (point - locus) with line direction
    return (v - vi) * du - (u - ui) * dv


def robertson_cct_uv(uv: ChromaticityUv) -> Cct:
    """Robertson's method on 1960 uv coordinates.

    Finds the two adjacent isotemperature lines whose signed distances bracket
    zero, then interpolates the reciprocal temperature between them.
    """
    u, v = uv.u, uv.v

    d_prev = _signed_isotherm_distance(u, v, 0)
    if d_prev < 0.0:
        raise GamutError(
            f"chromaticity ({u:.5f}, {v:.5f}) is beyond the table's blue end (mired < 0)"
        )
    for i in range(1, len(ROBERTSON_TABLE)):
        d_cur = _signed_isotherm_distance(u, v, i)
        if d_cur < 0.0 or i == len(ROBERTSON_TABLE) - 1:
            if d_cur >= 0.0:
                raise GamutError(
                    f"chromaticity ({u:.5f}, {v:.5f}) is beyond the table's red end (mired > 600)"
                )
            w = d_prev / (d_prev - d_cur)  # fraction of the way toward row i
            m_prev = ROBERTSON_TABLE[i - 1][0]
            m_cur = ROBERTSON_TABLE[i][0]
            mired = m_prev + w * (m_cur - m_prev)
            # distance to the locus at the interpolated point, for the gamut check
            u_loc = ROBERTSON_TABLE[i - 1][1] + w * (ROBERTSON_TABLE[i][1] - ROBERTSON_TABLE[i - 1][1])
            v_loc = ROBERTSON_TABLE[i - 1][2] + w * (ROBERTSON_TABLE[i][2] - ROBERTSON_TABLE[i - 1][2])
            dist = math.hypot(u - u_loc, v - v_loc)
            if dist > MAX_LOCUS_DISTANCE_UV:
                raise GamutError(
                    f"chromaticity ({u:.5f}, {v:.5f}) is {dist:.4f} uv from the locus "
                    f"(limit {MAX_LOCUS_DISTANCE_UV})"
                )
            if mired <= 0.0:
                raise GamutError(f"interpolated mired {mired:.4f} out of range")
            return Cct.from_mired(mired)
        d_prev = d_cur
    raise GamutError("unreachable: isotherm scan fell through")  # pragma: no cover


def robertson_cct(xyz: ColorVec) -> Cct:
    """Correlated color temperature of an XYZ color via Robertson's method."""
    return robertson_cct_uv(xyz_to_uv(xyz))


def planckian_locus_uv(mired: float) -> ChromaticityUv:
    """Blackbody-locus uv at a mired value, interpolated from the Robertson table."""
    rows = ROBERTSON_TABLE
    if not (rows[0][0] <= mired <= rows[-1][0]):
        raise DomainError(f"mired {mired} outside the tabulated locus [0, 600]")
    for i in range(1, len(rows)):
        if mired <= rows[i][0]:
            m0, u0, v0, _ = rows[i - 1]
            m1, u1, v1, _ = rows[i]
            f = (mired - m0) / (m1 - m0)
            return ChromaticityUv(u0 + f * (u1 - u0), v0 + f * (v1 - v0))
    raise DomainError("unreachable")  # pragma: no cover
