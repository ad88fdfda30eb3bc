"""Camera color calibration and the CCT-interpolated color space transform.

A CameraProfile stores the two pre-calibrated XYZ->raw forward matrices (the
DNG ColorMatrix convention) and their calibration CCTs. The raw->XYZ CST for
an arbitrary illuminant comes from inverse-CCT linear interpolation between
the calibration points; because the interpolation weight depends on the CCT
of the illuminant, which itself needs a CST, resolve_cst runs a small
fixed-point iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .colorimetry import (
    Cct,
    ColorVec,
    XYZ_SPACE,
    normalize_l2,
    raw_space,
    robertson_cct_uv,
    uv_from_xyz_components,
)
from .errors import ConfigError, DomainError, NumericError, ParseError, UsageError

# Eq.-3 blend modes. forward-then-invert blends the stored XYZ->raw matrices
# and inverts the blend (DNG-conformant); invert-then-blend blends the
# raw->XYZ inverses, the literal reading of the interpolation formula.
MODE_FORWARD_THEN_INVERT = "forward-then-invert"
MODE_INVERT_THEN_BLEND = "invert-then-blend"
INTERPOLATION_MODES = (MODE_FORWARD_THEN_INVERT, MODE_INVERT_THEN_BLEND)

MIN_ABS_DETERMINANT = 1e-12

# Fixed-point iteration knobs: tolerance in mired, hard iteration cap.
RESOLVE_TOL_MIRED = 0.01
RESOLVE_MAX_ITERATIONS = 20


def as_mat3(values, what: str = "matrix") -> np.ndarray:
    m = np.asarray(values, dtype=np.float64)
    if m.shape != (3, 3):
        raise UsageError(f"{what} must be 3x3, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{what} has non-finite entries")
    return m


def invert_mat3(m: np.ndarray, what: str = "matrix") -> np.ndarray:
    det = float(np.linalg.det(m))
    if abs(det) <= MIN_ABS_DETERMINANT:
        raise NumericError(f"{what} is singular (|det| = {abs(det):.3e})")
    return np.linalg.inv(m)


@dataclass(frozen=True)
class CameraProfile:
    """Dual-illuminant calibration of one sensor.

    forward_matrix_1/2 map XYZ to this sensor's raw space, calibrated at
    calib_cct_1/2 (conventionally illuminant A and D65).
    """

    sensor_name: str
    forward_matrix_1: np.ndarray
    forward_matrix_2: np.ndarray
    calib_cct_1: Cct
    calib_cct_2: Cct

    def __post_init__(self):
        object.__setattr__(self, "forward_matrix_1", as_mat3(self.forward_matrix_1, "forward_matrix_1"))
        object.__setattr__(self, "forward_matrix_2", as_mat3(self.forward_matrix_2, "forward_matrix_2"))
        invert_mat3(self.forward_matrix_1, f"forward_matrix_1 of profile {self.sensor_name!r}")
        invert_mat3(self.forward_matrix_2, f"forward_matrix_2 of profile {self.sensor_name!r}")
        if abs(self.calib_cct_1.mired - self.calib_cct_2.mired) <= 1.0:
            raise ConfigError(
                f"profile {self.sensor_name!r}: calibration CCTs must differ by more "
                f"than 1 mired ({self.calib_cct_1.kelvin} K vs {self.calib_cct_2.kelvin} K)"
            )

    @property
    def space(self) -> str:
        return raw_space(self.sensor_name)


@dataclass(frozen=True)
class CstResolution:
    """Result of the alpha/CCT fixed point for one illuminant."""

    alpha: float
    cct: Cct
    cst_raw_to_xyz: np.ndarray
    cst_xyz_to_raw: np.ndarray
    iterations: int
    converged: bool


def interpolation_weight(c: Cct, c_la: Cct, c_lb: Cct) -> float:
    """Inverse-CCT interpolation weight, clamped to [0, 1].

    alpha = (1/c - 1/c_lb) / (1/c_la - 1/c_lb), computed in mired.
    """
    denom = c_la.mired - c_lb.mired
    if abs(denom) <= 1.0:
        raise ConfigError("calibration CCTs too close: interpolation weight undefined")
    alpha = (c.mired - c_lb.mired) / denom
    return min(max(alpha, 0.0), 1.0)


def blend_forward(profile: CameraProfile, alpha: float) -> np.ndarray:
    """alpha-weighted blend of the stored XYZ->raw forward matrices."""
    return alpha * profile.forward_matrix_1 + (1.0 - alpha) * profile.forward_matrix_2


def interpolate_cst(
    profile: CameraProfile, alpha: float, mode: str = MODE_FORWARD_THEN_INVERT
) -> np.ndarray:
    """raw->XYZ CST at interpolation weight alpha."""
    if not (0.0 <= alpha <= 1.0):
        raise UsageError(f"alpha must be in [0, 1], got {alpha}")
    if mode == MODE_FORWARD_THEN_INVERT:
        blended = blend_forward(profile, alpha)
        return invert_mat3(blended, f"blended forward matrix of profile {profile.sensor_name!r}")
    if mode == MODE_INVERT_THEN_BLEND:
        inv1 = invert_mat3(profile.forward_matrix_1, f"forward_matrix_1 of {profile.sensor_name!r}")
        inv2 = invert_mat3(profile.forward_matrix_2, f"forward_matrix_2 of {profile.sensor_name!r}")
        cst = alpha * inv1 + (1.0 - alpha) * inv2
        invert_mat3(cst, f"blended CST of profile {profile.sensor_name!r}")
        return cst
    raise UsageError(f"unknown interpolation mode {mode!r}")


def _xyz_direction(cst: np.ndarray, raw_components: np.ndarray) -> np.ndarray:
    xyz = np.maximum(cst @ raw_components, 0.0)
    n = math.sqrt(float(xyz @ xyz))
    if n <= 0.0:
        raise DomainError("raw->XYZ transform collapsed the vector to zero")
    return xyz / n


def resolve_cst(
    profile: CameraProfile, l_raw: ColorVec, mode: str = MODE_FORWARD_THEN_INVERT
) -> CstResolution:
    """Resolve the illuminant-dependent CST by fixed-point iteration.

    Starts at alpha = 0.5 and alternates CST -> CCT -> alpha until the CCT
    moves by less than RESOLVE_TOL_MIRED, up to RESOLVE_MAX_ITERATIONS.
    Non-convergence returns the last iterate with converged=False; a CCT
    outside the Robertson gamut at any iterate raises GamutError.
    """
    if l_raw.space != profile.space:
        raise UsageError(
            f"illuminant tagged {l_raw.space!r} does not belong to profile {profile.sensor_name!r}"
        )
    raw = l_raw.v

    # alpha-independent CST: one CCT evaluation settles everything
    static = bool(np.array_equal(profile.forward_matrix_1, profile.forward_matrix_2))

    alpha = 0.5
    prev_mired = None
    cct = None
    cst = None
    converged = False
    iterations = 0
    for _ in range(RESOLVE_MAX_ITERATIONS):
        iterations += 1
        cst = interpolate_cst(profile, alpha, mode)
        xyz = _xyz_direction(cst, raw)
        uv = uv_from_xyz_components(float(xyz[0]), float(xyz[1]), float(xyz[2]))
        cct = robertson_cct_uv(uv)
        alpha = interpolation_weight(cct, profile.calib_cct_1, profile.calib_cct_2)
        if static:
            converged = True
            break
        if prev_mired is not None and abs(cct.mired - prev_mired) < RESOLVE_TOL_MIRED:
            converged = True
            break
        prev_mired = cct.mired

    cst_inv = invert_mat3(cst, f"resolved CST of profile {profile.sensor_name!r}")
    return CstResolution(
        alpha=alpha,
        cct=cct,
        cst_raw_to_xyz=cst,
        cst_xyz_to_raw=cst_inv,
        iterations=iterations,
        converged=converged,
    )


def raw_to_xyz(l_raw: ColorVec, cst: np.ndarray) -> ColorVec:
    """Apply a raw->XYZ CST: matrix product, clamp at zero, L2-normalize."""
    if not l_raw.space.startswith("raw:"):
        raise UsageError(f"raw_to_xyz needs a raw-tagged color, got {l_raw.space!r}")
    out = np.maximum(as_mat3(cst, "cst") @ l_raw.v, 0.0)
    if float(out @ out) <= 0.0:
        raise DomainError("raw->XYZ result is all-zero after clamping")
    return normalize_l2(ColorVec.create(out, XYZ_SPACE))


def xyz_to_raw(l_xyz: ColorVec, cst: np.ndarray, sensor_name: str) -> ColorVec:
    """Apply the inverse of a raw->XYZ CST, clamp at zero, L2-normalize."""
    if l_xyz.space != XYZ_SPACE:
        raise UsageError(f"xyz_to_raw needs an XYZ-tagged color, got {l_xyz.space!r}")
    inv = invert_mat3(as_mat3(cst, "cst"), "cst")
    out = np.maximum(inv @ l_xyz.v, 0.0)
    if float(out @ out) <= 0.0:
        raise DomainError("XYZ->raw result is all-zero after clamping")
    return normalize_l2(ColorVec.create(out, raw_space(sensor_name)))


# ---------------------------------------------------------------------------
# profile documents

PROFILE_MAGIC = "wbpref-profile"
PROFILE_VERSION = "1"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_profile(profile: CameraProfile, path) -> None:
    lines = [f"{PROFILE_MAGIC} v{PROFILE_VERSION}", f"sensor {profile.sensor_name}"]
    for name, m in (
        ("forward_matrix_1", profile.forward_matrix_1),
        ("forward_matrix_2", profile.forward_matrix_2),
    ):
        lines.append(f"{name} " + " ".join(_fmt(v) for v in m.reshape(-1)))
    lines.append(f"calibration_cct_1 {_fmt(profile.calib_cct_1.kelvin)}")
    lines.append(f"calibration_cct_2 {_fmt(profile.calib_cct_2.kelvin)}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_profile(path) -> CameraProfile:
    with open(path, "r", encoding="ascii") as fh:
        raw_lines = [ln.strip() for ln in fh]
    lines = [ln for ln in raw_lines if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith(PROFILE_MAGIC):
        raise ParseError(f"{path}: not a wbpref profile document", line=1)
    if lines[0] != f"{PROFILE_MAGIC} v{PROFILE_VERSION}":
        raise ParseError(f"{path}: unsupported profile version {lines[0]!r}", line=1)
    fields: dict[str, list[str]] = {}
    for i, ln in enumerate(lines[1:], start=2):
        key, _, rest = ln.partition(" ")
        if key in fields:
            raise ParseError(f"{path}: duplicate field {key!r}", line=i)
        fields[key] = rest.split()
    try:
        sensor = " ".join(fields.pop("sensor"))
        fm1 = np.array([float(v) for v in fields.pop("forward_matrix_1")]).reshape(3, 3)
        fm2 = np.array([float(v) for v in fields.pop("forward_matrix_2")]).reshape(3, 3)
        cct1 = Cct(float(fields.pop("calibration_cct_1")[0]))
        cct2 = Cct(float(fields.pop("calibration_cct_2")[0]))
    except (KeyError, ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed or missing profile field ({exc})") from exc
    if fields:
        raise ParseError(f"{path}: unknown profile fields {sorted(fields)}")
    return CameraProfile(sensor, fm1, fm2, cct1, cct2)
