"""Dataset I/O and the synthetic ground: virtual sensors with distinct raw
spaces, locus-based illuminant sampling, and a parametric nonlinear
preference policy.

The virtual-sensor generator and the planted preference stand in for private
multi-camera captures; they make cross-sensor claims testable at desk scale
and carry no fidelity claim to any vendor's tuning.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraProfile, blend_forward, interpolation_weight, save_profile
from .colorimetry import (
    Cct,
    ChromaticityUv,
    ColorVec,
    angle_between,
    normalize_l2,
    planckian_locus_uv,
    raw_vec,
    robertson_cct_uv,
    uv_from_xyz_components,
    uv_to_xyz_components,
    xyz_to_uv,
    xyz_vec,
)
from .errors import ConfigError, ParseError

logger = logging.getLogger(__name__)

# Calibration CCTs shared by all virtual sensors (the dominant A/D65 DNG pair).
VIRTUAL_CALIB_LOW_K = 2856.0
VIRTUAL_CALIB_HIGH_K = 6504.0

# Between these temperatures the illuminant locus blends linearly from the
# Planckian curve up to the CIE daylight curve; the two disagree by ~0.007 in
# xy at 4000 K, and a hard switch would make the preference policy
# discontinuous when a CCT shift crosses the seam.
LOCUS_BLEND_LOW_K = 3950.0
LOCUS_BLEND_HIGH_K = 4050.0

# vMF-style tangent jitter: mean angle of |N(0, sigma^2 I_2)| is sigma*sqrt(pi/2).
_MEAN_ABS_GAUSS_2D = math.sqrt(math.pi / 2.0)


def daylight_locus_xy(kelvin: float) -> tuple[float, float]:
    """CIE daylight-series chromaticity at a nominal temperature.

    Standard D-series polynomial (CIE 15, two x branches split at 7000 K;
    y = -3x^2 + 2.87x - 0.275). Accepts a little extrapolation below 4000 K
    for the locus blend region.
    """
    if not (3500.0 <= kelvin <= 25000.0):
        raise ConfigError(f"daylight locus undefined at {kelvin:.0f} K")
    t = 1e3 / kelvin
    if kelvin <= 7000.0:
        x = 0.244063 + 0.09911 * t + 2.9678 * t * t - 4.6070 * t * t * t
    else:
        x = 0.237040 + 0.24748 * t + 1.9018 * t * t - 2.0064 * t * t * t
    y = -3.000 * x * x + 2.870 * x - 0.275
    return (x, y)


def _xy_to_uv(x: float, y: float) -> ChromaticityUv:
    d = -2.0 * x + 12.0 * y + 3.0
    return ChromaticityUv(4.0 * x / d, 6.0 * y / d)


def locus_uv(mired: float) -> ChromaticityUv:
    """Illuminant-locus uv: daylight above ~4100 K, Planckian below ~3900 K,
    linearly blended in between. Continuous in mired."""
    kelvin = 1e6 / mired
    if kelvin >= LOCUS_BLEND_HIGH_K:
        return _xy_to_uv(*daylight_locus_xy(kelvin))
    if kelvin <= LOCUS_BLEND_LOW_K:
        return planckian_locus_uv(mired)
    w = (kelvin - LOCUS_BLEND_LOW_K) / (LOCUS_BLEND_HIGH_K - LOCUS_BLEND_LOW_K)
    day = _xy_to_uv(*daylight_locus_xy(kelvin))
    pl = planckian_locus_uv(mired)
    return ChromaticityUv(w * day.u + (1.0 - w) * pl.u, w * day.v + (1.0 - w) * pl.v)


@dataclass(frozen=True)
class VirtualSensor:
    """Synthetic XYZ->raw calibration pair standing in for a physical camera."""

    name: str
    forward_matrix_low: np.ndarray   # calibrated at 2856 K
    forward_matrix_high: np.ndarray  # calibrated at 6504 K
    seed: int


@dataclass(frozen=True)
class PreferencePolicy:
    """Parametric nonlinear white-balance preference.

    lam blends toward a locus-anchored target; delta_mired shifts the target
    CCT; tint_gain exaggerates the off-locus component. CCT-dependence makes
    the planted map nonlinear in XYZ, so a 3x3 matrix cannot represent it.
    """

    lam: float = 0.5
    delta_mired: float = 40.0
    tint_gain: float = 1.3

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"policy lambda must be in [0, 1], got {self.lam}")


@dataclass
class DatasetRecord:
    """One scene: per-front-end neutral estimates plus ground truth."""

    id: str
    camera: str
    neutral_estimates: dict[str, ColorVec]
    gt_preferred_raw: ColorVec
    gt_neutral_raw: ColorVec | None = None
    image_path: str | None = None


def make_virtual_sensor(seed: int, name: str | None = None, *,
                        perturbation: float = 0.35, twist_scale: float = 0.08):
    """Generate one virtual sensor and its CameraProfile.

    Base matrix: identity plus uniform(+/-perturbation) entries with the
    diagonal boosted for row dominance; the high-CCT matrix composes a small
    uniform(+/-twist_scale) chromatic twist onto the base. Candidates are
    rejected until both matrices are invertible, well conditioned, and map
    the probe illuminant set to strictly positive raw vectors.
    """
    name = name or f"vcam{seed}"
    rng = np.random.default_rng(seed)
    probes = _probe_illuminants()
    for _ in range(100):
        base = np.eye(3) + rng.uniform(-perturbation, perturbation, size=(3, 3))
        base[np.diag_indices(3)] += perturbation
        twist = np.eye(3) + rng.uniform(-twist_scale, twist_scale, size=(3, 3))
        high = twist @ base
        if _sensor_ok(base, high, probes):
            sensor = VirtualSensor(name, base, high, seed)
            profile = CameraProfile(
                sensor_name=name,
                forward_matrix_1=base,
                forward_matrix_2=high,
                calib_cct_1=Cct(VIRTUAL_CALIB_LOW_K),
                calib_cct_2=Cct(VIRTUAL_CALIB_HIGH_K),
            )
            return sensor, profile
    raise ConfigError(f"virtual-sensor generation failed after 100 candidates (seed {seed})")


def _probe_illuminants() -> np.ndarray:
    """XYZ probe set covering the usable CCT band plus off-locus margin.

    The 0.012 uv margin is six sigma of the default sampler chroma noise;
    anything larger leaves the physical gamut (negative Z) at the red end.
    """
    pts = []
    for mired in np.linspace(105.0, 480.0, 26):
        uv = locus_uv(float(mired))
        for du, dv in ((0.0, 0.0), (0.012, 0.0), (-0.012, 0.0), (0.0, 0.012), (0.0, -0.012)):
            xyz = uv_to_xyz_components(uv.u + du, uv.v + dv)
            if min(xyz) > 1e-6:
                pts.append(xyz)
    return np.asarray(pts)


def _sensor_ok(low: np.ndarray, high: np.ndarray, probes: np.ndarray) -> bool:
    for m in (low, high, 0.5 * (low + high)):
        if abs(np.linalg.det(m)) < 1e-6:
            return False
        if np.linalg.cond(m) >= 50.0:
            return False
        if np.min(probes @ m.T) <= 1e-4:
            return False
    return True


def sample_illuminants(
    n: int,
    cct_low: float,
    cct_high: float,
    chroma_noise: float,
    seed,
) -> list[ColorVec]:
    """Sample XYZ illuminants: CCT uniform in mired, chromaticity on the
    locus plus Gaussian uv noise, lifted to XYZ at Y = 1."""
    if n < 1:
        raise ConfigError(f"need at least one sample, got {n}")
    if not (1667.0 <= cct_low < cct_high):
        raise ConfigError(f"bad CCT bounds [{cct_low}, {cct_high}]")
    if 1e6 / cct_low > 590.0 or 1e6 / cct_high < 5.0:
        raise ConfigError("CCT bounds outside Robertson validity")
    if chroma_noise < 0.0:
        raise ConfigError("chroma_noise must be nonnegative")
    rng = np.random.default_rng(seed)  # accepts ints and SeedSequences
    mireds = rng.uniform(1e6 / cct_high, 1e6 / cct_low, size=n)
    noise = rng.normal(0.0, chroma_noise, size=(n, 2)) if chroma_noise > 0.0 else np.zeros((n, 2))
    out = []
    for m, (du, dv) in zip(mireds, noise):
        uv = locus_uv(float(m))
        out.append(xyz_vec(uv_to_xyz_components(uv.u + du, uv.v + dv)))
    return out


def synth_preference(l_xyz: ColorVec, policy: PreferencePolicy) -> ColorVec:
    """Planted preference: CCT-shifted locus anchor plus exaggerated tint.

    A shifted CCT falling outside the tabulated locus is clamped (logged at
    debug level, not fatal).
    """
    if policy.lam == 0.0:
        return normalize_l2(l_xyz)
    uv = xyz_to_uv(l_xyz)
    cct = robertson_cct_uv(uv)
    m = cct.mired
    anchor = locus_uv(m)
    off_u = uv.u - anchor.u
    off_v = uv.v - anchor.v

    m_target = m + policy.delta_mired
    m_clamped = min(max(m_target, 5.0), 595.0)
    if m_clamped != m_target:
        logger.debug("preference CCT shift clamped: %.2f -> %.2f mired", m_target, m_clamped)
    shifted = locus_uv(m_clamped)
    target_uv = (shifted.u + policy.tint_gain * off_u, shifted.v + policy.tint_gain * off_v)
    target = np.asarray(uv_to_xyz_components(target_uv[0], target_uv[1]))

    base = l_xyz.v / l_xyz.v[1]  # rescale to Y = 1 so the blend weights mean what they say
    mixed = (1.0 - policy.lam) * base + policy.lam * target
    return normalize_l2(xyz_vec(mixed))


def _tangent_jitter(unit: np.ndarray, mean_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate a unit vector by a random tangent offset with mean angle mean_deg."""
    sigma = math.radians(mean_deg) / _MEAN_ABS_GAUSS_2D
    g = rng.normal(0.0, sigma, size=2)
    theta = math.hypot(g[0], g[1])
    if theta == 0.0:
        return unit
    # orthonormal tangent basis at `unit`
    helper = np.array([1.0, 0.0, 0.0]) if abs(unit[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(unit, helper)
    e1 /= math.sqrt(float(e1 @ e1))
    e2 = np.cross(unit, e1)
    direction = (g[0] * e1 + g[1] * e2) / theta
    return math.cos(theta) * unit + math.sin(theta) * direction


def _raw_direction(forward: np.ndarray, xyz: np.ndarray, sensor: str, what: str) -> np.ndarray:
    raw = forward @ xyz
    if np.min(raw) <= 0.0:
        raise ConfigError(
            f"sensor {sensor!r} maps a sampled illuminant to a non-positive {what} vector; "
            "regenerate the sensor with a different seed"
        )
    return raw / math.sqrt(float(raw @ raw))


def generate_synthetic_dataset(
    sensor: VirtualSensor,
    profile: CameraProfile,
    n: int,
    policy: PreferencePolicy,
    estimator_noise_deg: float,
    seed: int,
    *,
    cct_low: float = 3400.0,
    cct_high: float = 7000.0,
    chroma_noise: float = 0.002,
    front_end: str = "synthetic",
    id_prefix: str = "scene",
) -> list[DatasetRecord]:
    """Assemble supervision records for one sensor.

    Each ground-truth vector (neutral and preferred) goes through the forward
    blend at its own CCT, so resolving the CST from the raw vector inverts
    the generation exactly. The synthetic front-end estimate is the neutral
    ground truth jittered on the sphere with mean angle estimator_noise_deg.
    The same seed reproduces the same XYZ scene list for any sensor, which
    pairs records across sensors by id.
    """
    if estimator_noise_deg < 0.0:
        raise ConfigError("estimator_noise_deg must be nonnegative")
    ss = np.random.SeedSequence(seed)
    illum_seed, noise_seed = ss.spawn(2)
    illuminants = sample_illuminants(n, cct_low, cct_high, chroma_noise, seed=illum_seed)
    noise_rng = np.random.default_rng(noise_seed)

    records = []
    for i, l_xyz in enumerate(illuminants):
        xyz_dir = l_xyz.v / math.sqrt(float(l_xyz.v @ l_xyz.v))
        cct_n = robertson_cct_uv(xyz_to_uv(l_xyz))
        alpha_n = interpolation_weight(cct_n, profile.calib_cct_1, profile.calib_cct_2)
        raw_n = _raw_direction(blend_forward(profile, alpha_n), xyz_dir, sensor.name, "neutral")

        pref_xyz = synth_preference(l_xyz, policy)
        cct_p = robertson_cct_uv(xyz_to_uv(pref_xyz))
        alpha_p = interpolation_weight(cct_p, profile.calib_cct_1, profile.calib_cct_2)
        raw_p = _raw_direction(blend_forward(profile, alpha_p), pref_xyz.v, sensor.name, "preferred")

        if estimator_noise_deg > 0.0:
            est = _tangent_jitter(raw_n, estimator_noise_deg, noise_rng)
            est = np.maximum(est, 0.0)
        else:
            est = raw_n
        records.append(
            DatasetRecord(
                id=f"{id_prefix}-{i:05d}",
                camera=sensor.name,
                neutral_estimates={front_end: raw_vec(est, sensor.name)},
                gt_preferred_raw=raw_vec(raw_p, sensor.name),
                gt_neutral_raw=raw_vec(raw_n, sensor.name),
            )
        )
    return records


def attach_ideal_front_end(records: list[DatasetRecord], name: str = "ideal") -> None:
    """Expose the stored neutral ground truth as a noise-free front end."""
    for rec in records:
        if rec.gt_neutral_raw is None:
            raise ConfigError(f"record {rec.id!r} has no synthetic neutral ground truth")
        rec.neutral_estimates[name] = rec.gt_neutral_raw


def attach_predictions(
    records: list[DatasetRecord], front_end: str, predictions: dict[str, ColorVec]
) -> None:
    """Merge externally produced predictions, retagged to each record's camera."""
    for rec in records:
        if rec.id not in predictions:
            raise ConfigError(f"predictions are missing record {rec.id!r}")
        rec.neutral_estimates[front_end] = raw_vec(predictions[rec.id].v, rec.camera)


# ---------------------------------------------------------------------------
# dataset files

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_vec(v: ColorVec) -> str:
    return " ".join(_fmt(c) for c in v.components())


def write_dataset(records: list[DatasetRecord], path, profile_paths: dict[str, str]) -> None:
    """Line-oriented dataset document; see docs/formats.md."""
    lines = []
    for camera in sorted(profile_paths):
        lines.append(f"#camera {camera} {profile_paths[camera]}")
    for rec in records:
        fields = [rec.id, rec.camera, f"gt_preferred {_fmt_vec(rec.gt_preferred_raw)}"]
        if rec.gt_neutral_raw is not None:
            fields.append(f"gt_neutral {_fmt_vec(rec.gt_neutral_raw)}")
        for name in sorted(rec.neutral_estimates):
            fields.append(f"est:{name} {_fmt_vec(rec.neutral_estimates[name])}")
        if rec.image_path is not None:
            fields.append(f"image {rec.image_path}")
        lines.append("|".join(fields))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def _parse_vec(text: str, camera: str, line_no: int, is_xyz: bool = False) -> ColorVec:
    parts = text.split()
    if len(parts) != 3:
        raise ParseError(f"expected 3 components, got {text!r}", line=line_no)
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise ParseError(f"bad number in {text!r}", line=line_no) from exc
    return xyz_vec(vals) if is_xyz else raw_vec(vals, camera)


def read_dataset(path) -> tuple[list[DatasetRecord], dict[str, str]]:
    records: list[DatasetRecord] = []
    profile_paths: dict[str, str] = {}
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw_line in enumerate(fh, start=1):
            line = raw_line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#camera "):
                parts = line.split()
                if len(parts) != 3:
                    raise ParseError("malformed #camera header", line=line_no)
                profile_paths[parts[1]] = parts[2]
                continue
            if line.startswith("#"):
                continue
            fields = line.split("|")
            if len(fields) < 3:
                raise ParseError(f"record needs id|camera|gt_preferred..., got {line!r}", line=line_no)
            rec_id, camera = fields[0], fields[1]
            if rec_id in seen_ids:
                raise ParseError(f"duplicate record id {rec_id!r}", line=line_no)
            if profile_paths and camera not in profile_paths:
                raise ParseError(f"record {rec_id!r} references unknown camera {camera!r}", line=line_no)
            seen_ids.add(rec_id)
            gt_preferred = None
            gt_neutral = None
            image_path = None
            estimates: dict[str, ColorVec] = {}
            for f in fields[2:]:
                key, _, rest = f.partition(" ")
                if key == "gt_preferred":
                    gt_preferred = _parse_vec(rest, camera, line_no)
                elif key == "gt_neutral":
                    gt_neutral = _parse_vec(rest, camera, line_no)
                elif key.startswith("est:"):
                    estimates[key[4:]] = _parse_vec(rest, camera, line_no)
                elif key == "image":
                    image_path = rest
                else:
                    raise ParseError(f"unknown record field {key!r}", line=line_no)
            if gt_preferred is None:
                raise ParseError(f"record {rec_id!r} lacks gt_preferred", line=line_no)
            records.append(
                DatasetRecord(
                    id=rec_id,
                    camera=camera,
                    neutral_estimates=estimates,
                    gt_preferred_raw=gt_preferred,
                    gt_neutral_raw=gt_neutral,
                    image_path=image_path,
                )
            )
    return records, profile_paths


def split(records: list, ratios, seed: int):
    """Seeded shuffle then contiguous split; exact partition of the input."""
    if not records:
        raise ConfigError("cannot split an empty dataset")
    ratios = [float(r) for r in ratios]
    if any(r <= 0.0 for r in ratios):
        raise ConfigError(f"split ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    shuffled = [records[i] for i in order]
    bounds = [0]
    cum = 0.0
    for r in ratios:
        cum += r
        bounds.append(int(math.floor(cum * len(records) + 0.5)))
    bounds[-1] = len(records)
    return tuple(shuffled[bounds[i]: bounds[i + 1]] for i in range(len(ratios)))
