"""Cross-camera neutral illuminant front-ends: statistical estimators over
thumbnail raw images, image I/O (binary PPM and PFM), and ingestion of
externally produced predictions.

Estimators expect small, black-level corrected, linear-light images; no
resizing or demosaicing happens here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .colorimetry import ColorVec, raw_vec
from .errors import ConfigError, DomainError, ParseError, UsageError

DEFAULT_SATURATION = 0.98
DEFAULT_DARK = 0.0


@dataclass(frozen=True)
class RawImage:
    """Interleaved linear RGB in [0, 1], shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] < 1 or p.shape[1] < 1:
            raise UsageError(f"image must have shape (h, w, 3), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise DomainError("image has non-finite values")
        if p.min() < 0.0 or p.max() > 1.0:
            raise DomainError(
                f"image values outside [0, 1]: min {p.min():.4g}, max {p.max():.4g}"
            )
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class EstimatorConfig:
    """Masking thresholds shared by all estimators.

    A pixel is excluded when any channel exceeds saturation_threshold or
    falls below dark_threshold; (1.0, 0.0) disables masking entirely.
    """

    saturation_threshold: float = DEFAULT_SATURATION
    dark_threshold: float = DEFAULT_DARK

    def __post_init__(self):
        if not (0.0 < self.saturation_threshold <= 1.0):
            raise ConfigError(f"saturation_threshold must be in (0, 1], got {self.saturation_threshold}")
        if not (0.0 <= self.dark_threshold < 1.0):
            raise ConfigError(f"dark_threshold must be in [0, 1), got {self.dark_threshold}")
        if self.dark_threshold >= self.saturation_threshold:
            raise ConfigError("dark_threshold must be below saturation_threshold")


# ---------------------------------------------------------------------------
# image file I/O: binary PPM (P6) and PFM (PF)

def load_raw_image(path) -> RawImage:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"P6":
        return _parse_ppm(data, path)
    if data[:2] == b"PF":
        return _parse_pfm(data, path)
    raise ParseError(f"{path}: unknown image magic {data[:2]!r} (supported: P6 PPM, PF PFM)")


def _ppm_tokens(data: bytes, count: int, path):
    """First `count` whitespace/comment-delimited header tokens and the
    offset one whitespace byte past the last one."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise ParseError(f"{path}: truncated header", offset=i)
        c = data[i:i + 1]
        if c == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if i >= len(data) or not data[i:i + 1].isspace():
        raise ParseError(f"{path}: missing whitespace after header", offset=i)
    return tokens, i + 1


def _parse_ppm(data: bytes, path) -> RawImage:
    tokens, start = _ppm_tokens(data, 4, path)
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise ParseError(f"{path}: malformed PPM header") from exc
    if width < 1 or height < 1 or maxval not in (255, 65535):
        raise ParseError(f"{path}: unsupported PPM geometry {width}x{height} maxval {maxval}")
    bytes_per = 1 if maxval == 255 else 2
    expected = width * height * 3 * bytes_per
    payload = data[start:start + expected]
    if len(payload) != expected:
        raise ParseError(
            f"{path}: truncated PPM payload, expected {expected} bytes, got {len(payload)}"
        )
    dtype = np.uint8 if maxval == 255 else np.dtype(">u2")  # 16-bit PPM is big-endian
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float64).reshape(height, width, 3)
    return RawImage(arr / maxval)


def save_ppm(img: RawImage, path, maxval: int = 65535) -> None:
    if maxval not in (255, 65535):
        raise ConfigError(f"PPM maxval must be 255 or 65535, got {maxval}")
    header = f"P6\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    scaled = np.rint(img.pixels * maxval)
    dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(scaled.astype(dtype).tobytes())


def _parse_pfm(data: bytes, path) -> RawImage:
    tokens, start = _ppm_tokens(data, 4, path)
    if tokens[0] != b"PF":
        raise ParseError(f"{path}: grayscale PFM (Pf) is not supported")
    try:
        width, height = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError as exc:
        raise ParseError(f"{path}: malformed PFM header") from exc
    if scale == 0.0:
        raise ParseError(f"{path}: PFM scale must be nonzero")
    expected = width * height * 3 * 4
    payload = data[start:start + expected]
    if len(payload) != expected:
        raise ParseError(
            f"{path}: truncated PFM payload, expected {expected} bytes, got {len(payload)}"
        )
    dtype = np.dtype("<f4") if scale < 0.0 else np.dtype(">f4")
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float64).reshape(height, width, 3)
    arr = arr[::-1]  # PFM stores rows bottom-to-top
    return RawImage(arr)


def save_pfm(img: RawImage, path) -> None:
    """Little-endian PFM (scale -1.0); float32 values round-trip bit-exactly."""
    header = f"PF\n{img.width} {img.height}\n-1.0\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.pixels[::-1].astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# estimators

def _masked_pixels(img: RawImage, cfg: EstimatorConfig) -> np.ndarray:
    p = img.pixels.reshape(-1, 3)
    # a channel strictly above saturation or strictly below dark excludes the pixel
    keep = ~np.any((p > cfg.saturation_threshold) | (p < cfg.dark_threshold), axis=1)
    out = p[keep]
    if out.shape[0] == 0:
        raise DomainError("no pixel passes the saturation/dark mask")
    return out


def gray_world(img: RawImage, cfg: EstimatorConfig = EstimatorConfig(),
               sensor: str = "unknown") -> ColorVec:
    """Per-channel arithmetic mean over masked pixels, L2-normalized."""
    means = _masked_pixels(img, cfg).mean(axis=0)
    if float(means @ means) <= 0.0:
        raise DomainError("masked image mean is the zero vector")
    return raw_vec(means / math.sqrt(float(means @ means)), sensor)


def minkowski_estimate(img: RawImage, p: float, cfg: EstimatorConfig = EstimatorConfig(),
                       sensor: str = "unknown") -> ColorVec:
    """Minkowski power mean per channel: (sum c^p / N)^(1/p); p=inf is the max."""
    if not (p >= 1.0):
        raise ConfigError(f"Minkowski norm must satisfy p >= 1, got {p}")
    pix = _masked_pixels(img, cfg)
    if math.isinf(p):
        est = pix.max(axis=0)
    else:
        est = np.power(np.mean(np.power(pix, p), axis=0), 1.0 / p)
    if float(est @ est) <= 0.0:
        raise DomainError("Minkowski estimate is the zero vector")
    return raw_vec(est / math.sqrt(float(est @ est)), sensor)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian truncated at 3 sigma, renormalized to sum 1."""
    radius = int(math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _convolve1d(channel: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Dense 1-D convolution with reflective boundary handling."""
    radius = (len(kernel) - 1) // 2
    if channel.shape[axis] < radius + 1:
        raise DomainError(
            f"image extent {channel.shape[axis]} too small for kernel radius {radius}"
        )
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(channel, pad, mode="reflect")
    out = np.zeros_like(channel)
    for i, w in enumerate(kernel):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(i, i + channel.shape[axis])
        out += w * padded[tuple(sl)]
    return out

# central-difference stencils for first/second derivatives
_D1 = np.array([-0.5, 0.0, 0.5])
_D2 = np.array([1.0, -2.0, 1.0])


def gray_edge(
    img: RawImage,
    n: int = 1,
    p: float = 5.0,
    sigma: float = 1.0,
    weight_map: np.ndarray | None = None,
    cfg: EstimatorConfig = EstimatorConfig(),
    sensor: str = "unknown",
) -> ColorVec:
    """Gray-edge estimate: Minkowski pooling of per-channel derivative
    magnitudes after optional Gaussian smoothing.

    n is the derivative order (1 or 2); an optional nonnegative per-pixel
    weight map scales the magnitudes before pooling (the hook for externally
    computed edge weightings).
    """
    if n not in (1, 2):
        raise ConfigError(f"derivative order must be 1 or 2, got {n}")
    if not (p >= 1.0):
        raise ConfigError(f"Minkowski norm must satisfy p >= 1, got {p}")
    if sigma < 0.0:
        raise ConfigError(f"sigma must be nonnegative, got {sigma}")
    if min(img.width, img.height) < 2 * n + 1:
        raise DomainError(
            f"image {img.width}x{img.height} too small for an order-{n} derivative stencil"
        )
    if weight_map is not None:
        weight_map = np.asarray(weight_map, dtype=np.float64)
        if weight_map.shape != (img.height, img.width):
            raise UsageError(
                f"weight map shape {weight_map.shape} does not match image "
                f"{(img.height, img.width)}"
            )
        if np.any(weight_map < 0.0) or not np.all(np.isfinite(weight_map)):
            raise UsageError("weight map must be finite and nonnegative")

    stencil = _D1 if n == 1 else _D2
    mags = []
    for ch in range(3):
        channel = img.pixels[:, :, ch]
        if sigma > 0.0:
            k = gaussian_kernel(sigma)
            channel = _convolve1d(_convolve1d(channel, k, 0), k, 1)
        gy = _convolve1d(channel, stencil, 0)
        gx = _convolve1d(channel, stencil, 1)
        mags.append(np.sqrt(gx * gx + gy * gy))
    mag = np.stack(mags, axis=-1)
    if weight_map is not None:
        mag = mag * weight_map[:, :, None]
    flat = mag.reshape(-1, 3)
    if math.isinf(p):
        est = flat.max(axis=0)
    else:
        est = np.power(np.mean(np.power(flat, p), axis=0), 1.0 / p)
    norm = math.sqrt(float(est @ est))
    if norm <= 0.0:
        raise DomainError("all image gradients are zero; gray-edge is undefined")
    return raw_vec(est / norm, sensor)


# ---------------------------------------------------------------------------
# predictions files

def load_external_predictions(path, sensor: str = "external") -> dict[str, ColorVec]:
    """Read `<record-id> <r> <g> <b>` lines; `#` starts a comment."""
    out: dict[str, ColorVec] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw_line in enumerate(fh, start=1):
            line = raw_line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(f"expected '<id> <r> <g> <b>', got {line!r}", line=line_no)
            rec_id = parts[0]
            if rec_id in out:
                raise ParseError(f"duplicate record id {rec_id!r}", line=line_no)
            try:
                vals = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"bad number in {line!r}", line=line_no) from exc
            if min(vals) < 0.0 or max(vals) <= 0.0:
                raise ParseError(f"prediction for {rec_id!r} must be a nonnegative, "
                                 f"nonzero vector", line=line_no)
            out[rec_id] = raw_vec(vals, sensor)
    return out


def write_predictions(predictions: dict[str, ColorVec], path, header_lines=()) -> None:
    lines = [f"# {h}" for h in header_lines]
    for rec_id in sorted(predictions):
        v = predictions[rec_id]
        lines.append(rec_id + " " + " ".join(format(c, ".17g") for c in v.components()))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
