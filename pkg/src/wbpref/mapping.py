"""The preference mapping: polynomial kernel, the 539-parameter network
forward pass, two least-squares baselines, model serialization, and the full
inference pipeline (raw -> XYZ -> mapping -> raw).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraProfile, CstResolution, resolve_cst
from .colorimetry import ColorVec, XYZ_SPACE, raw_space
from .errors import DomainError, FitError, NumericError, ParseError, UsageError

BN_EPSILON = 1e-5
ELU_ALPHA = 1.0

# (input, output) dims of the four linear layers
LAYER_DIMS = ((10, 16), (16, 8), (8, 16), (16, 3))

MODEL_KIND_MLP = "mlp"
MODEL_KIND_3X3 = "three-by-three"
MODEL_KIND_POLY = "polynomial"

SPACE_XYZ = "xyz"
SPACE_RAW = "raw"

# Tunable parameters, in serialization / optimizer order. Batch-norm running
# stats are state, not parameters, and live in STATE_FIELDS.
PARAM_FIELDS = ("w1", "b1", "bn_gamma", "bn_beta", "w2", "b2", "w3", "b3", "w4", "b4")
STATE_FIELDS = ("bn_mean", "bn_var")

_SHAPES = {
    "w1": (10, 16), "b1": (16,), "bn_gamma": (16,), "bn_beta": (16,),
    "bn_mean": (16,), "bn_var": (16,),
    "w2": (16, 8), "b2": (8,), "w3": (8, 16), "b3": (16,),
    "w4": (16, 3), "b4": (3,),
}


@dataclass
class PreferenceMlp:
    """Four linear layers with ELU activations and first-layer batch norm.

    539 tunable parameters by construction: (176, 136, 144, 51) from the
    linear layers plus 32 batch-norm scale/shift. Treat instances as
    immutable once training is done.
    """

    w1: np.ndarray
    b1: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray

    def __post_init__(self):
        for name in PARAM_FIELDS + STATE_FIELDS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != _SHAPES[name]:
                raise UsageError(f"{name} must have shape {_SHAPES[name]}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"{name} has non-finite entries")
            setattr(self, name, arr)
        if np.any(self.bn_var <= 0.0):
            raise NumericError("batch-norm running variance must be strictly positive")

    def copy(self) -> "PreferenceMlp":
        return PreferenceMlp(**{n: getattr(self, n).copy() for n in PARAM_FIELDS + STATE_FIELDS})


def count_parameters(model: PreferenceMlp) -> int:
    """Tunable parameter count; 539 for every constructible model."""
    return sum(getattr(model, n).size for n in PARAM_FIELDS)


def polynomial_expand(l: ColorVec) -> np.ndarray:
    """Degree <= 3 monomial features of the L2-normalized vector.

    Order: x, y, z, xy, xz, yz, x^2, y^2, z^2, xyz. Normalizing first makes
    the features (and everything downstream) scale-invariant.
    """
    n = l.norm
    if n <= 0.0:
        raise DomainError("cannot expand a zero-norm vector")
    x, y, z = (float(c) / n for c in l.v)
    return expand_components(x, y, z)


def expand_components(x: float, y: float, z: float) -> np.ndarray:
    return np.array(
        [x, y, z, x * y, x * z, y * z, x * x, y * y, z * z, x * y * z],
        dtype=np.float64,
    )


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, ELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def mlp_forward(model: PreferenceMlp, features: np.ndarray) -> np.ndarray:
    """Inference-mode forward pass: unit-norm XYZ direction for one feature
    vector. Deterministic; uses the stored batch-norm running statistics."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape != (10,):
        raise UsageError(f"feature vector must have shape (10,), got {f.shape}")
    z1 = f @ model.w1 + model.b1
    h1 = (z1 - model.bn_mean) / np.sqrt(model.bn_var + BN_EPSILON)
    h1 = model.bn_gamma * h1 + model.bn_beta
    a1 = _elu(h1)
    a2 = _elu(a1 @ model.w2 + model.b2)
    a3 = _elu(a2 @ model.w3 + model.b3)
    y = a3 @ model.w4 + model.b4
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite value in the output layer")
    n = math.sqrt(float(y @ y))
    if n <= 0.0:
        raise NumericError("network produced a zero vector; cannot normalize")
    return y / n


def forward_train(model: PreferenceMlp, x: np.ndarray) -> dict:
    """Batched train-mode forward: batch-norm uses batch statistics.

    Returns the full activation cache needed by the analytic backward pass.
    Batch size must be >= 2 so the variance is defined.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 10:
        raise UsageError(f"batch must have shape (B, 10), got {x.shape}")
    if x.shape[0] < 2:
        raise UsageError("train-mode forward needs a batch of at least 2")
    z1 = x @ model.w1 + model.b1
    mu = z1.mean(axis=0)
    centered = z1 - mu
    var = np.mean(centered * centered, axis=0)
    inv_std = 1.0 / np.sqrt(var + BN_EPSILON)
    xhat = centered * inv_std
    h1 = model.bn_gamma * xhat + model.bn_beta
    a1 = _elu(h1)
    z2 = a1 @ model.w2 + model.b2
    a2 = _elu(z2)
    z3 = a2 @ model.w3 + model.b3
    a3 = _elu(z3)
    y = a3 @ model.w4 + model.b4
    norms = np.sqrt(np.sum(y * y, axis=1))
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite value in the output layer")
    if np.any(norms <= 0.0):
        raise NumericError("network produced a zero vector; cannot normalize")
    p = y / norms[:, None]
    return {
        "x": x, "z1": z1, "mu": mu, "var": var, "inv_std": inv_std, "xhat": xhat,
        "h1": h1, "a1": a1, "z2": z2, "a2": a2, "z3": z3, "a3": a3,
        "y": y, "norms": norms, "p": p,
    }


def map_illuminant(
    model: PreferenceMlp,
    profile: CameraProfile,
    l_raw: ColorVec,
    resolution: CstResolution | None = None,
):
    """Full inference pipeline for one illuminant.

    resolve_cst -> raw->XYZ -> kernel -> network -> XYZ->raw, reusing the
    same resolved CST for both directions. Pass a precomputed resolution to
    skip the fixed-point iteration (the warm path). Returns the mapped
    raw-space illuminant and the CstResolution used.
    """
    if resolution is None:
        resolution = resolve_cst(profile, l_raw)
    # inline raw->XYZ and XYZ->raw on bare arrays: this path is latency-bound
    xyz = np.maximum(resolution.cst_raw_to_xyz @ l_raw.v, 0.0)
    n = math.sqrt(float(xyz @ xyz))
    if n <= 0.0:
        raise DomainError("raw->XYZ transform collapsed the illuminant to zero")
    x, y, z = xyz[0] / n, xyz[1] / n, xyz[2] / n
    mapped = mlp_forward(model, expand_components(x, y, z))
    back = np.maximum(resolution.cst_xyz_to_raw @ mapped, 0.0)
    bn = math.sqrt(float(back @ back))
    if bn <= 0.0:
        raise DomainError("XYZ->raw transform collapsed the mapped illuminant to zero")
    back = back / bn
    back.flags.writeable = False
    return ColorVec(back, l_raw.space), resolution


# ---------------------------------------------------------------------------
# linear baselines

@dataclass(frozen=True)
class LinearMapModel:
    """3x3 or 3x10 least-squares mapping fitted in XYZ."""

    kind: str
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        expected = {MODEL_KIND_3X3: (3, 3), MODEL_KIND_POLY: (3, 10)}.get(self.kind)
        if expected is None:
            raise UsageError(f"unknown linear mapping kind {self.kind!r}")
        if m.shape != expected:
            raise UsageError(f"{self.kind} matrix must be {expected}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NumericError(f"{self.kind} matrix has non-finite entries")
        object.__setattr__(self, "matrix", m)


def _lstsq_map(design: np.ndarray, targets: np.ndarray, k: int) -> np.ndarray:
    rank = int(np.linalg.matrix_rank(design))
    if rank < k:
        raise FitError(f"design matrix rank {rank} < {k}: cannot fit")
    gram = design.T @ design
    rhs = design.T @ targets
    try:
        coef = np.linalg.solve(gram, rhs)
        # reject a numerically useless normal-equations solve
        if not np.all(np.isfinite(coef)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        coef, _, _, _ = np.linalg.lstsq(design, targets, rcond=None)
    return coef.T  # (3, k): output = coef.T @ features


def _unit_rows(pairs, index: int) -> np.ndarray:
    rows = []
    for pair in pairs:
        v = pair[index]
        rows.append(v.v / v.norm)
    return np.asarray(rows)


def fit_3x3(pairs) -> LinearMapModel:
    """Least-squares 3x3 map from neutral to preferred XYZ directions."""
    if len(pairs) < 3:
        raise FitError(f"need at least 3 pairs for a 3x3 fit, got {len(pairs)}")
    design = _unit_rows(pairs, 0)
    targets = _unit_rows(pairs, 1)
    return LinearMapModel(MODEL_KIND_3X3, _lstsq_map(design, targets, 3))


def fit_polynomial(pairs) -> LinearMapModel:
    """Least-squares 3x10 map from kernel features to preferred XYZ."""
    if len(pairs) < 10:
        raise FitError(f"need at least 10 pairs for a polynomial fit, got {len(pairs)}")
    design = np.asarray([polynomial_expand(pair[0]) for pair in pairs])
    targets = _unit_rows(pairs, 1)
    return LinearMapModel(MODEL_KIND_POLY, _lstsq_map(design, targets, 10))


def apply_linear(model: LinearMapModel, l_xyz: ColorVec) -> ColorVec:
    """Apply a fitted baseline in XYZ: matrix times (vector or its kernel
    expansion), clamp at zero, L2-normalize."""
    if l_xyz.space != XYZ_SPACE:
        raise UsageError(f"apply_linear needs an XYZ color, got {l_xyz.space!r}")
    if model.kind == MODEL_KIND_3X3:
        feats = l_xyz.v / l_xyz.norm
    else:
        feats = polynomial_expand(l_xyz)
    out = np.maximum(model.matrix @ feats, 0.0)
    if float(out @ out) <= 0.0:
        raise DomainError("linear mapping produced the zero vector")
    out = out / math.sqrt(float(out @ out))
    out.flags.writeable = False
    return ColorVec(out, XYZ_SPACE)


# ---------------------------------------------------------------------------
# model documents

@dataclass
class MappingModel:
    """A trained or fitted mapping plus the tags evaluation needs."""

    kind: str
    training_space: str = SPACE_XYZ
    front_end: str = "unknown"
    mlp: PreferenceMlp | None = None
    linear: LinearMapModel | None = None

    def __post_init__(self):
        if self.kind == MODEL_KIND_MLP:
            if self.mlp is None:
                raise UsageError("mlp mapping needs a PreferenceMlp")
        elif self.kind in (MODEL_KIND_3X3, MODEL_KIND_POLY):
            if self.linear is None or self.linear.kind != self.kind:
                raise UsageError(f"{self.kind} mapping needs a matching LinearMapModel")
        else:
            raise UsageError(f"unknown mapping kind {self.kind!r}")
        if self.training_space not in (SPACE_XYZ, SPACE_RAW):
            raise UsageError(f"training_space must be xyz or raw, got {self.training_space!r}")


MODEL_MAGIC = "wbpref-model"
MODEL_VERSION = "1"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_model(model: MappingModel, path) -> None:
    lines = [
        f"{MODEL_MAGIC} v{MODEL_VERSION}",
        f"kind {model.kind}",
        f"training_space {model.training_space}",
        f"front_end {model.front_end}",
    ]
    if model.kind == MODEL_KIND_MLP:
        for name in PARAM_FIELDS + STATE_FIELDS:
            arr = getattr(model.mlp, name)
            mat = arr.reshape(1, -1) if arr.ndim == 1 else arr
            lines.append(f"param {name} {mat.shape[0]} {mat.shape[1]}")
            for row in mat:
                lines.append(" ".join(_fmt(v) for v in row))
    else:
        mat = model.linear.matrix
        lines.append(f"param matrix {mat.shape[0]} {mat.shape[1]}")
        for row in mat:
            lines.append(" ".join(_fmt(v) for v in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


class _LineReader:
    """Line iterator that tracks byte offsets for parse errors."""

    def __init__(self, text: str):
        self.lines = text.split("\n")
        self.index = 0
        self.offset = 0

    def next_line(self, what: str) -> str:
        while True:
            if self.index >= len(self.lines):
                raise ParseError(f"unexpected end of file while reading {what}", offset=self.offset)
            line = self.lines[self.index]
            self.index += 1
            consumed = len(line.encode("ascii", errors="replace")) + 1
            self.offset += consumed
            if line.strip():
                return line.strip()

    def at_eof(self) -> bool:
        return all(not ln.strip() for ln in self.lines[self.index:])


def load_model(path) -> MappingModel:
    with open(path, "r", encoding="ascii") as fh:
        reader = _LineReader(fh.read())
    header = reader.next_line("header")
    if not header.startswith(MODEL_MAGIC):
        raise ParseError(f"{path}: not a wbpref model document", offset=0)
    if header != f"{MODEL_MAGIC} v{MODEL_VERSION}":
        raise ParseError(f"{path}: unsupported model version {header!r}", offset=0)

    meta = {}
    for key in ("kind", "training_space", "front_end"):
        line = reader.next_line(key)
        k, _, v = line.partition(" ")
        if k != key or not v:
            raise ParseError(f"{path}: expected '{key} <value>', got {line!r}", offset=reader.offset)
        meta[key] = v

    params: dict[str, np.ndarray] = {}
    while not reader.at_eof():
        head = reader.next_line("param header")
        parts = head.split()
        if len(parts) != 4 or parts[0] != "param":
            raise ParseError(f"{path}: malformed param header {head!r}", offset=reader.offset)
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        data = []
        for _ in range(rows):
            row_line = reader.next_line(f"param {name}")
            try:
                row = [float(v) for v in row_line.split()]
            except ValueError as exc:
                raise ParseError(f"{path}: bad number in param {name}", offset=reader.offset) from exc
            if len(row) != cols:
                raise ParseError(
                    f"{path}: param {name} row has {len(row)} values, expected {cols}",
                    offset=reader.offset,
                )
            data.append(row)
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ParseError(f"{path}: param {name} has non-finite values", offset=reader.offset)
        params[name] = arr

    kind = meta["kind"]
    try:
        if kind == MODEL_KIND_MLP:
            fields = {}
            for name in PARAM_FIELDS + STATE_FIELDS:
                if name not in params:
                    raise ParseError(f"{path}: missing param {name}")
                arr = params.pop(name)
                fields[name] = arr.reshape(_SHAPES[name])
            if params:
                raise ParseError(f"{path}: unexpected params {sorted(params)}")
            mlp = PreferenceMlp(**fields)
            return MappingModel(kind, meta["training_space"], meta["front_end"], mlp=mlp)
        if kind in (MODEL_KIND_3X3, MODEL_KIND_POLY):
            if "matrix" not in params:
                raise ParseError(f"{path}: missing param matrix")
            linear = LinearMapModel(kind, params.pop("matrix"))
            if params:
                raise ParseError(f"{path}: unexpected params {sorted(params)}")
            return MappingModel(kind, meta["training_space"], meta["front_end"], linear=linear)
    except (UsageError, NumericError, ValueError) as exc:
        raise ParseError(f"{path}: invalid model content ({exc})") from exc
    raise ParseError(f"{path}: unknown model kind {kind!r}")
