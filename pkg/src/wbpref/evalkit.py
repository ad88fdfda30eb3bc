"""Evaluation protocol: seven-statistic angular-error summaries, mapping x
front-end report tables, and the cross-sensor XYZ-consistency check.

Quantile conventions are pinned here once: quartiles by inclusive linear
interpolation (position q*(n-1) on the sorted list), and the best/worst
subset size k = max(1, floor(q*n + 0.5)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraProfile, raw_to_xyz, resolve_cst, xyz_to_raw
from .colorimetry import ColorVec, angle_between, angular_error_degrees, normalize_l2
from .errors import ConfigError, DomainError, UsageError
from .mapping import (
    MappingModel,
    MODEL_KIND_MLP,
    SPACE_RAW,
    apply_linear,
    map_illuminant,
    mlp_forward,
    polynomial_expand,
)

STAT_COLUMNS = ("mean", "median", "trimean", "best25", "worst25", "worst5", "max")
CSV_COLUMNS = ("front_end", "mapping", "n") + STAT_COLUMNS
# column order used by the text tables
TEXT_COLUMNS = ("Mean", "Med.", "Best 25%", "Worst 25%", "Worst 5%", "Tri.", "Max")


@dataclass(frozen=True)
class ErrorStats:
    """The seven angular-error statistics for one evaluation run."""

    n: int
    mean: float
    median: float
    trimean: float
    best25_mean: float
    worst25_mean: float
    worst5_mean: float
    max: float

    def __post_init__(self):
        eps = 1e-9
        chain = (
            self.best25_mean <= self.mean + eps
            and self.mean <= self.worst25_mean + eps
            and self.worst25_mean <= self.worst5_mean + eps
            and self.worst5_mean <= self.max + eps
            and self.best25_mean <= self.median + eps
            and self.median <= self.worst25_mean + eps
        )
        if not chain:
            raise DomainError(f"error statistics violate their ordering chain: {self}")

    def column(self, name: str) -> float:
        return {
            "mean": self.mean, "median": self.median, "trimean": self.trimean,
            "best25": self.best25_mean, "worst25": self.worst25_mean,
            "worst5": self.worst5_mean, "max": self.max,
        }[name]


def _quantile_sorted(s: list[float], q: float) -> float:
    pos = q * (len(s) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    frac = pos - lo
    return s[lo] + frac * (s[hi] - s[lo])


def _subset_size(q: float, n: int) -> int:
    return max(1, int(math.floor(q * n + 0.5)))


def compute_stats(errors) -> ErrorStats:
    """Aggregate a list of nonnegative angular errors.

    Plain Python float arithmetic throughout, so independent oracles using
    the same conventions agree bit-for-bit.
    """
    values = [float(e) for e in errors]
    if len(values) == 0:
        raise DomainError("cannot compute statistics of an empty list")
    if any(not math.isfinite(v) or v < 0.0 for v in values):
        raise DomainError("errors must be finite and nonnegative")
    n = len(values)
    s = sorted(values)
    mean = sum(values) / n
    if n % 2 == 1:
        median = s[n // 2]
    else:
        median = (s[n // 2 - 1] + s[n // 2]) / 2.0
    q1 = _quantile_sorted(s, 0.25)
    q3 = _quantile_sorted(s, 0.75)
    trimean = (q1 + 2.0 * median + q3) / 4.0
    k25 = _subset_size(0.25, n)
    k5 = _subset_size(0.05, n)
    best25 = sum(s[:k25]) / k25
    worst25 = sum(s[n - k25:]) / k25
    worst5 = sum(s[n - k5:]) / k5
    return ErrorStats(n, mean, median, trimean, best25, worst25, worst5, s[-1])


# ---------------------------------------------------------------------------
# evaluation driver

MAPPING_NONE = "none"


def mapping_label(model: MappingModel | None) -> str:
    if model is None:
        return MAPPING_NONE
    if model.kind == MODEL_KIND_MLP and model.training_space == SPACE_RAW:
        return "mlp-raw"
    return model.kind


def _predict_vector(model: MappingModel | None, profile: CameraProfile,
                    est: ColorVec) -> np.ndarray:
    """Signed unit prediction direction in the estimate's raw space.

    The raw-space ablation arm applies the network directly to raw kernel
    features and only normalizes; on a sensor far from the training one it
    can legitimately leave the positive octant, and the evaluation metric
    scores that honestly rather than repairing it. The no-mapping arm passes
    the estimate through untouched (the error metric is scale-invariant, and
    renormalizing would cost an ulp where the spec promises exact zeros).
    """
    if model is None:
        return est.v
    if model.kind == MODEL_KIND_MLP:
        if model.training_space == SPACE_RAW:
            return mlp_forward(model.mlp, polynomial_expand(est))
        mapped, _ = map_illuminant(model.mlp, profile, est)
        return mapped.v
    if model.training_space == SPACE_RAW:
        raise UsageError("linear baselines are fitted in XYZ; raw-space ones are not supported")
    res = resolve_cst(profile, est)
    xyz = raw_to_xyz(est, res.cst_raw_to_xyz)
    mapped_xyz = apply_linear(model.linear, xyz)
    return xyz_to_raw(mapped_xyz, res.cst_raw_to_xyz, profile.sensor_name).v


def map_estimate(model: MappingModel | None, profile: CameraProfile,
                 est: ColorVec) -> ColorVec:
    """Apply a mapping (or none) to one raw-space neutral estimate.

    The result is a valid illuminant (clamped at zero, unit norm); a
    prediction that collapses to zero after clamping raises DomainError.
    """
    return normalize_l2(ColorVec.create(_predict_vector(model, profile, est), est.space))


def predict_record(record, front_end: str, profiles: dict[str, CameraProfile],
                   model: MappingModel | None) -> ColorVec:
    """Mapped illuminant prediction for one record, in its raw space."""
    if front_end not in record.neutral_estimates:
        raise ConfigError(
            f"record {record.id!r} has no estimate for front end {front_end!r}"
        )
    if record.camera not in profiles:
        raise ConfigError(f"no profile for camera {record.camera!r} (record {record.id!r})")
    return map_estimate(model, profiles[record.camera], record.neutral_estimates[front_end])


def evaluate(records, front_end: str, profiles: dict[str, CameraProfile],
             model: MappingModel | None = None) -> ErrorStats:
    """Score a mapping against gt_preferred_raw, in each record's raw space."""
    errors = []
    for record in records:
        if front_end not in record.neutral_estimates:
            raise ConfigError(
                f"record {record.id!r} has no estimate for front end {front_end!r}"
            )
        if record.camera not in profiles:
            raise ConfigError(f"no profile for camera {record.camera!r} (record {record.id!r})")
        pred = _predict_vector(model, profiles[record.camera],
                               record.neutral_estimates[front_end])
        errors.append(angle_between(pred, record.gt_preferred_raw.v))
    return compute_stats(errors)


# ---------------------------------------------------------------------------
# report tables

@dataclass
class ReportTable:
    title: str
    rows: list[tuple[str, str, ErrorStats]] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def add(self, front_end: str, mapping: str, stats: ErrorStats) -> None:
        if any(fe == front_end and mp == mapping for fe, mp, _ in self.rows):
            raise UsageError(f"duplicate report row ({front_end}, {mapping})")
        self.rows.append((front_end, mapping, stats))

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r[0], r[1]))


def render_report(tables) -> str:
    """Fixed-width text report; statistics to 2 decimals, paper column order."""
    if not tables:
        raise UsageError("nothing to render")
    out = []
    for table in tables:
        out.append(f"== {table.title} ==")
        for key in sorted(table.metadata):
            out.append(f"# {key}: {table.metadata[key]}")
        rows = table.sorted_rows()
        fe_w = max([len("front-end")] + [len(r[0]) for r in rows])
        mp_w = max([len("mapping")] + [len(r[1]) for r in rows])
        header = (f"{'front-end':<{fe_w}}  {'mapping':<{mp_w}}  "
                  + "  ".join(f"{c:>9}" for c in TEXT_COLUMNS))
        out.append(header)
        out.append("-" * len(header))
        for fe, mp, st in rows:
            cells = (st.mean, st.median, st.best25_mean, st.worst25_mean,
                     st.worst5_mean, st.trimean, st.max)
            out.append(f"{fe:<{fe_w}}  {mp:<{mp_w}}  "
                       + "  ".join(f"{c:>9.2f}" for c in cells))
        out.append("")
    return "\n".join(out)


def render_csv(table: ReportTable) -> str:
    """Machine-readable twin of one table; full-precision values."""
    lines = [",".join(CSV_COLUMNS)]
    for fe, mp, st in table.sorted_rows():
        cells = [fe, mp, str(st.n)] + [format(st.column(c), ".17g") for c in STAT_COLUMNS]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.strip().split("\n") if ln]
    header = lines[0].split(",")
    if tuple(header) != CSV_COLUMNS:
        raise ConfigError(f"unexpected CSV columns {header}")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        row = {"front_end": parts[0], "mapping": parts[1], "n": int(parts[2])}
        for name, val in zip(STAT_COLUMNS, parts[3:]):
            row[name] = float(val)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# cross-sensor consistency

def xyz_consistency_check(
    records_by_camera: dict[str, list],
    reference: str,
    profiles: dict[str, CameraProfile],
) -> dict[str, tuple[float, float]]:
    """Cross-sensor ground-truth agreement, raw vs XYZ.

    Records are paired across cameras by scene id. For each non-reference
    camera, returns the mean angular error of its preferred ground truths
    against the reference camera's, computed (a) directly on the raw vectors
    and (b) after converting each side to XYZ via its own resolved CST.
    """
    if reference not in records_by_camera:
        raise ConfigError(f"reference camera {reference!r} not in the record set")
    ref_by_id = {r.id: r for r in records_by_camera[reference]}
    results: dict[str, tuple[float, float]] = {}
    for camera, records in records_by_camera.items():
        if camera == reference:
            continue
        if camera not in profiles or reference not in profiles:
            raise ConfigError(f"missing profile for {camera!r} or {reference!r}")
        raw_errs, xyz_errs = [], []
        for rec in records:
            if rec.id not in ref_by_id:
                raise ConfigError(f"scene {rec.id!r} is unpaired with camera {reference!r}")
            ref = ref_by_id[rec.id]
            raw_errs.append(angle_between(rec.gt_preferred_raw.v, ref.gt_preferred_raw.v))
            xyz_a = _own_cst_xyz(profiles[camera], rec.gt_preferred_raw)
            xyz_b = _own_cst_xyz(profiles[reference], ref.gt_preferred_raw)
            xyz_errs.append(angular_error_degrees(xyz_a, xyz_b))
        results[camera] = (float(np.mean(raw_errs)), float(np.mean(xyz_errs)))
    return results


def _own_cst_xyz(profile: CameraProfile, raw: ColorVec) -> ColorVec:
    res = resolve_cst(profile, raw)
    return raw_to_xyz(raw, res.cst_raw_to_xyz)
