"""wbpref: cross-camera white-balance preference mapping.

Estimate a neutral illuminant in camera raw space, transform it to CIE XYZ
through CCT-interpolated color space transforms, apply a tiny learned
mapping toward a target white-balance preference, and transform back —
plus the training, baseline, and evaluation stack to verify the method on
synthetic multi-sensor data.
"""

__version__ = "0.1.0"

from .colorimetry import (
    Cct,
    ChromaticityUv,
    ColorVec,
    angular_error_degrees,
    normalize_l2,
    raw_vec,
    robertson_cct,
    xyz_to_uv,
    xyz_vec,
)
from .camera import (
    CameraProfile,
    CstResolution,
    interpolate_cst,
    interpolation_weight,
    load_profile,
    raw_to_xyz,
    resolve_cst,
    save_profile,
    xyz_to_raw,
)
from .mapping import (
    LinearMapModel,
    MappingModel,
    PreferenceMlp,
    apply_linear,
    count_parameters,
    fit_3x3,
    fit_polynomial,
    load_model,
    map_illuminant,
    mlp_forward,
    polynomial_expand,
    save_model,
)
from .training import TrainConfig, TrainReport, initialize_model, train
from .datakit import (
    DatasetRecord,
    PreferencePolicy,
    VirtualSensor,
    generate_synthetic_dataset,
    make_virtual_sensor,
    read_dataset,
    sample_illuminants,
    split,
    synth_preference,
    write_dataset,
)
from .evalkit import ErrorStats, compute_stats, evaluate, render_report, xyz_consistency_check
from .estimators import (
    EstimatorConfig,
    RawImage,
    gray_edge,
    gray_world,
    load_external_predictions,
    load_raw_image,
    minkowski_estimate,
)
from .dngmeta import DngColorMetadata, calibration_illuminant_cct, parse_dng_metadata, profile_from_dng
from .bench import BenchConfig, run_bench
