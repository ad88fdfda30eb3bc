"""Operator surface: estimate, train, apply, eval, synth, inspect-dng.

Exit codes: 0 success, 1 usage/config error, 2 data or parse error,
3 numeric failure. Every output file is written atomically (temp + rename)
and every seeded command is bit-reproducible.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .bench import BenchConfig, run_bench
from .camera import load_profile, save_profile
from .datakit import (
    PreferencePolicy,
    VirtualSensor,
    generate_synthetic_dataset,
    make_virtual_sensor,
    read_dataset,
    split,
    write_dataset,
)
from .dngmeta import parse_dng_metadata, profile_from_dng
from .errors import (
    ConfigError,
    DomainError,
    FitError,
    NumericError,
    ParseError,
    UsageError,
    WbprefError,
)
from .estimators import (
    EstimatorConfig,
    RawImage,
    gray_edge,
    gray_world,
    load_external_predictions,
    load_raw_image,
    minkowski_estimate,
    save_ppm,
    write_predictions,
)
from .evalkit import ReportTable, evaluate, map_estimate, mapping_label, render_csv, render_report
from .mapping import load_model, save_model
from .training import TrainConfig, train, write_train_log

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

IMAGE_SUFFIXES = (".ppm", ".pfm")


def _atomic(save_fn, path, *args) -> None:
    tmp = f"{path}.tmp"
    save_fn(tmp, *args)
    os.replace(tmp, path)


def _write_text(path, text: str) -> None:
    def write(tmp):
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
    _atomic(write, path)


# ---------------------------------------------------------------------------
# estimate

def _run_estimator(img: RawImage, args, sensor: str):
    cfg = EstimatorConfig(args.saturation, args.dark)
    if args.method == "gray-world":
        return gray_world(img, cfg, sensor)
    if args.method == "minkowski":
        return minkowski_estimate(img, args.p, cfg, sensor)
    return gray_edge(img, n=args.order, p=args.p, sigma=args.sigma, cfg=cfg, sensor=sensor)


def cmd_estimate(args) -> int:
    files = sorted(
        f for f in os.listdir(args.images)
        if f.lower().endswith(IMAGE_SUFFIXES)
    )
    if not files:
        print(f"error: no supported images in {args.images}", file=sys.stderr)
        return EXIT_DATA
    predictions = {}
    failures = 0
    for name in files:
        rec_id = os.path.splitext(name)[0]
        try:
            img = load_raw_image(os.path.join(args.images, name))
            predictions[rec_id] = _run_estimator(img, args, args.sensor)
        except WbprefError as exc:
            failures += 1
            print(f"warning: {name}: {exc}", file=sys.stderr)
    if not predictions:
        print(f"error: all {failures} images failed", file=sys.stderr)
        return EXIT_DATA
    header = [
        f"wbpref estimate v{__version__}",
        f"method {args.method} order {args.order} p {args.p} sigma {args.sigma}",
        f"saturation {args.saturation} dark {args.dark}",
        f"images {len(predictions)} failed {failures}",
    ]
    _atomic(lambda tmp: write_predictions(predictions, tmp, header), args.out)
    print(f"wrote {len(predictions)} predictions to {args.out}"
          + (f" ({failures} failed)" if failures else ""))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    records, _ = read_dataset(args.dataset)
    profile = load_profile(args.profile)
    cfg = TrainConfig(
        epochs=args.epochs, lr_max=args.lr_max, lr_min=args.lr_min,
        batch_size=args.batch_size, seed=args.seed, training_space=args.space,
    )
    if args.val_fraction > 0.0:
        if not (args.val_fraction < 1.0):
            raise ConfigError("--val-fraction must be in [0, 1)")
        train_recs, val_recs = split(records, (1.0 - args.val_fraction, args.val_fraction),
                                     seed=args.seed)
    else:
        train_recs, val_recs = records, None
    model, report = train(train_recs, args.front_end, cfg, profile, val_records=val_recs)
    _atomic(lambda tmp: save_model(model, tmp), args.out_model)
    log_path = args.log or (args.out_model + ".log")
    _atomic(lambda tmp: write_train_log(report, tmp), log_path)
    print(f"trained {args.space}-space mapping on {len(train_recs)} records "
          f"({args.epochs} epochs); final val error "
          f"{report.val_errors[-1]:.4f} deg; model -> {args.out_model}")
    print(f"wall seconds: {report.wall_seconds:.1f}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# apply

def cmd_apply(args) -> int:
    model = load_model(args.model)
    profile = load_profile(args.profile)
    preds = load_external_predictions(args.predictions, sensor=profile.sensor_name)
    mapped = {}
    for rec_id in sorted(preds):
        mapped[rec_id] = map_estimate(model, profile, preds[rec_id])
    header = [
        f"wbpref apply v{__version__}",
        f"model {os.path.basename(args.model)} kind {model.kind} "
        f"space {model.training_space} front_end {model.front_end}",
    ]
    _atomic(lambda tmp: write_predictions(mapped, tmp, header), args.out)
    print(f"mapped {len(mapped)} illuminants -> {args.out}")
    if args.render:
        image_path, out_path = args.render
        if args.render_id is not None:
            rec_id = args.render_id
        elif len(mapped) == 1:
            rec_id = next(iter(mapped))
        else:
            raise UsageError("--render needs --render-id when mapping several records")
        if rec_id not in mapped:
            raise ConfigError(f"record {rec_id!r} not in the predictions")
        _render_white_balanced(image_path, out_path, mapped[rec_id])
        print(f"rendered {image_path} under {rec_id} -> {out_path} "
              "(display-only, non-colorimetric)")
    return EXIT_OK


def _render_white_balanced(image_path, out_path, illuminant) -> None:
    img = load_raw_image(image_path)
    il = illuminant.v / illuminant.v[1]  # green gain 1
    balanced = np.clip(img.pixels / il, 0.0, 1.0)
    encoded = np.power(balanced, 1.0 / 2.2)  # display gamma only
    _atomic(lambda tmp: save_ppm(RawImage(encoded), tmp, maxval=255), out_path)


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args) -> int:
    records, profile_paths = read_dataset(args.dataset)
    base = os.path.dirname(os.path.abspath(args.dataset))
    profiles = {}
    for camera, rel in profile_paths.items():
        path = rel if os.path.isabs(rel) else os.path.join(base, rel)
        profiles[camera] = load_profile(path)
    if not profiles:
        raise ParseError(f"{args.dataset}: no #camera profile headers")

    models = [None] + [load_model(p) for p in args.models]
    table = ReportTable(
        title=f"dataset {os.path.basename(args.dataset)} (n={len(records)})",
        metadata={"dataset": args.dataset,
                  "models": " ".join(args.models) or "(none)"},
    )
    for front_end in args.front_ends:
        for model in models:
            stats = evaluate(records, front_end, profiles, model)
            table.add(front_end, mapping_label(model), stats)
    text = render_report([table])
    _write_text(args.out_prefix + ".txt", text)
    _write_text(args.out_prefix + ".csv", render_csv(table))
    print(text, end="")
    print(f"report -> {args.out_prefix}.txt / .csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth

def cmd_synth_sensors(args) -> int:
    from .bench import sensor_seeds
    os.makedirs(args.out_dir, exist_ok=True)
    for i, seed in enumerate(sensor_seeds(args.seed, args.n)):
        name = f"vcam{i}"
        _, profile = make_virtual_sensor(seed, name)
        path = os.path.join(args.out_dir, f"{name}.profile")
        _atomic(lambda tmp, p=profile: save_profile(p, tmp), path)
        print(f"sensor {name} (gen seed {seed}) -> {path}")
    return EXIT_OK


def cmd_synth_dataset(args) -> int:
    profile = load_profile(args.profile)
    sensor = VirtualSensor(profile.sensor_name, profile.forward_matrix_1,
                           profile.forward_matrix_2, seed=-1)
    policy = PreferencePolicy(args.policy_lambda, args.delta_mired, args.tint_gain)
    records = generate_synthetic_dataset(
        sensor, profile, args.n, policy, args.noise_deg, seed=args.seed,
        cct_low=args.cct_low, cct_high=args.cct_high, chroma_noise=args.chroma_noise,
    )
    _atomic(lambda tmp: write_dataset(records, tmp, {profile.sensor_name: args.profile}),
            args.out)
    print(f"wrote {len(records)} records for sensor {profile.sensor_name} -> {args.out}")
    return EXIT_OK


def cmd_synth_bench(args) -> int:
    cfg = BenchConfig(
        seed=args.seed, n_train=args.n_train, n_val=args.n_val, n_test=args.n_test,
        epochs=args.epochs, estimator_noise_deg=args.noise_deg,
        cct_low=args.cct_low, cct_high=args.cct_high, chroma_noise=args.chroma_noise,
        policy=PreferencePolicy(args.policy_lambda, args.delta_mired, args.tint_gain),
    )
    result = run_bench(cfg, out_dir=args.out_dir,
                       progress=lambda msg: print(f"[bench] {msg}", file=sys.stderr))
    print(result.report_text, end="")
    print(f"[bench] total wall seconds: {result.wall_seconds:.0f}", file=sys.stderr)
    if args.out_dir:
        print(f"outputs -> {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect-dng

def cmd_inspect_dng(args) -> int:
    with open(args.file, "rb") as fh:
        meta = parse_dng_metadata(fh.read())
    print(f"camera model: {meta.camera_model or '(absent)'}")
    for label, mat in (("ColorMatrix1 (XYZ->raw)", meta.color_matrix_1),
                       ("ColorMatrix2 (XYZ->raw)", meta.color_matrix_2)):
        print(f"{label}:")
        for row in mat:
            print("  " + "  ".join(f"{v: .6f}" for v in row))
    for label, code in (("CalibrationIlluminant1", meta.calibration_illuminant_1),
                        ("CalibrationIlluminant2", meta.calibration_illuminant_2)):
        if code is None:
            print(f"{label}: (absent)")
        else:
            from .dngmeta import calibration_illuminant_cct
            print(f"{label}: code {code} ({calibration_illuminant_cct(code).kelvin:.0f} K)")
    if meta.as_shot_neutral is not None:
        c = meta.as_shot_neutral.components()
        print(f"AsShotNeutral: {c[0]:.6f} {c[1]:.6f} {c[2]:.6f}")
    else:
        print("AsShotNeutral: (absent)")
    if args.profile_out:
        name = args.sensor_name or meta.camera_model or \
            os.path.splitext(os.path.basename(args.file))[0]
        profile = profile_from_dng(meta, name)
        _atomic(lambda tmp: save_profile(profile, tmp), args.profile_out)
        print(f"profile ({name}) -> {args.profile_out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wbpref",
        description="Cross-camera white-balance preference mapping toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="run a statistical illuminant estimator over a directory of images")
    p.add_argument("--images", required=True, help="directory of PPM/PFM thumbnails")
    p.add_argument("--method", choices=("gray-world", "minkowski", "gray-edge"),
                   default="gray-world")
    p.add_argument("--p", type=float, default=5.0, help="Minkowski norm (inf allowed)")
    p.add_argument("--order", type=int, default=1, choices=(1, 2), help="gray-edge derivative order")
    p.add_argument("--sigma", type=float, default=1.0, help="gray-edge Gaussian sigma")
    p.add_argument("--saturation", type=float, default=0.98, help="saturation mask threshold")
    p.add_argument("--dark", type=float, default=0.0, help="dark mask threshold")
    p.add_argument("--sensor", default="unknown", help="sensor name tag for the outputs")
    p.add_argument("--out", required=True, help="predictions file to write")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("train", help="train the preference mapping network")
    p.add_argument("--dataset", required=True)
    p.add_argument("--profile", required=True, help="camera profile of the training sensor")
    p.add_argument("--front-end", required=True, help="which neutral estimate to train on")
    p.add_argument("--space", choices=("xyz", "raw"), default="xyz",
                   help="mapping space (raw is the ablation arm)")
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--lr-max", type=float, default=1e-2)
    p.add_argument("--lr-min", type=float, default=1e-6)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-model", required=True)
    p.add_argument("--log", default=None, help="train log path (default: <out-model>.log)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("apply", help="map neutral predictions to the trained preference")
    p.add_argument("--model", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--predictions", required=True, help="input predictions file")
    p.add_argument("--out", required=True)
    p.add_argument("--render", nargs=2, metavar=("IMAGE", "OUT"),
                   help="also white-balance an image by the mapped illuminant (display only)")
    p.add_argument("--render-id", default=None, help="record id to render with")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("eval", help="evaluate mappings against a dataset's ground truth")
    p.add_argument("--dataset", required=True)
    p.add_argument("--front-ends", nargs="+", required=True)
    p.add_argument("--models", nargs="*", default=[],
                   help="model files; the no-mapping baseline is always included")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="synthetic sensors, datasets, and the cross-camera bench")
    synth_sub = p.add_subparsers(dest="kind", required=True)

    q = synth_sub.add_parser("sensors", help="generate virtual sensor profiles")
    q.add_argument("--n", type=int, default=3)
    q.add_argument("--seed", type=int, default=44)
    q.add_argument("--out-dir", required=True)
    q.set_defaults(func=cmd_synth_sensors)

    q = synth_sub.add_parser("dataset", help="generate a synthetic dataset for one sensor")
    q.add_argument("--profile", required=True)
    q.add_argument("--n", type=int, default=1000)
    q.add_argument("--seed", type=int, default=44)
    q.add_argument("--noise-deg", type=float, default=2.0)
    q.add_argument("--policy-lambda", type=float, default=0.5)
    q.add_argument("--delta-mired", type=float, default=40.0)
    q.add_argument("--tint-gain", type=float, default=1.3)
    q.add_argument("--cct-low", type=float, default=3400.0)
    q.add_argument("--cct-high", type=float, default=7000.0)
    q.add_argument("--chroma-noise", type=float, default=0.002)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_synth_dataset)

    q = synth_sub.add_parser("bench", help="run the full cross-camera benchmark")
    q.add_argument("--seed", type=int, default=44)
    q.add_argument("--n-train", type=int, default=2000)
    q.add_argument("--n-val", type=int, default=200)
    q.add_argument("--n-test", type=int, default=500)
    q.add_argument("--epochs", type=int, default=2000)
    q.add_argument("--noise-deg", type=float, default=2.0)
    q.add_argument("--policy-lambda", type=float, default=0.5)
    q.add_argument("--delta-mired", type=float, default=40.0)
    q.add_argument("--tint-gain", type=float, default=1.3)
    q.add_argument("--cct-low", type=float, default=3400.0)
    q.add_argument("--cct-high", type=float, default=7000.0)
    q.add_argument("--chroma-noise", type=float, default=0.002)
    q.add_argument("--out-dir", default=None)
    q.set_defaults(func=cmd_synth_bench)

    p = sub.add_parser("inspect-dng", help="print DNG color calibration metadata")
    p.add_argument("file")
    p.add_argument("--profile-out", default=None, help="also write a camera profile document")
    p.add_argument("--sensor-name", default=None)
    p.set_defaults(func=cmd_inspect_dng)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, DomainError, FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except WbprefError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
