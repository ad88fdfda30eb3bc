"""The synthetic cross-camera benchmark: train the preference mapping on one
virtual sensor, evaluate on two unseen ones with every mapping baseline, and
run the cross-sensor XYZ-consistency check.

One bench call reproduces, at desk scale, the qualitative orderings of the
cross-camera evaluation protocol: mapping quality (mlp vs polynomial vs 3x3
vs none), the XYZ-vs-raw training-space ablation, and the raw-vs-XYZ
ground-truth consistency table.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraProfile, raw_to_xyz, resolve_cst, save_profile
from .datakit import (
    PreferencePolicy,
    attach_ideal_front_end,
    generate_synthetic_dataset,
    make_virtual_sensor,
    split,
)
from .errors import ConfigError
from .evalkit import ReportTable, evaluate, mapping_label, render_csv, render_report, xyz_consistency_check
from .mapping import MappingModel, fit_3x3, fit_polynomial, save_model
from .training import TrainConfig, train

FRONT_END_IDEAL = "ideal"
FRONT_END_NOISY = "synthetic"

CAMERA_NAMES = ("vcamA", "vcamB", "vcamC")


@dataclass(frozen=True)
class BenchConfig:
    seed: int = 44
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 500
    epochs: int = 2000
    estimator_noise_deg: float = 2.0
    cct_low: float = 3400.0
    cct_high: float = 7000.0
    chroma_noise: float = 0.002
    policy: PreferencePolicy = field(default_factory=PreferencePolicy)

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_val + self.n_test

    def echo(self) -> dict:
        return {
            "seed": self.seed, "n_train": self.n_train, "n_val": self.n_val,
            "n_test": self.n_test, "epochs": self.epochs,
            "estimator_noise_deg": self.estimator_noise_deg,
            "cct_low": self.cct_low, "cct_high": self.cct_high,
            "chroma_noise": self.chroma_noise,
            "policy_lambda": self.policy.lam,
            "policy_delta_mired": self.policy.delta_mired,
            "policy_tint_gain": self.policy.tint_gain,
        }

    def config_hash(self) -> str:
        blob = ";".join(f"{k}={v}" for k, v in sorted(self.echo().items()))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class BenchResult:
    stats: dict          # (camera, front_end, mapping_label) -> ErrorStats
    consistency: dict    # camera -> (raw_mean_deg, xyz_mean_deg)
    models: dict         # model_name -> MappingModel
    tables: list
    report_text: str
    csv_by_camera: dict  # camera -> csv text
    wall_seconds: float


def sensor_seeds(master_seed: int, count: int = 3) -> list[int]:
    """Per-sensor generation seeds derived from the master seed."""
    ss = np.random.SeedSequence(master_seed)
    return [int(child.generate_state(1)[0] % 100000) for child in ss.spawn(count)]


def _xyz_pairs(records, front_end: str, profile: CameraProfile):
    """(neutral_xyz, preferred_xyz) ColorVec pairs for baseline fitting."""
    pairs = []
    for rec in records:
        est = rec.neutral_estimates[front_end]
        res_e = resolve_cst(profile, est)
        res_g = resolve_cst(profile, rec.gt_preferred_raw)
        pairs.append((
            raw_to_xyz(est, res_e.cst_raw_to_xyz),
            raw_to_xyz(rec.gt_preferred_raw, res_g.cst_raw_to_xyz),
        ))
    return pairs


def run_bench(cfg: BenchConfig, out_dir=None, progress=None) -> BenchResult:
    """Run the full cross-camera benchmark; deterministic given cfg.

    Writes profiles, models, the text report, and per-camera CSV twins into
    out_dir when given. progress, if set, is called with status strings.
    """
    t0 = time.perf_counter()
    say = progress or (lambda msg: None)

    seeds = sensor_seeds(cfg.seed, len(CAMERA_NAMES))
    sensors, profiles = {}, {}
    for name, seed in zip(CAMERA_NAMES, seeds):
        sensor, profile = make_virtual_sensor(seed, name)
        sensors[name] = sensor
        profiles[name] = profile
    say(f"sensors generated (seeds {seeds})")

    splits: dict[str, tuple] = {}
    ratios = (cfg.n_train / cfg.n_total, cfg.n_val / cfg.n_total, cfg.n_test / cfg.n_total)
    for name in CAMERA_NAMES:
        records = generate_synthetic_dataset(
            sensors[name], profiles[name], cfg.n_total, cfg.policy,
            cfg.estimator_noise_deg, seed=cfg.seed,
            cct_low=cfg.cct_low, cct_high=cfg.cct_high, chroma_noise=cfg.chroma_noise,
            front_end=FRONT_END_NOISY,
        )
        attach_ideal_front_end(records, FRONT_END_IDEAL)
        parts = split(records, ratios, seed=cfg.seed)
        if tuple(len(p) for p in parts) != (cfg.n_train, cfg.n_val, cfg.n_test):
            raise ConfigError(f"split produced sizes {[len(p) for p in parts]}")
        splits[name] = parts
    say(f"datasets generated ({cfg.n_total} records per sensor)")

    train_cam = CAMERA_NAMES[0]
    test_cams = CAMERA_NAMES[1:]
    train_recs, val_recs, _ = splits[train_cam]
    prof_a = profiles[train_cam]

    def tconf(space: str, offset: int) -> TrainConfig:
        return TrainConfig(epochs=cfg.epochs, seed=cfg.seed * 10 + offset, training_space=space)

    models: dict[str, MappingModel] = {}
    t = time.perf_counter()
    models["mlp-xyz-ideal"], rep1 = train(train_recs, FRONT_END_IDEAL, tconf("xyz", 1),
                                          prof_a, val_records=val_recs)
    say(f"trained mlp-xyz-ideal in {time.perf_counter()-t:.0f}s "
        f"(final val {rep1.val_errors[-1]:.3f} deg)")
    t = time.perf_counter()
    models["mlp-xyz-noisy"], rep2 = train(train_recs, FRONT_END_NOISY, tconf("xyz", 2),
                                          prof_a, val_records=val_recs)
    say(f"trained mlp-xyz-noisy in {time.perf_counter()-t:.0f}s "
        f"(final val {rep2.val_errors[-1]:.3f} deg)")
    t = time.perf_counter()
    models["mlp-raw-ideal"], rep3 = train(train_recs, FRONT_END_IDEAL, tconf("raw", 3),
                                          prof_a, val_records=val_recs)
    say(f"trained mlp-raw-ideal in {time.perf_counter()-t:.0f}s "
        f"(final val {rep3.val_errors[-1]:.3f} deg)")

    for fe in (FRONT_END_IDEAL, FRONT_END_NOISY):
        pairs = _xyz_pairs(train_recs, fe, prof_a)
        m3 = fit_3x3(pairs)
        mp = fit_polynomial(pairs)
        models[f"3x3-{fe}"] = MappingModel(m3.kind, "xyz", fe, linear=m3)
        models[f"poly-{fe}"] = MappingModel(mp.kind, "xyz", fe, linear=mp)
    say("baselines fitted")

    metadata = {k: str(v) for k, v in cfg.echo().items()}
    metadata["sensor_seeds"] = " ".join(str(s) for s in seeds)
    metadata["config_hash"] = cfg.config_hash()
    metadata["train_camera"] = train_cam

    stats: dict = {}
    tables = []
    for cam in CAMERA_NAMES:
        test_recs = splits[cam][2]
        table = ReportTable(
            title=f"camera {cam} ({'train sensor' if cam == train_cam else 'unseen sensor'}, "
                  f"test split n={len(test_recs)})",
            metadata=metadata,
        )
        for fe in (FRONT_END_IDEAL, FRONT_END_NOISY):
            arms = [None,
                    models[f"3x3-{fe}"],
                    models[f"poly-{fe}"],
                    models["mlp-xyz-ideal" if fe == FRONT_END_IDEAL else "mlp-xyz-noisy"]]
            if fe == FRONT_END_IDEAL:
                arms.append(models["mlp-raw-ideal"])
            for model in arms:
                label = mapping_label(model)
                st = evaluate(test_recs, fe, profiles, model)
                table.add(fe, label, st)
                stats[(cam, fe, label)] = st
        tables.append(table)
        say(f"evaluated {cam}")

    consistency = xyz_consistency_check(
        {cam: splits[cam][2] for cam in CAMERA_NAMES}, train_cam, profiles
    )
    report_lines = [render_report(tables)]
    for cam in sorted(consistency):
        raw_e, xyz_e = consistency[cam]
        report_lines.append(f"consistency {cam} vs {train_cam}: raw {raw_e:.2f} deg, "
                            f"xyz {xyz_e:.4f} deg")
    report_text = "\n".join(report_lines) + "\n"

    csv_by_camera = {cam: render_csv(tbl) for cam, tbl in zip(CAMERA_NAMES, tables)}

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for name in CAMERA_NAMES:
            save_profile(profiles[name], os.path.join(out_dir, f"{name}.profile"))
        for mname, model in models.items():
            save_model(model, os.path.join(out_dir, f"{mname}.model"))
        _atomic_write(os.path.join(out_dir, "report.txt"), report_text)
        for cam, csv in csv_by_camera.items():
            _atomic_write(os.path.join(out_dir, f"report_{cam}.csv"), csv)

    return BenchResult(
        stats=stats,
        consistency=consistency,
        models=models,
        tables=tables,
        report_text=report_text,
        csv_by_camera=csv_by_camera,
        wall_seconds=time.perf_counter() - t0,
    )


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
