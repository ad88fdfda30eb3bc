"""From-scratch optimizer stack for the preference network: angular-error
loss, exact reverse-mode gradients for the fixed architecture (including
batch-norm batch statistics and the output L2 normalization), Adam with
coupled weight decay, cosine annealing, and the training loop with an
XYZ-vs-raw training-space switch.

Everything is deterministic given (seed, config, dataset).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraProfile, raw_to_xyz, resolve_cst
from .colorimetry import ColorVec, DOT_CLAMP, normalize_l2
from .errors import ConfigError, DomainError, NumericError, UsageError, WbprefError
from .mapping import (
    MappingModel,
    MODEL_KIND_MLP,
    PARAM_FIELDS,
    PreferenceMlp,
    SPACE_RAW,
    SPACE_XYZ,
    forward_train,
    mlp_forward,
    polynomial_expand,
)

DEG = 180.0 / math.pi

# (fan_in, fan_out) of the four linear layers
LAYER1, LAYER2, LAYER3, LAYER4 = (10, 16), (16, 8), (8, 16), (16, 3)


@dataclass
class TrainConfig:
    epochs: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-9
    lr_max: float = 1e-2
    lr_min: float = 1e-6
    batch_size: int = 64
    bn_momentum: float = 0.1
    seed: int = 0
    training_space: str = SPACE_XYZ
    adam_epsilon: float = 1e-8
    dot_clamp: float = DOT_CLAMP
    val_every: int = 50

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not (0.0 < self.lr_min <= self.lr_max):
            raise ConfigError(f"need 0 < lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 < self.bn_momentum <= 1.0):
            raise ConfigError(f"bn_momentum must be in (0, 1], got {self.bn_momentum}")
        if self.training_space not in (SPACE_XYZ, SPACE_RAW):
            raise ConfigError(f"training_space must be xyz or raw, got {self.training_space!r}")
        if self.val_every < 1:
            raise ConfigError("val_every must be >= 1")

    def echo(self) -> dict:
        return {
            "epochs": self.epochs, "beta1": self.beta1, "beta2": self.beta2,
            "weight_decay": self.weight_decay, "lr_max": self.lr_max, "lr_min": self.lr_min,
            "batch_size": self.batch_size, "bn_momentum": self.bn_momentum,
            "seed": self.seed, "training_space": self.training_space,
            "adam_epsilon": self.adam_epsilon, "dot_clamp": self.dot_clamp,
            "val_every": self.val_every,
        }


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @staticmethod
    def for_model(model: PreferenceMlp) -> "AdamState":
        return AdamState(
            m={n: np.zeros_like(getattr(model, n)) for n in PARAM_FIELDS},
            v={n: np.zeros_like(getattr(model, n)) for n in PARAM_FIELDS},
        )


@dataclass
class TrainReport:
    epoch_losses: list[float]
    val_epochs: list[int]
    val_errors: list[float]
    best_val_error: float
    best_val_epoch: int
    best_model: "MappingModel | None"
    config: dict
    wall_seconds: float


def angular_loss(pred: ColorVec, gt: ColorVec, dot_clamp: float = DOT_CLAMP) -> float:
    """Clamped angular error in degrees; finite gradient everywhere."""
    if pred.norm <= 0.0 or gt.norm <= 0.0:
        raise DomainError("angular loss undefined for zero-norm vectors")
    dot = float(pred.v @ gt.v) / (pred.norm * gt.norm)
    dot = min(max(dot, -1.0 + dot_clamp), 1.0 - dot_clamp)
    return math.acos(dot) * DEG


def cosine_lr(t: int, total: int, lr_max: float, lr_min: float) -> float:
    """Cosine annealing from lr_max at t=0 to lr_min at t=total."""
    if total < 1 or not (0 <= t <= total):
        raise ConfigError(f"bad schedule position t={t}, T={total}")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total))


def _elu_grad(pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    # d elu/dx = 1 for x > 0, else elu(x) + alpha (alpha = 1)
    return np.where(pre > 0.0, 1.0, post + 1.0)


def backward(model: PreferenceMlp, features: np.ndarray, targets: np.ndarray,
             dot_clamp: float = DOT_CLAMP):
    """Mean angular loss over a batch and its exact gradients.

    features: (B, 10); targets: (B, 3) unit XYZ directions. Train-mode
    forward (batch statistics). Returns (loss_degrees, grads, cache).
    """
    g = np.asarray(targets, dtype=np.float64)
    cache = forward_train(model, features)
    p, y, norms = cache["p"], cache["y"], cache["norms"]
    batch = p.shape[0]
    if g.shape != p.shape:
        raise UsageError(f"targets must have shape {p.shape}, got {g.shape}")

    dots = np.sum(p * g, axis=1)
    clipped = np.clip(dots, -1.0 + dot_clamp, 1.0 - dot_clamp)
    loss = float(np.mean(np.arccos(clipped)) * DEG)

    # d loss_i / d dot_i, zero where the clamp is active
    active = (dots > -1.0 + dot_clamp) & (dots < 1.0 - dot_clamp)
    ddot = np.where(active, -DEG / np.sqrt(1.0 - clipped * clipped), 0.0) / batch

    dp = ddot[:, None] * g
    # through p = y / |y|
    dy = (dp - p * np.sum(p * dp, axis=1, keepdims=True)) / norms[:, None]

    grads: dict[str, np.ndarray] = {}
    grads["w4"] = cache["a3"].T @ dy
    grads["b4"] = dy.sum(axis=0)
    da3 = dy @ model.w4.T
    dz3 = da3 * _elu_grad(cache["z3"], cache["a3"])
    grads["w3"] = cache["a2"].T @ dz3
    grads["b3"] = dz3.sum(axis=0)
    da2 = dz3 @ model.w3.T
    dz2 = da2 * _elu_grad(cache["z2"], cache["a2"])
    grads["w2"] = cache["a1"].T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    da1 = dz2 @ model.w2.T
    dh1 = da1 * _elu_grad(cache["h1"], cache["a1"])

    xhat, inv_std = cache["xhat"], cache["inv_std"]
    grads["bn_gamma"] = np.sum(dh1 * xhat, axis=0)
    grads["bn_beta"] = dh1.sum(axis=0)
    dxhat = dh1 * model.bn_gamma
    # batch-norm backward through the batch statistics (biased variance)
    dz1 = (inv_std / batch) * (
        batch * dxhat
        - dxhat.sum(axis=0)
        - xhat * np.sum(dxhat * xhat, axis=0)
    )
    grads["w1"] = cache["x"].T @ dz1
    grads["b1"] = dz1.sum(axis=0)

    for name, arr in grads.items():
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite gradient in {name}")
    return loss, grads, cache


def adam_step(state: AdamState, model: PreferenceMlp, grads: dict, lr: float,
              cfg: TrainConfig) -> None:
    """Classic Adam with bias correction; weight decay enters the gradient
    as coupled L2. Updates model parameters and state in place."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name in PARAM_FIELDS:
        theta = getattr(model, name)
        g = grads[name]
        if g.shape != theta.shape:
            raise UsageError(f"gradient shape mismatch for {name}")
        if cfg.weight_decay != 0.0:
            g = g + cfg.weight_decay * theta
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_epsilon)


def initialize_model(seed: int) -> PreferenceMlp:
    """Uniform(+/- sqrt(1/fan_in)) weights, zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)
    fields = {}
    for w, b, (fan_in, fan_out) in (("w1", "b1", LAYER1), ("w2", "b2", LAYER2),
                                    ("w3", "b3", LAYER3), ("w4", "b4", LAYER4)):
        bound = math.sqrt(1.0 / fan_in)
        fields[w] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        fields[b] = np.zeros(fan_out)
    fields.update(
        bn_gamma=np.ones(16), bn_beta=np.zeros(16),
        bn_mean=np.zeros(16), bn_var=np.ones(16),
    )
    return PreferenceMlp(**fields)


def prepare_pairs(records, front_end: str, training_space: str, profile: CameraProfile):
    """Kernel features and unit targets for a record list.

    xyz space: both the neutral estimate and the preferred ground truth are
    converted through their own resolved CSTs before expansion. raw space:
    the kernel is applied directly to the normalized raw vectors.
    """
    feats, targets = [], []
    for rec in records:
        if front_end not in rec.neutral_estimates:
            raise ConfigError(f"record {rec.id!r} has no estimate for front end {front_end!r}")
        est = rec.neutral_estimates[front_end]
        gt = rec.gt_preferred_raw
        try:
            if training_space == SPACE_XYZ:
                res_e = resolve_cst(profile, est)
                x = raw_to_xyz(est, res_e.cst_raw_to_xyz)
                res_g = resolve_cst(profile, gt)
                t = raw_to_xyz(gt, res_g.cst_raw_to_xyz)
            else:
                x = normalize_l2(est)
                t = normalize_l2(gt)
        except WbprefError as exc:
            raise type(exc)(f"record {rec.id!r}: {exc}") from exc
        feats.append(polynomial_expand(x))
        targets.append(t.v / t.norm)
    return np.asarray(feats), np.asarray(targets)


def _mean_val_error(model: PreferenceMlp, feats: np.ndarray, targets: np.ndarray) -> float:
    errs = []
    for f, t in zip(feats, targets):
        p = mlp_forward(model, f)
        dot = min(max(float(p @ t), -1.0), 1.0)
        errs.append(math.acos(dot) * DEG)
    return float(np.mean(errs))


def train(records, front_end: str, cfg: TrainConfig, profile: CameraProfile,
          val_records=None):
    """Train the preference network. Returns (MappingModel, TrainReport);
    the report carries the best-validation snapshot. Validation runs every
    cfg.val_every epochs on val_records (on the training records when None)."""
    if len(records) < cfg.batch_size:
        raise ConfigError(
            f"dataset ({len(records)} records) smaller than batch size {cfg.batch_size}"
        )
    t0 = time.perf_counter()
    feats, targets = prepare_pairs(records, front_end, cfg.training_space, profile)
    if val_records is None:
        val_feats, val_targets = feats, targets
    else:
        val_feats, val_targets = prepare_pairs(val_records, front_end, cfg.training_space, profile)

    model = initialize_model(cfg.seed)
    state = AdamState.for_model(model)
    rng = np.random.default_rng(cfg.seed)
    n = feats.shape[0]

    epoch_losses: list[float] = []
    val_epochs: list[int] = []
    val_errors: list[float] = []
    best_err = math.inf
    best_epoch = -1
    best_model = model.copy()

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min)
        order = rng.permutation(n)
        total_loss = 0.0
        total_count = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue  # batch-norm variance undefined on a single sample
            loss, grads, cache = backward(model, feats[idx], targets[idx], cfg.dot_clamp)
            # running-stat update with the unbiased batch variance
            b = idx.size
            mom = cfg.bn_momentum
            model.bn_mean = (1.0 - mom) * model.bn_mean + mom * cache["mu"]
            model.bn_var = (1.0 - mom) * model.bn_var + mom * cache["var"] * (b / (b - 1))
            adam_step(state, model, grads, lr, cfg)
            total_loss += loss * b
            total_count += b
        epoch_losses.append(total_loss / max(total_count, 1))

        if (epoch + 1) % cfg.val_every == 0 or epoch == cfg.epochs - 1:
            err = _mean_val_error(model, val_feats, val_targets)
            if not val_epochs or val_epochs[-1] != epoch + 1:
                val_epochs.append(epoch + 1)
                val_errors.append(err)
            if err < best_err:
                best_err = err
                best_epoch = epoch + 1
                best_model = model.copy()

    final = MappingModel(MODEL_KIND_MLP, cfg.training_space, front_end, mlp=model)
    best = MappingModel(MODEL_KIND_MLP, cfg.training_space, front_end, mlp=best_model)
    report = TrainReport(
        epoch_losses=epoch_losses,
        val_epochs=val_epochs,
        val_errors=val_errors,
        best_val_error=best_err,
        best_val_epoch=best_epoch,
        best_model=best,
        config=cfg.echo(),
        wall_seconds=time.perf_counter() - t0,
    )
    return final, report


def write_train_log(report: TrainReport, path) -> None:
    """Deterministic text log: config echo, loss curve, validation curve.

    Wall-clock time is deliberately not written (byte-identical reruns).
    """
    lines = ["wbpref-trainlog v1"]
    for key in sorted(report.config):
        lines.append(f"config {key} {report.config[key]}")
    for i, loss in enumerate(report.epoch_losses):
        lines.append(f"epoch {i + 1} loss_deg {format(loss, '.17g')}")
    for ep, err in zip(report.val_epochs, report.val_errors):
        lines.append(f"val epoch {ep} mean_err_deg {format(err, '.17g')}")
    lines.append(f"best val_epoch {report.best_val_epoch} "
                 f"mean_err_deg {format(report.best_val_error, '.17g')}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
