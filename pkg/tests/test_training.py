import math

import numpy as np
import pytest

from wbpref import mapping as mp, training as tr
from wbpref.colorimetry import angular_error_degrees, xyz_vec
from wbpref.datakit import PreferencePolicy, generate_synthetic_dataset, make_virtual_sensor
from wbpref.errors import ConfigError, UsageError


def random_batch(seed, n=8):
    rng = np.random.default_rng(seed)
    feats = rng.uniform(-1.0, 1.0, (n, 10))
    targets = np.abs(rng.normal(0, 1, (n, 3))) + 0.1
    targets /= np.linalg.norm(targets, axis=1, keepdims=True)
    return feats, targets


def perturbed_model(seed):
    rng = np.random.default_rng(1000 + seed)
    model = tr.initialize_model(seed)
    for name in mp.PARAM_FIELDS:
        getattr(model, name).__iadd__(rng.normal(0.0, 0.2, getattr(model, name).shape))
    return model


def loss_only(model, feats, targets, clamp=1e-7):
    cache = mp.forward_train(model, feats)
    dots = np.clip(np.sum(cache["p"] * targets, axis=1), -1 + clamp, 1 - clamp)
    return float(np.mean(np.arccos(dots)) * 180.0 / math.pi)


def finite_difference_grads(model, feats, targets, h=1e-5):
    out = {}
    for name in mp.PARAM_FIELDS:
        arr = getattr(model, name)
        grad = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = arr[ix]
            arr[ix] = orig + h
            lp = loss_only(model, feats, targets)
            arr[ix] = orig - h
            lm = loss_only(model, feats, targets)
            arr[ix] = orig
            grad[ix] = (lp - lm) / (2.0 * h)
        out[name] = grad
    return out


class TestAngularLoss:
    def test_clamp_floor_on_identical(self):
        v = xyz_vec((0.3, 0.4, 0.5))
        want = math.degrees(math.acos(1.0 - 1e-7))
        assert tr.angular_loss(v, v) == pytest.approx(want, abs=1e-9)
        assert want == pytest.approx(0.0256, abs=1e-3)

    def test_orthogonal(self):
        assert tr.angular_loss(xyz_vec((1, 0, 0)), xyz_vec((0, 1, 0))) == pytest.approx(90.0)

    def test_matches_angular_error_within_clamp(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a = xyz_vec(rng.uniform(0.05, 1.0, 3))
            b = xyz_vec(rng.uniform(0.05, 1.0, 3))
            assert abs(tr.angular_loss(a, b) - angular_error_degrees(a, b)) < 0.026


class TestBackward:
    def test_matches_finite_differences(self):
        # standing gradient check; the acceptance suite runs the full 10 cases
        for case in range(3):
            model = perturbed_model(case)
            feats, targets = random_batch(case)
            _, grads, _ = tr.backward(model, feats, targets)
            numeric = finite_difference_grads(model, feats, targets)
            for name in mp.PARAM_FIELDS:
                a, n = grads[name], numeric[name]
                rel = np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-3)
                assert rel < 1e-4, f"{name}: normwise relative error {rel}"

    def test_duplicated_batch_mean_invariance(self):
        model = perturbed_model(7)
        feats, targets = random_batch(7)
        loss1, grads1, _ = tr.backward(model, feats, targets)
        loss2, grads2, _ = tr.backward(model, np.tile(feats, (2, 1)), np.tile(targets, (2, 1)))
        assert loss1 == pytest.approx(loss2, abs=1e-10)
        for name in mp.PARAM_FIELDS:
            assert np.allclose(grads1[name], grads2[name], atol=1e-10)

    def test_no_stationarity_at_orthogonal(self):
        model = perturbed_model(3)
        feats = np.tile(mp.polynomial_expand(xyz_vec((0.5, 0.6, 0.7))), (4, 1))
        cache = mp.forward_train(model, feats)
        p = cache["p"][0]
        helper = np.array([1.0, 0.0, 0.0]) if abs(p[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        ortho = np.cross(p, helper)
        ortho /= np.linalg.norm(ortho)
        targets = np.tile(ortho, (4, 1))
        loss, grads, _ = tr.backward(model, feats, targets)
        assert loss == pytest.approx(90.0, abs=1e-6)
        total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        assert total > 1e-6

    def test_batch_of_one_rejected(self):
        model = perturbed_model(0)
        with pytest.raises(UsageError):
            tr.backward(model, np.zeros((1, 10)), np.ones((1, 3)))


class TestAdam:
    def test_first_step_is_signed_lr(self):
        model = tr.initialize_model(0)
        cfg = tr.TrainConfig(weight_decay=0.0)
        state = tr.AdamState.for_model(model)
        grads = {n: np.full(getattr(model, n).shape, 0.5) for n in mp.PARAM_FIELDS}
        before = {n: getattr(model, n).copy() for n in mp.PARAM_FIELDS}
        tr.adam_step(state, model, grads, lr=1e-2, cfg=cfg)
        for n in mp.PARAM_FIELDS:
            update = getattr(model, n) - before[n]
            assert np.allclose(update, -1e-2 * np.sign(0.5), atol=1e-6)

    def test_zero_gradient_no_decay(self):
        model = tr.initialize_model(1)
        cfg = tr.TrainConfig(weight_decay=0.0)
        state = tr.AdamState.for_model(model)
        before = {n: getattr(model, n).copy() for n in mp.PARAM_FIELDS}
        grads = {n: np.zeros(getattr(model, n).shape) for n in mp.PARAM_FIELDS}
        tr.adam_step(state, model, grads, lr=1e-2, cfg=cfg)
        for n in mp.PARAM_FIELDS:
            assert np.array_equal(getattr(model, n), before[n])

    def test_zero_gradient_with_decay_closed_form(self):
        # coupled L2: step-1 update is -lr * wd*theta / (|wd*theta| + eps)
        model = tr.initialize_model(2)
        cfg = tr.TrainConfig(weight_decay=0.1)
        state = tr.AdamState.for_model(model)
        before = {n: getattr(model, n).copy() for n in mp.PARAM_FIELDS}
        grads = {n: np.zeros(getattr(model, n).shape) for n in mp.PARAM_FIELDS}
        tr.adam_step(state, model, grads, lr=1e-3, cfg=cfg)
        for n in mp.PARAM_FIELDS:
            g = cfg.weight_decay * before[n]
            want = -1e-3 * g / (np.abs(g) + cfg.adam_epsilon)
            assert np.allclose(getattr(model, n) - before[n], want, atol=1e-12)
            # decay always pulls toward zero
            assert np.all((getattr(model, n) - before[n]) * before[n] <= 0.0)


class TestCosineSchedule:
    def test_endpoints(self):
        assert tr.cosine_lr(0, 100, 1e-2, 1e-6) == pytest.approx(1e-2)
        assert tr.cosine_lr(100, 100, 1e-2, 1e-6) == pytest.approx(1e-6)

    def test_midpoint(self):
        assert tr.cosine_lr(50, 100, 1e-2, 1e-6) == pytest.approx((1e-2 + 1e-6) / 2)

    def test_monotone(self):
        lrs = [tr.cosine_lr(t, 200, 1e-2, 1e-6) for t in range(201)]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))

    def test_domain(self):
        with pytest.raises(ConfigError):
            tr.cosine_lr(5, 4, 1e-2, 1e-6)


@pytest.fixture(scope="module")
def policy_records():
    sensor, profile = make_virtual_sensor(95776, "traincam")
    policy = PreferencePolicy(0.5, 40.0, 1.3)
    records = generate_synthetic_dataset(sensor, profile, 448, policy, 0.0, seed=31)
    return records, profile


class TestTrainLoop:
    def test_epochs_zero_rejected(self):
        with pytest.raises(ConfigError):
            tr.TrainConfig(epochs=0)

    def test_one_epoch_moves_parameters(self, policy_records):
        records, profile = policy_records
        cfg = tr.TrainConfig(epochs=1, seed=5)
        model, _ = tr.train(records, "synthetic", cfg, profile)
        init = tr.initialize_model(cfg.seed)
        moved = any(
            not np.array_equal(getattr(model.mlp, n), getattr(init, n))
            for n in mp.PARAM_FIELDS
        )
        assert moved

    def test_seeded_determinism(self, policy_records):
        records, profile = policy_records
        cfg = tr.TrainConfig(epochs=5, seed=5)
        m1, r1 = tr.train(records, "synthetic", cfg, profile)
        m2, r2 = tr.train(records, "synthetic", cfg, profile)
        assert r1.epoch_losses == r2.epoch_losses
        assert r1.val_errors == r2.val_errors
        for n in mp.PARAM_FIELDS + mp.STATE_FIELDS:
            assert np.array_equal(getattr(m1.mlp, n), getattr(m2.mlp, n))

    def test_identity_preference_convergence(self, identity_fit):
        _, _, _ = identity_fit
        # the fixture asserts < 0.2 deg already; re-assert the spec bound here
        from conftest import identity_fit as fixture_fn  # noqa: F401 (documentation)
        model, profile, records = identity_fit
        errs = []
        for rec in records[448:]:
            mapped, _ = mp.map_illuminant(model.mlp, profile, rec.gt_neutral_raw)
            errs.append(angular_error_degrees(mapped, rec.gt_preferred_raw))
        assert float(np.mean(errs)) < 0.3

    def test_planted_policy_beats_no_mapping_by_2x(self, policy_records):
        records, profile = policy_records
        cfg = tr.TrainConfig(epochs=300, seed=6)
        model, report = tr.train(records[:384], "synthetic", cfg, profile,
                                 val_records=records[384:])
        nomap = [angular_error_degrees(r.neutral_estimates["synthetic"], r.gt_preferred_raw)
                 for r in records[384:]]
        assert report.val_errors[-1] <= float(np.mean(nomap)) / 2.0

    def test_dataset_smaller_than_batch_rejected(self, policy_records):
        records, profile = policy_records
        with pytest.raises(ConfigError):
            tr.train(records[:10], "synthetic", tr.TrainConfig(batch_size=64), profile)

    def test_missing_front_end_names_record(self, policy_records):
        records, profile = policy_records
        with pytest.raises(ConfigError) as exc:
            tr.prepare_pairs(records[:2], "absent", "xyz", profile)
        assert records[0].id in str(exc.value)

    def test_raw_space_skips_xyz_hop(self, policy_records):
        records, profile = policy_records
        feats_raw, targ_raw = tr.prepare_pairs(records[:4], "synthetic", "raw", profile)
        for i, rec in enumerate(records[:4]):
            est = rec.neutral_estimates["synthetic"]
            want = mp.polynomial_expand(est)
            assert np.allclose(feats_raw[i], want, atol=1e-15)

    def test_bn_running_stats_converge(self, identity_fit):
        # the stationary-distribution premise requires static weights: the
        # first-layer output distribution only stops moving once the optimizer
        # has settled, so run stats-only epochs on the trained model
        model, profile, records = identity_fit
        feats, _ = tr.prepare_pairs(records[:448], "synthetic", "xyz", profile)
        trained = model.mlp.copy()
        rng = np.random.default_rng(0)
        n = feats.shape[0]
        snapshots = {}
        for epoch in range(130):
            order = rng.permutation(n)
            for s in range(0, n, 64):
                idx = order[s:s + 64]
                if idx.size < 2:
                    continue
                cache = mp.forward_train(trained, feats[idx])
                b = idx.size
                trained.bn_mean = 0.9 * trained.bn_mean + 0.1 * cache["mu"]
                trained.bn_var = 0.9 * trained.bn_var + 0.1 * cache["var"] * (b / (b - 1))
            if epoch in (99, 129):
                snapshots[epoch] = trained.bn_mean.copy()
        # converged: net drift rate after epoch 100 is below 1e-3 per epoch
        # per unit (the per-epoch EMA wander is batch-sampling noise, not drift)
        rate = np.abs(snapshots[129] - snapshots[99]) / 30.0
        assert float(rate.max()) < 1e-3
