"""Tests for the mean-pooled linear baseline."""

import numpy as np
from scipy.special import expit

from promptrefine import autodiff as ad
from promptrefine.baseline import (
    baseline_forward_batch,
    init_baseline,
    score_baseline,
    train_baseline,
)
from promptrefine.data import GeneratorConfig, generate_synthetic_lt, split_groups
from promptrefine.losses import get_loss
from promptrefine.metrics import map_report


def tiny_data(seed=0, c=6, v=4, d0=5, n_max=40):
    cfg = GeneratorConfig(c=c, v=v, d0=d0, n_max=n_max, seed=seed,
                          pareto_exponent=1.0, co_occurrence_strength=0.2,
                          noise_sigma=0.4, test_per_class=6)
    return generate_synthetic_lt(cfg)


class TestForward:
    def test_matches_plain_numpy_oracle(self):
        rng = np.random.default_rng(5)
        params = init_baseline(d0=5, c=4, seed=5)
        feats = [rng.standard_normal((3, 5)) for _ in range(6)]

        got = baseline_forward_batch(feats, params).data

        pooled = np.stack([f.mean(axis=0) for f in feats])
        want = expit(pooled @ params.w.data + params.b.data)
        np.testing.assert_allclose(got, want, rtol=1e-14, atol=0.0)

    def test_accepts_samples_and_raw_arrays(self):
        train_ds, _ = tiny_data()
        params = init_baseline(d0=5, c=6, seed=0)
        via_samples = baseline_forward_batch(train_ds.samples[:4], params).data
        via_arrays = baseline_forward_batch(
            [s.features for s in train_ds.samples[:4]], params).data
        np.testing.assert_array_equal(via_samples, via_arrays)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        params = init_baseline(d0=5, c=4, seed=11)
        feats = [rng.standard_normal((3, 5)) for _ in range(4)]
        labels = (rng.uniform(size=(4, 4)) < 0.5).astype(float)
        loss_fn = get_loss("bce", None)

        def f():
            return loss_fn(baseline_forward_batch(feats, params), labels)

        result = ad.grad_check(f, params.learnable(), eps=1e-5)
        assert result.max_rel_error < 1e-6, result.worst_param


class TestTraining:
    def test_deterministic(self):
        train_ds, test_ds = tiny_data(seed=3)
        p1, r1 = train_baseline(train_ds, test_ds, epochs=2,
                                learning_rate=1e-3, seed=4)
        p2, r2 = train_baseline(train_ds, test_ds, epochs=2,
                                learning_rate=1e-3, seed=4)
        assert p1.w.data.tobytes() == p2.w.data.tobytes()
        assert p1.b.data.tobytes() == p2.b.data.tobytes()
        assert r1.to_dict() == r2.to_dict()

    def test_learns_above_untrained_scores(self):
        train_ds, test_ds = tiny_data(seed=8)
        untrained = map_report(
            score_baseline(init_baseline(5, 6, seed=2), test_ds),
            test_ds.labels_matrix(), split_groups(train_ds.class_counts))
        _, trained = train_baseline(train_ds, test_ds, epochs=10,
                                    learning_rate=1e-2, seed=2)
        assert trained.map_total > untrained.map_total + 0.15
