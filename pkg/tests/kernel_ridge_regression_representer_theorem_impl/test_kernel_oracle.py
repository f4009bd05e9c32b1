"""Kernel ridge reference model: closed-form solves, PSD constraints,
toy-cluster accuracy, serialization."""

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from pcq.checkpoint import load_checkpoint, save_checkpoint
from pcq.kernel_oracle import (OracleError, anchor_feature, fit,
                               linear_kernel, model_from_section,
                               model_section, nearest_psd, predict,
                               rbf_kernel, stage1_responses)


def _orthogonal_clusters(rng, d=5, per_level=4, spread=0.05):
    feats, confs = {}, {}
    for j in range(1, 6):
        base = np.zeros(d)
        base[j - 1] = 1.0
        x = base + rng.normal(0.0, spread, (per_level, d))
        feats[j] = x
        confs[j] = rng.uniform(-0.5, 0.5, per_level)
    return feats, confs


class TestKernels:
    def test_linear_kernel(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((6, 3))
        np.testing.assert_allclose(linear_kernel(a, b), a @ b.T, atol=1e-14)

    def test_rbf_matches_cdist(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((5, 3))
        b = rng.standard_normal((7, 3))
        gamma = 0.37
        ref = np.exp(-gamma * cdist(a, b, "sqeuclidean"))
        np.testing.assert_allclose(rbf_kernel(a, b, gamma), ref, atol=1e-12)


class TestAnchorFeature:
    def test_weighted_combination(self):
        x = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
        w = np.array([0.5, 0.25, 0.25])
        np.testing.assert_allclose(anchor_feature(x, w),
                                   [0.5 + 0.25, 0.5 + 0.25])

    def test_shape_mismatch(self):
        with pytest.raises(OracleError, match="weights"):
            anchor_feature(np.zeros((3, 2)), np.zeros(4))


class TestFit:
    def test_stage2_matches_gram_inverse(self):
        rng = np.random.default_rng(2)
        feats, confs = _orthogonal_clusters(rng)
        lam1 = 0.3
        model = fit(feats, confs, lambda1=lam1, lambda2=0.1, iters=3)
        for j in range(1, 6):
            x = feats[j]
            gram = x @ x.T
            ref = np.linalg.inv(gram + 0.5 * lam1 * np.eye(len(x))) @ confs[j]
            np.testing.assert_allclose(model.alpha_R[j], ref, atol=1e-9)

    def test_stage2_rbf_matches_gram_inverse(self):
        rng = np.random.default_rng(3)
        feats, confs = _orthogonal_clusters(rng)
        model = fit(feats, confs, lambda1=0.2, iters=2, kernel="rbf",
                    gamma=0.5)
        for j in range(1, 6):
            gram = rbf_kernel(feats[j], feats[j], 0.5)
            ref = np.linalg.inv(gram + 0.1 * np.eye(len(gram))) @ confs[j]
            np.testing.assert_allclose(model.alpha_R[j], ref, atol=1e-9)

    def test_toy_clusters_full_training_accuracy(self):
        rng = np.random.default_rng(4)
        feats, confs = _orthogonal_clusters(rng)
        model = fit(feats, confs, lambda1=0.1, lambda2=0.1)
        correct = total = 0
        for j in range(1, 6):
            for x in feats[j]:
                responses = stage1_responses(model, x)
                correct += int(np.argmax(responses)) + 1 == j
                total += 1
        assert correct == total

    def test_betas_are_psd(self):
        rng = np.random.default_rng(5)
        feats, confs = _orthogonal_clusters(rng, spread=0.3)
        model = fit(feats, confs, lambda1=0.05, lambda2=0.01)
        for j in range(1, 6):
            beta = model.beta_L[j]
            np.testing.assert_allclose(beta, beta.T, atol=1e-12)
            assert np.linalg.eigvalsh(beta).min() >= -1e-10

    def test_alpha_step_never_increases_objective(self):
        rng = np.random.default_rng(6)
        feats, confs = _orthogonal_clusters(rng)
        model = fit(feats, confs, lambda1=0.1, lambda2=0.1, iters=5)
        for j in range(1, 6):
            trace = model.objective_trace[j]
            for prev, cur in zip(trace, trace[1:]):
                if cur[0] == "alpha":  # alpha solve is an exact minimizer
                    assert cur[1] <= prev[1] + 1e-8

    def test_projection_residuals_recorded(self):
        rng = np.random.default_rng(7)
        feats, confs = _orthogonal_clusters(rng)
        model = fit(feats, confs, iters=4)
        for j in range(1, 6):
            res = model.projection_residuals[j]
            assert len(res) == 4
            for r in res:
                assert r["frobenius"] >= 0.0
                assert r["objective_increase"] >= 0.0

    def test_singular_system_without_ridge(self):
        rng = np.random.default_rng(8)
        feats, confs = _orthogonal_clusters(rng)
        # more samples than dimensions: M = X beta X^T is rank-deficient
        for j in feats:
            extra = feats[j] + rng.normal(0.0, 0.05, feats[j].shape)
            feats[j] = np.vstack([feats[j], extra])
            confs[j] = np.concatenate([confs[j], confs[j]])
        with pytest.raises(OracleError, match="lambda1"):
            fit(feats, confs, lambda1=0.0)

    def test_missing_level_and_short_level(self):
        rng = np.random.default_rng(9)
        feats, confs = _orthogonal_clusters(rng)
        del feats[3]
        with pytest.raises(OracleError, match="level 3"):
            fit(feats, confs)
        feats, confs = _orthogonal_clusters(rng)
        feats[2] = feats[2][:1]
        with pytest.raises(OracleError, match="at least 2"):
            fit(feats, confs)

    def test_confidence_length_mismatch(self):
        rng = np.random.default_rng(10)
        feats, confs = _orthogonal_clusters(rng)
        confs[4] = confs[4][:-1]
        with pytest.raises(OracleError, match="length"):
            fit(feats, confs)


class TestPredict:
    def test_combines_level_and_clamped_confidence(self):
        rng = np.random.default_rng(11)
        feats, confs = _orthogonal_clusters(rng)
        model = fit(feats, confs, lambda1=0.1, delta=1.0)
        level, conf, score = predict(model, feats[4][0])
        assert level == 4
        assert abs(conf) <= 0.5
        assert score == pytest.approx(level + conf)

    def test_training_confidences_recovered_with_small_ridge(self):
        rng = np.random.default_rng(12)
        feats, confs = _orthogonal_clusters(rng)
        model = fit(feats, confs, lambda1=1e-10)
        for j in range(1, 6):
            for x, c in zip(feats[j], confs[j]):
                gram = model.gram(model.level_features[j], x[None, :])[:, 0]
                assert float(model.alpha_R[j] @ gram) == pytest.approx(
                    c, abs=1e-6)


class TestSerialization:
    def test_section_round_trip_exact(self):
        rng = np.random.default_rng(13)
        feats, confs = _orthogonal_clusters(rng)
        model = fit(feats, confs, kernel="rbf", gamma=0.7, lambda1=0.2,
                    lambda2=0.3, delta=2.0)
        back = model_from_section(model_section(model))
        x = rng.standard_normal(5)
        assert predict(back, x) == predict(model, x)

    def test_through_checkpoint_file(self, tmp_path):
        rng = np.random.default_rng(14)
        feats, confs = _orthogonal_clusters(rng)
        model = fit(feats, confs)
        path = tmp_path / "oracle.ckpt"
        save_checkpoint(path, {"kernel_oracle": model_section(model)})
        back = model_from_section(load_checkpoint(path)["kernel_oracle"])
        # float32 payload: predictions agree to single precision
        for j in range(1, 6):
            l1, c1, s1 = predict(model, feats[j][0])
            l2, c2, s2 = predict(back, feats[j][0])
            assert l1 == l2
            assert c2 == pytest.approx(c1, abs=1e-4)
