"""Disentangler, weighted-InfoNCE distribution loss, anchor aggregation."""

import numpy as np
import pytest

from helpers import gradcheck, scalarize
from pcq.latent import (AnchorSet, ContractViolation, DisentangledFeature,
                        Disentangler, aggregate_anchors, distribution_loss)
from pcq.ingest import QualityLabel
from pcq.netcore import ParamStore
from pcq.tensor import Tensor


def _features(rng, levels, qs, d=6):
    return [DisentangledFeature(vector=Tensor(rng.standard_normal(d),
                                              requires_grad=True),
                                level=l, q=q, sample_id=f"s{i}")
            for i, (l, q) in enumerate(zip(levels, qs))]


def _reference_infonce(vecs, levels, qs, tau, seed):
    """Independent numpy re-derivation of the weighted InfoNCE loss."""
    rng = np.random.default_rng(seed)
    vecs = np.asarray(vecs)
    levels = np.asarray(levels)
    qs = np.asarray(qs)
    unit = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
    n = len(vecs)
    terms = []
    for i in range(n):
        mates = [j for j in range(n) if j != i and levels[j] == levels[i]]
        if not mates:
            continue
        p = int(rng.choice(np.array(mates)))
        w_pos = 1.0 / ((qs[i] - qs[p]) ** 2 + 1.0)
        pos = np.exp(unit[i] @ unit[p] / tau) * w_pos
        neg = 0.0
        for k in range(n):
            if levels[k] == levels[i]:
                continue
            w_neg = 1.0 - 1.0 / ((qs[i] - qs[k]) ** 2 + 1.0)
            neg += np.exp(unit[i] @ unit[k] / tau) * w_neg
        terms.append(-np.log(pos / (pos + neg)))
    return float(np.mean(terms))


class TestDistributionLoss:
    @pytest.mark.parametrize("seed", range(8))
    def test_matches_reference(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 12))
        levels = rng.integers(1, 6, n)
        while len(set(levels.tolist())) < 2 or not any(
                (levels == l).sum() >= 2 for l in levels):
            levels = rng.integers(1, 6, n)
        qs = levels + rng.uniform(-0.5, 0.5, n)
        feats = _features(rng, levels, qs)
        loss = distribution_loss(feats, 0.5, np.random.default_rng(seed + 77))
        ref = _reference_infonce([f.vector.data for f in feats], levels, qs,
                                 0.5, seed + 77)
        assert float(loss.data) == pytest.approx(ref, abs=1e-12)

    def test_two_levels_hand_case(self):
        # two samples per level, orthogonal within level, identical across
        v = [Tensor(np.array([1.0, 0.0])), Tensor(np.array([0.0, 1.0])),
             Tensor(np.array([1.0, 0.0])), Tensor(np.array([0.0, 1.0]))]
        feats = [DisentangledFeature(vector=v[0], level=1, q=1.0),
                 DisentangledFeature(vector=v[1], level=1, q=1.0),
                 DisentangledFeature(vector=v[2], level=2, q=2.0),
                 DisentangledFeature(vector=v[3], level=2, q=2.0)]
        tau = 1.0
        loss = float(distribution_loss(feats, tau,
                                       np.random.default_rng(0)).data)
        # every anchor: partner cos 0 (w_pos 1), two negatives cos {1, 0}
        # with weight 1 - 1/(1+1) = 0.5
        pos = np.exp(0.0)
        neg = 0.5 * np.exp(1.0) + 0.5 * np.exp(0.0)
        expected = -np.log(pos / (pos + neg))
        assert loss == pytest.approx(expected, abs=1e-12)

    def test_scale_invariance(self):
        # cosine similarity ignores per-feature magnitude
        rng = np.random.default_rng(3)
        levels = [1, 1, 2, 2, 3, 3]
        qs = [1.1, 0.9, 2.0, 2.2, 3.0, 2.8]
        base = [rng.standard_normal(5) for _ in levels]
        f1 = [DisentangledFeature(vector=Tensor(b), level=l, q=q)
              for b, l, q in zip(base, levels, qs)]
        f2 = [DisentangledFeature(vector=Tensor(b * s), level=l, q=q)
              for b, l, q, s in zip(base, levels, qs, [2.0, 0.5, 7.0, 1.0, 3.0, 0.1])]
        l1 = distribution_loss(f1, 0.3, np.random.default_rng(5))
        l2 = distribution_loss(f2, 0.3, np.random.default_rng(5))
        assert float(l1.data) == pytest.approx(float(l2.data), abs=1e-12)

    def test_singleton_level_skipped_but_counts_as_negative(self):
        rng = np.random.default_rng(4)
        feats = _features(rng, [1, 1, 5], [1.0, 1.2, 5.0])
        # does not raise: level 5 has no mate but serves as negative
        loss = distribution_loss(feats, 0.5, np.random.default_rng(1))
        assert np.isfinite(float(loss.data))

    def test_all_singletons_raise(self):
        rng = np.random.default_rng(5)
        feats = _features(rng, [1, 2, 3], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError, match="no level has two samples"):
            distribution_loss(feats, 0.5, np.random.default_rng(0))

    def test_bad_tau_and_small_n(self):
        rng = np.random.default_rng(6)
        feats = _features(rng, [1, 1], [1.0, 1.1])
        with pytest.raises(ValueError, match="tau_sim"):
            distribution_loss(feats, 0.0, np.random.default_rng(0))
        with pytest.raises(ValueError, match="two features"):
            distribution_loss(feats[:1], 0.5, np.random.default_rng(0))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradcheck(self, seed):
        rng = np.random.default_rng(seed + 20)
        levels = [1, 1, 2, 2, 3, 3]
        qs = [1.0, 1.3, 2.1, 1.8, 3.0, 3.2]
        feats = _features(rng, levels, qs)
        wrt = [f.vector for f in feats]
        gradcheck(lambda: distribution_loss(
            feats, 0.5, np.random.default_rng(seed + 50)), wrt)


class TestDisentangler:
    def _model(self, d=8, d_m=8, n_layers=2, n_heads=2, seed=0):
        store = ParamStore(seed=seed)
        return store, Disentangler(store, d=d, d_m=d_m, n_layers=n_layers,
                                   n_heads=n_heads)

    def test_single_sample_forward_equals_independent_path(self):
        store, dis = self._model()
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((5, 8)))
        rows = [dis.forward(x[i].reshape(1, 8)).data[0] for i in range(5)]
        batched = dis.forward_independent(x).data
        np.testing.assert_allclose(batched, np.stack(rows), atol=1e-12)

    def test_k1_attention_is_plain_mlp(self):
        # with one sample, attention mixes nothing: the block is exactly
        # the four dense layers applied to the row
        store, dis = self._model(n_layers=1)
        rng = np.random.default_rng(2)
        x = Tensor(rng.standard_normal((1, 8)))
        out = dis.forward(x)
        p = {k: v.data for k, v in store.params.items()}
        h = x.data @ p["phi.block0.msa.qkv.W"] + p["phi.block0.msa.qkv.b"]
        h = h @ p["phi.block0.msa.out.W"] + p["phi.block0.msa.out.b"]
        h = h @ p["phi.block0.fc0.W"] + p["phi.block0.fc0.b"]
        h = h @ p["phi.block0.fc1.W"] + p["phi.block0.fc1.b"]
        np.testing.assert_allclose(out.data, h, atol=1e-12)

    def test_identical_inputs_identical_outputs(self):
        store, dis = self._model()
        row = np.random.default_rng(3).standard_normal(8)
        out = dis.forward(Tensor(np.stack([row, row, row]))).data
        np.testing.assert_allclose(out[0], out[1], atol=1e-14)
        np.testing.assert_allclose(out[0], out[2], atol=1e-14)

    def test_disentangle_contract(self):
        store, dis = self._model()
        rng = np.random.default_rng(4)
        feats = _features(rng, [2, 2, 2], [2.0, 2.1, 1.9], d=8)
        labels = [QualityLabel(q=f.q, level=f.level, confidence=0.0)
                  for f in feats]
        out = dis.disentangle(feats, labels)
        assert [o.level for o in out] == [2, 2, 2]
        assert [o.sample_id for o in out] == [f.sample_id for f in feats]
        with pytest.raises(ContractViolation, match="mixes"):
            mixed = [QualityLabel(q=1.0, level=1, confidence=0.0),
                     QualityLabel(q=2.0, level=2, confidence=0.0),
                     QualityLabel(q=2.0, level=2, confidence=0.0)]
            dis.disentangle(feats, mixed)
        with pytest.raises(ContractViolation, match="length"):
            dis.disentangle(feats, labels[:2])

    @pytest.mark.parametrize("seed", range(3))
    def test_gradcheck_through_group(self, seed):
        store, dis = self._model(n_layers=1, seed=seed)
        rng = np.random.default_rng(seed + 30)
        x = Tensor(rng.standard_normal((3, 8)), requires_grad=True)
        dis.forward(x)
        wrt = [x] + list(store.params.values())
        gradcheck(lambda: scalarize(dis.forward(x),
                                    np.random.default_rng(seed + 60)), wrt)


class TestAnchors:
    def test_mean_per_level(self):
        rng = np.random.default_rng(7)
        groups = {}
        expect = []
        for j in range(1, 6):
            vecs = rng.standard_normal((j + 1, 4))
            groups[j] = [DisentangledFeature(vector=Tensor(v), level=j, q=j)
                         for v in vecs]
            expect.append(vecs.mean(axis=0))
        anchors = aggregate_anchors(groups)
        np.testing.assert_allclose(anchors.anchors.data, np.stack(expect),
                                   atol=1e-14)

    def test_missing_level(self):
        rng = np.random.default_rng(8)
        groups = {j: [DisentangledFeature(vector=Tensor(rng.standard_normal(4)),
                                          level=j, q=j)] for j in (1, 2, 4, 5)}
        with pytest.raises(ContractViolation, match=r"\[3\]"):
            aggregate_anchors(groups)

    def test_foreign_level(self):
        rng = np.random.default_rng(9)
        groups = {j: [DisentangledFeature(vector=Tensor(rng.standard_normal(4)),
                                          level=j, q=j)] for j in range(1, 6)}
        groups[2][0].level = 3
        with pytest.raises(ContractViolation, match="foreign"):
            aggregate_anchors(groups)

    def test_anchor_set_size_checked(self):
        with pytest.raises(ContractViolation, match="5"):
            AnchorSet(anchors=Tensor(np.zeros((4, 3))))
