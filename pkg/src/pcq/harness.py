"""Episodic training loop, inference, and content-disjoint cross-validation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig
from .features import (BACKBONE_PRESETS, ConvBackbone, FeatureExtractor,
                       augment_views)
from .ingest import DatasetManifest, QualityLabel, normalize_score
from .latent import (N_LEVELS, AnchorSet, Disentangler, DisentangledFeature,
                     aggregate_anchors, distribution_loss)
from .netcore import ParamStore
from .projection import ProjectionSet, render
from .ranklosses import eval_metrics, logistic4_fit, quality_regularizer
from .stages import (ConfidenceRegressor, LevelClassifier, QualityScore,
                     boundary_loss, clamp_confidence, combine)
from .tensor import Tensor, stack

log = logging.getLogger(__name__)


class EpisodeError(ValueError):
    pass


@dataclass
class Sample:
    sample_id: str
    content_id: str
    mos: float
    label: QualityLabel
    proj: ProjectionSet


@dataclass
class EpisodeBatch:
    support: dict            # level -> list of sample indices
    query: list              # sample indices
    seed: int
    step: int

    def all_indices(self) -> list:
        out = []
        for j in range(1, N_LEVELS + 1):
            out.extend(self.support[j])
        out.extend(self.query)
        return out


def prepare_samples(clouds, manifest: DatasetManifest,
                    config: RunConfig) -> list:
    """Render projections and normalize labels for every manifest entry."""
    samples = []
    for cloud, (path, mos, cid) in zip(clouds, manifest.entries):
        proj = render(cloud, config.image_size, tau_density=config.tau_density,
                      k_blur=config.k_blur)
        label = normalize_score(mos, manifest.scale_min, manifest.scale_max,
                                config.delta)
        samples.append(Sample(sample_id=cloud.id or path, content_id=cid,
                              mos=mos, label=label, proj=proj))
    return samples


def split_support_query(contents: list, seed: int):
    """Evenly split training content ids into support/query sides."""
    rng = np.random.default_rng([seed, 0x5eed])
    order = list(np.array(sorted(contents))[rng.permutation(len(contents))])
    half = (len(order) + 1) // 2
    return order[:half], order[half:]


def build_episode(samples, support_contents, query_contents, k_support: int,
                  k_query: int, seed: int, step: int,
                  allow_resample: bool = False) -> EpisodeBatch:
    """Deterministic episode: level-pure support groups drawn from the

    support-side contents, query drawn from the query-side contents.
    """
    rng = np.random.default_rng([seed, step])
    support_pool = {j: [] for j in range(1, N_LEVELS + 1)}
    query_pool = []
    for i, s in enumerate(samples):
        if s.content_id in support_contents:
            support_pool[s.label.level].append(i)
        elif s.content_id in query_contents:
            query_pool.append(i)
    support = {}
    for j in range(1, N_LEVELS + 1):
        pool = support_pool[j]
        if len(pool) >= k_support:
            pick = rng.choice(len(pool), size=k_support, replace=False)
        elif pool and allow_resample:
            log.warning("level %d has only %d support samples; resampling "
                        "with replacement", j, len(pool))
            pick = rng.choice(len(pool), size=k_support, replace=True)
        else:
            raise EpisodeError(
                f"level {j} has {len(pool)} support samples, need {k_support}")
        support[j] = [pool[int(p)] for p in pick]
    if len(query_pool) < k_query:
        raise EpisodeError(
            f"query side has {len(query_pool)} samples, need {k_query}")
    pick = rng.choice(len(query_pool), size=k_query, replace=False)
    query = [query_pool[int(p)] for p in pick]
    assert not (set(query) & {i for idx in support.values() for i in idx})
    return EpisodeBatch(support=support, query=query, seed=seed, step=step)


class QualityModel:
    """Backbone, disentangler and both relevance-mapping heads on one store."""

    def __init__(self, config: RunConfig, store: ParamStore | None = None):
        self.config = config
        self.store = store or ParamStore(seed=config.seed)
        backbone = ConvBackbone(self.store,
                                channels=BACKBONE_PRESETS[config.backbone],
                                name="feat.backbone")
        self.extractor = FeatureExtractor(self.store, d=config.d, d_m=config.d_m,
                                          image_size=config.image_size,
                                          backbone=backbone)
        self.disentangler = Disentangler(self.store, d=config.d, d_m=config.d_m,
                                         n_layers=config.n_layers,
                                         n_heads=config.n_heads)
        self.classifier = LevelClassifier(self.store, d=config.d, d_m=config.d_m,
                                          final_init="linear")
        self.regressor = ConfidenceRegressor(self.store, d=config.d,
                                             d_m=config.d_m)
        self.anchors: AnchorSet | None = None
        self.support_bank: dict | None = None  # level -> (features, confidences)

    # -- training ----------------------------------------------------------

    def _disentangled_groups(self, samples, episode: EpisodeBatch,
                             rng: np.random.Generator | None = None):
        """One batched feature extraction, then per-group disentanglement."""
        idx = episode.all_indices()
        views = np.stack([samples[i].proj.stacked_views() for i in idx])
        if rng is not None and self.config.augment:
            views = augment_views(views, rng)
            # augment_views permutes view order, so a prefix is a uniform
            # random subset; the view-mean makes any subset an unbiased
            # estimate of the full six-view feature
            views = views[:, :self.config.train_views]
        feats = self.extractor.forward_batch(views)
        pos = {i: r for r, i in enumerate(idx)}
        support = {}
        for j in range(1, N_LEVELS + 1):
            rows = np.array([pos[i] for i in episode.support[j]])
            out = self.disentangler.forward(feats[rows])
            support[j] = [
                DisentangledFeature(vector=out[r], level=j,
                                    q=samples[i].label.q,
                                    sample_id=samples[i].sample_id)
                for r, i in enumerate(episode.support[j])]
        qrows = np.array([pos[i] for i in episode.query])
        qout = self.disentangler.forward_independent(feats[qrows])
        query = [DisentangledFeature(vector=qout[r],
                                     level=samples[i].label.level,
                                     q=samples[i].label.q,
                                     sample_id=samples[i].sample_id)
                 for r, i in enumerate(episode.query)]
        return support, query

    def train_step(self, samples, episode: EpisodeBatch,
                   rng: np.random.Generator) -> dict:
        cfg = self.config
        support, query = self._disentangled_groups(samples, episode, rng)

        flat_support = [f for j in range(1, N_LEVELS + 1) for f in support[j]]
        l_dis = (distribution_loss(flat_support, cfg.tau_sim, rng)
                 if cfg.lambda1 > 0 else Tensor(0.0))

        anchors = aggregate_anchors(support)
        support_conf = {j: np.array([samples[i].label.confidence
                                     for i in episode.support[j]])
                        for j in range(1, N_LEVELS + 1)}

        level_values = Tensor(np.arange(1.0, N_LEVELS + 1.0))
        cls_terms, scores, targets = [], [], []
        for qf in query:
            level, probs = self.classifier.classify(qf.vector, anchors)
            cls_terms.append(boundary_loss(probs, qf.level,
                                           variant=cfg.cls_loss))
            if cfg.lambda3 > 0:
                # training-time score: probability-weighted (soft) level
                # keeps the level term differentiable; inference uses the
                # hard argmax level
                soft_level = (probs * level_values).sum()
                conf = self.regressor.confidence(qf.vector, support[level],
                                                 support_conf[level], cfg.delta)
                scores.append(soft_level + conf * (1.0 / cfg.delta))
            targets.append(qf.q)
        l_cls = stack(cls_terms).mean()
        if cfg.lambda3 > 0:
            l_reg = quality_regularizer(stack(scores).reshape(len(scores)),
                                        np.array(targets), cfg.epsilon)
        else:
            l_reg = Tensor(0.0)

        total = cfg.lambda1 * l_dis + cfg.lambda2 * l_cls + cfg.lambda3 * l_reg
        breakdown = {"l_dis": float(l_dis.data), "l_cls": float(l_cls.data),
                     "l_reg": float(l_reg.data), "total": float(total.data)}
        if not np.isfinite(breakdown["total"]):
            raise FloatingPointError(f"non-finite loss: {breakdown}")
        if total.requires_grad:
            self.store.zero_grad()
            total.backward()
        self.store.adam_step(cfg.lr, cfg.weight_decay, clip=cfg.grad_clip)
        return breakdown

    # -- freezing and inference ---------------------------------------------

    def freeze_support(self, samples, support_contents) -> None:
        """Build anchors and the Stage-2 bank from all support-side samples."""
        groups, confs = {}, {}
        by_level = {j: [] for j in range(1, N_LEVELS + 1)}
        for s in samples:
            if s.content_id in support_contents:
                by_level[s.label.level].append(s)
        for j in range(1, N_LEVELS + 1):
            members = by_level[j]
            if not members:
                raise EpisodeError(f"support side has no samples of level {j}")
            feats = self.extractor.extract_batch([s.proj for s in members])
            out = self.disentangler.forward(feats)
            groups[j] = [DisentangledFeature(vector=out[r], level=j,
                                             q=m.label.q, sample_id=m.sample_id)
                         for r, m in enumerate(members)]
            confs[j] = np.array([m.label.confidence for m in members])
        self.anchors = aggregate_anchors(groups)
        self.anchors = AnchorSet(anchors=Tensor(self.anchors.anchors.data.copy()))
        self.support_bank = {
            j: (np.stack([f.vector.data for f in groups[j]]), confs[j])
            for j in range(1, N_LEVELS + 1)}

    def score(self, proj: ProjectionSet) -> QualityScore:
        return self.score_batch([proj])[0]

    def score_batch(self, projs) -> list:
        if self.anchors is None or self.support_bank is None:
            raise RuntimeError("model has no frozen support bank; train or "
                               "load a checkpoint first")
        cfg = self.config
        feats = self.extractor.extract_batch(projs)
        zs = self.disentangler.forward_independent(feats)
        out = []
        for r, proj in enumerate(projs):
            vec = zs[r]
            level, probs = self.classifier.classify(vec, self.anchors)
            bank_feats, bank_conf = self.support_bank[level]
            support = [DisentangledFeature(vector=Tensor(bank_feats[k]),
                                           level=level, q=0.0)
                       for k in range(len(bank_feats))]
            if cfg.lambda3 > 0:
                conf = float(self.regressor.confidence(
                    vec, support, bank_conf, cfg.delta).data)
                conf = clamp_confidence(conf, cfg.delta)
            else:
                conf = 0.0  # quality-aware loss disabled: level-only score
            out.append(QualityScore(level=level, confidence=conf,
                                    score=combine(level, conf, cfg.delta),
                                    probabilities=probs.data.copy(),
                                    sample_id=proj.sample_id))
        return out

    # -- checkpointing -------------------------------------------------------

    def save(self, path) -> None:
        from dataclasses import asdict
        sections = {"params": ckpt.store_section(self.store)}
        sections["config"] = {"meta": asdict(self.config), "arrays": {}}
        if self.anchors is not None:
            bank_arrays = {"anchors": self.anchors.anchors.data}
            for j, (feats, conf) in self.support_bank.items():
                bank_arrays[f"level{j}.features"] = feats
                bank_arrays[f"level{j}.confidences"] = conf
            sections["support_bank"] = {"meta": {}, "arrays": bank_arrays}
        ckpt.save_checkpoint(path, sections)

    @classmethod
    def load(cls, path) -> "QualityModel":
        sections = ckpt.load_checkpoint(path)
        config = RunConfig(**sections["config"]["meta"]).validate()
        model = cls(config)
        ckpt.load_store_section(model.store, sections["params"])
        if "support_bank" in sections:
            arrays = sections["support_bank"]["arrays"]
            model.anchors = AnchorSet(anchors=Tensor(arrays["anchors"]))
            model.support_bank = {
                j: (arrays[f"level{j}.features"],
                    arrays[f"level{j}.confidences"])
                for j in range(1, N_LEVELS + 1)}
        return model


@dataclass
class TrainResult:
    model: QualityModel
    history: list = field(default_factory=list)


def train(samples, train_contents, config: RunConfig,
          log_every: int = 0) -> TrainResult:
    """Episodic training on the given contents; freezes the support bank."""
    support_contents, query_contents = split_support_query(train_contents,
                                                           config.seed)
    model = QualityModel(config)
    n_query_side = sum(s.content_id in query_contents for s in samples)
    steps_per_epoch = max(1, n_query_side // config.k_query)
    history = []
    step = 0
    for epoch in range(config.epochs):
        for _ in range(steps_per_epoch):
            episode = build_episode(samples, support_contents, query_contents,
                                    config.k_support, config.k_query,
                                    config.seed, step, allow_resample=True)
            rng = np.random.default_rng([config.seed, 0xd15, step])
            losses = model.train_step(samples, episode, rng)
            history.append(losses)
            if log_every and step % log_every == 0:
                log.info("step %d: %s", step, losses)
            step += 1
    model.freeze_support(samples, support_contents)
    return TrainResult(model=model, history=history)


def evaluate(model: QualityModel, test_samples) -> dict:
    """Score, Logistic-4 map to the MOS scale, compute the four metrics."""
    scores = model.score_batch([s.proj for s in test_samples])
    pred = np.array([sc.score for sc in scores])
    mos = np.array([s.mos for s in test_samples])
    fit = logistic4_fit(pred, mos)
    metrics = eval_metrics(fit.mapped, mos)
    return {"metrics": metrics, "scores": scores, "pred": pred, "mos": mos,
            "logistic4": fit}


def make_folds(contents: list, n_folds: int, seed: int) -> list:
    contents = sorted(contents)
    if len(contents) < n_folds:
        raise EpisodeError(f"{len(contents)} contents cannot fill "
                           f"{n_folds} folds")
    rng = np.random.default_rng([seed, 0xf01d])
    order = [contents[i] for i in rng.permutation(len(contents))]
    folds = [list(f) for f in np.array_split(np.array(order), n_folds)]
    flat = [c for f in folds for c in f]
    assert sorted(flat) == contents and len(set(flat)) == len(flat)
    return folds


def crossval(samples, config: RunConfig) -> dict:
    """Content-disjoint k-fold cross-validation; mean metrics over folds."""
    contents = sorted({s.content_id for s in samples})
    folds = make_folds(contents, config.folds, config.seed)
    per_fold = []
    for fi, test_contents in enumerate(folds):
        test_set = set(test_contents)
        train_contents = [c for c in contents if c not in test_set]
        assert not set(train_contents) & test_set
        result = train(samples, train_contents, config)
        test_samples = [s for s in samples if s.content_id in test_set]
        ev = evaluate(result.model, test_samples)
        per_fold.append({"fold": fi, "test_contents": test_contents,
                         **ev["metrics"]})
        log.info("fold %d: %s", fi, ev["metrics"])
    mean = {k: float(np.mean([f[k] for f in per_fold]))
            for k in ("plcc", "srocc", "krocc", "rmse")}
    return {"folds": per_fold, "mean": mean}
