"""Two-stage scoring: level classification and confidence regression.

Stage-1 concatenates the query feature with each of the five anchor
features and maps the pair through a shared dense trunk to one logit
per level. Stage-2 pairs the query with each same-level support sample,
predicts a bounded confidence bias per pair, and averages the biased
support confidences. Level plus scaled confidence is the final score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import DESCRIPTIONS
from .latent import N_LEVELS, AnchorSet, ContractViolation, DisentangledFeature
from .netcore import ParamStore, ShapeError, dense
from .tensor import Tensor, concat, softmax, stack


@dataclass
class QualityScore:
    level: int
    confidence: float
    score: float
    probabilities: np.ndarray
    sample_id: str = ""

    @property
    def description(self) -> str:
        return DESCRIPTIONS[self.level]


class LevelClassifier:
    """Relevance-mapping module G; per-level weights share one trunk."""

    def __init__(self, store: ParamStore, d: int, d_m: int,
                 per_level_weights: bool = False, name: str = "g",
                 final_init: str = "zeros"):
        self.store = store
        self.d = d
        self.d_m = d_m
        self.per_level_weights = per_level_weights
        self.name = name
        self.final_init = final_init

    def logits(self, sample: Tensor, anchors: AnchorSet) -> Tensor:
        if sample.shape != (self.d,) or anchors.anchors.shape[1] != self.d:
            raise ShapeError(
                f"classifier dimension mismatch: sample {sample.shape}, "
                f"anchors {anchors.anchors.shape}, expected d={self.d}")
        tiled = stack([sample] * N_LEVELS)                  # (5, d)
        pairs = concat([tiled, anchors.anchors], axis=1)    # (5, 2d)
        if self.per_level_weights:
            outs = []
            for j in range(N_LEVELS):
                row = pairs[j].reshape(1, 2 * self.d)
                hid = dense(self.store, row, f"{self.name}.lvl{j}.fc0",
                            self.d_m).relu()
                outs.append(dense(self.store, hid, f"{self.name}.lvl{j}.fc1",
                                  1, zero_init=self.final_init == "zeros",
                                  init=self.final_init))
            return concat(outs, axis=0).reshape(N_LEVELS)
        hid = dense(self.store, pairs, f"{self.name}.fc0", self.d_m).relu()
        return dense(self.store, hid, f"{self.name}.fc1", 1,
                     zero_init=self.final_init == "zeros",
                     init=self.final_init).reshape(N_LEVELS)

    def classify(self, sample: Tensor, anchors: AnchorSet):
        """Returns (level, probability Tensor); argmax breaks ties low."""
        probs = softmax(self.logits(sample, anchors))
        level = int(np.argmax(probs.data)) + 1
        return level, probs


def boundary_loss(probabilities: Tensor, true_level: int,
                  variant: str = "bce") -> Tensor:
    """Summed one-vs-all binary cross entropy against a one-hot target

    (categorical cross entropy behind the 'ce' switch).
    """
    if not 1 <= true_level <= N_LEVELS:
        raise ValueError(f"level {true_level} outside 1..{N_LEVELS}")
    target = np.zeros(N_LEVELS)
    target[true_level - 1] = 1.0
    eps = 1e-12  # guards log(0) when the softmax saturates
    p = probabilities
    if variant == "ce":
        return -((p[true_level - 1] + eps).log())
    if variant != "bce":
        raise ValueError(f"unknown boundary loss variant {variant!r}")
    t = Tensor(target)
    return -((t * (p + eps).log()
              + (1.0 - t) * ((1.0 - p) + eps).log()).sum())


class ConfidenceRegressor:
    """Relevance-mapping module H for the determined quality level."""

    def __init__(self, store: ParamStore, d: int, d_m: int, name: str = "h"):
        self.store = store
        self.d = d
        self.d_m = d_m
        self.name = name

    def biases(self, sample: Tensor, support: list) -> Tensor:
        """Per-support confidence bias in (-0.5, 0.5); support is a list

        of DisentangledFeature of the level chosen by Stage-1.
        """
        if not support:
            raise ContractViolation("empty Stage-2 support group")
        mat = stack([s.vector for s in support])            # (k, d)
        tiled = stack([sample] * len(support))
        pairs = concat([tiled, mat], axis=1)
        hid = dense(self.store, pairs, f"{self.name}.fc0", self.d_m).relu()
        raw = dense(self.store, hid, f"{self.name}.fc1", 1, zero_init=True)
        return raw.reshape(len(support)).sigmoid() - 0.5

    def confidence(self, sample: Tensor, support: list, support_conf,
                   delta: float = 1.0) -> Tensor:
        """mean_k(q_R_k + bias_k); caller clamps to [-delta/2, delta/2]."""
        biases = self.biases(sample, support)
        return (Tensor(np.asarray(support_conf, dtype=np.float64)) + biases).mean()


def clamp_confidence(conf: float, delta: float) -> float:
    bound = 0.5 * delta
    return float(min(bound, max(-bound, conf)))


def combine(level: int, confidence: float, delta: float = 1.0) -> float:
    if not 1 <= level <= N_LEVELS:
        raise ValueError(f"level {level} outside 1..{N_LEVELS}")
    return level + confidence / delta


def score_sample(sample: DisentangledFeature, anchors: AnchorSet,
                 classifier: LevelClassifier, regressor: ConfidenceRegressor,
                 support_by_level: dict, delta: float = 1.0) -> QualityScore:
    """Full inference for one disentangled query feature.

    support_by_level: level -> (list of DisentangledFeature, confidences).
    """
    level, probs = classifier.classify(sample.vector, anchors)
    support, support_conf = support_by_level[level]
    conf = regressor.confidence(sample.vector, support, support_conf, delta)
    conf_val = clamp_confidence(float(conf.data), delta)
    return QualityScore(level=level, confidence=conf_val,
                        score=combine(level, conf_val, delta),
                        probabilities=probs.data.copy(),
                        sample_id=sample.sample_id)
