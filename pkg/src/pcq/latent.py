"""Feature disentanglement, latent-space regularization, anchor features.

The disentangler applies stacked self-attention blocks across a group
of same-level features so the shared degradation signature survives
while sample-specific detail is averaged out. A weighted InfoNCE loss
pulls same-level features together in cosine space, and the per-level
means of the structured features serve as anchor features.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .netcore import ParamStore, dense, msa
from .tensor import Tensor, stack

log = logging.getLogger(__name__)

N_LEVELS = 5


class ContractViolation(ValueError):
    pass


@dataclass
class DisentangledFeature:
    vector: Tensor  # (d,)
    level: int
    q: float
    sample_id: str = ""


@dataclass
class AnchorSet:
    anchors: Tensor  # (5, d), row j-1 is the level-j anchor

    def __post_init__(self):
        if self.anchors.shape[0] != N_LEVELS:
            raise ContractViolation("anchor set must hold exactly 5 anchors")


class Disentangler:
    """Stacked blocks of shared-QKV attention and two dense layers."""

    def __init__(self, store: ParamStore, d: int, d_m: int, n_layers: int = 3,
                 n_heads: int = 8, name: str = "phi"):
        self.store = store
        self.d = d
        self.d_m = d_m
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.name = name

    def forward(self, x: Tensor) -> Tensor:
        """x (k, d) -> (k, d); attention runs across the k group members."""
        y = x
        for i in range(self.n_layers):
            y = msa(self.store, y, self.n_heads, f"{self.name}.block{i}.msa")
            y = dense(self.store, y, f"{self.name}.block{i}.fc0", self.d_m,
                      init="linear")
            y = dense(self.store, y, f"{self.name}.block{i}.fc1", self.d,
                      init="linear")
        return y

    def forward_independent(self, x: Tensor) -> Tensor:
        """Batched equivalent of the k=1 (single-sample) path.

        With one sample the attention softmax is the identity, so each
        block reduces to four row-wise dense layers; this applies them to
        every row of x independently, matching per-row forward() calls.
        """
        y = x
        for i in range(self.n_layers):
            y = dense(self.store, y, f"{self.name}.block{i}.msa.qkv", self.d,
                      init="linear")
            y = dense(self.store, y, f"{self.name}.block{i}.msa.out", self.d,
                      init="linear")
            y = dense(self.store, y, f"{self.name}.block{i}.fc0", self.d_m,
                      init="linear")
            y = dense(self.store, y, f"{self.name}.block{i}.fc1", self.d,
                      init="linear")
        return y

    def disentangle(self, features, labels) -> list:
        """Apply the network to a support group (single level) or a

        single query sample. Output order matches input order.
        """
        if len(features) != len(labels):
            raise ContractViolation("features/labels length mismatch")
        levels = {lab.level for lab in labels}
        if len(features) > 1 and len(levels) != 1:
            raise ContractViolation(
                f"support group mixes quality levels {sorted(levels)}")
        mat = stack([f.vector for f in features])
        out = self.forward(mat)
        return [DisentangledFeature(vector=out[i], level=lab.level, q=lab.q,
                                    sample_id=f.sample_id)
                for i, (f, lab) in enumerate(zip(features, labels))]


def distribution_loss(features, tau_sim: float, rng: np.random.Generator) -> Tensor:
    """Weighted InfoNCE over L2-normalized features.

    Each feature with at least one level-mate anchors one positive pair
    (partner drawn uniformly from its level-mates); negatives are all
    features of other levels. Pair weights shrink with quality distance
    for positives and grow with it for negatives.
    """
    if tau_sim <= 0:
        raise ValueError("tau_sim must be positive")
    n = len(features)
    if n < 2:
        raise ValueError("need at least two features")
    levels = np.array([f.level for f in features])
    qs = np.array([f.q for f in features])

    mat = stack([f.vector for f in features])            # (n, d)
    norms = (mat * mat).sum(axis=1, keepdims=True).sqrt()
    unit = mat / norms
    sim = unit @ unit.transpose(1, 0)                    # cosine matrix
    h = (sim * (1.0 / tau_sim)).exp()

    anchors, partners = [], []
    for i in range(n):
        mates = np.flatnonzero((levels == levels[i]) & (np.arange(n) != i))
        if mates.size == 0:
            log.debug("level %d has a single sample; no positive pair", levels[i])
            continue
        anchors.append(i)
        partners.append(int(rng.choice(mates)))
    if not anchors:
        raise ValueError("no level has two samples; distribution loss undefined")
    ai = np.array(anchors)
    pi = np.array(partners)

    w_pos = 1.0 / ((qs[ai] - qs[pi]) ** 2 + 1.0)
    w_neg = 1.0 - 1.0 / ((qs[:, None] - qs[None, :]) ** 2 + 1.0)
    neg_mask = levels[:, None] != levels[None, :]
    neg_w = np.where(neg_mask, w_neg, 0.0)[ai]           # (n_anchors, n)

    pos = h[ai, pi] * w_pos
    neg_sum = (h[ai] * neg_w).sum(axis=1)
    loss = -((pos / (pos + neg_sum)).log())
    return loss.mean()


def aggregate_anchors(groups: dict) -> AnchorSet:
    """groups: level -> non-empty list of DisentangledFeature."""
    missing = [j for j in range(1, N_LEVELS + 1) if not groups.get(j)]
    if missing:
        raise ContractViolation(f"missing quality levels: {missing}")
    rows = []
    for j in range(1, N_LEVELS + 1):
        feats = groups[j]
        if any(f.level != j for f in feats):
            raise ContractViolation(f"group {j} contains foreign levels")
        rows.append(stack([f.vector for f in feats]).mean(axis=0))
    return AnchorSet(anchors=stack(rows))
