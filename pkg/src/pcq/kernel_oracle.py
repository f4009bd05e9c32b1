"""Kernelized ridge-regression reference model for the two-stage scorer.

Works on fixed (non-learned) feature vectors. Stage-1 learns, per
quality level, combination weights over the level's samples (whose
weighted sum is the anchor feature) and a PSD bilinear relevance matrix
via alternating closed-form ridge solves. Stage-2 is a per-level kernel
ridge regression onto the confidence degrees with the bilinear matrix
fixed to identity. Prediction mirrors the neural pipeline: argmax of
anchor relevance for the level, kernel expansion for the confidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .latent import N_LEVELS
from .stages import clamp_confidence, combine

DEFAULT_ITERS = 10


class OracleError(ValueError):
    pass


def linear_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b.T


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-gamma * sq)


def nearest_psd(m: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) symmetric PSD matrix: symmetrize, clip the

    negative eigenvalues to zero, reconstruct.
    """
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise OracleError("non-finite matrix")
    sym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(sym)
    clipped = np.clip(vals, 0.0, None)
    out = (vecs * clipped) @ vecs.T
    return 0.5 * (out + out.T)


def anchor_feature(level_samples: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted combination of one level's sample features."""
    samples = np.asarray(level_samples, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if samples.ndim != 2 or w.shape != (samples.shape[0],):
        raise OracleError(
            f"weights length {w.shape} does not match {samples.shape[0]} samples")
    return w @ samples


@dataclass
class KernelModel:
    kernel: str = "linear"
    gamma: float = 1.0
    lambda1: float = 0.1
    lambda2: float = 0.1
    delta: float = 1.0
    level_features: dict = field(default_factory=dict)  # j -> (K_j, d)
    alpha_L: dict = field(default_factory=dict)         # j -> (K_j,)
    beta_L: dict = field(default_factory=dict)          # j -> (d, d) PSD
    alpha_R: dict = field(default_factory=dict)         # j -> (K_j,)
    objective_trace: dict = field(default_factory=dict)  # j -> list per substep
    projection_residuals: dict = field(default_factory=dict)

    def gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.kernel == "linear":
            return linear_kernel(a, b)
        if self.kernel == "rbf":
            return rbf_kernel(a, b, self.gamma)
        raise OracleError(f"unknown kernel {self.kernel!r}")

    def anchor(self, j: int) -> np.ndarray:
        return anchor_feature(self.level_features[j], self.alpha_L[j])


def _stage1_objective(x, t, alpha, beta, lambda1, lambda2):
    m = x @ beta @ x.T
    r = m @ alpha
    ridge = 0.5 * lambda1 * float(alpha @ m @ alpha)
    return float(((t - r) ** 2).sum()) + ridge + 0.5 * lambda2 * float(
        (beta ** 2).sum())


def _solve_alpha(x, t, beta, lambda1):
    m = x @ beta @ x.T
    m = 0.5 * (m + m.T)
    a_mat = m @ m + 0.5 * lambda1 * m
    rhs = m @ t
    if lambda1 == 0.0:
        if np.linalg.matrix_rank(m) < m.shape[0]:
            raise OracleError("singular ridge system; set lambda1 > 0")
        return np.linalg.solve(a_mat, rhs)
    return np.linalg.pinv(a_mat, hermitian=True) @ rhs


def _solve_beta(x, t, alpha, lambda1, lambda2):
    d = x.shape[1]
    a_vec = x.T @ alpha                       # anchor feature
    design = np.einsum("p,iq->ipq", a_vec, x).reshape(len(x), d * d)
    lhs = 2.0 * design.T @ design + max(lambda2, 1e-12) * np.eye(d * d)
    rhs = 2.0 * design.T @ t - 0.5 * lambda1 * np.outer(a_vec, a_vec).ravel()
    return np.linalg.solve(lhs, rhs).reshape(d, d)


def fit(features_by_level: dict, confidences_by_level: dict,
        lambda1: float = 0.1, lambda2: float = 0.1, iters: int = DEFAULT_ITERS,
        kernel: str = "linear", gamma: float | None = None,
        delta: float = 1.0) -> KernelModel:
    """Alternating Stage-1 solve plus closed-form Stage-2 solve.

    features_by_level: level -> (K_j, d) fixed feature matrix.
    confidences_by_level: level -> (K_j,) confidence degrees.
    """
    for j in range(1, N_LEVELS + 1):
        if j not in features_by_level:
            raise OracleError(f"missing quality level {j}")
        if len(features_by_level[j]) < 2:
            raise OracleError(f"level {j} needs at least 2 samples")
    some = np.asarray(features_by_level[1])
    d = some.shape[1]
    model = KernelModel(kernel=kernel, gamma=gamma if gamma is not None else 1.0 / d,
                        lambda1=lambda1, lambda2=lambda2, delta=delta)

    for j in range(1, N_LEVELS + 1):
        x = np.asarray(features_by_level[j], dtype=np.float64)
        t = np.full(len(x), float(j))
        beta = np.eye(d)
        alpha = np.zeros(len(x))
        trace, residuals = [], []
        for _ in range(iters):
            alpha = _solve_alpha(x, t, beta, lambda1)
            trace.append(("alpha", _stage1_objective(x, t, alpha, beta,
                                                     lambda1, lambda2)))
            beta_raw = _solve_beta(x, t, alpha, lambda1, lambda2)
            obj_raw = _stage1_objective(x, t, alpha, 0.5 * (beta_raw + beta_raw.T),
                                        lambda1, lambda2)
            beta = nearest_psd(beta_raw)
            obj_proj = _stage1_objective(x, t, alpha, beta, lambda1, lambda2)
            trace.append(("beta", obj_proj))
            residuals.append({"frobenius": float(np.linalg.norm(
                beta - 0.5 * (beta_raw + beta_raw.T))),
                "objective_increase": max(0.0, obj_proj - obj_raw)})
        model.level_features[j] = x
        model.alpha_L[j] = alpha
        model.beta_L[j] = beta
        model.objective_trace[j] = trace
        model.projection_residuals[j] = residuals

        # Stage-2: kernel ridge onto the confidence degrees, identity beta
        y_r = np.asarray(confidences_by_level[j], dtype=np.float64)
        if y_r.shape != (len(x),):
            raise OracleError(f"level {j}: confidence vector length mismatch")
        gram = model.gram(x, x)
        model.alpha_R[j] = np.linalg.solve(
            gram + 0.5 * max(lambda1, 1e-12) * np.eye(len(x)), y_r)
    return model


def stage1_responses(model: KernelModel, feature: np.ndarray) -> np.ndarray:
    x = np.asarray(feature, dtype=np.float64)
    return np.array([model.anchor(j) @ model.beta_L[j] @ x
                     for j in range(1, N_LEVELS + 1)])


def predict(model: KernelModel, feature: np.ndarray):
    """Returns (level, confidence, score) for one feature vector."""
    responses = stage1_responses(model, feature)
    level = int(np.argmax(responses)) + 1
    x = np.asarray(feature, dtype=np.float64)[None, :]
    gram = model.gram(model.level_features[level], x)[:, 0]
    conf = clamp_confidence(float(model.alpha_R[level] @ gram), model.delta)
    return level, conf, combine(level, conf, model.delta)


def model_section(model: KernelModel) -> dict:
    """Checkpoint section for the kernel model."""
    arrays = {}
    for j in range(1, N_LEVELS + 1):
        arrays[f"level{j}.features"] = model.level_features[j]
        arrays[f"level{j}.alpha_L"] = model.alpha_L[j]
        arrays[f"level{j}.beta_L"] = model.beta_L[j]
        arrays[f"level{j}.alpha_R"] = model.alpha_R[j]
    meta = {"kernel": model.kernel, "gamma": model.gamma,
            "lambda1": model.lambda1, "lambda2": model.lambda2,
            "delta": model.delta}
    return {"meta": meta, "arrays": arrays}


def model_from_section(sec: dict) -> KernelModel:
    meta = sec["meta"]
    model = KernelModel(kernel=meta["kernel"], gamma=meta["gamma"],
                        lambda1=meta["lambda1"], lambda2=meta["lambda2"],
                        delta=meta["delta"])
    for j in range(1, N_LEVELS + 1):
        model.level_features[j] = sec["arrays"][f"level{j}.features"]
        model.alpha_L[j] = sec["arrays"][f"level{j}.alpha_L"]
        model.beta_L[j] = sec["arrays"][f"level{j}.beta_L"]
        model.alpha_R[j] = sec["arrays"][f"level{j}.alpha_R"]
    return model
