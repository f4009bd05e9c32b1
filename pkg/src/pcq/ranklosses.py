"""Correlation losses, differentiable soft ranking, evaluation metrics.

Soft ranks come from projecting the scaled, negated scores onto the
permutahedron of (n, ..., 1); the projection reduces to an isotonic
regression solved with pool-adjacent-violators, whose block structure
yields the exact Jacobian. PLCC/SROCC losses build on it; evaluation
metrics (PLCC, SROCC, KROCC, RMSE) use the exact non-differentiable
definitions, and Logistic-4 fitting follows the VQEG protocol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

DEFAULT_EPSILON_TRAIN = 1e-2
DEFAULT_EPSILON_REPORT = 1e-3
_CONST_TOL = 1e-14


class MetricError(ValueError):
    pass


# -- isotonic regression / soft rank ----------------------------------------

def isotonic_nonincreasing(y: np.ndarray):
    """argmin_v 0.5||v - y||^2 s.t. v_1 >= ... >= v_n, via PAV.

    Returns (solution, block boundaries) where blocks is a list of
    (start, end) half-open index ranges sharing one pooled value.
    """
    n = len(y)
    sol = np.empty(n)
    sums = np.empty(n)
    counts = np.empty(n, dtype=np.intp)
    starts = np.empty(n, dtype=np.intp)
    top = -1
    for i in range(n):
        top += 1
        sol[top] = y[i]
        sums[top] = y[i]
        counts[top] = 1
        starts[top] = i
        while top > 0 and sol[top - 1] < sol[top]:
            sums[top - 1] += sums[top]
            counts[top - 1] += counts[top]
            sol[top - 1] = sums[top - 1] / counts[top - 1]
            top -= 1
    out = np.empty(n)
    blocks = []
    for b in range(top + 1):
        start = starts[b]
        end = start + counts[b]
        out[start:end] = sol[b]
        blocks.append((int(start), int(end)))
    return out, blocks


def _soft_rank_core(x: np.ndarray, epsilon: float):
    """Ascending soft ranks plus the data needed for the exact VJP."""
    n = len(x)
    if n < 2:
        raise MetricError("soft_rank needs at least two values")
    if epsilon <= 0:
        raise MetricError("epsilon must be positive")
    z = -x / epsilon
    sigma = np.argsort(-z, kind="stable")
    s = z[sigma]
    w = np.arange(n, 0, -1, dtype=np.float64)
    v, blocks = isotonic_nonincreasing(s - w)
    proj_sorted = s - v
    proj = np.empty(n)
    proj[sigma] = proj_sorted
    ranks = (n + 1) - proj
    return ranks, sigma, blocks


def _soft_rank_vjp(g: np.ndarray, sigma: np.ndarray, blocks,
                   epsilon: float) -> np.ndarray:
    # d ranks / d x = (1/eps) * Pσᵀ (I - B) Pσ with B block-averaging
    gs = g[sigma]
    out = gs.copy()
    for start, end in blocks:
        out[start:end] -= gs[start:end].mean()
    gx = np.empty_like(out)
    gx[sigma] = out
    return gx / epsilon


def soft_rank(x, epsilon: float = DEFAULT_EPSILON_TRAIN) -> Tensor:
    """Differentiable ascending ranks (largest value -> rank n).

    Output lies in the permutahedron of (n, ..., 1): the coordinates sum
    to n(n+1)/2 and each is in [1, n]. As epsilon -> 0 the output
    approaches the hard ranks.
    """
    xt = x if isinstance(x, Tensor) else Tensor(x)
    ranks, sigma, blocks = _soft_rank_core(xt.data, epsilon)
    return Tensor(ranks, _parents=(xt,),
                  _backward=lambda g: (_soft_rank_vjp(g, sigma, blocks, epsilon),))


# -- correlation losses ------------------------------------------------------

def _pearson_t(a: Tensor, b: Tensor) -> Tensor:
    ac = a - a.mean()
    bc = b - b.mean()
    cov = (ac * bc).sum()
    return cov / ((ac * ac).sum().sqrt() * (bc * bc).sum().sqrt())


def _is_constant(v: np.ndarray) -> bool:
    return float(np.ptp(v)) <= _CONST_TOL * max(1.0, float(np.abs(v).max()))


def plcc_loss(pred, target) -> Tensor:
    """Pearson correlation; constant predictions give 0 with no gradient."""
    pt = pred if isinstance(pred, Tensor) else Tensor(pred)
    tt = target if isinstance(target, Tensor) else Tensor(target)
    if pt.size < 3:
        raise MetricError("need at least 3 samples")
    if _is_constant(tt.data):
        raise MetricError("constant target: correlation undefined")
    if _is_constant(pt.data):
        return Tensor(0.0)
    return _pearson_t(pt, tt)


def srocc_loss(pred, target, epsilon: float = DEFAULT_EPSILON_TRAIN) -> Tensor:
    """Pearson correlation of the soft ranks of both arguments."""
    pt = pred if isinstance(pred, Tensor) else Tensor(pred)
    tt = target if isinstance(target, Tensor) else Tensor(target)
    if pt.size < 3:
        raise MetricError("need at least 3 samples")
    if _is_constant(tt.data):
        raise MetricError("constant target: correlation undefined")
    if _is_constant(pt.data):
        return Tensor(0.0)
    return _pearson_t(soft_rank(pt, epsilon), soft_rank(tt, epsilon))


def quality_regularizer(pred, target,
                        epsilon: float = DEFAULT_EPSILON_TRAIN) -> Tensor:
    """-plcc - srocc; minimized when both correlations reach 1."""
    return -plcc_loss(pred, target) - srocc_loss(pred, target, epsilon)


# -- exact evaluation metrics -------------------------------------------------

def _avg_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    sx = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson_np(a: np.ndarray, b: np.ndarray) -> float:
    ac = a - a.mean()
    bc = b - b.mean()
    denom = np.sqrt((ac * ac).sum()) * np.sqrt((bc * bc).sum())
    return float((ac * bc).sum() / denom)


def _kendall_tau_b(x: np.ndarray, y: np.ndarray) -> float:
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(len(x), k=1)
    sx, sy = dx[iu], dy[iu]
    concordance = float((sx * sy).sum())
    n0 = len(sx)
    tx = int((sx == 0).sum())
    ty = int((sy == 0).sum())
    return concordance / np.sqrt(float(n0 - tx) * float(n0 - ty))


def eval_metrics(pred, target) -> dict:
    """Exact PLCC/SROCC/KROCC/RMSE (SROCC with average-rank ties,

    KROCC as tau-b).
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise MetricError("pred/target must be equal-length vectors")
    if len(p) < 3:
        raise MetricError("need at least 3 samples")
    return {
        "plcc": _pearson_np(p, t),
        "srocc": _pearson_np(_avg_ranks(p), _avg_ranks(t)),
        "krocc": _kendall_tau_b(p, t),
        "rmse": float(np.sqrt(((p - t) ** 2).mean())),
    }


# -- Logistic-4 fitting -------------------------------------------------------

@dataclass
class Logistic4Fit:
    mapped: np.ndarray
    params: np.ndarray | None   # (beta1, beta2, beta3, beta4)
    converged: bool
    rmse: float


def _stable_sigmoid(u: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _logistic4(s: np.ndarray, b: np.ndarray) -> np.ndarray:
    b1, b2, b3, b4 = b
    return b2 + (b1 - b2) * _stable_sigmoid((s - b3) / b4)


def _logistic4_jac(s: np.ndarray, b: np.ndarray) -> np.ndarray:
    b1, b2, b3, b4 = b
    u = (s - b3) / b4
    sig = _stable_sigmoid(u)
    dsig = sig * (1.0 - sig)
    return np.stack([sig, 1.0 - sig,
                     -(b1 - b2) * dsig / b4,
                     -(b1 - b2) * dsig * u / b4], axis=1)


def _lm_fit(pred, target, b0, max_iter=200, tol=1e-12):
    b = b0.astype(np.float64).copy()
    lam = 1e-3
    resid = _logistic4(pred, b) - target
    cost = float(resid @ resid)
    converged = False
    for _ in range(max_iter):
        jac = _logistic4_jac(pred, b)
        g = jac.T @ resid
        hess = jac.T @ jac
        stepped = False
        for _ in range(30):
            try:
                step = np.linalg.solve(hess + lam * np.diag(np.diag(hess))
                                       + 1e-12 * np.eye(4), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            b_new = b + step
            if abs(b_new[3]) < 1e-12:
                b_new[3] = 1e-12 * (1 if b_new[3] >= 0 else -1)
            r_new = _logistic4(pred, b_new) - target
            c_new = float(r_new @ r_new)
            if np.isfinite(c_new) and c_new < cost:
                b, resid = b_new, r_new
                improvement = cost - c_new
                cost = c_new
                lam = max(lam * 0.3, 1e-12)
                stepped = True
                if improvement < tol * max(cost, 1.0):
                    converged = True
                break
            lam *= 10
        if not stepped or converged:
            converged = converged or not stepped and lam > 1e10
            break
    return b, cost, converged


def logistic4_fit(pred, target, max_iter: int = 200) -> Logistic4Fit:
    """Damped least-squares fit of the VQEG Logistic-4 mapping.

    If no fit beats the unmapped predictions (already-perfect inputs),
    the predictions pass through unchanged.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if len(p) < 4:
        raise MetricError("Logistic-4 fit needs at least 4 samples")
    if _is_constant(p):
        raise MetricError("constant predictions cannot be fitted")

    span = float(np.ptp(t)) or 1.0
    scale = float(np.std(p)) or 1.0
    corr_sign = np.sign(_pearson_np(p, t)) or 1.0
    inits = [
        np.array([t.max() + 0.1 * span, t.min() - 0.1 * span,
                  np.median(p), corr_sign * scale]),
        np.array([t.max(), t.min(), p.mean(), corr_sign * scale / 4.0]),
        np.array([t.max(), t.min(), np.median(p), 4.0 * corr_sign * scale]),
    ]
    best = None
    for b0 in inits:
        b, cost, conv = _lm_fit(p, t, b0, max_iter=max_iter)
        if best is None or cost < best[1]:
            best = (b, cost, conv)
    b, cost, conv = best
    mapped = _logistic4(p, b)
    fit_rmse = float(np.sqrt(cost / len(p)))
    raw_rmse = float(np.sqrt(((p - t) ** 2).mean()))
    if fit_rmse > raw_rmse:
        return Logistic4Fit(mapped=p.copy(), params=None, converged=False,
                            rmse=raw_rmse)
    return Logistic4Fit(mapped=mapped, params=b, converged=conv, rmse=fit_rmse)
