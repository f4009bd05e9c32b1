"""Shared test helpers: finite-difference gradient checking and small
builders reused across suites."""

from __future__ import annotations

import numpy as np

from pcq.projection import ProjectionSet
from pcq.tensor import Tensor


def numeric_gradient(make_scalar, tensor: Tensor, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a rebuilt scalar w.r.t. one tensor.

    ``make_scalar`` must rebuild the full forward graph from the current
    tensor contents on every call (parameters are perturbed in place).
    """
    flat = tensor.data.ravel()
    num = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(make_scalar().data)
        flat[i] = orig - h
        fm = float(make_scalar().data)
        flat[i] = orig
        num[i] = (fp - fm) / (2.0 * h)
    return num.reshape(tensor.data.shape)


def gradcheck(make_scalar, wrt, tol: float = 1e-5, h: float = 1e-6) -> float:
    """Assert analytic gradients match central differences; returns the
    worst relative error over all checked tensors."""
    out = make_scalar()
    for t in wrt:
        t.grad = None
    out.backward()
    worst = 0.0
    for t in wrt:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_gradient(make_scalar, t, h=h)
        denom = max(float(np.linalg.norm(numeric)), 1.0)
        rel = float(np.linalg.norm(analytic - numeric)) / denom
        worst = max(worst, rel)
        assert rel <= tol, f"gradient mismatch: rel err {rel:.3e} > {tol:.0e}"
    return worst


def scalarize(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Project a tensor output to a scalar with fixed random weights."""
    w = Tensor(rng.standard_normal(out.shape))
    return (out * w).sum()


def make_projection(rng: np.random.Generator, size: int = 8,
                    density: float = 2.0, blur_radius: int = 0,
                    sample_id: str = "t") -> ProjectionSet:
    """Random but valid ProjectionSet for feature-level tests."""
    textures = rng.uniform(0.0, 1.0, (6, size, size, 3))
    depths = rng.uniform(0.0, 1.0, (6, size, size))
    occupancy = rng.random((6, size, size)) < 0.6
    occupancy[:, 0, 0] = True  # never fully empty
    return ProjectionSet(textures=textures, depths=depths,
                         occupancy=occupancy, density=density,
                         blur_radius=blur_radius, sample_id=sample_id)
