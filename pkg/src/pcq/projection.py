"""Orthographic six-view rendering with density-dependent blurring.

A cloud is rescaled into a cube, z-buffer rasterized onto the six cube
faces (texture + depth per face), and texture views are mean-filtered
with a radius that grows with the density deficit, emulating the loss
of detail when a sparse cloud is watched from a distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import PointCloud

DEFAULT_TAU_DENSITY = 1.0
DEFAULT_K_BLUR = 4.0


class ProjectionError(ValueError):
    pass


@dataclass
class ProjectionSet:
    textures: np.ndarray   # (6, H, W, 3) in [0, 1]
    depths: np.ndarray     # (6, H, W) in [0, 1], 1 = nearest
    occupancy: np.ndarray  # (6, H, W) bool
    density: float = 0.0   # points per occupied pixel
    blur_radius: int = 0
    sample_id: str = ""

    @property
    def size(self) -> int:
        return self.textures.shape[1]

    def stacked_views(self) -> np.ndarray:
        """(6, H, W, 4) RGB + depth, the network input."""
        return np.concatenate([self.textures, self.depths[..., None]], axis=-1)


def rescale_to_cube(cloud: PointCloud, size: int) -> PointCloud:
    """Isotropically fit the bounding box into [0, size-1]^3, centered."""
    if size < 2:
        raise ProjectionError("cube size must be >= 2")
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    extent = hi - lo
    longest = float(extent.max())
    side = float(size - 1)
    if longest == 0.0:
        pts = np.full_like(cloud.points, side / 2.0)
    else:
        scale = side / longest
        offset = (side - extent * scale) / 2.0
        pts = (cloud.points - lo) * scale + offset
    return PointCloud(points=pts, colors=cloud.colors.copy(), id=cloud.id)


# (axis, positive side, in-plane row axis, in-plane col axis)
_FACES = ((0, True, 1, 2), (0, False, 1, 2),
          (1, True, 0, 2), (1, False, 0, 2),
          (2, True, 0, 1), (2, False, 0, 1))


def project(cloud: PointCloud, size: int) -> ProjectionSet:
    """Six-face z-buffer rasterization of a cube-rescaled cloud."""
    pts = cloud.points
    cols = cloud.colors.astype(np.float64) / 255.0
    side = float(size - 1)
    pix = np.clip(np.rint(pts), 0, size - 1).astype(np.intp)
    textures = np.full((6, size, size, 3), 0.5)
    depths = np.zeros((6, size, size))
    occupancy = np.zeros((6, size, size), dtype=bool)
    order_idx = np.arange(len(pts))
    for f, (axis, positive, row_ax, col_ax) in enumerate(_FACES):
        dist = side - pts[:, axis] if positive else pts[:, axis]
        # nearest point wins; ties broken by lowest point index
        order = np.lexsort((order_idx, dist))
        flat = pix[order, row_ax] * size + pix[order, col_ax]
        uniq, first = np.unique(flat, return_index=True)
        win = order[first]
        r, c = uniq // size, uniq % size
        textures[f, r, c] = cols[win]
        depths[f, r, c] = 1.0 - dist[win] / float(size)
        occupancy[f, r, c] = True
    return ProjectionSet(textures=textures, depths=depths, occupancy=occupancy,
                         sample_id=cloud.id)


def estimate_density(proj: ProjectionSet, n_points: int) -> float:
    occ = int(proj.occupancy.sum())
    if occ == 0:
        raise ProjectionError("no occupied pixels; cloud cannot be empty")
    return float(n_points) / occ


def _box_sum(img: np.ndarray, radius: int) -> np.ndarray:
    """Sum over the (2R+1)^2 Chebyshev neighborhood, zero padded."""
    h, w = img.shape[:2]
    padded = np.zeros((h + 2 * radius + 1, w + 2 * radius + 1) + img.shape[2:])
    padded[1 + radius:1 + radius + h, 1 + radius:1 + radius + w] = img
    ii = padded.cumsum(axis=0).cumsum(axis=1)
    r = 2 * radius + 1
    return (ii[r:r + h, r:r + w] - ii[:h, r:r + w]
            - ii[r:r + h, :w] + ii[:h, :w])


def differentiated_blur(proj: ProjectionSet,
                        tau_density: float = DEFAULT_TAU_DENSITY,
                        k_blur: float = DEFAULT_K_BLUR) -> ProjectionSet:
    """Mean-filter occupied texture pixels when density falls below tau.

    Radius R = ceil(k * (tau - rho)) when the deficit is positive, else
    the views pass through untouched. Unoccupied pixels are excluded
    from every average and never modified; depth images are not blurred.
    """
    if tau_density <= 0:
        raise ProjectionError("tau_density must be positive")
    if k_blur < 0:
        raise ProjectionError("k_blur must be nonnegative")
    rho = proj.density
    delta_rho = tau_density - rho
    if delta_rho <= 0 or k_blur == 0:
        return ProjectionSet(textures=proj.textures.copy(),
                             depths=proj.depths.copy(),
                             occupancy=proj.occupancy.copy(),
                             density=rho, blur_radius=0,
                             sample_id=proj.sample_id)
    radius = int(np.ceil(k_blur * delta_rho))
    textures = proj.textures.copy()
    for f in range(6):
        occ = proj.occupancy[f]
        mask = occ.astype(np.float64)
        summed = _box_sum(proj.textures[f] * mask[..., None], radius)
        counts = _box_sum(mask, radius)
        mean = summed / np.maximum(counts, 1.0)[..., None]
        textures[f][occ] = mean[occ]
    return ProjectionSet(textures=textures, depths=proj.depths.copy(),
                         occupancy=proj.occupancy.copy(), density=rho,
                         blur_radius=radius, sample_id=proj.sample_id)


def render(cloud: PointCloud, size: int,
           tau_density: float = DEFAULT_TAU_DENSITY,
           k_blur: float = DEFAULT_K_BLUR) -> ProjectionSet:
    """Full pipeline: rescale, project, estimate density, blur."""
    proj = project(rescale_to_cube(cloud, size), size)
    proj.density = estimate_density(proj, len(cloud.points))
    return differentiated_blur(proj, tau_density=tau_density, k_blur=k_blur)
