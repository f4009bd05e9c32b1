"""Six-view z-buffer rasterization and density-dependent blur oracles."""

import numpy as np
import pytest

from pcq.ingest import PointCloud
from pcq.projection import (ProjectionError, ProjectionSet,
                            differentiated_blur, estimate_density, project,
                            render, rescale_to_cube)


def _cloud(points, colors=None, cid="p"):
    points = np.asarray(points, dtype=np.float64)
    if colors is None:
        colors = np.full((len(points), 3), 200)
    return PointCloud(points=points, colors=colors, id=cid)


class TestRescale:
    def test_fits_longest_axis(self):
        pc = _cloud([[0, 0, 0], [10, 2, 4]])
        out = rescale_to_cube(pc, 11)
        assert out.points[:, 0].min() == 0.0
        assert out.points[:, 0].max() == 10.0
        # shorter axes are centered: extent 2 -> scaled 2, offset (10-2)/2
        np.testing.assert_allclose(out.points[:, 1], [4.0, 6.0])

    def test_degenerate_cloud_centered(self):
        out = rescale_to_cube(_cloud([[3, 3, 3], [3, 3, 3]]), 9)
        np.testing.assert_allclose(out.points, 4.0)

    def test_size_too_small(self):
        with pytest.raises(ProjectionError):
            rescale_to_cube(_cloud([[0, 0, 0]]), 1)


class TestProject:
    def test_single_point_hits_all_six_faces(self):
        # One point at the cube center is visible on every face.
        pc = _cloud([[2.0, 2.0, 2.0]], colors=[[255, 0, 0]])
        proj = project(pc, 5)
        assert proj.occupancy.sum() == 6
        for f in range(6):
            assert proj.occupancy[f, 2, 2]
            np.testing.assert_allclose(proj.textures[f, 2, 2], [1.0, 0.0, 0.0])
            # distance to each face is 2 -> depth 1 - 2/5
            assert proj.depths[f, 2, 2] == pytest.approx(1.0 - 2.0 / 5.0)
        # all other pixels keep the background values
        assert np.all(proj.textures[~proj.occupancy] == 0.5)
        assert np.all(proj.depths[~proj.occupancy] == 0.0)

    def test_nearest_point_wins_z_buffer(self):
        # Two points on the same +x ray; the one with larger x is nearer
        # to the +x face and must win there, and lose on the -x face.
        pc = _cloud([[1.0, 2.0, 2.0], [3.0, 2.0, 2.0]],
                    colors=[[255, 0, 0], [0, 255, 0]])
        proj = project(pc, 5)
        np.testing.assert_allclose(proj.textures[0, 2, 2], [0.0, 1.0, 0.0])
        np.testing.assert_allclose(proj.textures[1, 2, 2], [1.0, 0.0, 0.0])

    def test_tie_broken_by_lowest_index(self):
        pc = _cloud([[2.0, 2.0, 2.0], [2.0, 2.0, 2.0]],
                    colors=[[255, 0, 0], [0, 255, 0]])
        proj = project(pc, 5)
        for f in range(6):
            np.testing.assert_allclose(proj.textures[f, 2, 2], [1.0, 0.0, 0.0])

    def test_density_points_per_occupied_pixel(self):
        pc = _cloud([[2.0, 2.0, 2.0], [2.0, 2.0, 2.0], [2.0, 2.0, 2.0]])
        proj = project(pc, 5)
        assert estimate_density(proj, 3) == pytest.approx(3.0 / 6.0)

    def test_determinism_across_runs(self):
        rng = np.random.default_rng(11)
        pc = _cloud(rng.normal(size=(500, 3)),
                    rng.integers(0, 256, (500, 3)))
        a = render(pc, 32)
        b = render(pc, 32)
        assert a.textures.tobytes() == b.textures.tobytes()
        assert a.depths.tobytes() == b.depths.tobytes()
        assert a.occupancy.tobytes() == b.occupancy.tobytes()
        assert a.density == b.density and a.blur_radius == b.blur_radius

    def test_shuffled_points_same_image(self):
        # z-buffer result is a function of the point set, not its order,
        # except exact-tie pixels; use distinct depths to avoid ties.
        rng = np.random.default_rng(5)
        pts = rng.uniform(0, 31, (200, 3))
        cols = rng.integers(0, 256, (200, 3))
        a = project(_cloud(pts, cols), 32)
        perm = rng.permutation(200)
        b = project(_cloud(pts[perm], cols[perm]), 32)
        # occupancy never depends on order
        assert a.occupancy.tobytes() == b.occupancy.tobytes()


class TestBlur:
    def test_noop_when_dense(self):
        rng = np.random.default_rng(3)
        proj = project(_cloud(rng.uniform(0, 15, (400, 3)),
                              rng.integers(0, 256, (400, 3))), 16)
        proj.density = 1.5
        out = differentiated_blur(proj, tau_density=1.0, k_blur=4.0)
        assert out.blur_radius == 0
        assert out.textures.tobytes() == proj.textures.tobytes()

    def test_noop_at_exact_threshold(self):
        rng = np.random.default_rng(3)
        proj = project(_cloud(rng.uniform(0, 15, (100, 3)),
                              rng.integers(0, 256, (100, 3))), 16)
        proj.density = 1.0
        out = differentiated_blur(proj, tau_density=1.0)
        assert out.blur_radius == 0

    def test_radius_formula(self):
        rng = np.random.default_rng(3)
        proj = project(_cloud(rng.uniform(0, 15, (100, 3)),
                              rng.integers(0, 256, (100, 3))), 16)
        proj.density = 0.4
        out = differentiated_blur(proj, tau_density=1.0, k_blur=4.0)
        assert out.blur_radius == int(np.ceil(4.0 * 0.6))  # = 3

    def test_hand_computed_3x3_mean_filter(self):
        # radius 1 over a 3x3 neighborhood, hand-built occupancy pattern
        size = 4
        textures = np.full((6, size, size, 3), 0.5)
        occupancy = np.zeros((6, size, size), dtype=bool)
        # face 0: three occupied pixels with known gray values
        vals = {(0, 0): 0.9, (0, 1): 0.3, (1, 1): 0.6}
        for (r, c), v in vals.items():
            occupancy[0, r, c] = True
            textures[0, r, c] = v
        proj = ProjectionSet(textures=textures, depths=np.zeros((6, size, size)),
                             occupancy=occupancy, density=0.8)
        out = differentiated_blur(proj, tau_density=1.0, k_blur=1.0)  # R = 1
        assert out.blur_radius == 1
        # each occupied pixel averages the occupied members of its 3x3 patch
        exp = {(0, 0): (0.9 + 0.3 + 0.6) / 3.0,
               (0, 1): (0.9 + 0.3 + 0.6) / 3.0,
               (1, 1): (0.9 + 0.3 + 0.6) / 3.0}
        for (r, c), v in exp.items():
            np.testing.assert_allclose(out.textures[0, r, c], v, atol=1e-15)
        # unoccupied pixels untouched
        assert np.all(out.textures[0][~occupancy[0]] == 0.5)
        # depths never blurred
        assert out.depths.tobytes() == proj.depths.tobytes()

    def test_blur_vs_naive_reference(self):
        # independent O(n^2 R^2) loop implementation
        rng = np.random.default_rng(9)
        proj = project(_cloud(rng.uniform(0, 11, (40, 3)),
                              rng.integers(0, 256, (40, 3))), 12)
        proj.density = 0.5
        out = differentiated_blur(proj, tau_density=1.0, k_blur=4.0)
        radius = out.blur_radius
        assert radius == 2
        for f in range(6):
            occ = proj.occupancy[f]
            for r in range(12):
                for c in range(12):
                    if not occ[r, c]:
                        continue
                    acc, cnt = np.zeros(3), 0
                    for rr in range(max(0, r - radius), min(12, r + radius + 1)):
                        for cc in range(max(0, c - radius), min(12, c + radius + 1)):
                            if occ[rr, cc]:
                                acc += proj.textures[f, rr, cc]
                                cnt += 1
                    np.testing.assert_allclose(out.textures[f, r, c],
                                               acc / cnt, atol=1e-12)

    def test_bad_parameters(self):
        rng = np.random.default_rng(3)
        proj = project(_cloud(rng.uniform(0, 15, (50, 3)),
                              rng.integers(0, 256, (50, 3))), 16)
        proj.density = 0.5
        with pytest.raises(ProjectionError):
            differentiated_blur(proj, tau_density=0.0)
        with pytest.raises(ProjectionError):
            differentiated_blur(proj, tau_density=1.0, k_blur=-1.0)


class TestRender:
    def test_stacked_views_shape_and_channels(self):
        rng = np.random.default_rng(2)
        proj = render(_cloud(rng.normal(size=(300, 3)),
                             rng.integers(0, 256, (300, 3))), 24)
        sv = proj.stacked_views()
        assert sv.shape == (6, 24, 24, 4)
        np.testing.assert_array_equal(sv[..., :3], proj.textures)
        np.testing.assert_array_equal(sv[..., 3], proj.depths)

    def test_density_recorded(self):
        pc = _cloud([[0, 0, 0], [4, 4, 4]])
        proj = render(pc, 5, tau_density=1e-9)  # avoid blur
        occ = int(proj.occupancy.sum())
        assert proj.density == pytest.approx(2.0 / occ)
