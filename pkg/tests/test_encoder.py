import numpy as np
import pytest

from opfactor import (
    CompactSample,
    FamilySpec,
    Grid,
    NotSeparatingError,
    Seminorm,
    SeminormFamily,
    UnsupportedKindError,
    build_hilbertization,
    encode,
    fit_projector,
    fit_projector_to_points,
)

from conftest import fourier_family, gf

SUP_FAM = SeminormFamily((Seminorm.sup(),))


def projector_rank_oracle(Z, delta_lat):
    """Smallest rank whose explicit SVD-truncation reconstruction leaves
    every row residual below delta_lat."""
    _, _, Vt = np.linalg.svd(Z, full_matrices=False)
    for r in range(Vt.shape[0] + 1):
        V = Vt[:r].T
        resid = Z - (Z @ V) @ V.T
        if np.linalg.norm(resid, axis=1).max(initial=0.0) < delta_lat:
            return r
    return None


class TestBuildHilbertization:
    def test_single_sup_constant_one(self):
        grid = Grid(0.0, 1.0, 4)
        h = build_hilbertization(SUP_FAM, grid)
        img = h.apply(gf(np.ones(4), grid))
        # single seminorm: weight is 1, cell measures sum to 1
        assert np.linalg.norm(img) == pytest.approx(1.0)
        assert np.linalg.norm(img) <= 1.0 + 1e-12

    def test_zero_maps_to_zero(self, grid8):
        h = build_hilbertization(SUP_FAM, grid8)
        np.testing.assert_array_equal(h.apply(gf(np.zeros(grid8.n), grid8)),
                                      np.zeros(h.dim))

    def test_two_seminorm_budget(self):
        # x with both seminorm values 1: squared image norm is
        # c1^2 |q1|^2 + c2^2 <= c1^2 + c2^2 = 1
        grid = Grid(0.0, 1.0, 4)
        fam = SeminormFamily((Seminorm.sup(),
                              Seminorm.weighted_l2([0.25] * 4, "w")))
        h = build_hilbertization(fam, grid)
        c1, c2 = h.weights
        x = gf(np.ones(4), grid)
        img = h.apply(x)
        q1_norm2 = 1.0  # sup block of the all-ones vector has unit L2 mass
        assert np.sum(img * img) == pytest.approx(c1 ** 2 * q1_norm2 + c2 ** 2)
        assert np.sum(img * img) <= 1.0 + 1e-12

    def test_operator_norm_at_most_one(self, grid129):
        h = build_hilbertization(SUP_FAM, grid129)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            v = rng.normal(size=grid129.n)
            v /= np.abs(v).max()
            assert np.linalg.norm(h.apply(gf(v, grid129))) <= 1.0 + 1e-10

    def test_weight_schedule_normalized(self, grid8):
        fam = SeminormFamily((Seminorm.sup("a"), Seminorm.sup("b"),
                              Seminorm.sup("c")))
        h = build_hilbertization(fam, grid8)
        w = np.asarray(h.weights)
        assert np.sum(w * w) == pytest.approx(1.0)
        # геometric schedule: each weight halves the previous one
        np.testing.assert_allclose(w[:-1] / w[1:], 2.0)

    def test_non_separating_rejected(self, grid8):
        w = np.zeros(grid8.n)
        w[0] = 1.0
        fam = SeminormFamily((Seminorm.weighted_l2(w),))
        with pytest.raises(NotSeparatingError):
            build_hilbertization(fam, grid8)
        flagged = SeminormFamily((Seminorm.sup(),), separating=False)
        with pytest.raises(NotSeparatingError):
            build_hilbertization(flagged, grid8)

    def test_sobolev_kind_rejected(self, grid8):
        fam = SeminormFamily((Seminorm.sobolev(1, 1.0),))
        with pytest.raises(UnsupportedKindError):
            build_hilbertization(fam, grid8)

    def test_pseudo_inverse_is_left_inverse(self, grid8):
        fam = SeminormFamily((Seminorm.sup(),
                              Seminorm.weighted_l2(
                                  np.linspace(0.1, 1.0, grid8.n), "w")))
        h = build_hilbertization(fam, grid8)
        rng = np.random.default_rng(1)
        x = rng.normal(size=grid8.n)
        np.testing.assert_allclose(h.pseudo_inverse_matrix() @ h.apply(x), x,
                                   atol=1e-12)


class TestFitProjectorToPoints:
    def test_collinear_points_rank_one(self):
        rng = np.random.default_rng(2)
        direction = rng.normal(size=5)
        Z = np.outer(rng.uniform(-1, 1, 30), direction)
        basis = fit_projector_to_points(Z, delta_lat=1e-6)
        assert basis.shape == (5, 1)

    def test_single_point_rank_one_exact(self):
        z = np.array([[1.0, 2.0, 2.0]])
        basis = fit_projector_to_points(z, delta_lat=1e-12)
        assert basis.shape[1] == 1
        resid = z - (z @ basis) @ basis.T
        assert np.linalg.norm(resid) <= 1e-12

    @pytest.mark.parametrize("z2_scale, expected", [(1e-4, 1), (0.5, 2)])
    def test_curve_rank_matches_reconstruction_oracle(self, z2_scale, expected):
        # 50 images of t -> t z1 + t^2 z2 with orthogonal z1, z2
        z1 = np.zeros(6)
        z1[0] = 1.0
        z2 = np.zeros(6)
        z2[1] = z2_scale
        ts = np.linspace(-1.0, 1.0, 50)
        Z = np.outer(ts, z1) + np.outer(ts ** 2, z2)
        delta = 1e-3
        oracle = projector_rank_oracle(Z, delta)
        assert oracle == expected
        basis = fit_projector_to_points(Z, delta)
        assert basis.shape[1] == oracle
        resid = Z - (Z @ basis) @ basis.T
        assert np.linalg.norm(resid, axis=1).max() < delta

    def test_zero_points_rank_zero(self):
        Z = np.zeros((4, 3))
        assert fit_projector_to_points(Z, 0.5).shape[1] == 0

    def test_coordinate_mode_uses_leading_chain(self):
        Z = np.array([[1.0, 0.0, 0.3], [0.5, 0.0, -0.3]])
        basis = fit_projector_to_points(Z, delta_lat=0.5, mode="coordinate")
        # needs coordinates 1..3 until the tail drops below 0.5
        assert basis.shape[1] == 1
        np.testing.assert_array_equal(basis[:, 0], [1.0, 0.0, 0.0])

    def test_delta_must_be_positive(self):
        with pytest.raises(ValueError):
            fit_projector_to_points(np.ones((2, 2)), 0.0)


class TestFitProjectorOnSample:
    def _sample(self, grid, modes=4, n=40, seed=3):
        fam = fourier_family(grid, modes=modes)
        return CompactSample(centers=tuple(fam.draw(n, seed)),
                             delta={"sup": 1.0}, sampler=fam, seed=seed), fam

    def test_centers_satisfy_radius_strictly(self, grid129):
        sample, _ = self._sample(grid129)
        h = build_hilbertization(SUP_FAM, grid129)
        delta_lat = 0.01
        proj = fit_projector(h, sample, delta_lat)
        Z = h.apply(sample.center_matrix())
        resid = Z - (Z @ proj.basis) @ proj.basis.T
        assert np.linalg.norm(resid, axis=1).max() < delta_lat

    def test_low_rank_family_caps_latent_dim(self, grid129):
        sample, _ = self._sample(grid129, modes=4)
        h = build_hilbertization(SUP_FAM, grid129)
        proj = fit_projector(h, sample, 1e-10)
        assert proj.m <= 4

    def test_injectivity_diagnostic_on_sample(self, grid129):
        sample, _ = self._sample(grid129, n=25)
        h = build_hilbertization(SUP_FAM, grid129)
        Z = h.apply(sample.center_matrix())
        from scipy.spatial.distance import pdist
        assert pdist(Z).min() > 0.0


class TestEncode:
    def test_zero_maps_to_zero_vector(self, grid129):
        fam = fourier_family(grid129)
        sample = CompactSample(centers=tuple(fam.draw(20, 4)),
                               delta={"sup": 1.0}, sampler=fam, seed=4)
        h = build_hilbertization(SUP_FAM, grid129)
        proj = fit_projector(h, sample, 0.05)
        z = encode(h, proj, gf(np.zeros(grid129.n), grid129))
        np.testing.assert_array_equal(z, np.zeros(proj.m))

    def test_linearity(self, grid129):
        fam = fourier_family(grid129)
        sample = CompactSample(centers=tuple(fam.draw(20, 4)),
                               delta={"sup": 1.0}, sampler=fam, seed=4)
        h = build_hilbertization(SUP_FAM, grid129)
        proj = fit_projector(h, sample, 0.05)
        rng = np.random.default_rng(8)
        for _ in range(50):
            x = gf(rng.normal(size=grid129.n), grid129)
            y = gf(rng.normal(size=grid129.n), grid129)
            a, b = rng.normal(size=2)
            lhs = encode(h, proj, a * x + b * y)
            rhs = a * encode(h, proj, x) + b * encode(h, proj, y)
            assert np.abs(lhs - rhs).max() <= 1e-10

    def test_center_roundtrip_within_radius(self, grid129):
        fam = fourier_family(grid129)
        sample = CompactSample(centers=tuple(fam.draw(30, 4)),
                               delta={"sup": 1.0}, sampler=fam, seed=4)
        h = build_hilbertization(SUP_FAM, grid129)
        delta_lat = 0.02
        proj = fit_projector(h, sample, delta_lat)
        for c in sample.centers:
            z_full = h.apply(c)
            z_back = proj.basis @ encode(h, proj, c)
            assert np.linalg.norm(z_full - z_back) < delta_lat
