import math

import numpy as np
import pytest

from opfactor import (
    CompactSample,
    DimensionMismatchError,
    FamilySpec,
    Grid,
    GridFunction,
    ModulusData,
    OperatorSpec,
    Seminorm,
    SeminormFamily,
    UnsupportedKindError,
    build_delta_net,
    collect_increment_pairs,
    concave_majorant,
    estimate_modulus,
    eval_seminorm,
    quotient_coords,
)

from conftest import SegmentSampler, basis_vector, fourier_family, gf


class TestEvalSeminorm:
    def test_sup_zero_vector(self):
        assert eval_seminorm(Seminorm.sup(), gf([0.0, 0.0, 0.0])) == 0.0

    def test_sup_max_abs(self):
        assert eval_seminorm(Seminorm.sup(), gf([1.0, -3.0, 2.0])) == 3.0

    def test_weighted_l2_hand_value(self):
        # sqrt(4 * 0.25 * 1) = 1
        p = Seminorm.weighted_l2([0.25, 0.25, 0.25, 0.25])
        assert eval_seminorm(p, gf([1.0, 1.0, 1.0, 1.0])) == pytest.approx(1.0)

    def test_dimension_mismatch_names_both(self):
        p = Seminorm.weighted_l2([1.0, 1.0])
        with pytest.raises(DimensionMismatchError) as err:
            eval_seminorm(p, gf([1.0, 2.0, 3.0]))
        assert "2" in str(err.value) and "3" in str(err.value)

    def test_sobolev_plain_value(self):
        # r = 1: RMS part plus lam * RMS of first difference / h
        p = Seminorm.sobolev(1, 0.5)
        x = gf([0.0, 1.0, 0.0])
        h = x.grid.h
        base = math.sqrt((0 + 1 + 0) / 3)
        diff = math.sqrt((1 + 1) / 3) / h
        assert eval_seminorm(p, x) == pytest.approx(base + 0.5 * diff)

    @pytest.mark.parametrize("make", [
        lambda g: Seminorm.sup(),
        lambda g: Seminorm.weighted_l2(np.linspace(0.0, 1.0, g.n)),
        lambda g: Seminorm.sobolev(2, 0.7),
    ])
    def test_axioms_random_triples(self, make):
        grid = Grid(0.0, 1.0, 12)
        p = make(grid)
        rng = np.random.default_rng(42)
        for _ in range(1000):
            x = gf(rng.normal(size=grid.n), grid)
            y = gf(rng.normal(size=grid.n), grid)
            lam = float(rng.normal())
            px = eval_seminorm(p, x)
            assert abs(eval_seminorm(p, lam * x) - abs(lam) * px) \
                <= 1e-10 * (1.0 + px)
            assert eval_seminorm(p, x + y) \
                <= eval_seminorm(p, x) + eval_seminorm(p, y) + 1e-10


class TestQuotientCoords:
    def test_zero_weight_coordinate_dropped(self):
        p = Seminorm.weighted_l2([1.0, 0.0])
        np.testing.assert_allclose(quotient_coords(p, gf([3.0, 5.0])), [3.0])

    def test_hand_value_and_norm_identity(self):
        p = Seminorm.weighted_l2([0.25] * 4)
        q = quotient_coords(p, gf([1.0, 1.0, 1.0, 1.0]))
        np.testing.assert_allclose(q, [0.5, 0.5, 0.5, 0.5])
        assert np.linalg.norm(q) == pytest.approx(1.0)

    def test_sup_is_identity(self):
        np.testing.assert_array_equal(
            quotient_coords(Seminorm.sup(), gf([1.0, -3.0, 2.0])),
            [1.0, -3.0, 2.0])

    def test_sobolev_unsupported(self):
        with pytest.raises(UnsupportedKindError):
            quotient_coords(Seminorm.sobolev(1, 1.0), gf([1.0, 2.0]))

    def test_norm_identity_random(self):
        rng = np.random.default_rng(3)
        grid = Grid(0.0, 1.0, 10)
        w = rng.uniform(0.0, 2.0, grid.n)
        w[3] = 0.0
        p = Seminorm.weighted_l2(w)
        for _ in range(200):
            x = gf(rng.normal(size=grid.n), grid)
            px = eval_seminorm(p, x)
            assert abs(np.linalg.norm(quotient_coords(p, x)) - px) \
                <= 1e-12 * (1.0 + px)


class TestDeltaNet:
    def test_single_point_family(self, grid8):
        const = gf(np.ones(grid8.n), grid8)
        fam = FamilySpec("finite_set", grid8, members=(const,))
        net = build_delta_net(fam, Seminorm.sup(), 0.1, budget=50, seed=0)
        assert net.n == 1

    def test_two_separated_points(self, grid8):
        zero = gf(np.zeros(grid8.n), grid8)
        fam = FamilySpec("finite_set", grid8,
                         members=(zero, basis_vector(0, grid8)))
        net = build_delta_net(fam, Seminorm.sup(), 0.5, budget=64, seed=1)
        assert net.n == 2

    def test_segment_matches_brute_force_greedy(self, grid8):
        # oracle: farthest-point insertion simulated directly on the
        # 1001-point scalar set
        ts = np.linspace(0.0, 1.0, 1001)
        chosen = [0]
        dist = np.abs(ts - ts[0])
        while True:
            j = int(np.argmax(dist))
            if dist[j] <= 0.25:
                break
            chosen.append(j)
            dist = np.minimum(dist, np.abs(ts - ts[j]))
        assert len(chosen) == 3  # frozen expectation

        net = build_delta_net(SegmentSampler(grid8), Seminorm.sup(), 0.25,
                              budget=1001, seed=0)
        assert net.n == len(chosen)
        got = sorted(c.values[0] for c in net.centers)
        np.testing.assert_allclose(got, sorted(ts[j] for j in chosen))

    def test_fresh_draws_covered(self, grid129):
        fam = fourier_family(grid129, modes=3)
        delta = 0.3
        net = build_delta_net(fam, Seminorm.sup(), delta, budget=3000, seed=5)
        centers = net.center_matrix()
        for x in fam.draw(1000, seed=999):
            d = np.abs(centers - x.values[None, :]).max(axis=1).min()
            assert d <= delta + 1e-12

    def test_budget_validation(self, grid8):
        fam = FamilySpec("finite_set", grid8,
                         members=(gf(np.zeros(grid8.n), grid8),))
        with pytest.raises(ValueError):
            build_delta_net(fam, Seminorm.sup(), 0.1, budget=0, seed=0)
        with pytest.raises(ValueError):
            build_delta_net(fam, Seminorm.sup(), -1.0, budget=5, seed=0)


def _sample_of(fam, n_centers, seed=3):
    return CompactSample(centers=tuple(fam.draw(n_centers, seed)),
                         delta={"sup": np.inf}, sampler=fam, seed=seed)


class TestEstimateModulus:
    def test_identity_gives_slope_one(self, grid129):
        fam = fourier_family(grid129, modes=4)
        sample = _sample_of(fam, 8)
        om = estimate_modulus(lambda u: u, sample, Seminorm.sup(),
                              Seminorm.sup(), pair_budget=300)
        ts = np.linspace(0.0, om.breakpoints[-1], 17)
        np.testing.assert_allclose(om(ts), ts, atol=1e-12)

    def test_doubling_gives_slope_two(self, grid129):
        fam = fourier_family(grid129, modes=4)
        sample = _sample_of(fam, 8)
        om = estimate_modulus(lambda u: 2.0 * u, sample, Seminorm.sup(),
                              Seminorm.sup(), pair_budget=300)
        ts = np.linspace(0.0, om.breakpoints[-1], 17)
        np.testing.assert_allclose(om(ts), 2.0 * ts, atol=1e-12)

    def test_square_bounded_family_majorant(self, grid129):
        # |u^2 - v^2| <= 2|u - v| whenever sup|u|, sup|v| <= 1
        fam = fourier_family(grid129, modes=3, radius=0.7)
        assert fam.sup_bound <= 1.0
        sample = _sample_of(fam, 12)
        square = OperatorSpec("pointwise", grid129, sigma="square")
        om = estimate_modulus(square, sample, Seminorm.sup(), Seminorm.sup(),
                              pair_budget=400)
        # brute-force confirmation over the same collected pairs
        ts, ss = collect_increment_pairs(square, sample, Seminorm.sup(),
                                         Seminorm.sup(), pair_budget=400)
        pos = ts > 0
        assert np.max(ss[pos] / ts[pos]) <= 2.0 + 1e-12
        for t in om.breakpoints:
            assert om(t) <= 2.0 * t + 1e-9

    def test_majorant_property_over_pairs(self, grid129):
        fam = fourier_family(grid129, modes=4)
        sample = _sample_of(fam, 10)
        op = OperatorSpec("antiderivative", grid129)
        om = estimate_modulus(op, sample, Seminorm.sup(), Seminorm.sup(),
                              pair_budget=500)
        ts, ss = collect_increment_pairs(op, sample, Seminorm.sup(),
                                         Seminorm.sup(), pair_budget=500)
        assert np.all(ss <= om(ts) + 1e-12)


class TestConcaveMajorant:
    def test_flattens_decreasing_tail(self):
        om = concave_majorant([1.0, 2.0], [1.0, 0.1])
        assert om(2.0) == pytest.approx(1.0)
        assert om(5.0) == pytest.approx(1.0)  # flat extrapolation

    def test_collinear_points_collapse(self):
        om = concave_majorant([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert om.breakpoints.shape[0] == 2
        assert om(2.5) == pytest.approx(2.5)

    def test_hull_pops_dominated_point(self):
        om = concave_majorant([1.0, 2.0], [0.5, 3.9])
        # (1, 0.5) lies under the chord from (0,0) to (2,3.9)
        assert om(1.0) == pytest.approx(1.95)

    def test_majorizes_all_points(self):
        rng = np.random.default_rng(11)
        ts = rng.uniform(0.0, 3.0, 500)
        ss = rng.uniform(0.0, 2.0, 500) * ts
        om = concave_majorant(ts, ss)
        assert np.all(ss <= om(ts) + 1e-12)

    def test_empty_cloud_is_zero(self):
        om = concave_majorant([], [])
        assert om(1.0) == 0.0


class TestModulusData:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModulusData(np.array([0.0, 1.0]), np.array([0.1, 1.0]))
        with pytest.raises(ValueError):
            ModulusData(np.array([0.0, 1.0]), np.array([0.0, -1.0]))
        with pytest.raises(ValueError):
            # increasing slopes contradict the concavity flag
            ModulusData(np.array([0.0, 1.0, 2.0]), np.array([0.0, 0.1, 1.0]))

    def test_inverse_round_trip(self):
        om = ModulusData(np.array([0.0, 1.0, 3.0]), np.array([0.0, 2.0, 3.0]))
        for s in (0.5, 1.0, 2.0, 2.5, 3.0):
            assert om(om.inverse(s)) == pytest.approx(s)

    def test_inverse_beyond_range_extrapolates(self):
        om = ModulusData(np.array([0.0, 1.0]), np.array([0.0, 2.0]))
        assert om.inverse(4.0) == pytest.approx(2.0)

    def test_inverse_flat_is_infinite(self):
        om = ModulusData(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 1.0]))
        assert om.inverse(1.5) == math.inf

    def test_scaled(self):
        om = ModulusData(np.array([0.0, 2.0]), np.array([0.0, 1.0]))
        assert om.scaled(1.1)(2.0) == pytest.approx(1.1)

    def test_dict_round_trip(self):
        om = ModulusData(np.array([0.0, 1.0, 4.0]), np.array([0.0, 1.5, 2.0]))
        back = ModulusData.from_dict(om.to_dict())
        np.testing.assert_array_equal(back.breakpoints, om.breakpoints)
        np.testing.assert_array_equal(back.values, om.values)


class TestGridFunction:
    def test_json_round_trip(self, grid8):
        x = gf(np.linspace(-1, 1, grid8.n), grid8)
        back = GridFunction.from_json(x.to_json())
        np.testing.assert_array_equal(back.values, x.values)
        assert back.grid == x.grid

    def test_rejects_nonfinite(self, grid8):
        with pytest.raises(ValueError):
            gf([np.nan] * grid8.n, grid8)

    def test_arithmetic_needs_same_grid(self, grid8):
        other = Grid(0.0, 2.0, 8)
        with pytest.raises(DimensionMismatchError):
            gf(np.zeros(8), grid8) + gf(np.zeros(8), other)

    def test_values_immutable(self, grid8):
        x = gf(np.zeros(grid8.n), grid8)
        with pytest.raises(ValueError):
            x.values[0] = 1.0


class TestSeminormFamily:
    def test_separating_probe(self, grid8):
        fam = SeminormFamily((Seminorm.sup(),))
        assert fam.check_separating(grid8)
        partial = SeminormFamily(
            (Seminorm.weighted_l2(np.r_[1.0, np.zeros(grid8.n - 1)]),))
        assert not partial.check_separating(grid8)

    def test_unique_names_required(self):
        with pytest.raises(ValueError):
            SeminormFamily((Seminorm.sup("p"), Seminorm.sup("p")))
