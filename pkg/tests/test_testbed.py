import numpy as np
import pytest

from opfactor import (
    ConfigError,
    DimensionMismatchError,
    FamilySpec,
    Grid,
    OperatorSpec,
    eval_operator,
    sample_family,
)

from conftest import gf


class TestEvalOperator:
    def test_antiderivative_of_ones_is_coordinate(self, grid129):
        op = OperatorSpec("antiderivative", grid129)
        out = op(gf(np.ones(grid129.n), grid129))
        np.testing.assert_allclose(out.values, grid129.coords, atol=1e-14)

    def test_antiderivative_exact_on_piecewise_linear(self, grid8):
        op = OperatorSpec("antiderivative", grid8)
        t = grid8.coords
        out = op(gf(2.0 * t, grid8))
        np.testing.assert_allclose(out.values, t ** 2, atol=1e-14)

    def test_antiderivative_second_order_convergence(self):
        # trapezoid error on cos(pi t) halves twice per grid doubling
        errs = []
        for n in (65, 129):
            grid = Grid(0.0, 1.0, n)
            op = OperatorSpec("antiderivative", grid)
            out = op(gf(np.cos(np.pi * grid.coords), grid))
            exact = np.sin(np.pi * grid.coords) / np.pi
            errs.append(np.abs(out.values - exact).max())
        assert 3.5 <= errs[0] / errs[1] <= 4.5

    def test_poisson_constant_source_hand_solution(self, grid129):
        # the discrete second difference is exact on quadratics, so the
        # solver reproduces t(1-t)/2 to round-off (trivially within C h^2)
        op = OperatorSpec("poisson1d", grid129)
        out = op(gf(np.ones(grid129.n), grid129))
        t = grid129.coords
        np.testing.assert_allclose(out.values, t * (1 - t) / 2, atol=1e-12)
        assert out.values[0] == 0.0 and out.values[-1] == 0.0

    def test_poisson_second_order_convergence(self):
        errs = []
        for n in (65, 129):
            grid = Grid(0.0, 1.0, n)
            op = OperatorSpec("poisson1d", grid)
            src = np.sin(np.pi * grid.coords)
            out = op(gf(src, grid))
            exact = np.sin(np.pi * grid.coords) / np.pi ** 2
            errs.append(np.abs(out.values - exact).max())
        assert 3.5 <= errs[0] / errs[1] <= 4.5

    def test_pointwise_square_of_zero(self, grid8):
        op = OperatorSpec("pointwise", grid8, sigma="square")
        out = op(gf(np.zeros(grid8.n), grid8))
        np.testing.assert_array_equal(out.values, np.zeros(grid8.n))

    def test_pointwise_kinds(self, grid8):
        x = gf(np.linspace(-1, 1, grid8.n), grid8)
        v = x.values
        cases = {"square": v * v, "sin": np.sin(v),
                 "relu": np.maximum(v, 0.0), "tanh": np.tanh(v)}
        for sigma, expect in cases.items():
            op = OperatorSpec("pointwise", grid8, sigma=sigma)
            np.testing.assert_allclose(op(x).values, expect)

    def test_identity_scale_shift(self, grid8):
        x = gf(np.linspace(-1, 1, grid8.n), grid8)
        assert eval_operator(OperatorSpec("identity", grid8), x) is x
        np.testing.assert_allclose(
            OperatorSpec("scale", grid8, alpha=2.5)(x).values, 2.5 * x.values)
        np.testing.assert_allclose(
            OperatorSpec("shift", grid8, offset=1.5)(x).values,
            x.values + 1.5)

    def test_grid_mismatch_rejected(self, grid8):
        op = OperatorSpec("identity", grid8)
        other = Grid(0.0, 2.0, 8)
        with pytest.raises(DimensionMismatchError):
            op(gf(np.zeros(8), other))

    def test_unknown_kind_rejected(self, grid8):
        with pytest.raises(ConfigError):
            OperatorSpec("laplace", grid8)


class TestFamilySpec:
    def test_finite_set_single_member_repeats(self, grid8):
        member = gf(np.ones(grid8.n), grid8)
        fam = FamilySpec("finite_set", grid8, members=(member,))
        draws = sample_family(fam, 5, seed=0)
        assert len(draws) == 5
        for d in draws:
            np.testing.assert_array_equal(d.values, member.values)

    def test_fourier_zero_radius_is_zero(self, grid129):
        fam = FamilySpec("fourier_ball", grid129, radius=0.0)
        for d in fam.draw(10, seed=1):
            np.testing.assert_array_equal(d.values, np.zeros(grid129.n))

    def test_fourier_sup_bound_partial_sum(self, grid129):
        # sum_{k<=8} k^-2 = 1.5274220582...
        fam = FamilySpec("fourier_ball", grid129, modes=8, decay=2.0,
                         radius=1.0)
        expect = sum(k ** -2.0 for k in range(1, 9))
        assert fam.sup_bound == pytest.approx(expect)
        assert fam.sup_bound == pytest.approx(1.527422052154195, abs=1e-12)

    def test_declared_bound_never_violated(self, grid129):
        for kind, kw in (("fourier_ball", dict(modes=8, decay=2.0, radius=1.0)),
                         ("bump_family", {})):
            fam = FamilySpec(kind, grid129, **kw)
            bound = fam.sup_bound
            draws = fam.draw(10_000, seed=3)
            worst = max(np.abs(d.values).max() for d in draws)
            assert worst <= bound + 1e-12

    def test_draws_deterministic_per_seed(self, grid129):
        fam = FamilySpec("fourier_ball", grid129, seed=9)
        a = fam.draw(7, seed=42)
        b = fam.draw(7, seed=42)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.values, y.values)
        c = fam.draw(7, seed=43)
        assert any(np.any(x.values != y.values) for x, y in zip(a, c))

    def test_dict_round_trip(self, grid129):
        fam = FamilySpec("fourier_ball", grid129, seed=5, modes=3, decay=1.5,
                         radius=0.5)
        back = FamilySpec.from_dict(fam.to_dict())
        assert back == fam
        member = gf(np.ones(grid129.n), grid129)
        fin = FamilySpec("finite_set", grid129, members=(member,))
        back = FamilySpec.from_dict(fin.to_dict())
        np.testing.assert_array_equal(back.members[0].values, member.values)

    def test_empty_finite_set_rejected(self, grid8):
        with pytest.raises(ConfigError):
            FamilySpec("finite_set", grid8)
