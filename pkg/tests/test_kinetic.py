import math

import numpy as np
import pytest

from kaclab import kinetic
from kaclab.kinetic import (
    GridSpec,
    SolverAbort,
    angular_average,
    b_operator,
    gaussian_abs_moment,
    kinetic_w2,
    moment_bound,
    second_moment_exact,
    solve,
    w2sq_quantiles,
    wild_iterate,
)
from kaclab.measures import Measure1D
from kaclab.model import ModelParams

PARAMS = ModelParams(1.0, 1.0, 1.0)
GRID = GridSpec(12.0, 1024)


@pytest.fixture(scope="module")
def sol_two_point():
    f0 = Measure1D.two_point(math.sqrt(2.0))
    return solve(f0, PARAMS, 2.0, dt=0.005, grid=GRID, initial_label="two_point")


@pytest.fixture(scope="module")
def sol_gaussian():
    f0 = Measure1D.gaussian(1.0, v_max=GRID.v_max, n=GRID.n_v)
    return solve(f0, PARAMS, 2.0, dt=0.005, grid=GRID, initial_label="gaussian")


class TestClosedForms:
    def test_second_moment_stationary(self):
        assert second_moment_exact(1.0, PARAMS, 3.7) == pytest.approx(1.0)

    def test_second_moment_relaxation(self):
        assert second_moment_exact(2.0, PARAMS, 0.0) == 2.0
        assert second_moment_exact(2.0, PARAMS, 1.0) == pytest.approx(
            1.0 + math.exp(-0.5)
        )
        assert second_moment_exact(2.0, PARAMS, 200.0) == pytest.approx(1.0)

    def test_angular_averages(self):
        assert angular_average(2.0) == pytest.approx(0.5, abs=1e-12)
        assert angular_average(4.0) == pytest.approx(3.0 / 8.0, abs=1e-10)

    def test_gaussian_abs_moments(self):
        assert gaussian_abs_moment(2.0, 1.5) == pytest.approx(1.5, rel=1e-12)
        assert gaussian_abs_moment(4.0, 1.5) == pytest.approx(3.0 * 1.5 ** 2,
                                                              rel=1e-12)
        assert gaussian_abs_moment(1.0, 1.0) == pytest.approx(
            math.sqrt(2.0 / math.pi), rel=1e-12
        )


class TestMomentBound:
    def test_r4_constants(self):
        env = moment_bound(4.0, 4.0, PARAMS, 0.0)
        assert env.c1 == pytest.approx(9.0 / 8.0, abs=1e-10)
        assert env.c_r == pytest.approx(3.0 / 2.0, abs=1e-10)
        assert env.value == 4.0

    def test_rejects_low_order(self):
        with pytest.raises(ValueError):
            moment_bound(2.0, 1.0, PARAMS, 1.0)

    def test_envelope_bounds_solver_moment(self, sol_two_point):
        m0 = sol_two_point.moment(0.0, 4)
        for t in [0.5, 1.0, 2.0]:
            env = moment_bound(4.0, m0, PARAMS, t)
            assert sol_two_point.moment(t, 4) <= env.value * (1.0 + 1e-6)


class TestBOperator:
    def test_mass_multiplicative(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n1, n2 = rng.integers(1, 5, size=2)
            nu1 = Measure1D.from_atoms(rng.normal(size=n1), rng.random(n1))
            nu2 = Measure1D.from_atoms(rng.normal(size=n2), rng.random(n2))
            out = b_operator(nu1, nu2)
            assert abs(out.mass - nu1.mass * nu2.mass) < 1e-12

    def test_second_moment_average_rule(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            nu1 = Measure1D.from_samples(rng.normal(size=3))
            nu2 = Measure1D.from_samples(rng.normal(size=4))
            out = b_operator(nu1, nu2)
            expected = 0.5 * (nu1.moment(2) + nu2.moment(2))
            assert abs(out.moment(2) - expected) < 1e-12

    def test_point_masses(self):
        out = b_operator(Measure1D.point_mass(1.0), Measure1D.point_mass(0.0))
        assert out.mass == pytest.approx(1.0, abs=1e-12)
        assert out.moment(2) == pytest.approx(0.5, abs=1e-12)

    def test_monotone_in_each_argument(self):
        # nu <= nu' (setwise) implies B[nu, mu] <= B[nu', mu]
        rng = np.random.default_rng(2)
        for _ in range(20):
            base_x = rng.normal(size=3)
            base_w = rng.random(3)
            extra_x = rng.normal(size=2)
            extra_w = rng.random(2)
            nu = Measure1D.from_atoms(base_x, base_w)
            nu_big = Measure1D.from_atoms(
                np.concatenate([base_x, extra_x]),
                np.concatenate([base_w, extra_w]),
            )
            other = Measure1D.from_samples(rng.normal(size=3))
            small = b_operator(nu, other)
            big = b_operator(nu_big, other)
            for c in rng.normal(size=3):
                phi_small = np.sum(small.w * np.exp(-(small.x - c) ** 2))
                phi_big = np.sum(big.w * np.exp(-(big.x - c) ** 2))
                assert phi_small <= phi_big + 1e-12

    def test_gaussian_fixed_point_on_grid(self):
        gamma = Measure1D.gaussian(1.0, v_max=GRID.v_max, n=GRID.n_v)
        out = b_operator(gamma, gamma)
        exact = np.exp(-out.x ** 2 / 2.0) / math.sqrt(2.0 * math.pi)
        assert np.max(np.abs(out.w - exact)) < 1e-6

    def test_incompatible_grids_rejected(self):
        a = Measure1D.gaussian(1.0, v_max=8.0, n=512)
        b = Measure1D.gaussian(1.0, v_max=10.0, n=512)
        with pytest.raises(ValueError):
            b_operator(a, b)


class TestSolve:
    def test_gaussian_stationary(self, sol_gaussian):
        gamma_hat = np.exp(-0.5 * GRID.k ** 2)
        for t in [0.0, 0.5, 1.0, 2.0]:
            drift = np.max(np.abs(sol_gaussian.char(t).phi - gamma_hat))
            assert drift < 1e-6

    def test_two_point_second_moment(self, sol_two_point):
        e0 = sol_two_point.moment(0.0, 2)
        for t in [0.5, 1.0, 2.0]:
            pred = second_moment_exact(e0, PARAMS, t)
            assert sol_two_point.moment(t, 2) == pytest.approx(pred, rel=1e-4)

    def test_clipping_stays_small(self, sol_two_point):
        assert np.max(sol_two_point.clipped_mass) < 1e-6

    def test_contraction_toward_equilibrium(self, sol_two_point):
        gamma = Measure1D.gaussian(1.0, v_max=GRID.v_max, n=GRID.n_v)
        qg = gamma.quantile_fn()
        w2_0 = w2sq_quantiles(sol_two_point.quantile_fn(0.0), qg)
        for t in [0.5, 1.0, 2.0]:
            w2_t = w2sq_quantiles(sol_two_point.quantile_fn(t), qg)
            assert w2_t <= 1.05 * math.exp(-0.5 * t) * w2_0

    def test_horizon_enforced(self, sol_two_point):
        with pytest.raises(ValueError):
            sol_two_point.density(5.0)

    def test_rejects_non_probability(self):
        bad = Measure1D.from_atoms([0.0, 1.0], [0.5, 0.1])
        with pytest.raises(ValueError):
            solve(bad, PARAMS, 0.5, grid=GRID)

    def test_coarse_step_aborts(self):
        f0 = Measure1D.two_point(math.sqrt(2.0))
        with pytest.raises(SolverAbort):
            solve(f0, PARAMS, 4.0, dt=1.0, out_step=1.0, grid=GRID)

    def test_identical_slices_zero_w2(self, sol_two_point):
        assert kinetic_w2(sol_two_point, sol_two_point, 1.0) == 0.0


class TestWildIteration:
    def test_iterate_zero_mass(self):
        f0 = Measure1D.two_point(math.sqrt(2.0))
        t = 0.7
        m, deficit = wild_iterate(f0, PARAMS, t, n_max=0, grid=GRID)
        assert m.mass == pytest.approx(math.exp(-3.0 * t), rel=1e-6)
        assert deficit == pytest.approx(1.0 - math.exp(-3.0 * t), rel=1e-6)

    def test_masses_monotone_in_n(self):
        f0 = Measure1D.two_point(math.sqrt(2.0))
        masses = [
            wild_iterate(f0, PARAMS, 1.0, n_max=n, grid=GRID)[0].mass
            for n in (0, 1, 2, 4)
        ]
        assert all(b >= a - 1e-12 for a, b in zip(masses, masses[1:]))
        assert masses[-1] <= 1.0 + 1e-6

    def test_matches_spectral_solution(self, sol_two_point):
        f0 = Measure1D.two_point(math.sqrt(2.0))
        m, deficit = wild_iterate(f0, PARAMS, 1.0, n_max=20, grid=GRID)
        assert deficit < 1e-3
        w2 = w2sq_quantiles(m.normalized().quantile_fn(),
                            sol_two_point.quantile_fn(1.0))
        assert w2 < 1e-3
