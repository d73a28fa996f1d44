import math

import numpy as np
import pytest

from kaclab import kinetic
from kaclab.coupling import (
    simulate_boltzmann,
    simulate_coupled,
    simulate_independent_copies,
    transport_map,
)
from kaclab.kinetic import GridSpec, second_moment_exact, solve
from kaclab.measures import Measure1D
from kaclab.model import ModelParams, RandomStream
from kaclab.wasserstein import w2_empirical_quantile

PARAMS = ModelParams(1.0, 1.0, 1.0)
GRID = GridSpec(12.0, 1024)


@pytest.fixture(scope="module")
def sol_gaussian():
    f0 = Measure1D.gaussian(1.0, v_max=GRID.v_max, n=GRID.n_v)
    return solve(f0, PARAMS, 2.0, dt=0.005, grid=GRID)


class TestTransportMap:
    def test_forbidden_block(self):
        q = Measure1D.point_mass(0.0).quantile_fn()
        with pytest.raises(ValueError):
            transport_map(np.zeros(4), 2, 2.5, q)

    def test_point_mass_target(self):
        # f = delta_c: output is always c, so the xi-averaged squared gap is
        # the mean squared distance of the others to c
        rng = np.random.default_rng(0)
        z = rng.normal(size=6)
        c = 0.4
        q = Measure1D.point_mass(c).quantile_fn()
        i = 2
        for p in range(6):
            if p == i:
                continue
            assert transport_map(z, i, p + 0.37, q) == c

    def test_quantile_midpoint_sample_near_zero(self):
        # others sit exactly at the n-1 midpoint quantiles: gap ~ 0
        m = Measure1D.uniform(-1.0, 1.0, n=4097)
        q = m.quantile_fn()
        n = 9
        others = np.asarray(q((np.arange(n - 1) + 0.5) / (n - 1)))
        z = np.concatenate([[5.0], others])  # index 0 excluded
        for p in range(1, n):
            val = transport_map(z, 0, p + 0.5, q)
            assert abs(val - z[p]) < 1e-3

    def test_xi_average_is_leave_one_out_w2(self):
        # averaged squared gap equals W2^2(empirical without i, f)
        rng = np.random.default_rng(1)
        m = Measure1D.uniform(-0.5, 1.5, n=8193)
        q = m.quantile_fn()
        n = 6
        z = rng.uniform(-1.0, 2.0, size=n)
        n_frac = 2000
        fr = (np.arange(n_frac) + 0.5) / n_frac
        for i in (0, 3):
            acc = 0.0
            for p in range(n):
                if p == i:
                    continue
                vals = np.array([transport_map(z, i, p + f, q) for f in fr])
                acc += np.mean((z[p] - vals) ** 2)
            acc /= n - 1
            ref = w2_empirical_quantile(np.delete(z, i), q)
            assert abs(acc - ref) < 1e-6

    def test_pooled_map_values_match_target_law(self):
        # with exchangeable z and xi uniform over one partner cell, the law
        # of the mapped value pooled across replicas is the target law
        m = Measure1D.gaussian(1.0, v_max=8.0, n=4097)
        q = m.quantile_fn()
        rng = np.random.default_rng(6)
        n = 10
        vals = []
        u_nodes = (np.arange(20) + 0.5) / 20
        for _ in range(400):
            z = rng.standard_normal(n)
            for u in u_nodes:
                vals.append(transport_map(z, 0, 4 + u, q))
        vals = np.asarray(vals)
        for r, target in ((1, 0.0), (2, 1.0), (4, 3.0)):
            est = np.mean(vals ** r)
            se = np.std(vals ** r, ddof=1) / math.sqrt(400)  # replica count
            assert abs(est - target) < 4.0 * se + 1e-3

    def test_tie_break_consistent(self):
        m = Measure1D.uniform(-1.0, 1.0, n=4097)
        q = m.quantile_fn()
        z = np.array([0.3, 0.3, 0.3, -0.5])
        # tied values must occupy distinct ranks; outputs must be distinct
        outs = {transport_map(z, 3, p + 0.5, q) for p in range(3)}
        assert len(outs) == 3


class TestSimulateCoupled:
    def test_thermostat_only_decay(self):
        # lam -> 0: only shared reservoir events, E h(t) = h(0) exp(-mu t/2)
        p = ModelParams(1e-9, 1.0, 1.0)
        f0 = Measure1D.gaussian(1.0, v_max=GRID.v_max, n=GRID.n_v)
        sol = solve(f0, p, 1.5, dt=0.01, grid=GRID)
        reps, n = 30, 100
        ratios = []
        for r in range(reps):
            stream = RandomStream.for_replica(21, "coupled-thermo", r)
            z0 = stream.rng.standard_normal(n)
            v0 = z0 + 0.5 * stream.rng.standard_normal(n)
            traj = simulate_coupled(v0, z0, p, sol, 1.5, stream,
                                    sample_times=[0.0, 1.5])
            ratios.append(traj.h[1] / (traj.h[0] * math.exp(-0.75)))
        mean = np.mean(ratios)
        se = np.std(ratios, ddof=1) / math.sqrt(reps)
        assert abs(mean - 1.0) < 3.0 * se

    def test_marginal_second_moment(self, sol_gaussian):
        # pooled Z samples at t keep the stationary second moment
        reps, n = 30, 50
        pooled = []
        for r in range(reps):
            stream = RandomStream.for_replica(22, "coupled-law", r)
            z0 = stream.rng.standard_normal(n)
            traj = simulate_coupled(z0.copy(), z0, PARAMS, sol_gaussian, 1.0,
                                    stream, sample_times=[1.0])
            pooled.append(traj.z)
        pooled = np.concatenate(pooled)
        m2 = np.mean(pooled ** 2)
        se = np.std(pooled ** 2, ddof=1) / math.sqrt(len(pooled))
        assert abs(m2 - 1.0) < 4.0 * se

    def test_gap_stays_small_at_equilibrium(self, sol_gaussian):
        # V0 = Z0 from the stationary law: h stays at the a(t) scale
        stream = RandomStream.for_replica(23, "coupled-small", 0)
        n = 200
        z0 = stream.rng.standard_normal(n)
        traj = simulate_coupled(z0.copy(), z0, PARAMS, sol_gaussian, 2.0,
                                stream, sample_times=[1.0, 2.0])
        assert np.all(traj.h < 20.0 * np.maximum(traj.a, 1e-4))

    def test_gap_growth_bounded_by_gronwall_terms(self, sol_gaussian):
        # d/dt E h <= -(mu/2) h + lam a + 2 lam sqrt(h a): check the logged
        # means against the discretely integrated right-hand side
        reps, n = 25, 100
        times = np.array([0.25, 0.5, 0.75, 1.0, 1.25, 1.5])
        hs, As = [], []
        for r in range(reps):
            stream = RandomStream.for_replica(35, "coupled-gronwall", r)
            z0 = stream.rng.standard_normal(n)
            traj = simulate_coupled(z0.copy(), z0, PARAMS, sol_gaussian, 1.5,
                                    stream, sample_times=times)
            hs.append(traj.h)
            As.append(traj.a)
        h = np.mean(hs, axis=0)
        a = np.mean(As, axis=0)
        se = np.std(hs, axis=0, ddof=1) / math.sqrt(reps)
        lam, mu = PARAMS.lam, PARAMS.mu
        for i in range(len(times) - 1):
            dt = times[i + 1] - times[i]
            rhs = -0.5 * mu * h[i] + lam * a[i] + 2.0 * lam * math.sqrt(
                h[i] * a[i]
            )
            bound = h[i] + dt * max(rhs, 0.0) * math.exp(dt)
            assert h[i + 1] <= bound + 4.0 * se[i + 1]

    def test_horizon_enforced(self, sol_gaussian):
        stream = RandomStream(24)
        z0 = np.zeros(10)
        with pytest.raises(ValueError):
            simulate_coupled(z0, z0, PARAMS, sol_gaussian, 99.0, stream)

    def test_logs_aligned(self, sol_gaussian):
        stream = RandomStream(25)
        z0 = stream.rng.standard_normal(20)
        times = [0.25, 0.5, 1.0]
        traj = simulate_coupled(z0.copy(), z0, PARAMS, sol_gaussian, 1.0,
                                stream, sample_times=times)
        assert np.array_equal(traj.times, times)
        assert traj.h.shape == traj.a.shape == traj.chaos_w2sq.shape


class TestIndependentCopies:
    def test_k1_identical(self, sol_gaussian):
        stream = RandomStream(26)
        tilde = RandomStream(27)
        z0 = stream.rng.standard_normal(60)
        traj = simulate_independent_copies(
            z0, 1, PARAMS, sol_gaussian, 1.5, stream, tilde,
            n_blocks=60, sample_times=[0.5, 1.0, 1.5],
        )
        assert np.all(traj.h_dec == 0.0)
        assert np.array_equal(traj.z[:60], traj.z_tilde)

    def test_gap_grows_with_k(self, sol_gaussian):
        # fixed N: larger windows replace more events, larger h_dec
        n = 240
        means = {}
        for k in (2, 8):
            vals = []
            for r in range(12):
                stream = RandomStream.for_replica(28, f"ic-{k}", r)
                tilde = RandomStream.for_replica(29, f"ic-t-{k}", r)
                z0 = stream.rng.standard_normal(n)
                traj = simulate_independent_copies(
                    z0, k, PARAMS, sol_gaussian, 2.0, stream, tilde,
                    n_blocks=n // k, sample_times=[2.0],
                )
                vals.append(traj.h_dec[0])
            means[k] = np.mean(vals)
        assert means[8] > means[2]

    def test_rejects_oversized_window(self, sol_gaussian):
        stream = RandomStream(30)
        with pytest.raises(ValueError):
            simulate_independent_copies(
                np.zeros(10), 11, PARAMS, sol_gaussian, 1.0, stream,
                RandomStream(31),
            )


class TestBoltzmannProcess:
    def test_stationary_moments(self, sol_gaussian):
        vals = []
        for r in range(3000):
            stream = RandomStream.for_replica(32, "bp", r)
            z0 = stream.rng.standard_normal()
            vals.append(
                simulate_boltzmann(z0, PARAMS, sol_gaussian, 1.5, stream,
                                   sample_times=[1.5])[0]
            )
        vals = np.asarray(vals)
        m2 = np.mean(vals ** 2)
        se2 = np.std(vals ** 2, ddof=1) / math.sqrt(len(vals))
        assert abs(m2 - 1.0) < 3.0 * se2
        m4 = np.mean(vals ** 4)
        se4 = np.std(vals ** 4, ddof=1) / math.sqrt(len(vals))
        assert abs(m4 - 3.0) < 3.0 * se4

    def test_second_moment_tracks_relaxation(self):
        # start hot: pooled second moment follows the closed-form law
        f0 = Measure1D.gaussian(2.0, v_max=GRID.v_max, n=GRID.n_v)
        sol = solve(f0, PARAMS, 1.0, dt=0.005, grid=GRID)
        vals = []
        for r in range(3000):
            stream = RandomStream.for_replica(33, "bp-relax", r)
            z0 = stream.rng.standard_normal() * math.sqrt(2.0)
            vals.append(
                simulate_boltzmann(z0, PARAMS, sol, 1.0, stream,
                                   sample_times=[1.0])[0]
            )
        vals = np.asarray(vals)
        m2 = np.mean(vals ** 2)
        se = np.std(vals ** 2, ddof=1) / math.sqrt(len(vals))
        pred = second_moment_exact(2.0, PARAMS, 1.0)
        assert abs(m2 - pred) < 3.0 * se

    def test_horizon_enforced(self, sol_gaussian):
        with pytest.raises(ValueError):
            simulate_boltzmann(0.0, PARAMS, sol_gaussian, 10.0, RandomStream(34))
