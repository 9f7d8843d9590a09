import io

import numpy as np
import pytest

from gcalc import (
    BangBangPolicy,
    ConstantPolicy,
    CovarianceSet,
    PiecewiseConstantPolicy,
    PolicyError,
    SigmaBand,
    TimeGrid,
    qv_compensation_check,
    qv_compensation_check_batch,
    path_noise,
    qvar_bounds_check,
    qvar_bounds_check_batch,
    simulate,
    simulate_batch,
    threshold_bangbang,
)
from gcalc.scenario import UnsupportedDimensionError, assemble, batch_noise

BAND = SigmaBand(1.0, 2.0)


def brute_force_qvar_violation(qv, t, lo, hi):
    """O(n^2) oracle over all grid pairs."""
    worst = -np.inf
    n = len(t)
    for i in range(n):
        for j in range(i, n):
            dq = qv[j] - qv[i]
            dtau = t[j] - t[i]
            worst = max(worst, dq - hi * dtau, lo * dtau - dq)
    return worst


class TestNoise:
    def test_prefix_stability(self):
        a = path_noise(5, 3, 10, 2)
        b = path_noise(5, 3, 25, 2)
        assert np.array_equal(a, b[:10])

    def test_distinct_paths_and_seeds(self):
        assert not np.array_equal(path_noise(5, 0, 10, 1), path_noise(5, 1, 10, 1))
        assert not np.array_equal(path_noise(5, 0, 10, 1), path_noise(6, 0, 10, 1))

    def test_batch_matches_per_path(self):
        block = batch_noise(9, 4, 3, 8, 2)
        for p in range(3):
            assert np.array_equal(block[p], path_noise(9, 4 + p, 8, 2))


class TestSimulate:
    def test_zero_variance_rejected_at_band(self):
        with pytest.raises(ValueError):
            SigmaBand(0.0, 0.0)

    def test_constant_hi_qvar_exact(self):
        # binary-friendly grid: every increment and partial sum is exact
        grid = TimeGrid(1.0, 64)
        p = simulate(ConstantPolicy(value=BAND.sigma2_hi), BAND, grid, seed=0)
        assert np.array_equal(p.qv_scalar(), BAND.sigma2_hi * p.t)

    def test_qvar_increments_are_trace_times_dt(self):
        grid = TimeGrid(1.0, 128)
        p = simulate(threshold_bangbang(BAND, 0.0), BAND, grid, seed=2)
        rebuilt = np.concatenate([[0.0], np.cumsum(p.policy_trace[:, 0, 0] * grid.dt)])
        assert np.array_equal(p.qv_scalar(), rebuilt)

    def test_bangbang_trace_follows_rule(self):
        grid = TimeGrid(1.0, 200)
        p = simulate(threshold_bangbang(BAND, 0.0), BAND, grid, seed=3)
        for k in range(grid.n_steps):
            want = BAND.sigma2_hi if p.b[k, 0] >= 0.0 else BAND.sigma2_lo
            assert p.choices[k] == want
        assert set(np.unique(p.choices)) <= {BAND.sigma2_lo, BAND.sigma2_hi}

    def test_reproducible(self):
        grid = TimeGrid(1.0, 50)
        a = simulate_batch(threshold_bangbang(BAND, 0.3), BAND, grid, seed=11, n_paths=4)
        b = simulate_batch(threshold_bangbang(BAND, 0.3), BAND, grid, seed=11, n_paths=4)
        assert np.array_equal(a.b, b.b)
        assert np.array_equal(a.qvar, b.qvar)
        assert np.array_equal(a.noise, b.noise)

    def test_adaptedness(self):
        # changing the noise at step k leaves B values at steps <= k alone
        grid = TimeGrid(1.0, 40)
        noise = batch_noise(1, 0, 2, grid.n_steps, 1)
        base = assemble(threshold_bangbang(BAND, 0.0), BAND, grid, noise)
        k = 17
        tweaked = noise.copy()
        tweaked[:, k, :] += 3.0
        other = assemble(threshold_bangbang(BAND, 0.0), BAND, grid, tweaked)
        assert np.array_equal(base.b[:, : k + 1], other.b[:, : k + 1])
        assert not np.array_equal(base.b[:, k + 1], other.b[:, k + 1])

    def test_constant_out_of_band_rejected(self):
        grid = TimeGrid(1.0, 10)
        with pytest.raises(PolicyError):
            simulate(ConstantPolicy(value=3.0), BAND, grid, seed=0)

    def test_bangbang_interior_choice_rejected(self):
        grid = TimeGrid(1.0, 10)
        bad = BangBangPolicy(lambda k, b, aux: 1.5, name="offband")
        with pytest.raises(PolicyError):
            simulate(bad, BAND, grid, seed=0)

    def test_piecewise_schedule(self):
        grid = TimeGrid(1.0, 10)
        pol = PiecewiseConstantPolicy([(0, 1.0), (4, 2.0)])
        p = simulate(pol, BAND, grid, seed=0)
        assert np.array_equal(p.choices, [1, 1, 1, 1, 2, 2, 2, 2, 2, 2])
        with pytest.raises(ValueError):
            PiecewiseConstantPolicy([(2, 1.0)])

    def test_interior_constant_allowed(self):
        grid = TimeGrid(1.0, 16)
        p = simulate(ConstantPolicy(value=1.5), BAND, grid, seed=0)
        assert np.all(p.choices == 1.5)

    def test_covariance_set_simulation(self):
        members = [np.diag([1.0, 0.5]), np.array([[1.0, 0.3], [0.3, 1.0]])]
        cs = CovarianceSet(2, members)
        grid = TimeGrid(1.0, 32)
        rule = BangBangPolicy(lambda k, b, aux: (b[:, 0] >= 0.0).astype(int), name="sign(b1)")
        p = simulate(rule, cs, grid, seed=4)
        assert p.d == 2
        for k in range(grid.n_steps):
            assert np.array_equal(p.policy_trace[k], members[int(p.choices[k])])
        with pytest.raises(PolicyError):
            simulate(ConstantPolicy(index=5), cs, grid, seed=0)

    def test_aux_state_feedback(self):
        # rule sees an auxiliary running maximum of |B| maintained by the policy
        def aux0(n_paths):
            return np.zeros(n_paths)

        def rule(k, b, aux):
            return np.where(aux >= 0.5, BAND.sigma2_lo, BAND.sigma2_hi)

        def aux_update(k, b_next, aux):
            return np.maximum(aux, np.abs(b_next[:, 0]))

        grid = TimeGrid(1.0, 100)
        pol = BangBangPolicy(rule, name="capped", aux0=aux0, aux_update=aux_update)
        p = simulate(pol, BAND, grid, seed=5)
        run_abs = np.maximum.accumulate(np.abs(p.b[:, 0]))
        for k in range(1, grid.n_steps):
            want = BAND.sigma2_lo if run_abs[k] >= 0.5 else BAND.sigma2_hi
            assert p.choices[k] == want


class TestQvarBounds:
    def test_constant_policies_tight(self):
        grid = TimeGrid(1.0, 64)
        for value in (BAND.sigma2_lo, BAND.sigma2_hi):
            p = simulate(ConstantPolicy(value=value), BAND, grid, seed=0)
            v = qvar_bounds_check(p, BAND)
            assert v <= 1e-12
            assert v == pytest.approx(0.0, abs=1e-12)  # one side is an equality

    def test_bangbang_long_path(self):
        grid = TimeGrid(10.0, 10_000)
        p = simulate(threshold_bangbang(BAND, 0.0), BAND, grid, seed=1)
        assert qvar_bounds_check(p, BAND) <= 1e-12

    def test_against_bruteforce_oracle(self):
        grid = TimeGrid(1.0, 300)
        p = simulate(threshold_bangbang(BAND, -0.2), BAND, grid, seed=6)
        slow = brute_force_qvar_violation(p.qv_scalar(), p.t, BAND.sigma2_lo, BAND.sigma2_hi)
        assert _violation(p.qv_scalar(), p.t) == pytest.approx(slow, abs=1e-14)
        assert qvar_bounds_check(p, BAND) == pytest.approx(slow, abs=1e-12)
        # also on a synthetic violating series: positive violations agree too
        qv = p.qv_scalar().copy()
        qv[150:] += 0.5
        fast2 = _violation(qv, p.t)
        slow2 = brute_force_qvar_violation(qv, p.t, BAND.sigma2_lo, BAND.sigma2_hi)
        assert fast2 > 0.1
        assert fast2 == pytest.approx(slow2, abs=1e-14)

    def test_dimension_guard(self):
        cs = CovarianceSet(2, [np.eye(2)])
        p = simulate(ConstantPolicy(index=0), cs, TimeGrid(1.0, 8), seed=0)
        with pytest.raises(UnsupportedDimensionError):
            qvar_bounds_check(p, BAND)


def _violation(qv, t):
    from gcalc.scenario import _pairwise_violation

    return float(_pairwise_violation(qv, t, BAND.sigma2_lo, BAND.sigma2_hi))


class TestCompensationCheck:
    def test_zero_eta(self):
        p = simulate(threshold_bangbang(BAND, 0.0), BAND, TimeGrid(1.0, 64), seed=0)
        assert qv_compensation_check(p, 0.0, BAND) == 0.0
        assert qv_compensation_check(p, 0.0) == 0.0  # set defaults from the path

    def test_eta_one_matches_qvar_upper_bound(self):
        # M_t = <B>_t - sigma2_hi * t since 2 G(1) = sigma2_hi
        grid = TimeGrid(1.0, 128)
        p = simulate(threshold_bangbang(BAND, 0.0), BAND, grid, seed=1)
        m = qv_compensation_check(p, 1.0, BAND)
        expected = np.max(p.qv_scalar() - BAND.sigma2_hi * p.t)
        assert m == pytest.approx(expected, abs=1e-12)
        assert m <= 1e-12

    def test_eta_minus_one_matches_lower_bound(self):
        grid = TimeGrid(1.0, 128)
        p = simulate(threshold_bangbang(BAND, 0.0), BAND, grid, seed=2)
        m = qv_compensation_check(p, -1.0, BAND)
        expected = np.max(-p.qv_scalar() + BAND.sigma2_lo * p.t)
        assert m == pytest.approx(expected, abs=1e-12)
        assert m <= 1e-12

    def test_random_piecewise_eta_batch(self):
        grid = TimeGrid(1.0, 200)
        n_pairs = 500
        batch = simulate_batch(threshold_bangbang(BAND, 0.0), BAND, grid, seed=3, n_paths=n_pairs)
        rng = np.random.default_rng(0)
        etas = np.repeat(rng.uniform(-2, 2, size=(n_pairs, 20)), 10, axis=1)[..., None, None]
        stats = qv_compensation_check_batch(batch, etas)
        assert stats.shape == (n_pairs,)
        assert np.max(stats) <= 1e-10 * grid.n_steps

    def test_callable_eta(self):
        p = simulate(ConstantPolicy(value=2.0), BAND, TimeGrid(1.0, 16), seed=0)
        m = qv_compensation_check(p, lambda k: np.array([[1.0]]), BAND)
        assert m <= 1e-12


class TestRestrict:
    def test_coarse_view_is_consistent(self):
        from gcalc import restrict

        fine = simulate_batch(threshold_bangbang(BAND, 0.0), BAND, TimeGrid(1.0, 256),
                              seed=9, n_paths=16)
        coarse = restrict(fine, 8)
        assert coarse.grid.n_steps == 32
        assert np.array_equal(coarse.b, fine.b[:, ::8])
        assert np.array_equal(coarse.qvar, fine.qvar[:, ::8])
        # aggregated variances stay inside the band and the noise record
        # reproduces the coarse increments
        assert np.max(qvar_bounds_check_batch(coarse, BAND)) <= 1e-12
        rebuilt = coarse.noise[:, :, 0] * np.sqrt(np.diff(coarse.qvar[:, :, 0, 0], axis=1))
        assert np.allclose(np.diff(coarse.b, axis=1)[:, :, 0], rebuilt, atol=1e-14)

    def test_factor_must_divide(self):
        from gcalc import restrict

        fine = simulate_batch(ConstantPolicy(value=1.5), BAND, TimeGrid(1.0, 10), seed=0, n_paths=2)
        with pytest.raises(ValueError):
            restrict(fine, 3)
        assert restrict(fine, 1) is fine


class TestExport:
    def test_csv_round_trip(self):
        p = simulate(threshold_bangbang(BAND, 0.0), BAND, TimeGrid(1.0, 8), seed=0)
        buf = io.StringIO()
        p.to_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "t,b_1,qvar_11,policy_choice"
        assert len(lines) == 10
        first = [float(v) for v in lines[1].split(",")]
        assert first[:3] == [0.0, 0.0, 0.0]
