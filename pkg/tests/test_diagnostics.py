import math

import numpy as np
import pytest
from helpers import basis, unit
from hypothesis import given
from hypothesis import strategies as st

from tensorpca import (
    DenseTensor,
    IterationConfig,
    SingularPlateauError,
    contract_leave_one,
    empirical_alpha,
    empirical_threshold,
    escape_analysis,
    escape_condition,
    generate_spiked,
    gradient_split,
    load_reference_curve,
    plateau_predicted,
    plateau_statistic,
    power_step,
    refine_fixed_point,
    smpi_recover,
    symmetrize,
    transverse_eigen,
)
from tensorpca.diagnostics import (
    planted_branch_correlation,
    record_trial,
    self_calibrated_target,
    stagnation_windows,
    threshold_scan,
)
from tensorpca.power_methods import SIMPLE, Trajectory
from tensorpca.smpi import trial_initializations


def crafted(off):
    # T_111 = 1 and T_122 = T_212 = T_221 = off, so T(:, :, e1) = diag(1, off)
    data = np.zeros((2, 2, 2))
    data[0, 0, 0] = 1.0
    data[0, 1, 1] = data[1, 0, 1] = data[1, 1, 0] = off
    return DenseTensor(data, symmetric=True)


def iterate(T, v, steps):
    out = [v]
    for _ in range(steps):
        v = power_step(T, v)
        out.append(v)
    return np.array(out)


class TestGradientSplit:
    def test_zero_signal(self, rng):
        Z = DenseTensor(rng.standard_normal((5, 5, 5)))
        v0, v = unit(rng, 5), unit(rng, 5)
        split = gradient_split(Z, 0.0, v0, v)
        np.testing.assert_array_equal(split.g_signal, 0.0)
        np.testing.assert_array_equal(split.g_noise, contract_leave_one(Z, 0, [v, v]))

    def test_orthogonal(self, rng):
        Z = DenseTensor(rng.standard_normal((4, 4, 4)))
        split = gradient_split(Z, 3.0, basis(4, 0), basis(4, 1))
        assert np.linalg.norm(split.g_signal) == 0.0
        assert math.isnan(split.ratio)

    @given(st.integers(2, 7), st.floats(0, 20), st.integers(0, 2**32 - 1))
    def test_reconstruction(self, n, beta, seed):
        inst = generate_spiked(n, 3, beta, seed=seed, symmetric_noise=False)
        v = unit(np.random.default_rng(seed), n)
        split = gradient_split(inst.noise, inst.signal_scale, inst.v0, v)
        direct = contract_leave_one(inst.tensor, 0, [v, v])
        np.testing.assert_allclose(split.total, direct, rtol=0, atol=1e-10 * max(1.0, np.abs(direct).max()))

    def test_alignment_fields(self, rng):
        inst = generate_spiked(6, 3, 2.0, seed=1)
        v = unit(rng, 6)
        split = gradient_split(inst.noise, inst.signal_scale, inst.v0, v)
        gn = split.g_noise
        assert split.noise_alignment == pytest.approx(gn @ inst.v0 / np.linalg.norm(gn), abs=1e-15)
        assert split.ratio == pytest.approx(gn @ inst.v0 / np.linalg.norm(split.g_signal), abs=1e-12)
        assert plateau_statistic(inst.noise, inst.v0, v) == split.noise_alignment


class TestPlateau:
    def test_zero_overlap(self):
        assert plateau_predicted(0.0, 2.0, 1.5) == 0.0

    def test_direct_evaluation(self):
        c, t, s = 0.8, 2.0, 1.5
        want = c * (t - s * c) / math.sqrt(t * t + s * s * c**4 - 2 * s * c**3 * t)
        assert plateau_predicted(c, t, s) == pytest.approx(want, abs=1e-15)
        assert plateau_predicted(c, t, s) == pytest.approx(0.4706, abs=5e-5)

    def test_singular(self):
        with pytest.raises(SingularPlateauError):
            plateau_predicted(1.0, 3.0, 3.0)

    def test_identity_at_fixed_point(self):
        inst = generate_spiked(20, 3, 2.5, seed=3)
        res = smpi_recover(inst.tensor, 40, master_seed=1)
        v, ok = refine_fixed_point(inst.tensor, res.estimate)
        assert ok
        np.testing.assert_allclose(power_step(inst.tensor, v), v, atol=1e-10)
        t = np.linalg.norm(contract_leave_one(inst.tensor, 0, [v, v]))
        pred = plateau_predicted(v @ inst.v0, t, inst.signal_scale)
        assert pred == pytest.approx(plateau_statistic(inst.noise, inst.v0, v), abs=1e-6)


class TestEscape:
    def test_unstable_crafted(self):
        ev = escape_condition(crafted(1.0), basis(2, 0))
        assert ev.lambda1 == pytest.approx(1.0, abs=1e-14)
        assert ev.objective == 1.0 and ev.unstable
        v = np.array([1.0, 0.01])
        path = iterate(crafted(1.0), v / np.linalg.norm(v), 50)
        assert np.min(np.abs(path[:, 0])) < 0.9

    def test_stable_crafted(self):
        ev = escape_condition(crafted(0.3), basis(2, 0))
        assert ev.lambda1 == pytest.approx(0.3, abs=1e-14)
        assert not ev.unstable
        v = np.array([1.0, 0.01])
        path = iterate(crafted(0.3), v / np.linalg.norm(v), 50)
        assert np.linalg.norm(path[-1] - basis(2, 0)) <= 1e-6

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
    def test_scale_aware(self, seed, gamma):
        r = np.random.default_rng(seed)
        T = symmetrize(DenseTensor(r.standard_normal((5, 5, 5))))
        m = unit(r, 5)
        a = escape_condition(T, m)
        b = escape_condition(DenseTensor(gamma * T.data, symmetric=True), m)
        assert a.unstable == b.unstable
        assert b.lambda1 == pytest.approx(gamma * a.lambda1, rel=1e-9, abs=1e-12)

    def test_transverse_direction(self, rng):
        T = symmetrize(DenseTensor(rng.standard_normal((6, 6, 6))))
        m = unit(rng, 6)
        lam, w, ok = transverse_eigen(T, m)
        assert ok and abs(w @ m) <= 1e-12
        M = np.tensordot(T.data, m, axes=(2, 0))
        P = np.eye(6) - np.outer(m, m)
        vals = np.linalg.eigvalsh(P @ M @ P)
        # the projected slice has the transverse spectrum plus a zero
        assert min(abs(vals - lam)) <= 1e-10
        np.testing.assert_allclose(P @ M @ w, lam * w, atol=1e-10)

    def test_flag_consistent(self, rng):
        T = symmetrize(DenseTensor(rng.standard_normal((5, 5, 5))))
        for _ in range(10):
            ev = escape_condition(T, unit(rng, 5))
            assert ev.unstable == (2 * abs(ev.lambda1) > ev.objective)


class TestStagnation:
    def test_windows(self):
        moving = [basis(3, i % 3) for i in range(6)]
        still = [basis(3, 0)] * 25
        V = np.array(moving + still + moving[1:] + still)
        wins = stagnation_windows(V, tol=1e-3, window=20, period=1)
        assert wins == [(6, 30)]

    def test_period_two_catches_oscillation(self):
        a, b = basis(2, 0), np.array([0.8, 0.6])
        osc = [a, b] * 15
        V = np.array([basis(2, 1)] + osc + [basis(2, 1)] * 3 + [basis(2, 0), basis(2, 1)] * 3)
        assert stagnation_windows(V, tol=1e-3, window=20, period=1) == []
        assert stagnation_windows(V, tol=1e-3, window=20, period=2) == [(1, 30)]

    def test_final_run_excluded(self):
        V = np.array([basis(2, 1), basis(2, 0)] + [basis(2, 0)] * 40)
        assert stagnation_windows(V, tol=1e-3, window=5, period=1) == []

    def test_short_window(self):
        V = np.array([basis(2, 1)] + [basis(2, 0)] * 5 + [basis(2, 1)] * 2)
        assert stagnation_windows(V, tol=1e-3, window=10, period=1) == []

    def test_crafted_trajectory_event(self):
        # 30 steps parked at e1 of the unstable tensor, then the escape
        T = crafted(1.0)
        v = np.array([1.0, 1e-12])
        path = iterate(T, v / np.linalg.norm(v), 60)
        traj = Trajectory(
            initial=path[0],
            final=path[-1],
            objectives=np.zeros(60),
            stop_reason="budget_exhausted",
            iterations_used=60,
            iterates=path[1:],
            iterate_steps=np.arange(1, 61),
        )
        events = escape_analysis(T, traj, stagnation_tol=1e-3, window=20, period=1)
        assert len(events) == 1
        ev = events[0]
        assert ev.start == 0 and ev.unstable and ev.reliable
        assert abs(ev.minimum @ basis(2, 0)) > 0.999
        assert ev.alignment > 0.99

    def test_needs_dense_iterates(self):
        traj = Trajectory(initial=basis(2, 0), final=basis(2, 0), objectives=np.zeros(4),
                          stop_reason="lag_converged", iterations_used=4)
        with pytest.raises(ValueError):
            escape_analysis(crafted(1.0), traj)

    def test_real_trajectory(self):
        inst = generate_spiked(30, 3, 1.6, seed=7)
        cfg = IterationConfig.for_dimension(30)
        res = smpi_recover(inst.tensor, 30, cfg, master_seed=2)
        for t in range(0, 30, 6):
            traj = record_trial(inst.tensor, trial_initializations(2, 30, [t])[0], cfg)
            np.testing.assert_array_equal(traj.final, res.per_trial[t].final)
            for ev in escape_analysis(inst.tensor, traj):
                assert ev.unstable == (2 * abs(ev.lambda1) > ev.objective)
                assert 0 <= ev.start < ev.end < traj.iterations_used


class TestAlpha:
    def test_examples(self):
        assert empirical_alpha(1.3, 50, 1.3, 100) == 0.0
        assert empirical_alpha(1.0, 10, math.sqrt(2), 20) == pytest.approx(0.5, abs=1e-15)
        assert empirical_alpha(1.0, 100, 0.928, 800) == pytest.approx(-0.0359, abs=5e-5)

    @given(st.floats(0.1, 10), st.floats(2, 1000), st.floats(0.1, 10), st.floats(2, 1000))
    def test_symmetric_in_arguments(self, b1, n1, b2, n2):
        if n1 == n2:
            return
        assert empirical_alpha(b1, n1, b2, n2) == pytest.approx(empirical_alpha(b2, n2, b1, n1), rel=1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            empirical_alpha(1.0, 10, 1.0, 10)
        with pytest.raises(ValueError):
            empirical_alpha(0.0, 10, 1.0, 20)


class TestThreshold:
    def test_oracle_algorithm_hits_first_point(self):
        thr = empirical_threshold(lambda inst: inst.v0, 8, [0.5, 1.0, 2.0], 0.9, seeds=[1, 2])
        assert thr == 0.5

    def test_random_algorithm_absent(self):
        r = np.random.default_rng(0)
        thr = empirical_threshold(lambda inst: unit(r, 8), 8, [0.5, 1.0, 2.0], 0.99, seeds=[1, 2, 3])
        assert thr is None

    def test_scan_records_and_callable_target(self):
        scan = threshold_scan(lambda inst: inst.v0, 6, [1.0, 2.0], lambda b: 2.0, seeds=[0])
        assert scan.threshold is None
        assert scan.targets == (1.9, 1.9)
        assert scan.mean_correlations == pytest.approx((1.0, 1.0), abs=1e-15)

    def test_grid_must_increase(self):
        with pytest.raises(ValueError):
            empirical_threshold(lambda inst: inst.v0, 5, [2.0, 1.0], 0.5, seeds=[0])

    def test_planted_branch(self):
        inst = generate_spiked(20, 3, 4.0, seed=1, symmetric_noise=False)
        c = planted_branch_correlation(inst)
        assert 0.9 < c <= 1.0
        target = self_calibrated_target(20, [1, 2])
        assert target(4.0) == target(4.0)
        assert 0.9 < target(4.0) <= 1.0

    def test_reference_curve(self, tmp_path):
        path = tmp_path / "curve.csv"
        path.write_text("beta,corr_opt\n1.0,0.5\n2.0,0.9\n")
        curve = load_reference_curve(path)
        assert curve(1.5) == pytest.approx(0.7)
        assert curve(1.0) == 0.5

    def test_reference_curve_bad_header(self, tmp_path):
        path = tmp_path / "curve.csv"
        path.write_text("b,c\n1,2\n")
        with pytest.raises(ValueError):
            load_reference_curve(path)


def test_simple_variant_record_matches_iteration():
    inst = generate_spiked(12, 3, 2.0, seed=2, symmetric_noise=False)
    cfg = IterationConfig.for_dimension(12, variant=SIMPLE)
    traj = record_trial(inst.tensor, unit(np.random.default_rng(1), 12), cfg)
    # record_trial always iterates the symmetrized operator
    assert abs(np.linalg.norm(traj.final) - 1.0) <= 1e-12
