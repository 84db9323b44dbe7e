import math

import numpy as np
import pytest
from scipy import stats

from qcs_sim.errors import InvariantError, PreconditionError
from qcs_sim.frames import phase_singlet
from qcs_sim.qcs import (
    ErrorBudget,
    QCSConfig,
    bob_evolution,
    error_budget,
    error_budget_curve,
    estimate_time,
    fidelity_from_phase_error,
    optimize_rounds,
    optimized_budget_vs_pairs,
    outcome_distribution,
    phase_error_from_fidelity,
    qcs_measure_pair,
    run_trials,
    simulate_qcs_sampling,
    werner_outcome_probability,
)
from qcs_sim.qmath import DensityMatrix

PS = 1e-12
OMEGA_CS = 1.0 / (17 * PS)


class TestConfig:
    def test_p0_with_residual_phase(self):
        cfg = QCSConfig(M=10, epsilon=0.1, omega=1.0, t_true=math.pi / 3)
        assert cfg.p0 == pytest.approx(math.cos((math.pi / 3 + 0.1) / 2) ** 2, abs=1e-15)
        assert cfg.p0 == pytest.approx(0.7055, abs=1e-3)

    def test_branch(self):
        assert QCSConfig(M=1, t_true=1.0).branch_ok
        assert not QCSConfig(M=1, t_true=0.0).branch_ok
        assert not QCSConfig(M=1, t_true=4.0).branch_ok

    def test_validation(self):
        with pytest.raises(ValueError):
            QCSConfig(M=0)
        with pytest.raises(ValueError):
            QCSConfig(M=5, omega=-1.0)
        with pytest.raises(ValueError):
            QCSConfig(M=5, fidelity=1.5)

    def test_werner_visibility(self):
        assert werner_outcome_probability(1.0, 0.0) == pytest.approx(1.0)
        assert werner_outcome_probability(0.25, 0.7) == pytest.approx(0.5)

    def test_phase_error_round_trip(self):
        assert fidelity_from_phase_error(phase_error_from_fidelity(0.9)) == pytest.approx(0.9)
        assert fidelity_from_phase_error(0.1) == pytest.approx(1 - 0.1 ** 2 / 4, abs=1e-5)


class TestMeasurement:
    def test_conditional_probability(self, rng):
        """Per-pair statistics follow cos^2((omega t + eps)/2)."""
        eps, omega, t = 0.3, 2.0, 0.4
        pair = DensityMatrix.from_pure(phase_singlet(eps))
        trials = 4000
        zeros = sum(1 - qcs_measure_pair(pair, omega, t, rng)[1] for _ in range(trials))
        p0 = math.cos((omega * t + eps) / 2) ** 2
        assert abs(zeros / trials - p0) < 4 * math.sqrt(p0 * (1 - p0) / trials)

    def test_alice_outcomes_fair(self, rng):
        pair = DensityMatrix.from_pure(phase_singlet(0.0))
        sigmas = [qcs_measure_pair(pair, 1.0, 0.5, rng)[0] for _ in range(2000)]
        assert abs(np.mean(sigmas) - 0.5) < 4 * math.sqrt(0.25 / 2000)

    def test_evolution_is_unitary(self):
        u = bob_evolution(3.0, 0.7)
        np.testing.assert_allclose(u @ u.conj().T, np.eye(2), atol=1e-15)


class TestSampling:
    def test_no_elapsed_time(self, rng):
        report = simulate_qcs_sampling(QCSConfig(M=50, t_true=0.0), rng, method="per-qubit")
        assert report.k == 50
        assert report.t_hat == 0.0

    def test_quarter_period(self, rng):
        cfg = QCSConfig(M=10_000, omega=1.0, t_true=math.pi / 2)
        report = simulate_qcs_sampling(cfg, rng)
        assert report.k / report.M == pytest.approx(0.5, abs=0.02)
        assert abs(report.t_hat - math.pi / 2) < 4 * report.stderr

    def test_per_qubit_matches_binomial(self):
        cfg = QCSConfig(M=200, omega=1.0, t_true=1.1, fidelity=0.9)
        per_qubit = run_trials(cfg, 100, seed=1, method="per-qubit")
        binomial = run_trials(cfg, 100, seed=2, method="binomial")
        expected = cfg.M * cfg.p0
        spread = math.sqrt(cfg.M * cfg.p0 * (1 - cfg.p0) / 100)
        assert abs(per_qubit.ks.mean() - expected) < 4 * spread
        assert abs(binomial.ks.mean() - expected) < 4 * spread

    def test_unknown_method(self, rng):
        with pytest.raises(ValueError):
            simulate_qcs_sampling(QCSConfig(M=5, t_true=1.0), rng, method="exact")

    def test_report_fields(self, rng):
        report = simulate_qcs_sampling(QCSConfig(M=400, omega=2.0, t_true=0.5), rng)
        assert report.stderr == pytest.approx(1 / (2.0 * 20))
        assert report.x_stderr_bound == pytest.approx(1 / 20)
        assert report.x_stderr <= report.x_stderr_bound + 1e-12
        assert report.x == pytest.approx((2 * report.k - 400) / 400)

    def test_bias_law(self):
        cfg = QCSConfig(M=10 ** 6, epsilon=0.1, omega=1.0, t_true=1.0)
        trials = run_trials(cfg, 100, seed=5, method="binomial")
        assert abs(trials.bias - 0.1) < 3 * trials.stderr

    def test_assumed_phase_removes_bias(self):
        cfg = QCSConfig(M=10 ** 6, epsilon=0.1, omega=1.0, t_true=1.0)
        trials = run_trials(cfg, 100, seed=5, method="binomial", epsilon_assumed=0.1)
        assert abs(trials.bias) < 3 * trials.stderr

    def test_standard_quantum_limit_slope(self):
        sizes = [10 ** 2, 10 ** 3, 10 ** 4, 10 ** 5, 10 ** 6]
        spreads = []
        for M in sizes:
            cfg = QCSConfig(M=M, omega=1.0, t_true=math.pi / 2)
            spreads.append(run_trials(cfg, 200, seed=M, method="binomial").std)
        fit = stats.linregress(np.log(sizes), np.log(spreads))
        assert fit.slope == pytest.approx(-0.5, abs=0.05)

    def test_threads_match_sequential(self):
        cfg = QCSConfig(M=300, omega=1.0, t_true=0.8)
        one = run_trials(cfg, 16, seed=3, workers=1)
        many = run_trials(cfg, 16, seed=3, workers=4)
        np.testing.assert_array_equal(one.ks, many.ks)
        np.testing.assert_array_equal(one.t_hats, many.t_hats)


class TestEstimateTime:
    def test_all_zeros(self):
        assert estimate_time(10, 10, 3.0) == 0.0

    def test_half(self):
        assert estimate_time(50, 100, 2.0) == pytest.approx(math.pi / 4)

    def test_three_quarters(self):
        assert estimate_time(75, 100, 1.0) == pytest.approx(math.pi / 3)

    def test_range_checked(self):
        with pytest.raises(ValueError):
            estimate_time(11, 10, 1.0)
        with pytest.raises(ValueError):
            estimate_time(0, 0, 1.0)


class TestOutcomeDistribution:
    def test_fair_coin(self):
        dist = outcome_distribution(2, math.pi / 2)
        np.testing.assert_allclose(dist.exact, [0.25, 0.5, 0.25], atol=1e-12)

    def test_normalized_and_centered(self):
        dist = outcome_distribution(100, math.pi / 3)
        assert dist.exact.sum() == pytest.approx(1.0, abs=1e-12)
        assert dist.mean_x == pytest.approx(0.5, abs=1e-12)

    def test_gaussian_close_at_large_m(self):
        dist = outcome_distribution(10 ** 4, math.pi / 3)
        assert dist.total_variation <= 0.02

    def test_size_limit(self):
        with pytest.raises(ValueError):
            outcome_distribution(10 ** 6 + 1, 1.0)


class TestErrorBudget:
    def test_pure_sql_limit(self):
        budget = error_budget(1e4, 0, 1.0, OMEGA_CS)
        assert budget.dt_total / PS == pytest.approx(0.17, rel=1e-9)
        assert budget.dt_fidelity == 0.0

    def test_no_purification(self):
        budget = error_budget(1e5, 0, 0.9, OMEGA_CS)
        assert budget.dt_total / PS == pytest.approx(17 * math.sqrt(1e-5 + 0.1), rel=1e-12)
        assert budget.dt_total / PS == pytest.approx(5.38, abs=0.01)

    def test_eight_rounds(self):
        budget = error_budget(1e5, 8, 0.9, OMEGA_CS)
        assert budget.F_n == pytest.approx(0.9946, abs=1e-4)
        assert budget.dt_total / PS == pytest.approx(1.5, abs=0.05)
        assert budget.pairs_used == pytest.approx(1e5 / 256)

    def test_quadrature(self):
        budget = error_budget(5e4, 3, 0.8, 2.0)
        assert budget.dt_total ** 2 == pytest.approx(budget.dt_sql ** 2 + budget.dt_fidelity ** 2, rel=1e-12)

    def test_quadrature_enforced(self):
        with pytest.raises(InvariantError):
            ErrorBudget(dt_sql=1.0, dt_fidelity=1.0, dt_total=1.0, n_rounds=0, F_n=1.0, pairs_used=1.0)

    def test_too_many_rounds(self):
        with pytest.raises(PreconditionError) as info:
            error_budget(100, 7, 0.9, 1.0)
        assert info.value.bound == "N<2^n"


class TestOptimizeRounds:
    def test_perfect_pairs_need_no_rounds(self):
        assert optimize_rounds(1e5, 1.0, OMEGA_CS).n_star == 0

    def test_interior_minimum(self):
        opt = optimize_rounds(1e5, 0.9, OMEGA_CS)
        assert opt.n_star == 8
        assert 1.3 <= opt.dt_star / PS <= 2.2
        assert opt.dt_star < opt.curve[0].dt_total
        assert opt.dt_star < opt.curve[-1].dt_total

    def test_curve_stops_at_log2_n(self):
        curve = error_budget_curve(1000, 0.9, 1.0, n_max=20)
        assert [b.n_rounds for b in curve] == list(range(10))

    def test_vs_pairs_table(self):
        table = optimized_budget_vs_pairs([1e3, 1e5, 1e7], 0.9, OMEGA_CS)
        assert list(table["N"]) == [1e3, 1e5, 1e7]
        assert list(table["dt_total"]) == sorted(table["dt_total"], reverse=True)
        assert table["n_star"].is_monotonic_increasing
