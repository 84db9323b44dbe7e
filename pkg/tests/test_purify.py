import math

import numpy as np
import pytest

from qcs_sim.channels import werner_from_fidelity
from qcs_sim.errors import ExhaustionError
from qcs_sim.frames import BasisFrame, pair_local_map, phase_singlet
from qcs_sim.purify import (
    PairEnsemble,
    PurificationContext,
    PurificationTrajectory,
    RoundRecord,
    bbpssw_round_mc,
    derive_generator,
    iterate_recurrence,
    purify_schedule,
    recurrence_step,
    rotation_choices,
    run_mc_round,
)
from qcs_sim.qmath import DensityMatrix, fidelity, validate_density


class TestRecurrence:
    def test_perfect_pairs(self):
        assert recurrence_step(1.0) == pytest.approx((1.0, 1.0))

    def test_half_is_fixed_point(self):
        F, D = recurrence_step(0.5)
        assert F == pytest.approx(0.5, abs=1e-15)
        assert D == pytest.approx(5 / 9)

    def test_worked_example(self):
        F, D = recurrence_step(0.9)
        assert F == pytest.approx(0.92639, abs=1e-5)
        assert D == pytest.approx(0.87556, abs=1e-5)

    def test_iterate(self):
        history = iterate_recurrence(0.9, 8)
        assert len(history) == 9
        assert history[2] == pytest.approx(0.94721, abs=1e-5)
        assert history[4] == pytest.approx(0.97434, abs=1e-5)
        assert history[8] == pytest.approx(0.9946, abs=1e-4)
        assert all(b > a for a, b in zip(history, history[1:]))

    def test_below_half_decreases(self):
        assert recurrence_step(0.4)[0] < 0.4

    def test_range_checked(self):
        with pytest.raises(ValueError):
            recurrence_step(1.5)


class TestStreams:
    def test_rotation_choices_are_shared(self):
        np.testing.assert_array_equal(rotation_choices(7, 3, 10), rotation_choices(7, 3, 10))

    def test_rounds_use_different_streams(self):
        assert not np.array_equal(rotation_choices(7, 1, 50), rotation_choices(7, 2, 50))

    def test_derived_generators_independent(self):
        a = derive_generator(5, 1, 0).random(4)
        b = derive_generator(5, 1, 1).random(4)
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a, derive_generator(5, 1, 0).random(4))


class TestRoundMonteCarlo:
    def test_perfect_singlets(self, singlet, rng):
        frame = BasisFrame()
        outcome = bbpssw_round_mc(singlet, singlet, frame, frame, rng)
        assert outcome.success
        assert outcome.success_prob == pytest.approx(1.0, abs=1e-12)
        assert fidelity(outcome.pair, phase_singlet(0.0)) == pytest.approx(1.0, abs=1e-12)

    def test_werner_success_probability_is_exact(self, rng):
        rho = werner_from_fidelity(0.9)
        frame = BasisFrame()
        for _ in range(10):
            outcome = bbpssw_round_mc(rho, rho, frame, frame, rng)
            assert outcome.success_prob == pytest.approx(recurrence_step(0.9)[1], abs=1e-12)
            assert outcome.success == (outcome.alice_bit == outcome.bob_bit)

    def test_werner_output_fidelity(self, rng):
        rho = werner_from_fidelity(0.9)
        frame = BasisFrame()
        kept = []
        for _ in range(200):
            outcome = bbpssw_round_mc(rho, rho, frame, frame, rng)
            if outcome.success:
                kept.append(fidelity(outcome.pair, phase_singlet(0.0)))
                assert validate_density(outcome.pair, tol=1e-10).passed
        assert np.mean(kept) == pytest.approx(recurrence_step(0.9)[0], abs=1e-10)

    def test_mismatched_frames_phase_pair(self, rng):
        """Averaged over all rotation choices a phase singlet purifies like Werner(cos^2(phi/2))."""
        frame_a, frame_b = BasisFrame(0.7, -1.3), BasisFrame(2.1, 0.4)
        local = pair_local_map(frame_a, frame_b) @ phase_singlet(0.4).amplitudes
        pair = DensityMatrix(np.outer(local, local.conj()))
        F = math.cos(0.2) ** 2
        target = PurificationContext(frame_a, frame_b).target
        assert fidelity(pair, target) == pytest.approx(F, abs=1e-12)

        probs = []
        for r1 in range(12):
            for r2 in range(12):
                outcome = bbpssw_round_mc(pair, pair, frame_a, frame_b, rng, rotations=(r1, r2))
                probs.append(outcome.success_prob)
        assert np.mean(probs) == pytest.approx(recurrence_step(F)[1], abs=1e-10)

    def test_invalid_pair_rejected(self, singlet, rng):
        bad = DensityMatrix(np.diag([1.2, -0.2, 0.0, 0.0]))
        with pytest.raises(ValueError):
            bbpssw_round_mc(bad, singlet, BasisFrame(), BasisFrame(), rng)

    def test_single_round_statistics(self, rng):
        rho = werner_from_fidelity(0.9)
        frame = BasisFrame()
        trials = 4000
        successes = sum(bbpssw_round_mc(rho, rho, frame, frame, rng).success for _ in range(trials))
        D = recurrence_step(0.9)[1]
        assert abs(successes / trials - D) < 4 * math.sqrt(D * (1 - D) / trials)

    @pytest.mark.slow
    def test_single_round_statistics_full(self):
        rho = werner_from_fidelity(0.9)
        frame = BasisFrame()
        rng = np.random.default_rng(11)
        trials = 100_000
        successes = 0
        kept = []
        for _ in range(trials):
            outcome = bbpssw_round_mc(rho, rho, frame, frame, rng)
            if outcome.success:
                successes += 1
                kept.append(fidelity(outcome.pair, phase_singlet(0.0)))
        assert successes / trials == pytest.approx(0.87556, abs=0.004)
        assert np.mean(kept) == pytest.approx(0.92639, abs=0.005)


class TestRunMCRound:
    def test_threads_match_sequential(self):
        pairs = PairEnsemble.werner_copies(0.85, 41).pairs
        context = PurificationContext(BasisFrame(0.2, 0.9), BasisFrame(-0.4, 0.1))
        one = run_mc_round(pairs, context, seed=3, round_index=1, workers=1)
        many = run_mc_round(pairs, context, seed=3, round_index=1, workers=4)
        assert [o.alice_bit for o in one.outcomes] == [o.alice_bit for o in many.outcomes]
        assert [o.bob_bit for o in one.outcomes] == [o.bob_bit for o in many.outcomes]
        for a, b in zip(one.survivors, many.survivors):
            np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_odd_pair_set_aside(self):
        pairs = PairEnsemble.werner_copies(0.9, 5).pairs
        result = run_mc_round(pairs, PurificationContext(), seed=1, round_index=1)
        assert result.attempts == 2
        assert result.leftover is pairs[-1]

    def test_exhaustion(self):
        pairs = PairEnsemble.werner_copies(0.9, 1).pairs
        with pytest.raises(ExhaustionError):
            run_mc_round(pairs, PurificationContext(), seed=1, round_index=1)

    def test_measurement_seed_changes_outcomes_not_rotations(self):
        pairs = PairEnsemble.werner_copies(0.8, 64).pairs
        a = run_mc_round(pairs, PurificationContext(), seed=9, round_index=1, measurement_seed=100)
        b = run_mc_round(pairs, PurificationContext(), seed=9, round_index=1, measurement_seed=101)
        assert [o.rotations for o in a.outcomes] == [o.rotations for o in b.outcomes]
        assert [o.alice_bit for o in a.outcomes] != [o.alice_bit for o in b.outcomes]


class TestSchedule:
    def test_zero_rounds(self):
        trajectory = purify_schedule(PairEnsemble.analytic(0.9, 1024), 0)
        assert trajectory.rounds == 0
        assert trajectory.fidelities() == [0.9]

    def test_analytic_four_rounds(self):
        trajectory = purify_schedule(PairEnsemble.analytic(0.9, 1024), 4)
        assert trajectory.final_fidelity == pytest.approx(0.97434, abs=1e-5)
        assert trajectory.final_pairs == pytest.approx(1024 / 16)
        assert trajectory.yield_convention == "ideal"

    def test_realistic_yield(self):
        trajectory = purify_schedule(PairEnsemble.analytic(0.9, 1024), 1, yield_convention="realistic")
        assert trajectory.final_pairs == pytest.approx(1024 * recurrence_step(0.9)[1] / 2)
        assert trajectory.to_dataframe()["yield"].unique().tolist() == ["realistic"]

    def test_monte_carlo_matches_recurrence(self):
        trajectory = purify_schedule(PairEnsemble.werner_copies(0.9, 2 ** 10), 2, mode="montecarlo", seed=4)
        final = trajectory.records[-1]
        assert abs(final.fidelity - 0.94721) <= 3 * final.fidelity_stderr
        assert trajectory.yield_convention == "realistic"
        assert trajectory.final_ensemble.size() == final.pairs_remaining

    def test_odd_pairs_kept_for_clock_sync(self):
        trajectory = purify_schedule(PairEnsemble.werner_copies(0.9, 9), 1, mode="montecarlo", seed=2)
        final = trajectory.records[-1]
        assert final.leftover == 1
        assert len(trajectory.set_aside) == 1
        np.testing.assert_array_equal(trajectory.set_aside[0].matrix, werner_from_fidelity(0.9).matrix)
        assert len(trajectory.usable_pairs()) == final.pairs_remaining + final.leftover

    def test_monte_carlo_exhaustion(self):
        with pytest.raises(ExhaustionError):
            purify_schedule(PairEnsemble.werner_copies(0.9, 2), 3, mode="montecarlo")

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            purify_schedule(PairEnsemble.analytic(0.9, 8), -1)
        with pytest.raises(ValueError):
            purify_schedule(PairEnsemble.analytic(0.9, 8), 1, mode="exact")

    def test_dataframe_columns(self):
        df = purify_schedule(PairEnsemble.analytic(0.9, 64), 2).to_dataframe()
        assert list(df["round"]) == [0, 1, 2]
        assert {"mode", "fidelity", "pairs_remaining", "success_rate", "yield"} <= set(df.columns)


class TestTrajectory:
    def test_rounds_must_be_contiguous(self):
        trajectory = PurificationTrajectory(mode="analytic")
        trajectory.record(RoundRecord(0, 0.9, 8, 1.0))
        with pytest.raises(ValueError):
            trajectory.record(RoundRecord(2, 0.95, 4, 0.8))

    def test_pairs_cannot_grow(self):
        trajectory = PurificationTrajectory(mode="analytic")
        trajectory.record(RoundRecord(0, 0.9, 8, 1.0))
        with pytest.raises(ValueError):
            trajectory.record(RoundRecord(1, 0.95, 16, 0.8))

    def test_must_start_at_zero(self):
        with pytest.raises(ValueError):
            PurificationTrajectory(mode="analytic").record(RoundRecord(1, 0.9, 8, 1.0))
