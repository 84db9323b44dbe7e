import math

import numpy as np
import pytest

from qcs_sim.channels import (
    BellDiagonal,
    NoiseModel,
    bell_basis,
    bell_projectors,
    bell_weights,
    bell_diagonal_mixture,
    depolarize,
    noisy_phase_pair,
    singlet_fidelity,
    twirl,
    twirl_average,
    twirl_closed_form,
    twirl_group,
    twirl_sample,
    werner_from_fidelity,
    werner_lambda,
)
from qcs_sim.errors import InvariantError
from qcs_sim.frames import phase_singlet
from qcs_sim.qmath import DensityMatrix, fidelity, is_unitary, validate_density


def _grid(points=20):
    for p in np.linspace(0.0, 1.0, points):
        for phi in 2 * math.pi * np.arange(points) / points:
            yield float(p), float(phi)


class TestBellDiagonal:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            BellDiagonal(0.5, 0.2, 0.2, 0.2)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            BellDiagonal(1.1, -0.1, 0.0, 0.0)

    def test_werner_round_trip(self):
        weights = BellDiagonal.from_werner(0.7)
        back, residual = bell_weights(weights.to_density())
        np.testing.assert_allclose(back.as_tuple(), weights.as_tuple(), atol=1e-15)
        assert residual < 1e-15

    def test_bell_basis_orthonormal(self):
        basis = np.column_stack([b.amplitudes for b in bell_basis()])
        np.testing.assert_allclose(basis.conj().T @ basis, np.eye(4), atol=1e-15)

    def test_singlet_is_first(self):
        assert abs(np.vdot(bell_basis()[0].amplitudes, phase_singlet(0.0).amplitudes)) == pytest.approx(1.0)


class TestDepolarize:
    def test_zero_noise(self, singlet):
        np.testing.assert_array_equal(depolarize(singlet, NoiseModel(0.0)).matrix, singlet.matrix)

    def test_full_noise(self, singlet):
        np.testing.assert_allclose(depolarize(singlet, NoiseModel(1.0)).matrix, np.eye(4) / 4)

    def test_singlet_fidelity(self, singlet):
        rho = depolarize(singlet, NoiseModel(0.2))
        assert fidelity(rho, phase_singlet(0.0)) == pytest.approx(0.85, abs=1e-12)

    def test_probability_range(self):
        with pytest.raises(ValueError):
            NoiseModel(1.5)


class TestTwirlGroup:
    def test_twelve_unitary_elements(self):
        group = twirl_group()
        assert len(group) == 12
        assert all(is_unitary(b) for b in group.elements)

    def test_first_element_is_identity(self):
        np.testing.assert_allclose(twirl_group().elements[0], np.eye(4), atol=1e-15)

    def test_elements_are_read_only(self):
        with pytest.raises(ValueError):
            twirl_group().elements[1][0, 0] = 0

    def test_singlet_invariant(self):
        psi = phase_singlet(0.0).amplitudes
        for b in twirl_group().elements:
            assert abs(np.vdot(psi, b @ psi)) == pytest.approx(1.0, abs=1e-10)

    def test_permutes_other_bell_projectors(self):
        projectors = bell_projectors()
        others = projectors[1:]
        for b in twirl_group().elements:
            for proj in others:
                image = b @ proj @ b.conj().T
                matches = [np.max(np.abs(image - q)) < 1e-10 for q in others]
                assert sum(matches) == 1

    def test_all_three_projectors_reached(self):
        """Averaging over the group mixes psi+, phi- and phi+ evenly."""
        weights = twirl(DensityMatrix(bell_projectors()[1]))
        np.testing.assert_allclose(weights.as_tuple(), [0, 1 / 3, 1 / 3, 1 / 3], atol=1e-12)


class TestBellWeights:
    def test_singlet(self, singlet):
        weights, residual = bell_weights(singlet)
        np.testing.assert_allclose(weights.as_tuple(), [1, 0, 0, 0], atol=1e-15)
        assert residual == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("phi", [0.3, 1.0, 2.2])
    def test_phase_singlet(self, phi):
        weights, residual = bell_weights(DensityMatrix.from_pure(phase_singlet(phi)))
        expected = [math.cos(phi / 2) ** 2, math.sin(phi / 2) ** 2, 0, 0]
        np.testing.assert_allclose(weights.as_tuple(), expected, atol=1e-12)
        assert residual == pytest.approx(math.sqrt(2) * abs(math.sin(phi)) / 2, abs=1e-12)

    def test_maximally_mixed(self):
        weights, residual = bell_weights(DensityMatrix.maximally_mixed(2))
        np.testing.assert_allclose(weights.as_tuple(), [0.25] * 4, atol=1e-15)
        assert residual < 1e-15


class TestTwirl:
    def test_maximally_mixed(self):
        weights = twirl(DensityMatrix.maximally_mixed(2))
        np.testing.assert_allclose(weights.as_tuple(), [0.25] * 4, atol=1e-12)

    def test_worked_example(self):
        weights = twirl(noisy_phase_pair(0.2, math.pi / 3))
        assert weights.w_psi_minus == pytest.approx(0.65, abs=1e-12)
        for w in weights.as_tuple()[1:]:
            assert w == pytest.approx(0.116667, abs=1e-6)

    def test_closed_form_grid(self):
        worst = 0.0
        for p, phi in _grid():
            averaged = twirl_average(noisy_phase_pair(p, phi))
            closed = twirl_closed_form(p, phi).to_density()
            worst = max(worst, float(np.max(np.abs(averaged.matrix - closed.matrix))))
        assert worst < 1e-10

    def test_fidelity_formula_grid(self):
        for p, phi in _grid():
            rho = noisy_phase_pair(p, phi)
            direct = fidelity(rho, phase_singlet(0.0))
            assert abs(direct - singlet_fidelity(p, phi)) < 1e-12

    def test_singlet_weight_preserved(self, rng):
        for _ in range(20):
            a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
            rho = DensityMatrix(a @ a.conj().T / np.trace(a @ a.conj().T))
            assert twirl(rho).fidelity == pytest.approx(fidelity(rho, phase_singlet(0.0)), abs=1e-10)

    def test_idempotent(self):
        weights = twirl(noisy_phase_pair(0.3, 1.1))
        again = twirl(weights.to_density())
        np.testing.assert_allclose(again.as_tuple(), weights.as_tuple(), atol=1e-12)

    def test_output_is_valid_state(self):
        assert validate_density(twirl_average(noisy_phase_pair(0.1, 0.4))).passed

    def test_residual_guard(self, monkeypatch):
        import qcs_sim.channels as channels

        monkeypatch.setattr(channels, "twirl_average", lambda rho: rho)
        with pytest.raises(InvariantError):
            channels.twirl(DensityMatrix.from_pure(phase_singlet(1.0)))

    def test_sampled_twirl_matches_average(self, rng):
        """Averaging the sampled element over many draws recovers the full twirl."""
        rho = noisy_phase_pair(0.1, 0.9)
        draws = 12_000
        acc = np.zeros((4, 4), dtype=complex)
        counts = np.zeros(12, dtype=int)
        for _ in range(draws):
            state, index = twirl_sample(rho, rng)
            acc += state.matrix
            counts[index] += 1
        assert counts.min() > 0.8 * draws / 12
        np.testing.assert_allclose(acc / draws, twirl_average(rho).matrix, atol=0.02)


class TestWerner:
    def test_pure_singlet(self, singlet):
        np.testing.assert_allclose(werner_from_fidelity(1.0).matrix, singlet.matrix, atol=1e-15)

    def test_fully_mixed(self):
        np.testing.assert_allclose(werner_from_fidelity(0.25).matrix, np.eye(4) / 4, atol=1e-15)

    def test_eigenvalues(self):
        evals = werner_from_fidelity(0.9).eigenvalues()
        np.testing.assert_allclose(evals, [1 / 30, 1 / 30, 1 / 30, 0.9], atol=1e-12)

    def test_lambda(self):
        assert werner_lambda(1.0) == pytest.approx(1.0)
        assert werner_lambda(0.25) == pytest.approx(0.0)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            werner_from_fidelity(1.2)

    def test_mixture_matches_werner(self):
        mixed = bell_diagonal_mixture([0.7, 0.1, 0.1, 0.1])
        np.testing.assert_allclose(mixed.matrix, werner_from_fidelity(0.7).matrix, atol=1e-15)
