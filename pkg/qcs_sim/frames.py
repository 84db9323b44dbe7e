"""
Basis-convention bookkeeping.

Each party relates its logical kets to the reference convention by
|sigma>^(party) = exp(-i theta_sigma) |sigma>^(ref). States are simulated in
reference coordinates; a gate a party defines in its own basis enters the
simulation conjugated by that party's frame map.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from qcs_sim.qmath import (
    UNITARITY_TOL,
    I2,
    PureState,
    as_square_matrix,
    tensor_product,
    unitarity_residual,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


def wrap_phase(phi: float) -> float:
    """Wrap into (-pi, pi]. Reporting only; stored phases stay unreduced."""
    wrapped = math.remainder(phi, TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


@dataclass(frozen=True)
class BasisFrame:
    """A party's phase convention (theta_0, theta_1) in radians."""

    theta0: float = 0.0
    theta1: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.theta0) and math.isfinite(self.theta1)):
            raise ValueError(f"Frame angles must be finite, got ({self.theta0}, {self.theta1})")

    def shifted(self, delta0: float, delta1: float) -> "BasisFrame":
        return BasisFrame(self.theta0 + delta0, self.theta1 + delta1)

    def reported(self):
        """Angles modulo 2*pi, for display."""
        return (self.theta0 % TWO_PI, self.theta1 % TWO_PI)


@dataclass(frozen=True)
class ClockModel:
    """
    A syntonized clock.

    Attributes:
        omega: Qubit transition angular frequency in rad/s
        offset: This clock's reading minus the reference time, in seconds
    """

    omega: float
    offset: float = 0.0

    def __post_init__(self):
        if not (self.omega > 0 and math.isfinite(self.omega)):
            raise ValueError(f"omega must be positive and finite, got {self.omega}")
        if not math.isfinite(self.offset):
            raise ValueError(f"Clock offset must be finite, got {self.offset}")

    def local_time(self, reference_time: float) -> float:
        return reference_time + self.offset

    def reference_time(self, local_time: float) -> float:
        return local_time - self.offset


@dataclass(frozen=True)
class PhaseSinglet:
    """(|10> - e^{i phi}|01>)/sqrt(2) in the local basis."""

    phi: float

    def __post_init__(self):
        if not math.isfinite(self.phi):
            raise ValueError(f"phi must be finite, got {self.phi}")

    def state(self) -> PureState:
        return phase_singlet(self.phi)


def reference_frame() -> BasisFrame:
    return BasisFrame(0.0, 0.0)


def frame_unitary(from_frame: BasisFrame, to_frame: BasisFrame) -> np.ndarray:
    """
    Diagonal unitary with entries exp(i (theta_sigma^from - theta_sigma^to)),
    taking the basis kets of `from_frame` to those of `to_frame`.
    """
    return np.diag([
        np.exp(1j * (from_frame.theta0 - to_frame.theta0)),
        np.exp(1j * (from_frame.theta1 - to_frame.theta1)),
    ])


def conjugate_to_frame(op, u_frame) -> np.ndarray:
    """
    Operator transformation O -> U O U^dagger.

    Raises:
        ValueError: If `u_frame` is not unitary or dimensions differ
    """
    op = as_square_matrix(op)
    u = as_square_matrix(u_frame)
    if op.shape != u.shape:
        raise ValueError(f"Dimension mismatch: op {op.shape} vs frame {u.shape}")
    residual = unitarity_residual(u)
    if residual > UNITARITY_TOL:
        raise ValueError(f"Frame operator is not unitary: residual {residual:.3e}")
    return u @ op @ u.conj().T


def local_to_reference(frame: BasisFrame) -> np.ndarray:
    """Map from a party's local coordinates to reference coordinates."""
    return frame_unitary(reference_frame(), frame)


def party_operator(op, frame: BasisFrame) -> np.ndarray:
    """A single-qubit gate defined in `frame`, written in reference coordinates."""
    return conjugate_to_frame(op, local_to_reference(frame))


def time_delay_operator(omega: float, delta_t: float) -> np.ndarray:
    """diag(1, exp(-i omega delta_t))"""
    return np.diag([1.0 + 0j, np.exp(-1j * omega * delta_t)])


def pair_delay_operator(omega: float, delta_t: float, party: str = "bob") -> np.ndarray:
    """
    Two-qubit operator carrying the execution-time offset of a pair.

    Bob's qubit precesses by T(delta_t); equivalently (up to a global phase)
    Alice's qubit is rewound by T(-delta_t). Either choice multiplies the
    |01> amplitude relative to |10> by exp(-i omega delta_t).
    """
    if party == "bob":
        return np.kron(I2, time_delay_operator(omega, delta_t))
    if party == "alice":
        return np.kron(time_delay_operator(omega, -delta_t), I2)
    raise ValueError(f"Unknown delay party: {party!r}")


def effective_phase(frame_a: BasisFrame, frame_b: BasisFrame, omega: float, delta_t: float) -> float:
    """
    phi = theta0^A + theta1^B - theta1^A - theta0^B - omega*delta_t, unreduced.
    """
    return (frame_a.theta0 + frame_b.theta1 - frame_a.theta1 - frame_b.theta0
            - omega * delta_t)


def phase_singlet(phi: float) -> PureState:
    """(|10> - e^{i phi}|01>)/sqrt(2) with Alice on qubit 0."""
    amps = np.zeros(4, dtype=complex)
    amps[0b10] = 1.0 / math.sqrt(2.0)
    amps[0b01] = -np.exp(1j * phi) / math.sqrt(2.0)
    return PureState(amps)


def pair_local_map(frame_a: BasisFrame, frame_b: BasisFrame) -> np.ndarray:
    """4x4 map from (Alice-local, Bob-local) coordinates to reference coordinates."""
    return tensor_product(local_to_reference(frame_a), local_to_reference(frame_b))


def density_in_local_basis(rho_matrix, frame_a: BasisFrame, frame_b: BasisFrame) -> np.ndarray:
    """Rewrite a pair density matrix from reference to local coordinates."""
    local_map = pair_local_map(frame_a, frame_b)
    return local_map.conj().T @ np.asarray(rho_matrix, dtype=complex) @ local_map


def local_singlet(frame_a: BasisFrame, frame_b: BasisFrame) -> PureState:
    """
    The singlet written in Alice's and Bob's local bases, expressed in
    reference coordinates. This is the state purification converges to.
    """
    return PureState(pair_local_map(frame_a, frame_b) @ phase_singlet(0.0).amplitudes)
