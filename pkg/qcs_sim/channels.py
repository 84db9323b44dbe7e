"""
Depolarizing channel, Bell-basis decomposition and the bilateral twirl.

Bell states are ordered (psi-, psi+, phi-, phi+) with
psi+- = (|10> +- |01>)/sqrt(2) and phi+- = (|00> +- |11>)/sqrt(2).
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

from qcs_sim.errors import InvariantError
from qcs_sim.frames import phase_singlet
from qcs_sim.qmath import (
    I2,
    X,
    Y,
    Z,
    DensityMatrix,
    PureState,
    principal_sqrt,
)

logger = logging.getLogger(__name__)

BELL_LABELS = ("psi_minus", "psi_plus", "phi_minus", "phi_plus")
TWIRL_RESIDUAL_LIMIT = 1e-8

_SQRT_HALF = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class NoiseModel:
    """Depolarizing probability p."""

    p: float

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"Noise probability must be in [0, 1], got {self.p}")


@dataclass(frozen=True)
class BellDiagonal:
    """Weights on the Bell projectors."""

    w_psi_minus: float
    w_psi_plus: float
    w_phi_minus: float
    w_phi_plus: float

    TOL = 1e-12

    def __post_init__(self):
        weights = self.as_tuple()
        if any(w < -self.TOL for w in weights):
            raise ValueError(f"Bell weights must be non-negative, got {weights}")
        if abs(sum(weights) - 1.0) > self.TOL:
            raise ValueError(f"Bell weights must sum to 1, got {sum(weights)!r}")

    @classmethod
    def from_werner(cls, F: float) -> "BellDiagonal":
        rest = (1.0 - F) / 3.0
        return cls(F, rest, rest, rest)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.w_psi_minus, self.w_psi_plus, self.w_phi_minus, self.w_phi_plus)

    @property
    def fidelity(self) -> float:
        return self.w_psi_minus

    def to_density(self) -> DensityMatrix:
        basis = bell_basis_matrix()
        return DensityMatrix((basis * np.array(self.as_tuple())) @ basis.conj().T)

    def to_dict(self):
        return dict(zip(BELL_LABELS, self.as_tuple()))


@dataclass(frozen=True)
class TwirlGroup:
    """
    The twelve bilateral rotations B_n = u_n (x) u_n.

    Attributes:
        names: Generator words in circuit order (first letter applied first)
        local: The single-qubit u_n each party applies
        elements: The 4x4 bilateral operators
    """

    names: Tuple[str, ...]
    local: Tuple[np.ndarray, ...]
    elements: Tuple[np.ndarray, ...]

    def __len__(self):
        return len(self.elements)


# Generator words in circuit order.
TWIRL_WORDS = ("I", "XY", "YZ", "ZX", "XYXY", "YZYZ", "ZXZX", "XZ", "XZXZ", "XX", "YY", "ZZ")


def bell_basis() -> List[PureState]:
    s = _SQRT_HALF
    return [
        PureState([0, -s, s, 0]),   # psi-
        PureState([0, s, s, 0]),    # psi+
        PureState([s, 0, 0, -s]),   # phi-
        PureState([s, 0, 0, s]),    # phi+
    ]


def bell_basis_matrix() -> np.ndarray:
    """Columns are the Bell states in BELL_LABELS order."""
    return np.column_stack([b.amplitudes for b in bell_basis()])


def bell_projectors() -> List[np.ndarray]:
    return [np.outer(b.amplitudes, b.amplitudes.conj()) for b in bell_basis()]


def singlet_fidelity(p: float, phi: float) -> float:
    """F = p/4 + (1-p) cos^2(phi/2)"""
    return p / 4.0 + (1.0 - p) * math.cos(phi / 2.0) ** 2


def werner_lambda(F: float) -> float:
    """Singlet visibility of a Werner state: rho = lambda |psi-><psi-| + (1-lambda) I/4."""
    return (4.0 * F - 1.0) / 3.0


def depolarize(rho: DensityMatrix, noise: NoiseModel) -> DensityMatrix:
    """(p/4) I + (1-p) rho"""
    if rho.dim != 4:
        raise ValueError(f"depolarize expects a two-qubit state, got dim {rho.dim}")
    p = noise.p
    return DensityMatrix(p / 4.0 * np.eye(4) + (1.0 - p) * rho.matrix)


def noisy_phase_pair(p: float, phi: float) -> DensityMatrix:
    """A phase-offset singlet sent through the depolarizing channel."""
    return depolarize(DensityMatrix.from_pure(phase_singlet(phi)), NoiseModel(p))


def _word_operator(word: str, roots) -> np.ndarray:
    u = np.eye(2, dtype=complex)
    for letter in word:
        u = roots[letter] @ u
    return u


@lru_cache(maxsize=1)
def twirl_group() -> TwirlGroup:
    """Build the twelve bilateral rotations from principal square roots of I, X, Y, Z."""
    roots = {
        "I": principal_sqrt(I2),
        "X": principal_sqrt(X),
        "Y": principal_sqrt(Y),
        "Z": principal_sqrt(Z),
    }
    local = []
    elements = []
    for word in TWIRL_WORDS:
        u = _word_operator(word, roots) if word != "I" else roots["I"]
        u.setflags(write=False)
        bilateral = np.kron(u, u)
        bilateral.setflags(write=False)
        local.append(u)
        elements.append(bilateral)
    logger.debug(f"Built twirl group with {len(elements)} elements")
    return TwirlGroup(names=TWIRL_WORDS, local=tuple(local), elements=tuple(elements))


def bell_weights(rho: DensityMatrix) -> Tuple[BellDiagonal, float]:
    """
    Diagonal of `rho` in the Bell basis plus the Frobenius norm of the
    discarded off-diagonal part.
    """
    if rho.dim != 4:
        raise ValueError(f"bell_weights expects a two-qubit state, got dim {rho.dim}")
    basis = bell_basis_matrix()
    in_bell = basis.conj().T @ rho.matrix @ basis
    diagonal = np.real(np.diag(in_bell)).copy()
    residual = float(np.linalg.norm(in_bell - np.diag(np.diag(in_bell))))
    return BellDiagonal(*(float(w) for w in diagonal)), residual


def twirl_average(rho: DensityMatrix) -> DensityMatrix:
    """(1/12) sum_n B_n rho B_n^dagger"""
    group = twirl_group()
    acc = np.zeros((4, 4), dtype=complex)
    for b in group.elements:
        acc += b @ rho.matrix @ b.conj().T
    return DensityMatrix(acc / len(group))


def twirl(rho: DensityMatrix) -> BellDiagonal:
    """
    Uniform average over the twelve bilateral rotations, returned as Bell
    weights.

    Raises:
        InvariantError: If the averaged state keeps an off-diagonal Bell
            residual above 1e-8
    """
    if rho.dim != 4:
        raise ValueError(f"twirl expects a two-qubit state, got dim {rho.dim}")
    weights, residual = bell_weights(twirl_average(rho))
    if residual > TWIRL_RESIDUAL_LIMIT:
        logger.error(f"Twirl left off-diagonal residual {residual:.3e}")
        raise InvariantError(f"Twirled state is not Bell-diagonal: residual {residual:.3e}")
    return weights


def twirl_sample(rho: DensityMatrix, rng: np.random.Generator) -> Tuple[DensityMatrix, int]:
    """Apply one uniformly drawn group element; returns (state, element index)."""
    group = twirl_group()
    index = int(rng.integers(len(group)))
    b = group.elements[index]
    return DensityMatrix(b @ rho.matrix @ b.conj().T), index


def twirl_closed_form(p: float, phi: float) -> BellDiagonal:
    """Bell weights of the twirled depolarized phase singlet."""
    F = singlet_fidelity(p, phi)
    rest = p / 4.0 + (1.0 - p) * math.sin(phi / 2.0) ** 2 / 3.0
    return BellDiagonal(F, rest, rest, 1.0 - F - 2.0 * rest)


def werner_from_fidelity(F: float) -> DensityMatrix:
    """F |psi-><psi-| + (1-F)/3 (I - |psi-><psi-|)"""
    if not (0.0 <= F <= 1.0):
        raise ValueError(f"Fidelity must be in [0, 1], got {F}")
    singlet = bell_projectors()[0]
    return DensityMatrix(F * singlet + (1.0 - F) / 3.0 * (np.eye(4) - singlet))


def bell_diagonal_from_werner(F: float) -> BellDiagonal:
    return BellDiagonal.from_werner(F)


def bell_diagonal_mixture(weights: Sequence[float]) -> DensityMatrix:
    return BellDiagonal(*weights).to_density()
