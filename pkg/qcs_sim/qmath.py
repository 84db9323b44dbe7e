"""
Dense complex linear algebra for systems of one to four qubits.

Qubit 0 is the highest-order tensor factor everywhere: the basis index of
|q0 q1 ... q_{k-1}> is the binary number q0 q1 ... q_{k-1}. A pair is stored as
(Alice = qubit 0, Bob = qubit 1); two pairs during a purification round are
(A1, B1, A2, B2).
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Union

import numpy as np

from qcs_sim.errors import InvariantError, NumericalDegeneracyError

logger = logging.getLogger(__name__)

MAX_QUBITS = 4
MAX_DIM = 2 ** MAX_QUBITS
ALLOWED_DIMS = (2, 4, 8, 16)

UNITARITY_TOL = 1e-10
PROJECTOR_TOL = 1e-10
PSD_TOL = 1e-10
IMAG_TOL = 1e-12
MIN_BRANCH_PROB = 1e-15

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)

KET_0 = np.array([1, 0], dtype=complex)
KET_1 = np.array([0, 1], dtype=complex)
KET_PLUS = np.array([1, 1], dtype=complex) / np.sqrt(2)
KET_MINUS = np.array([1, -1], dtype=complex) / np.sqrt(2)

Z_BASIS = [np.outer(KET_0, KET_0.conj()), np.outer(KET_1, KET_1.conj())]
PM_BASIS = [np.outer(KET_PLUS, KET_PLUS.conj()), np.outer(KET_MINUS, KET_MINUS.conj())]


def _check_dim(dim: int) -> int:
    if dim not in ALLOWED_DIMS:
        raise ValueError(f"Dimension {dim} is not a power of two in {ALLOWED_DIMS}")
    return int(np.log2(dim))


def as_square_matrix(matrix) -> np.ndarray:
    """Coerce to a complex square matrix of an allowed dimension."""
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {m.shape}")
    _check_dim(m.shape[0])
    if not np.all(np.isfinite(m)):
        raise ValueError("Matrix contains NaN or Inf entries")
    return m


class PureState:
    """
    A normalized ket.

    Args:
        amplitudes: Complex amplitudes in computational-basis order
        validate (bool, optional): Check normalization to 1e-12. Defaults to True.
    """

    NORM_TOL = 1e-12

    def __init__(self, amplitudes, validate: bool = True):
        vec = np.asarray(amplitudes, dtype=complex).reshape(-1)
        self.num_qubits = _check_dim(vec.shape[0])
        if not np.all(np.isfinite(vec)):
            raise ValueError("State contains NaN or Inf amplitudes")
        if validate:
            norm = float(np.sum(np.abs(vec) ** 2))
            if abs(norm - 1.0) > self.NORM_TOL:
                raise ValueError(f"State is not normalized: sum |a|^2 = {norm!r}")
        self.amplitudes = vec

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def overlap(self, other: "PureState") -> complex:
        """<self|other>"""
        if other.dim != self.dim:
            raise ValueError(f"Dimension mismatch: {self.dim} vs {other.dim}")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def __repr__(self):
        return f"PureState(num_qubits={self.num_qubits}, amplitudes={self.amplitudes!r})"


class DensityMatrix:
    """
    A density matrix over 1-4 qubits.

    Construction only checks shape and finiteness; use validate_density for
    the Hermiticity, trace and positivity diagnostics.
    """

    def __init__(self, matrix):
        self.matrix = as_square_matrix(matrix)
        self.num_qubits = _check_dim(self.matrix.shape[0])

    @classmethod
    def from_pure(cls, psi: PureState) -> "DensityMatrix":
        return cls(np.outer(psi.amplitudes, psi.amplitudes.conj()))

    @classmethod
    def maximally_mixed(cls, num_qubits: int) -> "DensityMatrix":
        dim = 2 ** num_qubits
        return cls(np.eye(dim, dtype=complex) / dim)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the Hermitian part, ascending."""
        herm = 0.5 * (self.matrix + self.matrix.conj().T)
        return np.linalg.eigvalsh(herm)

    def __repr__(self):
        return f"DensityMatrix(num_qubits={self.num_qubits})"


@dataclass
class DensityDiagnostics:
    """Report produced by validate_density."""

    hermiticity_residual: float
    trace_deviation: float
    min_eigenvalue: float
    tol: float
    hermitian_ok: bool
    trace_ok: bool
    psd_ok: bool

    @property
    def passed(self) -> bool:
        return self.hermitian_ok and self.trace_ok and self.psd_ok

    def to_dict(self):
        return {
            "hermiticity_residual": self.hermiticity_residual,
            "trace_deviation": self.trace_deviation,
            "min_eigenvalue": self.min_eigenvalue,
            "tol": self.tol,
            "hermitian_ok": self.hermitian_ok,
            "trace_ok": self.trace_ok,
            "psd_ok": self.psd_ok,
            "passed": self.passed,
        }


class MeasurementResult(NamedTuple):
    outcome: int
    post_state: DensityMatrix
    prob: float


StateLike = Union[DensityMatrix, PureState, np.ndarray]


def ket(bits: str) -> PureState:
    """Computational basis ket from a bit string, e.g. ket("10") = |1>_A |0>_B."""
    vec = np.zeros(2 ** len(bits), dtype=complex)
    vec[int(bits, 2)] = 1.0
    return PureState(vec)


def pure_density(psi: PureState) -> DensityMatrix:
    return DensityMatrix.from_pure(psi)


def unitarity_residual(u) -> float:
    """max |U^dagger U - I|"""
    m = np.asarray(u, dtype=complex)
    return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


def is_unitary(u, tol: float = UNITARITY_TOL) -> bool:
    return unitarity_residual(u) <= tol


def principal_sqrt(m) -> np.ndarray:
    """
    Principal square root of a Hermitian matrix.

    Negative eigenvalues map to +i*sqrt(|lambda|), i.e. eigenvalue phases in
    (-pi, pi] are halved. For an involutory Pauli P this gives
    (I + P)/2 + i (I - P)/2.
    """
    herm = np.asarray(m, dtype=complex)
    if np.max(np.abs(herm - herm.conj().T)) > UNITARITY_TOL:
        raise ValueError("principal_sqrt expects a Hermitian matrix")
    evals, evecs = np.linalg.eigh(herm)
    roots = np.emath.sqrt(evals.astype(float))
    return (evecs * roots) @ evecs.conj().T


def tensor_product(a: StateLike, b: StateLike) -> StateLike:
    """
    Kronecker product with `a` on the high-order qubits.

    Args:
        a: DensityMatrix, PureState or square ndarray
        b: Same kind as `a`

    Returns:
        Same kind as the inputs
    """
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        if a.dim * b.dim > MAX_DIM:
            raise ValueError(f"Tensor product dimension {a.dim * b.dim} exceeds {MAX_DIM}")
        return DensityMatrix(np.kron(a.matrix, b.matrix))
    if isinstance(a, PureState) and isinstance(b, PureState):
        if a.dim * b.dim > MAX_DIM:
            raise ValueError(f"Tensor product dimension {a.dim * b.dim} exceeds {MAX_DIM}")
        return PureState(np.kron(a.amplitudes, b.amplitudes), validate=False)
    if isinstance(a, np.ndarray) and isinstance(b, np.ndarray):
        ma, mb = as_square_matrix(a), as_square_matrix(b)
        if ma.shape[0] * mb.shape[0] > MAX_DIM:
            raise ValueError(
                f"Tensor product dimension {ma.shape[0] * mb.shape[0]} exceeds {MAX_DIM}"
            )
        return np.kron(ma, mb)
    raise TypeError(f"Cannot tensor {type(a).__name__} with {type(b).__name__}")


def _check_targets(targets: Sequence[int], num_qubits: int) -> List[int]:
    targets = [int(t) for t in targets]
    if not targets:
        raise ValueError("Target list is empty")
    if len(set(targets)) != len(targets):
        raise ValueError(f"Targets must be distinct, got {targets}")
    for t in targets:
        if t < 0 or t >= num_qubits:
            raise ValueError(f"Target qubit {t} out of range for {num_qubits} qubits")
    return targets


def embed_operator(op, targets: Sequence[int], num_qubits: int) -> np.ndarray:
    """
    Lift an operator on `targets` to the full register, identity elsewhere.

    The i-th qubit of `op` acts on register qubit targets[i].
    """
    op = np.asarray(op, dtype=complex)
    targets = _check_targets(targets, num_qubits)
    k = len(targets)
    if op.shape != (2 ** k, 2 ** k):
        raise ValueError(f"Operator shape {op.shape} does not match {k} target qubits")
    rest = [q for q in range(num_qubits) if q not in targets]
    order = targets + rest
    full = np.kron(op, np.eye(2 ** len(rest), dtype=complex))
    if order == list(range(num_qubits)):
        return full
    position = {q: i for i, q in enumerate(order)}
    axes = [position[q] for q in range(num_qubits)]
    axes += [num_qubits + position[q] for q in range(num_qubits)]
    tensor = full.reshape([2] * (2 * num_qubits)).transpose(axes)
    dim = 2 ** num_qubits
    return tensor.reshape(dim, dim)


def apply_unitary(rho: DensityMatrix, u, targets: Sequence[int]) -> DensityMatrix:
    """
    Conjugate `rho` by `u` acting on `targets`.

    Raises:
        ValueError: If `u` is not unitary within 1e-10 (residual reported)
    """
    u = np.asarray(u, dtype=complex)
    residual = unitarity_residual(u)
    if residual > UNITARITY_TOL:
        raise ValueError(f"Operator is not unitary: residual {residual:.3e}")
    full = embed_operator(u, targets, rho.num_qubits)
    if np.array_equal(full, np.eye(rho.dim)):
        return DensityMatrix(rho.matrix.copy())
    return DensityMatrix(full @ rho.matrix @ full.conj().T)


def partial_trace(rho: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    """
    Reduced state on `keep` (kept qubits stay in ascending order).
    """
    keep = sorted(set(int(q) for q in keep))
    if not keep:
        raise ValueError("partial_trace needs at least one qubit to keep")
    n = rho.num_qubits
    _check_targets(keep, n)
    if len(keep) == n:
        return DensityMatrix(rho.matrix.copy())

    tensor = rho.matrix.reshape([2] * (2 * n))
    remaining = n
    for q in sorted((q for q in range(n) if q not in keep), reverse=True):
        tensor = np.trace(tensor, axis1=q, axis2=q + remaining)
        remaining -= 1
    dim = 2 ** len(keep)
    return DensityMatrix(tensor.reshape(dim, dim))


def _check_projectors(projectors: Sequence[np.ndarray]) -> List[np.ndarray]:
    projs = [np.asarray(p, dtype=complex) for p in projectors]
    if not projs:
        raise ValueError("Projector list is empty")
    dim = projs[0].shape[0]
    total = np.zeros((dim, dim), dtype=complex)
    for i, p in enumerate(projs):
        if p.shape != (dim, dim):
            raise ValueError("Projectors must share one shape")
        for j, q in enumerate(projs):
            expected = p if i == j else np.zeros_like(p)
            if np.max(np.abs(p @ q - expected)) > PROJECTOR_TOL:
                raise ValueError(f"Projectors {i} and {j} are not orthogonal projectors")
        total += p
    if np.max(np.abs(total - np.eye(dim))) > PROJECTOR_TOL:
        raise ValueError("Projectors do not sum to the identity")
    return projs


def outcome_probabilities(rho: DensityMatrix, projectors: Sequence[np.ndarray], target: int) -> np.ndarray:
    """tr(P_i rho P_i) for each projector acting on `target`."""
    projs = _check_projectors(projectors)
    probs = []
    for p in projs:
        full = embed_operator(p, [target], rho.num_qubits)
        probs.append(float(np.real(np.trace(full @ rho.matrix))))
    return np.array(probs)


def projective_measure(rho: DensityMatrix, projectors: Sequence[np.ndarray], target: int,
                       rng: np.random.Generator) -> MeasurementResult:
    """
    Sample a projective measurement of one qubit.

    Args:
        rho: State to measure
        projectors: Complete orthogonal single-qubit projectors
        target: Qubit index
        rng: Seeded numpy Generator

    Returns:
        MeasurementResult(outcome, post_state, prob)

    Raises:
        NumericalDegeneracyError: If the sampled branch has probability < 1e-15
    """
    projs = _check_projectors(projectors)
    fulls = [embed_operator(p, [target], rho.num_qubits) for p in projs]
    probs = np.array([max(float(np.real(np.trace(f @ rho.matrix))), 0.0) for f in fulls])
    cumulative = np.cumsum(probs)
    draw = rng.random() * cumulative[-1]
    outcome = int(np.searchsorted(cumulative, draw, side="right"))
    outcome = min(outcome, len(projs) - 1)
    prob = float(probs[outcome])
    if prob < MIN_BRANCH_PROB:
        raise NumericalDegeneracyError(
            f"Sampled outcome {outcome} on qubit {target} has probability {prob:.3e}"
        )
    post = fulls[outcome] @ rho.matrix @ fulls[outcome] / prob
    return MeasurementResult(outcome, DensityMatrix(post), prob)


def fidelity(rho: DensityMatrix, psi: PureState) -> float:
    """<psi|rho|psi>, real within 1e-12."""
    if rho.dim != psi.dim:
        raise ValueError(f"Dimension mismatch: rho {rho.dim} vs psi {psi.dim}")
    value = complex(np.vdot(psi.amplitudes, rho.matrix @ psi.amplitudes))
    if abs(value.imag) > IMAG_TOL:
        raise InvariantError(f"Fidelity has imaginary residual {value.imag:.3e}")
    return float(np.clip(value.real, 0.0, 1.0))


def validate_density(rho: DensityMatrix, tol: float = 1e-12) -> DensityDiagnostics:
    """
    Report Hermiticity residual, trace deviation and the most negative
    eigenvalue. Positivity is judged at max(tol, 1e-10).
    """
    m = rho.matrix
    herm_residual = float(np.max(np.abs(m - m.conj().T)))
    trace_dev = float(abs(np.trace(m) - 1.0))
    min_eig = float(np.min(rho.eigenvalues()))
    return DensityDiagnostics(
        hermiticity_residual=herm_residual,
        trace_deviation=trace_dev,
        min_eigenvalue=min_eig,
        tol=tol,
        hermitian_ok=herm_residual <= tol,
        trace_ok=trace_dev <= tol,
        psd_ok=min_eig >= -max(tol, PSD_TOL),
    )


def require_valid(rho: DensityMatrix, tol: float = 1e-10, label: str = "state") -> DensityMatrix:
    """Raise InvariantError unless `rho` passes validate_density at `tol`."""
    diag = validate_density(rho, tol)
    if not diag.passed:
        logger.error(f"Invalid {label}: {diag.to_dict()}")
        raise InvariantError(f"Invalid {label}: {diag.to_dict()}")
    return rho
