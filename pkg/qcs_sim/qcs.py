"""
Clock synchronization from shared pairs.

Alice measures her half of each pair in the |+-> basis and sends the outcomes
sigma_n to Bob. Bob lets his qubit precess for the elapsed time, removes the
sign Alice's outcome imprinted with Z^sigma_n, applies a Hadamard and measures
in Z. The fraction of |0> outcomes estimates cos(omega*t + epsilon).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from qcs_sim.errors import InvariantError, PreconditionError
from qcs_sim.frames import BasisFrame, party_operator, phase_singlet, reference_frame
from qcs_sim.purify import derive_generator, iterate_recurrence
from qcs_sim.qmath import (
    H,
    KET_MINUS,
    KET_PLUS,
    Z,
    Z_BASIS,
    DensityMatrix,
    MeasurementResult,
    apply_unitary,
    projective_measure,
)

logger = logging.getLogger(__name__)

# Outcome 0 is |->, outcome 1 is |+>; sigma = 1 means Bob applies Z.
ALICE_BASIS = [np.outer(KET_MINUS, KET_MINUS.conj()), np.outer(KET_PLUS, KET_PLUS.conj())]

PER_QUBIT_LIMIT = 1000
EXACT_DISTRIBUTION_LIMIT = 10 ** 6
QUADRATURE_TOL = 1e-12


@dataclass(frozen=True)
class QCSConfig:
    """
    One estimation run.

    Attributes:
        M: Number of pairs consumed
        epsilon: Residual phase on the pairs (ground truth, hidden from the estimator)
        omega: Qubit angular frequency in rad/s
        t_true: Elapsed time to estimate, in seconds
        fidelity: Werner fidelity of the consumed pairs
    """

    M: int
    epsilon: float = 0.0
    omega: float = 1.0
    t_true: float = 0.0
    fidelity: float = 1.0

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")
        if not (self.omega > 0 and math.isfinite(self.omega)):
            raise ValueError(f"omega must be positive and finite, got {self.omega}")
        if not (math.isfinite(self.epsilon) and math.isfinite(self.t_true)):
            raise ValueError("epsilon and t_true must be finite")
        if not (0.0 <= self.fidelity <= 1.0):
            raise ValueError(f"fidelity must be in [0, 1], got {self.fidelity}")

    @property
    def theta(self) -> float:
        return self.omega * self.t_true + self.epsilon

    @property
    def branch_ok(self) -> bool:
        """theta inside the principal arccos branch (0, pi)."""
        return 0.0 < self.theta < math.pi

    @property
    def p0(self) -> float:
        return werner_outcome_probability(self.fidelity, self.theta)


@dataclass
class EstimateReport:
    """
    Attributes:
        k: Count of |0> outcomes
        M: Pairs used
        x: (2k - M)/M
        t_hat: Estimated elapsed time in seconds
        stderr: Delta-method standard error of t_hat, 1/(omega*sqrt(M))
        x_stderr: Binomial standard error of x, sqrt(4 p0 p1 / M) at p0 = k/M
        x_stderr_bound: 1/sqrt(M), the sin(theta) <= 1 upper bound
    """

    k: int
    M: int
    x: float
    t_hat: float
    stderr: float
    x_stderr: float
    x_stderr_bound: float

    def __post_init__(self):
        if not (0 <= self.k <= self.M):
            raise InvariantError(f"k={self.k} outside [0, {self.M}]")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ErrorBudget:
    """
    Timing error after n purification rounds, in seconds.

    dt_total**2 == dt_sql**2 + dt_fidelity**2 is asserted on construction.
    """

    dt_sql: float
    dt_fidelity: float
    dt_total: float
    n_rounds: int
    F_n: float
    pairs_used: float
    N: float = 0.0
    F0: float = 1.0

    def __post_init__(self):
        lhs = self.dt_total ** 2
        rhs = self.dt_sql ** 2 + self.dt_fidelity ** 2
        if abs(lhs - rhs) > QUADRATURE_TOL * max(lhs, rhs, 1e-300):
            raise InvariantError(f"Budget quadrature violated: {lhs!r} vs {rhs!r}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RoundOptimization:
    n_star: int
    dt_star: float
    curve: List[ErrorBudget] = field(default_factory=list)

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame([b.to_dict() for b in self.curve])


@dataclass
class OutcomeDistribution:
    """
    Exact binomial law of k and its Gaussian approximant in x.

    Both are probability vectors over k = 0..M (x = (2k - M)/M).
    """

    M: int
    theta: float
    k: np.ndarray
    x: np.ndarray
    exact: np.ndarray
    gaussian: np.ndarray

    @property
    def mean_x(self) -> float:
        return float(np.sum(self.exact * self.x))

    @property
    def total_variation(self) -> float:
        return total_variation_distance(self.exact, self.gaussian)


@dataclass
class TrialStats:
    """Repeated estimation trials at one configuration."""

    config: QCSConfig
    t_hats: np.ndarray
    ks: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.t_hats))

    @property
    def std(self) -> float:
        return float(np.std(self.t_hats, ddof=1)) if len(self.t_hats) > 1 else 0.0

    @property
    def stderr(self) -> float:
        return self.std / math.sqrt(len(self.t_hats))

    @property
    def bias(self) -> float:
        return self.mean - self.config.t_true

    def to_dict(self) -> Dict[str, Any]:
        return {
            "M": self.config.M,
            "epsilon": self.config.epsilon,
            "omega": self.config.omega,
            "t_true": self.config.t_true,
            "fidelity": self.config.fidelity,
            "trials": int(len(self.t_hats)),
            "t_hat_mean": self.mean,
            "t_hat_std": self.std,
            "t_hat_stderr": self.stderr,
            "bias": self.bias,
            "sql": 1.0 / (self.config.omega * math.sqrt(self.config.M)),
        }


def werner_outcome_probability(F: float, theta: float) -> float:
    """p0 = (1 + lambda cos(theta))/2 with lambda = (4F - 1)/3."""
    lam = (4.0 * F - 1.0) / 3.0
    return 0.5 * (1.0 + lam * math.cos(theta))


def fidelity_from_phase_error(epsilon: float) -> float:
    """Overlap of a phase-offset singlet with the singlet, cos^2(epsilon/2)."""
    return math.cos(epsilon / 2.0) ** 2


def phase_error_from_fidelity(F: float) -> float:
    """Inverse of fidelity_from_phase_error on [0, pi]."""
    if not (0.0 <= F <= 1.0):
        raise ValueError(f"Fidelity must be in [0, 1], got {F}")
    return 2.0 * math.acos(math.sqrt(F))


def total_variation_distance(p: Sequence[float], q: Sequence[float]) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"Shape mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.sum(np.abs(p - q)))


def bob_evolution(omega: float, t: float) -> np.ndarray:
    """Free precession diag(exp(-i omega t/2), exp(i omega t/2))."""
    half = 0.5 * omega * t
    return np.diag([np.exp(-1j * half), np.exp(1j * half)])


def qcs_measure_pair(pair: DensityMatrix, omega: float, t: float, rng: np.random.Generator,
                     frame_a: Optional[BasisFrame] = None,
                     frame_b: Optional[BasisFrame] = None) -> Tuple[int, int]:
    """
    Run both parties' measurements on one pair.

    Alice measures qubit 0 in her |+-> basis; Bob's qubit precesses for `t`,
    then he applies Z^sigma and H in his own basis and measures in Z.

    Returns:
        Tuple[int, int]: (sigma, Bob's outcome)
    """
    alice = alice_qcs_measure(pair, rng, frame_a)
    bit = bob_qcs_measure(alice.post_state, alice.outcome, omega, t, rng, frame_b)
    return alice.outcome, bit


def alice_qcs_measure(pair: DensityMatrix, rng: np.random.Generator,
                      frame_a: Optional[BasisFrame] = None) -> MeasurementResult:
    """Alice's |+-> measurement on qubit 0; outcome 1 means |+>."""
    if pair.dim != 4:
        raise ValueError(f"QCS expects a two-qubit pair, got dim {pair.dim}")
    frame_a = frame_a or reference_frame()
    alice_basis = [party_operator(p, frame_a) for p in ALICE_BASIS]
    return projective_measure(pair, alice_basis, 0, rng)


def bob_qcs_measure(state: DensityMatrix, sigma: int, omega: float, precession: float,
                    rng: np.random.Generator, frame_b: Optional[BasisFrame] = None,
                    compensation: float = 0.0) -> int:
    """
    Bob's half: precession for `precession` seconds, a rewind by the known
    `compensation`, Z^sigma, H, then a Z measurement of qubit 1.
    """
    frame_b = frame_b or reference_frame()
    state = apply_unitary(state, bob_evolution(omega, precession), [1])
    if compensation:
        state = apply_unitary(state, bob_evolution(omega, -compensation), [1])
    if sigma:
        state = apply_unitary(state, party_operator(Z, frame_b), [1])
    state = apply_unitary(state, party_operator(H, frame_b), [1])
    return projective_measure(state, Z_BASIS, 1, rng).outcome


def _qcs_input_pair(cfg: QCSConfig) -> DensityMatrix:
    lam = (4.0 * cfg.fidelity - 1.0) / 3.0
    psi = phase_singlet(cfg.epsilon).amplitudes
    return DensityMatrix(lam * np.outer(psi, psi.conj()) + (1.0 - lam) * np.eye(4) / 4.0)


def estimate_time(k: int, M: int, omega: float, epsilon_assumed: float = 0.0) -> float:
    """t_hat = (arccos((2k - M)/M) - epsilon_assumed)/omega, principal branch."""
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if not (0 <= k <= M):
        raise ValueError(f"k={k} outside [0, {M}]")
    x = min(1.0, max(-1.0, (2.0 * k - M) / M))
    return (math.acos(x) - epsilon_assumed) / omega


def _report(k: int, cfg: QCSConfig, epsilon_assumed: float) -> EstimateReport:
    M = cfg.M
    p0_hat = k / M
    return EstimateReport(
        k=int(k),
        M=M,
        x=(2.0 * k - M) / M,
        t_hat=estimate_time(k, M, cfg.omega, epsilon_assumed),
        stderr=1.0 / (cfg.omega * math.sqrt(M)),
        x_stderr=math.sqrt(4.0 * p0_hat * (1.0 - p0_hat) / M),
        x_stderr_bound=1.0 / math.sqrt(M),
    )


def simulate_qcs_sampling(cfg: QCSConfig, rng: np.random.Generator, method: str = "auto",
                          epsilon_assumed: float = 0.0) -> EstimateReport:
    """
    Sample one estimation run.

    Args:
        cfg (QCSConfig): Run parameters
        rng (np.random.Generator): Seeded stream
        method (str): "binomial", "per-qubit", or "auto" (per-qubit up to
            1000 pairs, binomial above)
        epsilon_assumed (float): Phase the estimator subtracts; 0 by default
            since the residual phase is unknown to both parties

    Returns:
        EstimateReport
    """
    if method == "auto":
        method = "per-qubit" if cfg.M <= PER_QUBIT_LIMIT else "binomial"
    if not cfg.branch_ok:
        logger.warning(f"theta={cfg.theta:.6f} is outside (0, pi); arccos will alias")

    if method == "binomial":
        k = int(rng.binomial(cfg.M, cfg.p0))
    elif method == "per-qubit":
        pair = _qcs_input_pair(cfg)
        k = 0
        for _ in range(cfg.M):
            _, bit = qcs_measure_pair(pair, cfg.omega, cfg.t_true, rng)
            k += 1 - bit
    else:
        raise ValueError(f"Unknown sampling method: {method!r}")
    logger.debug(f"QCS sample ({method}): k={k} of M={cfg.M}")
    return _report(k, cfg, epsilon_assumed)


def outcome_distribution(M: int, theta: float) -> OutcomeDistribution:
    """
    Exact P_k = C(M,k) p0^k p1^(M-k) with p0 = cos^2(theta/2), plus the
    Gaussian in x centred at cos(theta) with variance 4 p0 p1 / M, discretized
    on the x grid (spacing 2/M).
    """
    if M < 1 or M > EXACT_DISTRIBUTION_LIMIT:
        raise ValueError(f"M must be in [1, {EXACT_DISTRIBUTION_LIMIT}], got {M}")
    p0 = math.cos(theta / 2.0) ** 2
    k = np.arange(M + 1)
    x = (2.0 * k - M) / M
    exact = np.exp(stats.binom.logpmf(k, M, p0))

    variance = 4.0 * p0 * (1.0 - p0) / M
    if variance > 0:
        gaussian = stats.norm.pdf(x, loc=math.cos(theta), scale=math.sqrt(variance)) * (2.0 / M)
    else:
        gaussian = np.zeros(M + 1)
        gaussian[int(np.argmin(np.abs(x - math.cos(theta))))] = 1.0
    return OutcomeDistribution(M=M, theta=theta, k=k, x=x, exact=exact, gaussian=gaussian)


def error_budget(N: float, n: int, F0: float, omega: float) -> ErrorBudget:
    """
    dt = (1/omega) sqrt(2^n/N + 1 - F_n).

    Raises:
        PreconditionError: If N < 2^n (no pair survives)
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if not (0.0 <= F0 <= 1.0):
        raise ValueError(f"F0 must be in [0, 1], got {F0}")
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega}")
    if N < 2 ** n:
        raise PreconditionError("N<2^n", N, f"{N:g} pairs cannot survive {n} rounds")
    F_n = iterate_recurrence(F0, n)[-1]
    dt_sql = math.sqrt(2 ** n / N) / omega
    dt_fidelity = math.sqrt(max(0.0, 1.0 - F_n)) / omega
    return ErrorBudget(
        dt_sql=dt_sql,
        dt_fidelity=dt_fidelity,
        dt_total=math.hypot(dt_sql, dt_fidelity),
        n_rounds=n,
        F_n=F_n,
        pairs_used=N / 2 ** n,
        N=N,
        F0=F0,
    )


def error_budget_curve(N: float, F0: float, omega: float, n_max: int = 20) -> List[ErrorBudget]:
    """error_budget for n = 0..min(n_max, floor(log2 N))."""
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")
    top = min(n_max, int(math.floor(math.log2(N)))) if N >= 1 else -1
    return [error_budget(N, n, F0, omega) for n in range(top + 1)]


def optimize_rounds(N: float, F0: float, omega: float, n_max: int = 20) -> RoundOptimization:
    """Round count minimizing dt_total; ties go to the smaller n."""
    curve = error_budget_curve(N, F0, omega, n_max)
    if not curve:
        raise PreconditionError("N<1", N, "No pairs to budget")
    best = curve[0]
    for budget in curve[1:]:
        if budget.dt_total < best.dt_total:
            best = budget
    logger.debug(f"Optimal rounds for N={N:g}, F0={F0}: n*={best.n_rounds}")
    return RoundOptimization(n_star=best.n_rounds, dt_star=best.dt_total, curve=curve)


def optimized_budget_vs_pairs(pair_counts: Sequence[float], F0: float, omega: float,
                              n_max: int = 20) -> pd.DataFrame:
    """Optimal round count and timing error for each N."""
    rows = []
    for N in pair_counts:
        opt = optimize_rounds(N, F0, omega, n_max)
        best = opt.curve[opt.n_star]
        rows.append({
            "N": N,
            "F0": F0,
            "n_star": opt.n_star,
            "F_n": best.F_n,
            "dt_sql": best.dt_sql,
            "dt_fidelity": best.dt_fidelity,
            "dt_total": opt.dt_star,
        })
    return pd.DataFrame(rows)


def run_trials(cfg: QCSConfig, trials: int, seed: int, method: str = "auto",
               epsilon_assumed: float = 0.0, workers: int = 1) -> TrialStats:
    """
    Repeat simulate_qcs_sampling with streams derived from (seed, trial index).

    Threaded execution returns the same arrays as sequential execution.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")

    def one(i: int) -> EstimateReport:
        return simulate_qcs_sampling(cfg, derive_generator(seed, i), method, epsilon_assumed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one, range(trials)))
    else:
        reports = [one(i) for i in range(trials)]
    return TrialStats(
        config=cfg,
        t_hats=np.array([r.t_hat for r in reports]),
        ks=np.array([r.k for r in reports]),
    )
