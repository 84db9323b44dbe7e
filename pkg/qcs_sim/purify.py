"""
BBPSSW entanglement purification.

Pairs are stored in reference coordinates with Alice on qubit 0 and Bob on
qubit 1. Every gate a party applies is defined in that party's own basis and
conjugated into reference coordinates, so a run in mismatched frames purifies
towards the singlet written in the parties' local bases.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from qcs_sim.channels import twirl_group, werner_from_fidelity
from qcs_sim.errors import ExhaustionError
from qcs_sim.frames import (
    BasisFrame,
    conjugate_to_frame,
    local_singlet,
    local_to_reference,
    party_operator,
    reference_frame,
)
from qcs_sim.qmath import (
    CNOT,
    I2,
    Y,
    Z_BASIS,
    DensityMatrix,
    PureState,
    embed_operator,
    fidelity,
    partial_trace,
    projective_measure,
    require_valid,
    tensor_product,
    validate_density,
)

logger = logging.getLogger(__name__)

ANALYTIC = "analytic"
MONTECARLO = "montecarlo"
MODES = (ANALYTIC, MONTECARLO)

IDEAL_YIELD = "ideal"
REALISTIC_YIELD = "realistic"
YIELD_CONVENTIONS = (IDEAL_YIELD, REALISTIC_YIELD)

# Domain tags keep the rotation and measurement streams disjoint.
_ROTATION_STREAM = 0
_MEASUREMENT_STREAM = 1


def recurrence_step(F: float) -> Tuple[float, float]:
    """
    One BBPSSW round on Werner inputs.

    Args:
        F (float): Input singlet fidelity in [0, 1]

    Returns:
        Tuple[float, float]: (output fidelity, success probability D)
    """
    if not (0.0 <= F <= 1.0):
        raise ValueError(f"Fidelity must be in [0, 1], got {F}")
    e = 1.0 - F
    success_prob = F * F + 2.0 * F * e / 3.0 + 5.0 * e * e / 9.0
    return (F * F + e * e / 9.0) / success_prob, success_prob


def iterate_recurrence(F0: float, rounds: int) -> List[float]:
    """[F_0, F_1, ..., F_rounds]"""
    history = [F0]
    for _ in range(rounds):
        history.append(recurrence_step(history[-1])[0])
    return history


def derive_generator(master_seed: int, *key: int) -> np.random.Generator:
    """Independent stream for (master_seed, key...), stable across platforms."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)


def rotation_choices(seed: int, round_index: int, count: int) -> np.ndarray:
    """
    Predecided twirl element indices for one round, one per pair.

    Both parties hold `seed`, so both derive the same list without further
    communication.
    """
    rng = derive_generator(seed, _ROTATION_STREAM, round_index)
    return rng.integers(len(twirl_group()), size=count)


@dataclass(frozen=True)
class PurificationContext:
    """
    The parties' local conventions.

    Attributes:
        frame_a: Alice's basis frame
        frame_b: Bob's basis frame
    """

    frame_a: BasisFrame = field(default_factory=reference_frame)
    frame_b: BasisFrame = field(default_factory=reference_frame)

    @property
    def target(self) -> PureState:
        """The local-basis singlet the protocol converges to."""
        return local_singlet(self.frame_a, self.frame_b)

    def pair_fidelity(self, pair: DensityMatrix) -> float:
        return fidelity(pair, self.target)


class _RoundOperators(NamedTuple):
    twirl: Tuple[np.ndarray, ...]
    bob_flip: np.ndarray
    bilateral_cnot: np.ndarray


@lru_cache(maxsize=64)
def _round_operators(frame_a: BasisFrame, frame_b: BasisFrame) -> _RoundOperators:
    group = twirl_group()
    twirl = tuple(
        np.kron(party_operator(u, frame_a), party_operator(u, frame_b)) for u in group.local
    )
    bob_flip = np.kron(I2, party_operator(Y, frame_b))
    d_a = local_to_reference(frame_a)
    d_b = local_to_reference(frame_b)
    cnot_a = conjugate_to_frame(CNOT, np.kron(d_a, d_a))
    cnot_b = conjugate_to_frame(CNOT, np.kron(d_b, d_b))
    bilateral = embed_operator(cnot_a, [0, 2], 4) @ embed_operator(cnot_b, [1, 3], 4)
    return _RoundOperators(twirl=twirl, bob_flip=bob_flip, bilateral_cnot=bilateral)


class RoundOutcome(NamedTuple):
    """
    Result of one BBPSSW attempt.

    `pair` is None on failure. `alice_bit`/`bob_bit` are the target-qubit
    outcomes the parties exchange; `success_prob` is the exact probability of
    coinciding outcomes for the sampled rotations.
    """

    success: bool
    pair: Optional[DensityMatrix]
    alice_bit: int
    bob_bit: int
    success_prob: float
    rotations: Tuple[int, int]


def _check_input_pair(pair: DensityMatrix, label: str) -> None:
    if pair.dim != 4:
        raise ValueError(f"{label} must be a two-qubit state, got dim {pair.dim}")
    diag = validate_density(pair, tol=1e-10)
    if not diag.passed:
        raise ValueError(f"{label} is not a valid density matrix: {diag.to_dict()}")


def bbpssw_round_mc(pair1: DensityMatrix, pair2: DensityMatrix, frame_a: BasisFrame,
                    frame_b: BasisFrame, rng: np.random.Generator,
                    rotations: Optional[Sequence[int]] = None) -> RoundOutcome:
    """
    One purification attempt on two pairs.

    Each pair gets one bilateral twirl element, Bob flips both his qubits
    with sigma_y (psi- -> phi+), both parties apply CNOT from their pair-1
    qubit onto their pair-2 qubit, and the pair-2 qubits are measured in Z.
    On coinciding outcomes Bob undoes the flip and the kept pair is returned.

    Args:
        pair1: Kept pair (Alice qubit 0, Bob qubit 1)
        pair2: Sacrificed pair
        frame_a: Alice's frame
        frame_b: Bob's frame
        rng: Stream for the measurements (and the rotations if not given)
        rotations (Sequence[int], optional): Predecided twirl element indices
            for (pair1, pair2)

    Returns:
        RoundOutcome
    """
    _check_input_pair(pair1, "pair1")
    _check_input_pair(pair2, "pair2")
    ops = _round_operators(frame_a, frame_b)
    if rotations is None:
        rotations = rng.integers(len(ops.twirl), size=2)
    r1, r2 = int(rotations[0]), int(rotations[1])

    pre1 = ops.bob_flip @ ops.twirl[r1]
    pre2 = ops.bob_flip @ ops.twirl[r2]
    m1 = pre1 @ pair1.matrix @ pre1.conj().T
    m2 = pre2 @ pair2.matrix @ pre2.conj().T
    joint = tensor_product(m1, m2)
    joint = ops.bilateral_cnot @ joint @ ops.bilateral_cnot.conj().T
    state = DensityMatrix(joint)

    p_equal = 0.0
    for bit in (0, 1):
        proj = embed_operator(np.kron(Z_BASIS[bit], Z_BASIS[bit]), [2, 3], 4)
        p_equal += float(np.real(np.trace(proj @ joint)))

    alice = projective_measure(state, Z_BASIS, 2, rng)
    bob = projective_measure(alice.post_state, Z_BASIS, 3, rng)
    if alice.outcome != bob.outcome:
        return RoundOutcome(False, None, alice.outcome, bob.outcome, p_equal, (r1, r2))

    kept = partial_trace(bob.post_state, [0, 1]).matrix
    kept = ops.bob_flip @ kept @ ops.bob_flip.conj().T
    kept = 0.5 * (kept + kept.conj().T)
    kept = DensityMatrix(kept / np.real(np.trace(kept)))
    require_valid(kept, tol=1e-10, label="purified pair")
    return RoundOutcome(True, kept, alice.outcome, bob.outcome, p_equal, (r1, r2))


@dataclass
class PairEnsemble:
    """
    Shared pairs, either as a (fidelity, count) summary or as explicit states.

    Attributes:
        mode: "analytic" or "montecarlo"
        fidelity: Werner fidelity (analytic mode)
        count: Real-valued pair count (analytic mode)
        pairs: Two-qubit density matrices (montecarlo mode)
    """

    mode: str
    fidelity: float = 1.0
    count: float = 0.0
    pairs: List[DensityMatrix] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"Unknown ensemble mode: {self.mode!r}")
        if self.mode == ANALYTIC:
            if not (0.0 <= self.fidelity <= 1.0):
                raise ValueError(f"Fidelity must be in [0, 1], got {self.fidelity}")
            if self.count < 0:
                raise ValueError(f"Pair count must be non-negative, got {self.count}")
        else:
            for i, pair in enumerate(self.pairs):
                _check_input_pair(pair, f"pair {i}")

    @classmethod
    def analytic(cls, F: float, count: float) -> "PairEnsemble":
        return cls(mode=ANALYTIC, fidelity=float(F), count=float(count))

    @classmethod
    def montecarlo(cls, pairs: Sequence[DensityMatrix]) -> "PairEnsemble":
        return cls(mode=MONTECARLO, pairs=list(pairs))

    @classmethod
    def werner_copies(cls, F: float, count: int) -> "PairEnsemble":
        rho = werner_from_fidelity(F)
        return cls(mode=MONTECARLO, pairs=[DensityMatrix(rho.matrix.copy()) for _ in range(count)])

    def size(self) -> float:
        return self.count if self.mode == ANALYTIC else float(len(self.pairs))

    def mean_fidelity(self, context: Optional[PurificationContext] = None) -> float:
        if self.mode == ANALYTIC:
            return self.fidelity
        if not self.pairs:
            return float("nan")
        context = context or PurificationContext()
        return float(np.mean([context.pair_fidelity(p) for p in self.pairs]))


@dataclass
class RoundRecord:
    round: int
    fidelity: float
    pairs_remaining: float
    success_rate: float
    fidelity_stderr: float = 0.0
    leftover: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "round": self.round,
            "fidelity": self.fidelity,
            "fidelity_stderr": self.fidelity_stderr,
            "pairs_remaining": self.pairs_remaining,
            "success_rate": self.success_rate,
            "leftover": self.leftover,
        }


@dataclass
class PurificationTrajectory:
    """
    Per-round history of a purification schedule. Round 0 is the input.

    `final_ensemble` holds the surviving pairs. Odd pairs set aside during
    Monte Carlo rounds are kept in `set_aside` (and counted in each record);
    they skip purification but remain available to clock synchronization.
    """

    mode: str
    yield_convention: str = IDEAL_YIELD
    records: List[RoundRecord] = field(default_factory=list)
    final_ensemble: Optional[PairEnsemble] = None
    set_aside: List[DensityMatrix] = field(default_factory=list)

    def record(self, rec: RoundRecord) -> None:
        if self.records:
            last = self.records[-1]
            if rec.round != last.round + 1:
                raise ValueError(f"Rounds must be contiguous: {last.round} then {rec.round}")
            if rec.pairs_remaining > last.pairs_remaining:
                raise ValueError("pairs_remaining must be non-increasing")
        elif rec.round != 0:
            raise ValueError("Trajectory must start at round 0")
        self.records.append(rec)

    @property
    def rounds(self) -> int:
        return len(self.records) - 1

    @property
    def final_fidelity(self) -> float:
        return self.records[-1].fidelity

    @property
    def final_pairs(self) -> float:
        return self.records[-1].pairs_remaining

    def usable_pairs(self) -> List[DensityMatrix]:
        """Survivors followed by set-aside pairs (Monte Carlo only)."""
        survivors = self.final_ensemble.pairs if self.final_ensemble is not None else []
        return list(survivors) + list(self.set_aside)

    def fidelities(self) -> List[float]:
        return [r.fidelity for r in self.records]

    def to_dataframe(self) -> pd.DataFrame:
        df = pd.DataFrame([r.to_dict() for r in self.records])
        df.insert(0, "mode", self.mode)
        df["yield"] = self.yield_convention
        return df

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "yield": self.yield_convention,
            "records": [r.to_dict() for r in self.records],
        }


@dataclass
class MCRoundResult:
    """Survivors and the exchanged outcome bits of one Monte Carlo round."""

    survivors: List[DensityMatrix]
    outcomes: List[RoundOutcome]
    leftover: Optional[DensityMatrix]

    @property
    def attempts(self) -> int:
        return len(self.outcomes)

    @property
    def success_rate(self) -> float:
        if not self.outcomes:
            return float("nan")
        return sum(o.success for o in self.outcomes) / len(self.outcomes)


def run_mc_round(pairs: Sequence[DensityMatrix], context: PurificationContext, seed: int,
                 round_index: int, workers: int = 1,
                 measurement_seed: Optional[int] = None) -> MCRoundResult:
    """
    Pair up `pairs` in order and run bbpssw_round_mc on each couple.

    Couple k uses rotations from rotation_choices(seed, round_index, ...) at
    positions 2k, 2k+1 and a measurement stream derived from
    (measurement_seed, round_index, k); measurement_seed defaults to
    `seed`. With an odd count the last pair is set aside.

    Raises:
        ExhaustionError: If fewer than two pairs are available
    """
    if len(pairs) < 2:
        logger.error(f"Round {round_index}: only {len(pairs)} pair(s) left")
        raise ExhaustionError(f"Round {round_index} needs at least 2 pairs, have {len(pairs)}")
    couples = len(pairs) // 2
    leftover = pairs[-1] if len(pairs) % 2 else None
    if leftover is not None:
        logger.warning(f"Round {round_index}: odd pair count {len(pairs)}, setting one pair aside")
    choices = rotation_choices(seed, round_index, 2 * couples)
    if measurement_seed is None:
        measurement_seed = seed

    def attempt(k: int) -> RoundOutcome:
        rng = derive_generator(measurement_seed, _MEASUREMENT_STREAM, round_index, k)
        return bbpssw_round_mc(pairs[2 * k], pairs[2 * k + 1], context.frame_a, context.frame_b,
                               rng, rotations=(choices[2 * k], choices[2 * k + 1]))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(attempt, range(couples)))
    else:
        outcomes = [attempt(k) for k in range(couples)]

    survivors = [o.pair for o in outcomes if o.success]
    return MCRoundResult(survivors=survivors, outcomes=outcomes, leftover=leftover)


def _fidelity_stats(pairs: Sequence[DensityMatrix], context: PurificationContext) -> Tuple[float, float]:
    if not pairs:
        return float("nan"), float("nan")
    values = np.array([context.pair_fidelity(p) for p in pairs])
    stderr = float(np.std(values, ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(np.mean(values)), stderr


def _analytic_schedule(initial: PairEnsemble, rounds: int, yield_convention: str) -> PurificationTrajectory:
    F = initial.fidelity if initial.mode == ANALYTIC else initial.mean_fidelity()
    count = initial.size()
    if count < 2 ** rounds:
        logger.warning(f"{count:g} pairs cannot support {rounds} rounds (need {2 ** rounds})")
    trajectory = PurificationTrajectory(mode=ANALYTIC, yield_convention=yield_convention)
    trajectory.record(RoundRecord(round=0, fidelity=F, pairs_remaining=count, success_rate=1.0))
    for n in range(1, rounds + 1):
        F, success_prob = recurrence_step(F)
        if yield_convention == REALISTIC_YIELD:
            count = count * success_prob / 2.0
        else:
            count = count / 2.0
        trajectory.record(RoundRecord(round=n, fidelity=F, pairs_remaining=count,
                                      success_rate=success_prob))
        logger.debug(f"Analytic round {n}: F={F:.6f}, pairs={count:g}")
    trajectory.final_ensemble = PairEnsemble.analytic(F, count)
    return trajectory


def _montecarlo_schedule(initial: PairEnsemble, rounds: int, context: PurificationContext,
                         seed: int, workers: int) -> PurificationTrajectory:
    if initial.mode == ANALYTIC:
        pairs = PairEnsemble.werner_copies(initial.fidelity, int(round(initial.count))).pairs
    else:
        pairs = list(initial.pairs)
    trajectory = PurificationTrajectory(mode=MONTECARLO, yield_convention=REALISTIC_YIELD)
    mean, stderr = _fidelity_stats(pairs, context)
    trajectory.record(RoundRecord(round=0, fidelity=mean, pairs_remaining=len(pairs),
                                  success_rate=1.0, fidelity_stderr=stderr))
    for n in range(1, rounds + 1):
        result = run_mc_round(pairs, context, seed, n, workers)
        pairs = result.survivors
        if result.leftover is not None:
            trajectory.set_aside.append(result.leftover)
        mean, stderr = _fidelity_stats(pairs, context)
        trajectory.record(RoundRecord(round=n, fidelity=mean, pairs_remaining=len(pairs),
                                      success_rate=result.success_rate, fidelity_stderr=stderr,
                                      leftover=len(trajectory.set_aside)))
        logger.debug(f"Monte Carlo round {n}: {len(pairs)} survivors, F={mean:.6f}")
    trajectory.final_ensemble = PairEnsemble.montecarlo(pairs)
    return trajectory


def purify_schedule(initial: PairEnsemble, rounds: int, mode: Optional[str] = None,
                    context: Optional[PurificationContext] = None, seed: int = 0,
                    yield_convention: str = IDEAL_YIELD, workers: int = 1) -> PurificationTrajectory:
    """
    Run `rounds` purification rounds.

    Args:
        initial (PairEnsemble): Input pairs
        rounds (int): Number of rounds n >= 0
        mode (str, optional): "analytic" or "montecarlo"; defaults to the
            ensemble's own mode
        context (PurificationContext, optional): Parties' frames (Monte Carlo)
        seed (int): Shared rotation seed and master seed for measurement streams
        yield_convention (str): "ideal" (N/2^n) or "realistic" (times D per
            round); analytic mode only
        workers (int): Threads for Monte Carlo rounds

    Returns:
        PurificationTrajectory
    """
    if rounds < 0:
        raise ValueError(f"rounds must be >= 0, got {rounds}")
    mode = mode or initial.mode
    if mode not in MODES:
        raise ValueError(f"Unknown purification mode: {mode!r}")
    if yield_convention not in YIELD_CONVENTIONS:
        raise ValueError(f"Unknown yield convention: {yield_convention!r}")
    context = context or PurificationContext()

    logger.info(f"Starting {mode} purification: {initial.size():g} pairs, {rounds} rounds")
    try:
        if mode == ANALYTIC:
            trajectory = _analytic_schedule(initial, rounds, yield_convention)
        else:
            trajectory = _montecarlo_schedule(initial, rounds, context, seed, workers)
    except Exception as e:
        logger.error(f"Error during purification: {str(e)}")
        raise
    logger.info(f"Purification finished: F={trajectory.final_fidelity:.6f}, "
                f"pairs={trajectory.final_pairs:g}")
    return trajectory
