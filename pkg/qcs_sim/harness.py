"""
End-to-end protocol run.

Charlie distributes noisy singlets to Alice and Bob, who hold private basis
frames and unsynchronized (but syntonized) clocks. They purify over a
classical channel with latency and then run clock synchronization. The event
loop runs on the reference clock; parties only ever read their own clock.
"""

import heapq
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from qcs_sim.channels import NoiseModel, depolarize, singlet_fidelity
from qcs_sim.errors import ExhaustionError, InvariantError, PreconditionError, ProtocolOrderError
from qcs_sim.frames import (
    BasisFrame,
    ClockModel,
    effective_phase,
    local_singlet,
    pair_delay_operator,
    phase_singlet,
    reference_frame,
    wrap_phase,
)
from qcs_sim.purify import (
    ANALYTIC,
    IDEAL_YIELD,
    MODES,
    MONTECARLO,
    REALISTIC_YIELD,
    YIELD_CONVENTIONS,
    PairEnsemble,
    PurificationContext,
    PurificationTrajectory,
    RoundRecord,
    derive_generator,
    recurrence_step,
    run_mc_round,
)
from qcs_sim.qcs import (
    ErrorBudget,
    EstimateReport,
    QCSConfig,
    alice_qcs_measure,
    bob_qcs_measure,
    error_budget,
    estimate_time,
    optimize_rounds,
    werner_outcome_probability,
)
from qcs_sim.qmath import DensityMatrix, fidelity, require_valid

logger = logging.getLogger(__name__)

ALICE = "Alice"
BOB = "Bob"
CHARLIE = "Charlie"

DISTRIBUTING = "distributing"
PURIFYING = "purifying"
QCS_ALICE_MEASURED = "qcs-alice-measured"
DONE = "done"

_TRANSITIONS = {
    DISTRIBUTING: (PURIFYING, DONE),
    PURIFYING: (QCS_ALICE_MEASURED,),
    QCS_ALICE_MEASURED: (DONE,),
    DONE: (),
}

PAYLOAD_KINDS = ("rotation-seed", "purify-outcomes", "qcs-outcomes", "control")
FORBIDDEN_KEY_FRAGMENTS = ("theta", "offset", "frame", "clock", "phase", "time")

CHARLIE_STATE_TOL = 1e-12
DISTRIBUTED_FIDELITY_TOL = 1e-10

# Derived-stream tags under the scenario's master seed.
_SHARED_SEED_STREAM = 10
_LATENCY_STREAM = 11
_QCS_STREAM = 12
_NATURE_SEED_STREAM = 13


@dataclass
class Party:
    """
    One protocol participant. Holds its own frame and clock; the simulation
    never hands one party another party's fields.
    """

    id: str
    frame: BasisFrame
    clock: ClockModel
    phase: str = DISTRIBUTING

    def advance(self, to: str) -> None:
        if to not in _TRANSITIONS[self.phase]:
            raise ProtocolOrderError(f"{self.id} cannot move from {self.phase} to {to}")
        logger.debug(f"{self.id}: {self.phase} -> {to}")
        self.phase = to

    def require(self, *phases: str, action: str = "") -> None:
        if self.phase not in phases:
            raise ProtocolOrderError(
                f"{self.id} cannot {action or 'handle this event'} in phase {self.phase}"
            )

    def local_time(self, reference_time: float) -> float:
        return self.clock.local_time(reference_time)


@dataclass
class ClassicalMessage:
    sender: str
    receiver: str
    send_time: float
    payload: Dict[str, Any]
    deliver_time: float = 0.0

    def __post_init__(self):
        kind = self.payload.get("kind")
        if kind not in PAYLOAD_KINDS:
            raise ValueError(f"Unknown payload kind: {kind!r}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sender": self.sender,
            "receiver": self.receiver,
            "send_time": self.send_time,
            "deliver_time": self.deliver_time,
            "payload": self.payload,
        }


@dataclass(frozen=True)
class ChannelModel:
    """
    Attributes:
        latency: Fixed one-way classical latency in seconds
        jitter: Width of the uniform extra delay added per message, seconds
        p: Depolarizing probability of pair distribution
    """

    latency: float = 0.0
    jitter: float = 0.0
    p: float = 0.0

    def __post_init__(self):
        if self.latency < 0 or self.jitter < 0:
            raise ValueError(f"latency and jitter must be >= 0, got {self.latency}, {self.jitter}")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"p must be in [0, 1], got {self.p}")

    def sample_latency(self, rng: np.random.Generator) -> float:
        if self.jitter == 0:
            return self.latency
        return self.latency + float(rng.uniform(0.0, self.jitter))

    @property
    def max_latency(self) -> float:
        return self.latency + self.jitter


@dataclass(frozen=True)
class Scenario:
    """
    Everything needed to run the protocol once.

    Clock offsets are readings minus reference time; the execution-time
    offset is delta_t = offset_alice - offset_bob.

    The clock-synchronization instant is agreed before the run from public
    parameters only (`qcs_instant`); each party acts when its own clock
    reads it. Offsets must stay below `qcs_lead`.
    """

    N: int
    omega: float
    channel: ChannelModel = field(default_factory=ChannelModel)
    frame_alice: BasisFrame = field(default_factory=reference_frame)
    frame_bob: BasisFrame = field(default_factory=reference_frame)
    frame_charlie: BasisFrame = field(default_factory=reference_frame)
    offset_alice: float = 0.0
    offset_bob: float = 0.0
    rounds: Union[int, str] = 0
    seed: int = 0
    mode: str = MONTECARLO
    yield_convention: str = IDEAL_YIELD
    delay_party: str = "bob"
    qcs_lead: float = 0.1
    workers: int = 1

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        if not (self.omega > 0 and math.isfinite(self.omega)):
            raise ValueError(f"omega must be positive and finite, got {self.omega}")
        if self.rounds != "auto" and (not isinstance(self.rounds, int) or self.rounds < 0):
            raise ValueError(f"rounds must be a non-negative integer or 'auto', got {self.rounds!r}")
        if self.mode not in MODES:
            raise ValueError(f"Unknown mode: {self.mode!r}")
        if self.yield_convention not in YIELD_CONVENTIONS:
            raise ValueError(f"Unknown yield convention: {self.yield_convention!r}")
        if self.delay_party not in ("alice", "bob"):
            raise ValueError(f"delay_party must be 'alice' or 'bob', got {self.delay_party!r}")
        if self.qcs_lead <= 0:
            raise ValueError(f"qcs_lead must be positive, got {self.qcs_lead}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        for offset in (self.offset_alice, self.offset_bob):
            if not math.isfinite(offset):
                raise ValueError(f"Clock offsets must be finite, got {offset}")
            if abs(offset) >= self.qcs_lead:
                raise ValueError(f"Clock offsets must be smaller than qcs_lead={self.qcs_lead}, got {offset}")

    def qcs_instant(self, rounds: int) -> float:
        """
        Local clock reading at which both parties run clock synchronization.

        Built from the lead and the channel's latency bound, which leaves
        room for pair arrival, the seed message and every purification round.
        """
        return self.qcs_lead + (2 * rounds + 2) * self.channel.max_latency

    @property
    def delta_t(self) -> float:
        return self.offset_alice - self.offset_bob

    @property
    def phi(self) -> float:
        return effective_phase(self.frame_alice, self.frame_bob, self.omega, self.delta_t)

    @property
    def nominal_fidelity(self) -> float:
        return singlet_fidelity(self.channel.p, self.phi)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def secrets(self) -> List[float]:
        """Values that must never appear in a classical payload."""
        values = [self.offset_alice, self.offset_bob, self.delta_t, self.omega * self.delta_t,
                  self.phi, wrap_phase(self.phi)]
        for frame in (self.frame_alice, self.frame_bob, self.frame_charlie):
            values.extend([frame.theta0, frame.theta1, *frame.reported()])
        return [v for v in values if v != 0.0]


@dataclass(order=True)
class Event:
    time: float
    seq: int
    party: str = field(compare=False)
    kind: str = field(compare=False)
    data: Dict[str, Any] = field(default_factory=dict, compare=False)


class EventQueue:
    """Min-heap on (time, insertion order)."""

    def __init__(self):
        self._heap: List[Event] = []
        self._seq = 0

    def push(self, time: float, party: str, kind: str, **data) -> Event:
        event = Event(time=float(time), seq=self._seq, party=party, kind=kind, data=data)
        self._seq += 1
        heapq.heappush(self._heap, event)
        return event

    def pop(self) -> Event:
        return heapq.heappop(self._heap)

    def __len__(self):
        return len(self._heap)

    def __bool__(self):
        return bool(self._heap)


def step_events(queue: EventQueue, handler: Callable[[Event], None]) -> Event:
    """Pop the earliest event, hand it to `handler` and return it."""
    if not queue:
        raise ValueError("Event queue is empty")
    event = queue.pop()
    handler(event)
    return event


@dataclass
class RunReport:
    trajectory: PurificationTrajectory
    estimate: EstimateReport
    budget: ErrorBudget
    estimated_offset: float
    true_offset: float
    phi: float
    nominal_fidelity: float
    rounds: int
    mode: str
    messages: List[ClassicalMessage] = field(default_factory=list)
    events: List[Dict[str, Any]] = field(default_factory=list)
    qcs_timing: Dict[str, float] = field(default_factory=dict)

    @property
    def error(self) -> float:
        return self.estimated_offset - self.true_offset

    def within_budget(self, sigmas: float = 3.0) -> bool:
        return abs(self.error) <= sigmas * self.budget.dt_total

    def summary(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "rounds": self.rounds,
            "phi": self.phi,
            "phi_wrapped": wrap_phase(self.phi),
            "nominal_fidelity": self.nominal_fidelity,
            "final_fidelity": self.trajectory.final_fidelity,
            "pairs_used": self.estimate.M,
            "k": self.estimate.k,
            "estimated_offset": self.estimated_offset,
            "true_offset": self.true_offset,
            "error": self.error,
            "dt_sql": self.budget.dt_sql,
            "dt_fidelity": self.budget.dt_fidelity,
            "dt_total": self.budget.dt_total,
            "within_3_dt_total": self.within_budget(),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "summary": self.summary(),
            "trajectory": self.trajectory.to_dict(),
            "estimate": self.estimate.to_dict(),
            "budget": self.budget.to_dict(),
            "qcs_timing": self.qcs_timing,
            "messages": [m.to_dict() for m in self.messages],
            "events": self.events,
        }


def check_preconditions(scenario: Scenario) -> Dict[str, float]:
    """
    Refuse scenarios purification cannot rescue.

    Returns:
        Dict[str, float]: phi, phi_wrapped and the nominal fidelity F0

    Raises:
        PreconditionError: If F0 <= 0.5 or |phi| >= pi/2 (phi taken mod 2pi)
    """
    phi = scenario.phi
    wrapped = wrap_phase(phi)
    F0 = scenario.nominal_fidelity
    # |phi| >= pi/2 already forces F0 <= 0.5; report the phase bound first.
    if abs(wrapped) >= math.pi / 2:
        raise PreconditionError("|phi|>=pi/2", wrapped,
                                f"Effective phase {wrapped:.6f} is outside (-pi/2, pi/2)")
    if F0 <= 0.5:
        raise PreconditionError("F<=0.5", F0, f"Initial fidelity {F0:.6f} does not exceed 0.5")
    return {"phi": phi, "phi_wrapped": wrapped, "F0": F0}


def _iter_payload(value: Any, path: str):
    if isinstance(value, dict):
        for key, item in value.items():
            yield from _iter_payload(item, f"{path}.{key}" if path else str(key))
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _iter_payload(item, f"{path}[{i}]")
    else:
        yield path, value


def scan_message_log(messages: Sequence[ClassicalMessage], secrets: Sequence[float],
                     rel_tol: float = 1e-9) -> List[Dict[str, Any]]:
    """
    Look for frame or clock information in message payloads.

    Flags keys naming frames, clocks, offsets, phases or times, and every
    float value: the protocol only ever sends integers (bits, seeds, counts,
    round numbers), so any float is a measured quantity such as a clock
    reading. Floats matching one of `secrets` are reported as such.

    Returns:
        List[Dict[str, Any]]: One finding per offending payload entry
    """
    findings = []
    for index, message in enumerate(messages):
        for path, value in _iter_payload(message.payload, ""):
            lowered = path.lower()
            reason = next((f"key contains '{fragment}'" for fragment in FORBIDDEN_KEY_FRAGMENTS
                           if fragment in lowered), None)
            if reason is None and isinstance(value, (float, np.floating)):
                if any(abs(value - secret) <= rel_tol * abs(secret) for secret in secrets):
                    reason = "value matches a frame angle or clock offset"
                else:
                    reason = "float value in payload"
            if reason is not None:
                findings.append({"message": index, "path": path, "reason": reason})
    return findings


class ProtocolSimulation:
    """
    Event-driven run of one Scenario.

    Nature (the joint quantum state) is simulated here; each party's handler
    only reads that party's own frame and clock and the messages it received.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.queue = EventQueue()
        self.parties = {
            ALICE: Party(ALICE, scenario.frame_alice, ClockModel(scenario.omega, scenario.offset_alice)),
            BOB: Party(BOB, scenario.frame_bob, ClockModel(scenario.omega, scenario.offset_bob)),
            CHARLIE: Party(CHARLIE, scenario.frame_charlie, ClockModel(scenario.omega)),
        }
        self.messages: List[ClassicalMessage] = []
        self.events: List[Dict[str, Any]] = []

        seed = scenario.seed
        self.shared_seed = int(derive_generator(seed, _SHARED_SEED_STREAM).integers(2 ** 63 - 1))
        self.nature_seed = int(derive_generator(seed, _NATURE_SEED_STREAM).integers(2 ** 63 - 1))
        self.latency_rng = derive_generator(seed, _LATENCY_STREAM)
        self.qcs_rng = derive_generator(seed, _QCS_STREAM)
        self.context = PurificationContext(scenario.frame_alice, scenario.frame_bob)

        self.rounds = 0
        self.F0 = scenario.nominal_fidelity
        self.trajectory: Optional[PurificationTrajectory] = None
        self.pairs: List[DensityMatrix] = []
        self.analytic = {"F": 1.0, "count": 0.0}

        self.has_pairs = {ALICE: False, BOB: False}
        self.seed_known = {ALICE: True, BOB: False}
        self.current_round = 0
        self.round_bits: Dict[int, Dict[str, Any]] = {}
        self.round_received: Dict[int, set] = {}
        self.purification_complete = False
        self.go_received = False

        self.qcs_local_time: Optional[float] = None
        self.alice_measure_ref: Optional[float] = None
        self.alice_posts: List[Tuple[int, DensityMatrix]] = []
        self.sigmas: Optional[List[int]] = None
        self.bob_ready = False
        self.bob_sigma_time: Optional[float] = None
        self.estimate: Optional[EstimateReport] = None
        self.qcs_timing: Dict[str, float] = {}

    # -- plumbing --------------------------------------------------------

    def send(self, now: float, sender: str, receiver: str, payload: Dict[str, Any]) -> ClassicalMessage:
        latency = self.scenario.channel.sample_latency(self.latency_rng)
        message = ClassicalMessage(sender, receiver, now, payload, deliver_time=now + latency)
        self.messages.append(message)
        self.queue.push(message.deliver_time, receiver, "deliver", message=message)
        return message

    def handle(self, event: Event) -> None:
        self.events.append({"time": event.time, "party": event.party, "kind": event.kind})
        handler = getattr(self, f"_on_{event.kind.replace('-', '_')}", None)
        if handler is None:
            raise ValueError(f"No handler for event kind {event.kind!r}")
        handler(event)

    def run(self) -> RunReport:
        self.qcs_local_time = self.scenario.qcs_instant(self.rounds)
        self.queue.push(0.0, ALICE, "start")
        self.queue.push(0.0, CHARLIE, "distribute")
        # Each party reads the agreed instant on its own clock.
        for party_id, kind in ((ALICE, "qcs-measure"), (BOB, "qcs-ready")):
            clock = self.parties[party_id].clock
            self.queue.push(clock.reference_time(self.qcs_local_time), party_id, kind)
        while self.queue:
            step_events(self.queue, self.handle)
        return self._report()

    # -- distribution ----------------------------------------------------

    def _charlie_pair(self) -> DensityMatrix:
        """Charlie's singlet; his convention only contributes a global phase."""
        charlie = self.parties[CHARLIE]
        prepared = local_singlet(charlie.frame, charlie.frame)
        canonical = phase_singlet(0.0)
        overlap = abs(canonical.overlap(prepared)) ** 2
        if abs(overlap - 1.0) > CHARLIE_STATE_TOL:
            raise InvariantError(f"Charlie's singlet differs from the canonical one: {overlap!r}")
        return DensityMatrix.from_pure(canonical)

    def _on_start(self, event: Event) -> None:
        self.parties[ALICE].require(DISTRIBUTING, action="share the rotation seed")
        self.send(event.time, ALICE, BOB, {"kind": "rotation-seed", "seed": self.shared_seed})

    def _on_distribute(self, event: Event) -> None:
        s = self.scenario
        charlie = self.parties[CHARLIE]
        charlie.require(DISTRIBUTING, action="distribute")
        noisy = depolarize(self._charlie_pair(), NoiseModel(s.channel.p))
        delay = pair_delay_operator(s.omega, s.delta_t, s.delay_party)
        pair = DensityMatrix(delay @ noisy.matrix @ delay.conj().T)
        require_valid(pair, label="distributed pair")

        measured = fidelity(pair, self.context.target)
        if abs(measured - self.F0) > DISTRIBUTED_FIDELITY_TOL:
            raise InvariantError(f"Distributed fidelity {measured!r} differs from nominal {self.F0!r}")

        if s.mode == MONTECARLO:
            self.pairs = [pair] * s.N
        self.analytic = {"F": self.F0, "count": float(s.N)}
        arrival = event.time + s.channel.latency
        self.queue.push(arrival, ALICE, "pairs-arrived")
        self.queue.push(arrival, BOB, "pairs-arrived")
        charlie.advance(DONE)
        logger.debug(f"Charlie distributed {s.N} pairs")

    def _on_pairs_arrived(self, event: Event) -> None:
        self.parties[event.party].require(DISTRIBUTING, action="receive pairs")
        self.has_pairs[event.party] = True
        self._maybe_begin_purification(event.party, event.time)

    def _maybe_begin_purification(self, party_id: str, now: float) -> None:
        party = self.parties[party_id]
        if not (self.has_pairs[party_id] and self.seed_known[party_id]):
            return
        party.advance(PURIFYING)
        if all(p.phase == PURIFYING for p in (self.parties[ALICE], self.parties[BOB])):
            self._start_purification(now)

    # -- purification ----------------------------------------------------

    def _start_purification(self, now: float) -> None:
        s = self.scenario
        if s.mode == MONTECARLO:
            self.trajectory = PurificationTrajectory(mode=s.mode, yield_convention=REALISTIC_YIELD)
            F = self.context.pair_fidelity(self.pairs[0])
        else:
            self.trajectory = PurificationTrajectory(mode=s.mode, yield_convention=s.yield_convention)
            F = self.F0
        self.trajectory.record(RoundRecord(round=0, fidelity=F, pairs_remaining=float(s.N), success_rate=1.0))
        if self.rounds == 0:
            self._finish_purification(now)
        else:
            self._run_round(1, now)

    def _run_round(self, n: int, now: float) -> None:
        self.current_round = n
        if self.scenario.mode == MONTECARLO:
            result = run_mc_round(self.pairs, self.context, self.shared_seed, n,
                                  self.scenario.workers, measurement_seed=self.nature_seed)
            self.round_bits[n] = {"result": result}
            alice_payload = {"kind": "purify-outcomes", "round": n,
                             "bits": [int(o.alice_bit) for o in result.outcomes]}
            bob_payload = {"kind": "purify-outcomes", "round": n,
                           "bits": [int(o.bob_bit) for o in result.outcomes]}
        else:
            F, success_prob = recurrence_step(self.analytic["F"])
            count = self.analytic["count"] * (
                success_prob / 2.0 if self.scenario.yield_convention != IDEAL_YIELD else 0.5)
            self.round_bits[n] = {"F": F, "count": count, "success_prob": success_prob}
            survivors = int(math.floor(count))
            alice_payload = {"kind": "purify-outcomes", "round": n, "kept": survivors}
            bob_payload = {"kind": "purify-outcomes", "round": n, "kept": survivors}
        self.round_received[n] = set()
        self.send(now, ALICE, BOB, alice_payload)
        self.send(now, BOB, ALICE, bob_payload)

    def _on_deliver(self, event: Event) -> None:
        message: ClassicalMessage = event.data["message"]
        kind = message.payload["kind"]
        receiver = self.parties[event.party]
        if kind == "rotation-seed":
            receiver.require(DISTRIBUTING, action="accept the rotation seed")
            self.seed_known[event.party] = True
            self._maybe_begin_purification(event.party, event.time)
        elif kind == "purify-outcomes":
            self._on_purify_outcomes(event, message)
        elif kind == "control":
            receiver.require(PURIFYING, action="accept the go flag")
            self._on_qcs_go(event, message)
        elif kind == "qcs-outcomes":
            self._on_qcs_outcomes(event, message)

    def _on_purify_outcomes(self, event: Event, message: ClassicalMessage) -> None:
        party = self.parties[event.party]
        if not self.seed_known[event.party]:
            raise ProtocolOrderError(f"{party.id} received purification outcomes before the rotation seed")
        party.require(PURIFYING, action="compare purification outcomes")
        n = message.payload["round"]
        if n not in self.round_received:
            raise ProtocolOrderError(f"{party.id} received outcomes for round {n} before it ran")
        self.round_received[n].add(event.party)
        if self.round_received[n] != {ALICE, BOB}:
            return

        record = self.round_bits[n]
        if self.scenario.mode == MONTECARLO:
            result = record["result"]
            alice_bits = [o.alice_bit for o in result.outcomes]
            bob_bits = [o.bob_bit for o in result.outcomes]
            kept = [a == b for a, b in zip(alice_bits, bob_bits)]
            if kept != [o.success for o in result.outcomes]:
                raise InvariantError(f"Round {n}: outcome comparison disagrees with postselection")
            self.pairs = result.survivors
            if result.leftover is not None:
                self.trajectory.set_aside.append(result.leftover)
            fid = [self.context.pair_fidelity(p) for p in self.pairs]
            mean = float(np.mean(fid)) if fid else float("nan")
            stderr = float(np.std(fid, ddof=1) / math.sqrt(len(fid))) if len(fid) > 1 else 0.0
            self.trajectory.record(RoundRecord(round=n, fidelity=mean, pairs_remaining=float(len(self.pairs)),
                                               success_rate=result.success_rate, fidelity_stderr=stderr,
                                               leftover=len(self.trajectory.set_aside)))
        else:
            self.analytic = {"F": record["F"], "count": record["count"]}
            self.trajectory.record(RoundRecord(round=n, fidelity=record["F"], pairs_remaining=record["count"],
                                               success_rate=record["success_prob"]))
        logger.debug(f"Round {n} compared at t={event.time!r}")
        if n < self.rounds:
            self._run_round(n + 1, event.time)
        else:
            self._finish_purification(event.time)

    def _finish_purification(self, now: float) -> None:
        self.purification_complete = True
        if self.scenario.mode == MONTECARLO:
            self.trajectory.final_ensemble = PairEnsemble.montecarlo(self.pairs)
        else:
            self.trajectory.final_ensemble = PairEnsemble.analytic(self.analytic["F"], self.analytic["count"])
        # A go flag only; the instant itself was fixed before the run.
        self.send(now, ALICE, BOB, {"kind": "control", "action": "go", "round": self.rounds})

    # -- clock synchronization -------------------------------------------

    def _qcs_pairs(self) -> List[DensityMatrix]:
        return self.trajectory.usable_pairs()

    def _on_qcs_go(self, event: Event, message: ClassicalMessage) -> None:
        if message.payload["round"] != self.rounds:
            raise ProtocolOrderError(f"Go flag for round {message.payload['round']}, expected {self.rounds}")
        self.go_received = True

    def _on_qcs_measure(self, event: Event) -> None:
        alice = self.parties[ALICE]
        alice.require(PURIFYING, action="start clock synchronization")
        if not self.purification_complete:
            raise ProtocolOrderError("Alice cannot measure before purification finishes")
        if self.scenario.mode == MONTECARLO:
            pairs = self._qcs_pairs()
            if not pairs:
                raise ExhaustionError("No pairs left for clock synchronization")
            self.alice_posts = []
            for pair in pairs:
                result = alice_qcs_measure(pair, self.qcs_rng, alice.frame)
                self.alice_posts.append((result.outcome, result.post_state))
            sigmas = [s for s, _ in self.alice_posts]
        else:
            M = int(math.floor(self.analytic["count"]))
            if M < 1:
                raise ExhaustionError("No pairs left for clock synchronization")
            sigmas = [int(b) for b in self.qcs_rng.integers(2, size=M)]
        self.alice_measure_ref = event.time
        alice.advance(QCS_ALICE_MEASURED)
        message = self.send(event.time, ALICE, BOB, {"kind": "qcs-outcomes", "sigma": sigmas})
        alice.advance(DONE)
        self.qcs_timing["alice_measure_time"] = event.time
        self.qcs_timing["sigma_send_time"] = message.send_time
        self.qcs_timing["sigma_deliver_time"] = message.deliver_time

    def _on_qcs_outcomes(self, event: Event, message: ClassicalMessage) -> None:
        bob = self.parties[BOB]
        bob.require(PURIFYING, action="accept Alice's QCS outcomes")
        self.sigmas = list(message.payload["sigma"])
        bob.advance(QCS_ALICE_MEASURED)
        if self.bob_ready:
            self._bob_correct_and_measure(event.time)

    def _on_qcs_ready(self, event: Event) -> None:
        if not (self.purification_complete and self.go_received):
            raise ProtocolOrderError("Bob reached the agreed instant before Alice's go flag")
        self.bob_ready = True
        if self.parties[BOB].phase == QCS_ALICE_MEASURED:
            self._bob_correct_and_measure(event.time)

    def _bob_correct_and_measure(self, now: float) -> None:
        s = self.scenario
        bob = self.parties[BOB]
        # Bob knows how long he waited past the agreed instant on his own clock.
        wait = max(0.0, bob.local_time(now) - self.qcs_local_time)
        precession = now - self.alice_measure_ref
        effective = precession - wait
        M = len(self.sigmas)
        if s.mode == MONTECARLO:
            zeros = 0
            for sigma, (_, post) in zip(self.sigmas, self.alice_posts):
                bit = bob_qcs_measure(post, sigma, s.omega, precession, self.qcs_rng,
                                      bob.frame, compensation=wait)
                zeros += 1 - bit
        else:
            p0 = werner_outcome_probability(self.analytic["F"], s.omega * effective)
            zeros = int(self.qcs_rng.binomial(M, p0))
        t_hat = estimate_time(zeros, M, s.omega)
        self.estimate = EstimateReport(
            k=zeros,
            M=M,
            x=(2.0 * zeros - M) / M,
            t_hat=t_hat,
            stderr=1.0 / (s.omega * math.sqrt(M)),
            x_stderr=math.sqrt(4.0 * (zeros / M) * (1.0 - zeros / M) / M),
            x_stderr_bound=1.0 / math.sqrt(M),
        )
        cfg = QCSConfig(M=M, omega=s.omega, t_true=effective)
        if not cfg.branch_ok:
            logger.warning(f"omega*t={cfg.theta:.6f} is outside (0, pi); the estimate may alias")
        self.qcs_timing.update({
            "bob_correction_time": now,
            "precession": precession,
            "compensated_wait": wait,
            "effective_time": effective,
        })
        bob.advance(DONE)

    # -- report ----------------------------------------------------------

    def _report(self) -> RunReport:
        s = self.scenario
        if self.estimate is None:
            raise InvariantError("Event loop drained before Bob produced an estimate")
        budget = error_budget(s.N, self.rounds, self.F0, s.omega)
        report = RunReport(
            trajectory=self.trajectory,
            estimate=self.estimate,
            budget=budget,
            estimated_offset=self.estimate.t_hat,
            true_offset=s.delta_t,
            phi=s.phi,
            nominal_fidelity=self.F0,
            rounds=self.rounds,
            mode=s.mode,
            messages=self.messages,
            events=self.events,
            qcs_timing=self.qcs_timing,
        )
        findings = scan_message_log(self.messages, s.secrets())
        if findings:
            logger.error(f"Information firewall breached: {findings}")
            raise InvariantError(f"Message log leaks frame or clock data: {findings}")
        return report


def resolve_rounds(scenario: Scenario) -> int:
    if scenario.rounds == "auto":
        return optimize_rounds(scenario.N, scenario.nominal_fidelity, scenario.omega).n_star
    return int(scenario.rounds)


def run_scenario(scenario: Scenario) -> RunReport:
    """
    Run distribution, purification and clock synchronization for one scenario.

    Raises:
        PreconditionError: If F0 <= 0.5, |phi| >= pi/2 or N < 2^n
    """
    checks = check_preconditions(scenario)
    rounds = resolve_rounds(scenario)
    if scenario.N < 2 ** rounds:
        raise PreconditionError("N<2^n", scenario.N, f"{scenario.N} pairs cannot survive {rounds} rounds")

    logger.info(f"Starting scenario: N={scenario.N}, p={scenario.channel.p}, rounds={rounds}, "
                f"mode={scenario.mode}, seed={scenario.seed}")
    simulation = ProtocolSimulation(scenario)
    simulation.rounds = rounds
    try:
        report = simulation.run()
    except Exception as e:
        logger.error(f"Error running scenario (seed={scenario.seed}): {str(e)}")
        raise
    logger.info(f"Scenario finished: estimated offset {report.estimated_offset!r} s, "
                f"true offset {report.true_offset!r} s, phi={checks['phi_wrapped']:.6f}")
    return report


def run_sweep(base: Scenario, seeds: Sequence[int], workers: int = 1) -> List[RunReport]:
    """run_scenario for each seed; results are in seed order."""
    scenarios = [base.with_seed(int(seed)) for seed in seeds]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_scenario, scenarios))
    return [run_scenario(s) for s in scenarios]


def sweep_summary(reports: Sequence[RunReport], seeds: Sequence[int]) -> pd.DataFrame:
    rows = []
    for seed, report in zip(seeds, reports):
        row = {"seed": int(seed)}
        row.update(report.summary())
        rows.append(row)
    return pd.DataFrame(rows)
