"""The four-step multi-party summation protocol.

One party (the preparer, party 1 by default) distributes ``N`` copies of the
``n``-wire equal-digit state, keeping wire 1 of every group and sending wire
``j`` of every group to party ``j`` with decoy qudits mixed in. After the decoy
check every party applies ``U_k F`` to its wires using its key digits, measures
in the computational basis, and the preparer adds the published results
modulo ``d``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, ProtocolLogicError
from .harness import (
    ClassicalMessage,
    DecoyDisclosure,
    DecoyInitials,
    DecoyResults,
    FinalSum,
    Network,
    ParticleSlot,
    PartyId,
    QuantumTransfer,
    ResultVectorMsg,
    SlotKind,
    Transcript,
)
from .qudit_core import Basis, encode_op, make_omega, prepare_single

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProtocolConfig:
    """Run parameters.

    ``length`` is the key-string length ``N``; ``decoys`` is the number of
    decoys inserted in each transmitted sequence (defaults to ``length``);
    a recipient's check fails when its error rate exceeds ``threshold``.
    """

    d: int
    n: int
    length: int
    decoys: int | None = None
    threshold: float = 0.0
    seed: int = 0
    max_amplitudes: int | None = None

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 2:
            raise DomainError(f"d must be an integer >= 2, got {self.d!r}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 3:
            raise DomainError(f"n must be an integer >= 3, got {self.n!r}")
        if self.length < 1:
            raise DomainError(f"length (N) must be >= 1, got {self.length!r}")
        if self.decoys is None:
            object.__setattr__(self, "decoys", self.length)
        if self.decoys < 0:
            raise DomainError(f"decoys must be >= 0, got {self.decoys!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise DomainError(f"threshold must lie in [0, 1], got {self.threshold!r}")

    @property
    def parties(self) -> range:
        return range(1, self.n + 1)


@dataclass(frozen=True)
class PrivateKeyString:
    owner: PartyId
    digits: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "digits", tuple(int(x) for x in self.digits))

    def validate(self, cfg: ProtocolConfig) -> None:
        if len(self.digits) != cfg.length:
            raise DomainError(f"key of party {self.owner} has length {len(self.digits)}, expected {cfg.length}")
        for x in self.digits:
            if not 0 <= x < cfg.d:
                raise DomainError(f"key of party {self.owner} has digit {x} outside [0, {cfg.d})")


@dataclass(frozen=True)
class ResultVector:
    owner: PartyId
    values: tuple[int, ...]


def random_keys(cfg: ProtocolConfig, rng: np.random.Generator) -> list[PrivateKeyString]:
    digits = rng.integers(0, cfg.d, size=(cfg.n, cfg.length))
    return [PrivateKeyString(i, tuple(int(x) for x in row)) for i, row in zip(cfg.parties, digits)]


def as_keys(cfg: ProtocolConfig, keys) -> list[PrivateKeyString]:
    """Accept ``PrivateKeyString`` objects or plain nested digit lists."""
    out = []
    for i, k in zip(cfg.parties, keys):
        out.append(k if isinstance(k, PrivateKeyString) else PrivateKeyString(i, tuple(k)))
    if len(out) != cfg.n or len(list(keys)) != cfg.n:
        raise DomainError(f"expected {cfg.n} keys, got {len(list(keys))}")
    for i, k in zip(cfg.parties, out):
        if k.owner != i:
            raise DomainError(f"key #{i} belongs to party {k.owner}")
        k.validate(cfg)
    return out


def mod_sum(vectors: Sequence, d: int) -> tuple[int, ...]:
    """Componentwise sum modulo ``d``."""
    rows = [v.values if isinstance(v, ResultVector) else tuple(v) for v in vectors]
    if not rows:
        raise DomainError("mod_sum needs at least one vector")
    length = len(rows[0])
    for r in rows:
        if len(r) != length:
            raise DomainError(f"vector lengths differ: {length} vs {len(r)}")
        if any(not 0 <= x < d for x in r):
            raise DomainError(f"vector entry outside [0, {d})")
    return tuple(int(x) for x in np.sum(np.asarray(rows, dtype=np.int64), axis=0) % d)


@dataclass(frozen=True)
class DecoyPlan:
    positions: tuple[int, ...]
    bases: tuple[Basis, ...]
    values: tuple[int, ...]


@dataclass
class SequenceLayout:
    """Where each recipient's decoys sit in its padded sequence."""

    plans: dict[PartyId, DecoyPlan] = field(default_factory=dict)
    sequences: dict[PartyId, tuple[ParticleSlot, ...]] = field(default_factory=dict)

    def decoy_slot(self, recipient: PartyId, position: int) -> ParticleSlot:
        return self.sequences[recipient][position]


@dataclass(frozen=True)
class CheckReport:
    recipient: PartyId
    tested: int
    mismatches: int
    error_rate: float
    abort: bool


class Status(enum.Enum):
    COMPLETED = "Completed"
    ABORTED = "Aborted"


@dataclass
class ProtocolOutcome:
    status: Status
    sum: tuple[int, ...] | None
    check_reports: dict[PartyId, CheckReport]
    transcript: Transcript
    # simulator-side view of every party's measured vector; not public
    results: dict[PartyId, tuple[int, ...]] = field(default_factory=dict)

    @property
    def completed(self) -> bool:
        return self.status is Status.COMPLETED


class Stage(enum.Enum):
    NEW = 0
    DISTRIBUTED = 1
    CHECKED = 2
    ENCODED = 3
    DONE = 4
    ABORTED = 5


class SummationRun:
    """State machine for one execution of the protocol.

    ``preparer`` plays the role of party 1 (the private mode lets every party
    take that role in turn). An ``adversary`` may hook the preparation stage
    (``before_send``) and every particle in flight (``on_transit``).
    """

    def __init__(
        self,
        cfg: ProtocolConfig,
        rng: np.random.Generator,
        adversary=None,
        preparer: PartyId = 1,
        publish_sum: bool = True,
    ):
        if preparer not in cfg.parties:
            raise DomainError(f"preparer {preparer} is not a party")
        self.cfg = cfg
        self.rng = rng
        self.adversary = adversary
        self.preparer = preparer
        self.publish_sum = publish_sum
        self.network = Network(cfg.d, cfg.parties, cfg.max_amplitudes)
        self.layout = SequenceLayout()
        self.stage = Stage.NEW
        self.reports: dict[PartyId, CheckReport] = {}
        self.results: dict[PartyId, tuple[int, ...]] = {}

    @property
    def transcript(self) -> Transcript:
        return self.network.transcript

    @property
    def recipients(self) -> list[PartyId]:
        return [j for j in self.cfg.parties if j != self.preparer]

    def group_slots(self, t: int) -> list[ParticleSlot]:
        return [ParticleSlot.entangled(t, i) for i in self.cfg.parties]

    def _require(self, stage: Stage, action: str) -> None:
        if self.stage is not stage:
            raise ProtocolLogicError(f"cannot {action} at stage {self.stage.name} (need {stage.name})")

    # -- step 1 ------------------------------------------------------------

    def step1_prepare(self) -> list[QuantumTransfer]:
        """Prepare the groups and decoys, then send each recipient its sequence."""
        self._require(Stage.NEW, "prepare")
        cfg, rng, net = self.cfg, self.rng, self.network
        omega = make_omega(cfg.d, cfg.n, cfg.max_amplitudes)
        for t in range(1, cfg.length + 1):
            net.create(self.preparer, self.group_slots(t), omega)

        total = cfg.length + cfg.decoys
        for j in self.recipients:
            positions = tuple(sorted(int(p) for p in rng.choice(total, size=cfg.decoys, replace=False)))
            bases = tuple(Basis.V2 if b else Basis.V1 for b in rng.integers(0, 2, size=cfg.decoys))
            values = tuple(int(v) for v in rng.integers(0, cfg.d, size=cfg.decoys))
            decoys = []
            for serial, (b, v) in enumerate(zip(bases, values), start=1):
                slot = ParticleSlot.decoy(serial, j)
                net.create(self.preparer, [slot], prepare_single(cfg.d, b, v))
                decoys.append(slot)
            entangled = iter(ParticleSlot.entangled(t, j) for t in range(1, cfg.length + 1))
            decoy_iter = iter(decoys)
            pos_set = set(positions)
            seq = tuple(next(decoy_iter) if p in pos_set else next(entangled) for p in range(total))
            self.layout.plans[j] = DecoyPlan(positions, bases, values)
            self.layout.sequences[j] = seq

        if self.adversary is not None:
            self.adversary.before_send(self)

        transfers = []
        for j in self.recipients:
            transfer = QuantumTransfer(self.preparer, j, self.layout.sequences[j])
            net.send_quantum(transfer, self.adversary, rng)
            transfers.append(transfer)
        self.stage = Stage.DISTRIBUTED
        return transfers

    # -- step 2 ------------------------------------------------------------

    def step2_check(self) -> dict[PartyId, CheckReport]:
        """Decoy check with every recipient; aborts the run if any rate exceeds the threshold."""
        self._require(Stage.DISTRIBUTED, "run the decoy check")
        cfg, rng, net = self.cfg, self.rng, self.network
        p1 = self.preparer
        for j in self.recipients:
            plan = self.layout.plans[j]
            delta = len(plan.positions)
            if delta == 0:
                logger.warning("no decoys in the sequence sent to party %d; check passes vacuously", j)
                self.reports[j] = CheckReport(j, 0, 0, 0.0, False)
                continue
            n_report = math.ceil(delta / 2)
            report = tuple(sorted(int(p) for p in rng.choice(plan.positions, size=n_report, replace=False)))
            net.broadcast_classical(ClassicalMessage(p1, DecoyDisclosure(j, plan.positions, plan.bases, report)))

            measured = {}
            for pos, basis in zip(plan.positions, plan.bases):
                measured[pos] = net.measure(j, self.layout.decoy_slot(j, pos), basis, rng)
            initial = dict(zip(plan.positions, plan.values))

            report_set = set(report)
            rest = tuple(p for p in plan.positions if p not in report_set)
            net.broadcast_classical(ClassicalMessage(j, DecoyResults(tuple(measured[p] for p in report))))
            mismatches = sum(measured[p] != initial[p] for p in report)  # compared by the preparer
            net.broadcast_classical(ClassicalMessage(p1, DecoyInitials(j, tuple(initial[p] for p in rest))))
            mismatches += sum(measured[p] != initial[p] for p in rest)  # compared by the recipient

            rate = mismatches / delta
            self.reports[j] = CheckReport(j, delta, int(mismatches), rate, rate > cfg.threshold)

        failed = [j for j, r in self.reports.items() if r.abort]
        if failed:
            for j in failed:
                net.abort(j, f"decoy error rate {self.reports[j].error_rate:.6g} exceeds threshold {cfg.threshold:g}")
            self.stage = Stage.ABORTED
        else:
            self.stage = Stage.CHECKED
        return dict(self.reports)

    # -- step 3 ------------------------------------------------------------

    def step3_encode(self, keys) -> None:
        """Drop the decoys, then every party applies ``U_k F`` to each of its wires."""
        if self.stage is Stage.ABORTED:
            raise ProtocolLogicError("cannot encode: the decoy check aborted the run")
        self._require(Stage.CHECKED, "encode")
        keys = as_keys(self.cfg, keys)
        net = self.network
        for j in self.recipients:
            for slot in self.layout.sequences[j]:
                if slot.kind is SlotKind.DECOY:
                    net.discard(j, slot)
        for key in keys:
            for t, k in enumerate(key.digits, start=1):
                net.apply(key.owner, ParticleSlot.entangled(t, key.owner), encode_op(self.cfg.d, k))
        self.stage = Stage.ENCODED

    # -- step 4 ------------------------------------------------------------

    def step4_measure_and_sum(self) -> ProtocolOutcome:
        """Computational-basis readout, announcement of results and the modular sum."""
        self._require(Stage.ENCODED, "measure")
        cfg, rng, net = self.cfg, self.rng, self.network
        for i in cfg.parties:
            self.results[i] = tuple(
                net.measure(i, ParticleSlot.entangled(t, i), Basis.V1, rng) for t in range(1, cfg.length + 1)
            )
        for j in self.recipients:
            net.broadcast_classical(ClassicalMessage(j, ResultVectorMsg(self.results[j])))
        total = mod_sum([self.results[i] for i in cfg.parties], cfg.d)
        if self.publish_sum:
            net.broadcast_classical(ClassicalMessage(self.preparer, FinalSum(total)))
        self.stage = Stage.DONE
        return ProtocolOutcome(Status.COMPLETED, total, dict(self.reports), self.transcript, dict(self.results))

    def aborted_outcome(self) -> ProtocolOutcome:
        return ProtocolOutcome(Status.ABORTED, None, dict(self.reports), self.transcript, {})


def run_protocol(
    cfg: ProtocolConfig,
    keys,
    adversary=None,
    rng: np.random.Generator | None = None,
    preparer: PartyId = 1,
    publish_sum: bool = True,
) -> ProtocolOutcome:
    """Run steps 1-4 end to end, stopping after a failed decoy check."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    keys = as_keys(cfg, keys)
    run = SummationRun(cfg, rng, adversary, preparer, publish_sum)
    run.step1_prepare()
    run.step2_check()
    if run.stage is Stage.ABORTED:
        return run.aborted_outcome()
    run.step3_encode(keys)
    return run.step4_measure_and_sum()


def run_private_mode(cfg: ProtocolConfig, keys, rng: np.random.Generator | None = None) -> dict[PartyId, ProtocolOutcome]:
    """Every party runs the protocol once as preparer; no sum is ever broadcast.

    Runs use independent child random streams, so an abort in one leaves the
    others untouched.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    keys = as_keys(cfg, keys)
    streams = rng.spawn(cfg.n)
    return {
        p: run_protocol(cfg, keys, rng=s, preparer=p, publish_sum=False) for p, s in zip(cfg.parties, streams)
    }
