"""Simulated channels, particle ownership and the protocol transcript.

The quantum side is a :class:`QuantumStore`: a set of independent factors,
each a dense register over a few named qudits. Group states and decoys start
as separate factors, measurement splits a measured qudit off into its own
factor, and a two-qudit interaction merges factors. Local unitaries on a
multi-qudit factor are kept as per-qudit pending operators and folded in only
when that qudit is measured or interacts; local operators on distinct qudits
commute, so this is exact and avoids touching all ``d**n`` amplitudes once per
party.

:class:`Network` ties the store to party ownership and an append-only
:class:`Transcript`.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, ProtocolLogicError
from .qudit_core import (
    MAX_AMPLITUDES,
    Basis,
    LocalOperator,
    QuditRegister,
    apply_matrix,
    branch_amplitudes,
    check_budget,
    prepare_single,
    readout_matrix,
    sample_branch,
    sparse_branch_amplitudes,
)

PartyId = int


class SlotKind(str, enum.Enum):
    ENTANGLED = "entangled-wire"
    DECOY = "decoy"

    # slots are dict keys on every hot path; Enum.__hash__ is pure Python
    __hash__ = str.__hash__


class ParticleSlot(NamedTuple):
    """Handle for one travelling particle.

    For an entangled-wire slot ``group`` is the group index ``t`` in ``[1, N]``
    and ``wire`` the party index. Decoys reuse the same fields: ``group`` is the
    decoy's serial number within its sequence and ``wire`` the recipient.
    """

    kind: SlotKind
    group: int
    wire: int

    @classmethod
    def entangled(cls, group: int, wire: int) -> ParticleSlot:
        return cls(SlotKind.ENTANGLED, group, wire)

    @classmethod
    def decoy(cls, serial: int, recipient: int) -> ParticleSlot:
        return cls(SlotKind.DECOY, serial, recipient)

    def to_record(self) -> list:
        return [self.kind.value, self.group, self.wire]


# ---------------------------------------------------------------------------
# quantum store


# below this many amplitudes, support tracking costs more than it saves
_SPARSE_MIN_SIZE = 4096


class _Factor:
    __slots__ = ("qids", "amps", "pending", "support")

    def __init__(self, qids: list, amps: np.ndarray, support: np.ndarray | None = None):
        self.qids = qids
        self.amps = amps
        self.pending: dict[Hashable, np.ndarray] = {}
        # flat indices outside which amps is known to vanish; None means dense
        self.support = support


class QuantumStore:
    """Factored pure state of every qudit currently in play."""

    def __init__(self, d: int, max_amplitudes: int | None = None):
        self.d = d
        self.max_amplitudes = MAX_AMPLITUDES if max_amplitudes is None else max_amplitudes
        self._factor: dict[Hashable, _Factor] = {}

    def __contains__(self, qid: Hashable) -> bool:
        return qid in self._factor

    def __len__(self) -> int:
        return len(self._factor)

    def add(self, qids: Sequence[Hashable], reg: QuditRegister) -> None:
        if reg.d != self.d:
            raise DomainError(f"register dimension {reg.d} does not match store dimension {self.d}")
        if len(qids) != reg.wires:
            raise DomainError(f"{len(qids)} qudit ids given for a {reg.wires}-wire register")
        for q in qids:
            if q in self._factor:
                raise ProtocolLogicError(f"qudit {q!r} already exists")
        check_budget(self.d, reg.wires, self.max_amplitudes)
        # register arrays are read-only and every update below rebinds, so sharing is safe
        support = None
        if reg.amps.size >= _SPARSE_MIN_SIZE and 16 * len(reg.support) <= reg.amps.size:
            support = reg.support
        f = _Factor(list(qids), reg.amps, support)
        for q in qids:
            self._factor[q] = f

    def discard(self, qid: Hashable) -> None:
        """Drop a qudit that is not entangled with anything."""
        f = self._get(qid)
        if len(f.qids) != 1:
            raise ProtocolLogicError(f"cannot discard {qid!r}: it shares a factor with {len(f.qids) - 1} other qudits")
        del self._factor[qid]

    def factor_of(self, qid: Hashable) -> tuple:
        return tuple(self._get(qid).qids)

    def apply(self, qid: Hashable, op: LocalOperator) -> None:
        if op.d != self.d:
            raise DomainError(f"operator dimension {op.d} does not match store dimension {self.d}")
        f = self._get(qid)
        if len(f.qids) == 1:
            f.amps = op.matrix @ f.amps
            f.support = None
            return
        prev = f.pending.get(qid)
        f.pending[qid] = op.matrix if prev is None else op.matrix @ prev

    def measure(self, qid: Hashable, basis: Basis, rng: np.random.Generator) -> int:
        """Projective measurement; the qudit is left in the observed basis state."""
        f = self._get(qid)
        d = self.d
        axis = f.qids.index(qid)
        rows = readout_matrix(d, basis)
        pend = f.pending.pop(qid, None)
        if pend is not None:
            rows = rows @ pend
        w = len(f.qids)
        if f.support is not None:
            branches, cols = sparse_branch_amplitudes(f.amps, f.support, d, w, axis, rows)
            m, compact = sample_branch(branches, rng)
            rest = np.zeros(d ** (w - 1), dtype=np.complex128)
            rest[cols] = compact
        else:
            branches = branch_amplitudes(f.amps, d, w, axis, rows)
            m, rest = sample_branch(branches, rng)
            cols = None
        if w > 1:
            f.qids.pop(axis)
            f.amps = np.ascontiguousarray(rest)
            f.support = cols if cols is not None and rest.size >= _SPARSE_MIN_SIZE else None
        single = _Factor([qid], prepare_single(d, basis, m).amps)
        self._factor[qid] = single
        return m

    def controlled_shift(self, control: Hashable, target: Hashable) -> None:
        """``|x>|e> -> |x>|e + x mod d>`` on two qudits (merging their factors)."""
        if control == target:
            raise DomainError("control and target must differ")
        f = self._merge(control, target)
        self._flush(f, control)
        self._flush(f, target)
        d, w = self.d, len(f.qids)
        ca, ta = f.qids.index(control), f.qids.index(target)
        t = f.amps.reshape((d,) * w)
        out = np.empty_like(t)
        for x in range(d):
            src = [slice(None)] * w
            src[ca] = x
            sub = t[tuple(src)]
            # target axis index shifts down by one if it followed the control axis
            out[tuple(src)] = np.roll(sub, x, axis=ta - (1 if ta > ca else 0))
        f.amps = out.reshape(-1)
        f.support = None

    def state(self, qids: Sequence[Hashable]) -> QuditRegister:
        """Joint register of ``qids`` (in that wire order).

        The requested qudits must be exactly a union of whole factors.
        """
        factors: list[_Factor] = []
        for q in qids:
            f = self._get(q)
            if all(f is not g for g in factors):
                factors.append(f)
        covered = [q for f in factors for q in f.qids]
        if set(covered) != set(qids) or len(covered) != len(qids):
            raise ProtocolLogicError("requested qudits do not form whole factors")
        for f in factors:
            for q in list(f.pending):
                self._flush(f, q)
        amps = np.ones(1, dtype=np.complex128)
        for f in factors:
            amps = np.kron(amps, f.amps)
        order = [covered.index(q) for q in qids]
        d, w = self.d, len(qids)
        amps = amps.reshape((d,) * w).transpose(order).reshape(-1)
        return QuditRegister(d, w, amps)

    def _get(self, qid: Hashable) -> _Factor:
        try:
            return self._factor[qid]
        except KeyError:
            raise ProtocolLogicError(f"unknown qudit {qid!r}") from None

    def _flush(self, f: _Factor, qid: Hashable) -> None:
        pend = f.pending.pop(qid, None)
        if pend is not None:
            f.amps = apply_matrix(f.amps, self.d, len(f.qids), f.qids.index(qid), pend)
            f.support = None

    def _merge(self, a: Hashable, b: Hashable) -> _Factor:
        fa, fb = self._get(a), self._get(b)
        if fa is fb:
            return fa
        check_budget(self.d, len(fa.qids) + len(fb.qids), self.max_amplitudes)
        merged = _Factor(fa.qids + fb.qids, np.kron(fa.amps, fb.amps))
        merged.pending = {**fa.pending, **fb.pending}
        for q in merged.qids:
            self._factor[q] = merged
        return merged


# ---------------------------------------------------------------------------
# transcript events


@dataclass(frozen=True)
class QuantumTransfer:
    sender: PartyId
    recipient: PartyId
    slots: tuple[ParticleSlot, ...]

    def to_record(self) -> dict:
        return {
            "event": "quantum",
            "from": self.sender,
            "to": self.recipient,
            "slots": [s.to_record() for s in self.slots],
        }


@dataclass(frozen=True)
class DecoyDisclosure:
    """Positions and bases of a recipient's decoys.

    ``report_positions`` is the subset whose outcomes the recipient must
    report; the initial values of the rest are announced by the preparer.
    """

    recipient: PartyId
    positions: tuple[int, ...]
    bases: tuple[Basis, ...]
    report_positions: tuple[int, ...]

    def to_record(self) -> dict:
        return {
            "kind": "decoy-disclosure",
            "recipient": self.recipient,
            "positions": list(self.positions),
            "bases": [b.value for b in self.bases],
            "report": list(self.report_positions),
        }


@dataclass(frozen=True)
class DecoyResults:
    values: tuple[int, ...]

    def to_record(self) -> dict:
        return {"kind": "decoy-results", "values": list(self.values)}


@dataclass(frozen=True)
class DecoyInitials:
    recipient: PartyId
    values: tuple[int, ...]

    def to_record(self) -> dict:
        return {"kind": "decoy-initials", "recipient": self.recipient, "values": list(self.values)}


@dataclass(frozen=True)
class ResultVectorMsg:
    values: tuple[int, ...]

    def to_record(self) -> dict:
        return {"kind": "result-vector", "values": list(self.values)}


@dataclass(frozen=True)
class FinalSum:
    values: tuple[int, ...]

    def to_record(self) -> dict:
        return {"kind": "final-sum", "values": list(self.values)}


Payload = DecoyDisclosure | DecoyResults | DecoyInitials | ResultVectorMsg | FinalSum


@dataclass(frozen=True)
class ClassicalMessage:
    """An authenticated public broadcast."""

    sender: PartyId
    payload: Payload

    def to_record(self) -> dict:
        return {"event": "classical", "from": self.sender, **self.payload.to_record()}


@dataclass(frozen=True)
class MeasurementRecord:
    """A measurement result known only to ``party``."""

    party: PartyId
    slot: ParticleSlot
    basis: Basis
    value: int

    def to_record(self) -> dict:
        return {
            "event": "measure",
            "party": self.party,
            "slot": self.slot.to_record(),
            "basis": self.basis.value,
            "value": self.value,
        }


@dataclass(frozen=True)
class Abort:
    party: PartyId
    reason: str

    def to_record(self) -> dict:
        return {"event": "abort", "party": self.party, "reason": self.reason}


Event = QuantumTransfer | ClassicalMessage | MeasurementRecord | Abort


@dataclass
class Transcript:
    """Append-only, totally ordered event log."""

    _events: list = field(default_factory=list)

    def append(self, event: Event) -> None:
        self._events.append(event)

    @property
    def events(self) -> tuple[Event, ...]:
        return tuple(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self):
        return iter(tuple(self._events))

    def public(self) -> list[ClassicalMessage]:
        """Everything an outside observer sees."""
        return [e for e in self._events if isinstance(e, ClassicalMessage)]

    def payloads(self, kind: type, sender: PartyId | None = None) -> list:
        return [
            e.payload
            for e in self._events
            if isinstance(e, ClassicalMessage)
            and isinstance(e.payload, kind)
            and (sender is None or e.sender == sender)
        ]

    def measurements(self, party: PartyId | None = None) -> list[MeasurementRecord]:
        return [
            e for e in self._events if isinstance(e, MeasurementRecord) and (party is None or e.party == party)
        ]

    def to_lines(self) -> list[str]:
        return [json.dumps(e.to_record(), sort_keys=True, separators=(",", ":")) for e in self._events]

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.to_lines())

    def export(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())


# ---------------------------------------------------------------------------
# network


class Network:
    """Parties, particle ownership, channels and the transcript of one run."""

    def __init__(self, d: int, parties: Iterable[PartyId], max_amplitudes: int | None = None):
        self.d = d
        self.parties = tuple(parties)
        self.store = QuantumStore(d, max_amplitudes)
        self.transcript = Transcript()
        self._owner: dict[ParticleSlot, PartyId] = {}

    def create(self, owner: PartyId, slots: Sequence[ParticleSlot], reg: QuditRegister) -> None:
        self._check_party(owner)
        self.store.add(slots, reg)
        for s in slots:
            self._owner[s] = owner

    def owner(self, slot: ParticleSlot) -> PartyId:
        try:
            return self._owner[slot]
        except KeyError:
            raise ProtocolLogicError(f"slot {slot} has no owner") from None

    def owned_by(self, party: PartyId) -> list[ParticleSlot]:
        return sorted(s for s, p in self._owner.items() if p == party)

    def send_quantum(self, transfer: QuantumTransfer, adversary=None, rng: np.random.Generator | None = None) -> None:
        """Move every slot of ``transfer`` to its recipient.

        An attached adversary sees each slot in transmission order while it is
        in flight. Only the transfer itself is logged.
        """
        self._check_party(transfer.recipient)
        for s in transfer.slots:
            if self.owner(s) != transfer.sender:
                raise ProtocolLogicError(f"party {transfer.sender} does not own {s} (owner: {self.owner(s)})")
        if len(set(transfer.slots)) != len(transfer.slots):
            raise ProtocolLogicError("a transfer lists the same slot twice")
        for s in transfer.slots:
            if adversary is not None:
                adversary.on_transit(self, s, transfer, rng)
            self._owner[s] = transfer.recipient
        self.transcript.append(transfer)

    def broadcast_classical(self, msg: ClassicalMessage) -> None:
        self.transcript.append(msg)

    def apply(self, party: PartyId, slot: ParticleSlot, op: LocalOperator) -> None:
        self._require_owner(party, slot)
        self.store.apply(slot, op)

    def measure(self, party: PartyId, slot: ParticleSlot, basis: Basis, rng: np.random.Generator) -> int:
        self._require_owner(party, slot)
        value = self.store.measure(slot, basis, rng)
        self.transcript.append(MeasurementRecord(party, slot, basis, value))
        return value

    def discard(self, party: PartyId, slot: ParticleSlot) -> None:
        self._require_owner(party, slot)
        self.store.discard(slot)
        del self._owner[slot]

    def abort(self, party: PartyId, reason: str) -> None:
        self.transcript.append(Abort(party, reason))

    def _require_owner(self, party: PartyId, slot: ParticleSlot) -> None:
        if self.owner(slot) != party:
            raise ProtocolLogicError(f"party {party} does not hold {slot}")

    def _check_party(self, party: PartyId) -> None:
        if party not in self.parties:
            raise DomainError(f"unknown party {party}")


def records_to_text(records: Iterable[dict[str, Any]]) -> str:
    """Line-delimited JSON with a stable key order."""
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records)


def float_field(x: float) -> float:
    # 12 significant digits keeps output stable across platforms' float repr
    return float(f"{x:.12g}") if math.isfinite(x) else x
