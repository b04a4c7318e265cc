"""Attack models and what each attacker can learn or gets caught doing.

Channel attacks (intercept-resend, measure-resend, entangle-probe) act on
particles in flight and are caught by the decoy check. The dishonest-preparer
and collusion analyses compute exact posteriors over honest parties' key
digits by enumerating every hidden variable.
"""

from __future__ import annotations

import dataclasses
import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DomainError, ProtocolLogicError
from .harness import FinalSum, ParticleSlot, PartyId, QuantumStore, QuantumTransfer, ResultVectorMsg, Transcript
from .oracle import zero_sum_coset
from .protocol import (
    ProtocolConfig,
    ProtocolOutcome,
    SummationRun,
    as_keys,
    mod_sum,
    random_keys,
    run_protocol,
)
from .qudit_core import Basis, basis_state, encode_op


class BasisPolicy(enum.Enum):
    RANDOM = "random"
    ALWAYS_V1 = "v1"
    ALWAYS_V2 = "v2"


# ---------------------------------------------------------------------------
# single-slot attacks


def intercept_resend(store: QuantumStore, slot, policy: BasisPolicy | Basis, rng: np.random.Generator) -> tuple[Basis, int]:
    """Measure the in-flight qudit and forward the collapsed state.

    For a wire of an entangled group the whole group collapses with it.
    Returns Eve's basis and outcome.
    """
    if isinstance(policy, Basis):
        basis = policy
    elif policy is BasisPolicy.RANDOM:
        basis = Basis.V2 if rng.integers(0, 2) else Basis.V1
    else:
        basis = Basis.V1 if policy is BasisPolicy.ALWAYS_V1 else Basis.V2
    return basis, store.measure(slot, basis, rng)


def measure_resend(store: QuantumStore, slot, rng: np.random.Generator) -> tuple[Basis, int]:
    return intercept_resend(store, slot, Basis.V1, rng)


@dataclass(frozen=True)
class ProbeRecord:
    slot: ParticleSlot
    ancilla: tuple


def entangle_probe(store: QuantumStore, slot, rng: np.random.Generator, ancilla=None) -> ProbeRecord:
    """Couple a fresh ``|0>`` ancilla to the qudit with ``|x>|e> -> |x>|e+x>``.

    The data qudit travels on; the ancilla stays with the attacker and can be
    read later with :func:`read_probe`.
    """
    if ancilla is None:
        ancilla = ("probe", slot)
    store.add([ancilla], basis_state(store.d, 0))
    store.controlled_shift(slot, ancilla)
    return ProbeRecord(slot, ancilla)


def read_probe(store: QuantumStore, record: ProbeRecord, rng: np.random.Generator) -> int:
    return store.measure(record.ancilla, Basis.V1, rng)


# ---------------------------------------------------------------------------
# strategies plugged into a protocol run


@dataclass
class AttackStrategy:
    """Base strategy: does nothing. Subclasses override the two hooks."""

    name = "none"

    def before_send(self, run: SummationRun) -> None:
        pass

    def on_transit(self, network, slot, transfer: QuantumTransfer, rng: np.random.Generator) -> None:
        pass

    def attacked(self, recipient: PartyId) -> bool:
        """Whether this strategy touches the sequence sent to ``recipient``."""
        return False

    def fresh(self) -> AttackStrategy:
        """Same configuration, no per-run state."""
        return dataclasses.replace(self)


@dataclass
class _ChannelAttack(AttackStrategy):
    # recipients whose incoming sequence is attacked; None means every channel
    targets: tuple[PartyId, ...] | None = (2,)

    def attacked(self, recipient: PartyId) -> bool:
        return self.targets is None or recipient in self.targets

    def on_transit(self, network, slot, transfer, rng):
        if self.attacked(transfer.recipient):
            self.hit(network.store, slot, rng)

    def hit(self, store: QuantumStore, slot, rng) -> None:
        raise NotImplementedError


@dataclass
class InterceptResend(_ChannelAttack):
    name = "intercept-resend"
    policy: BasisPolicy = BasisPolicy.RANDOM

    def hit(self, store, slot, rng):
        intercept_resend(store, slot, self.policy, rng)


@dataclass
class MeasureResend(_ChannelAttack):
    name = "measure-resend"

    def hit(self, store, slot, rng):
        measure_resend(store, slot, rng)


@dataclass
class EntangleProbe(_ChannelAttack):
    name = "entangle-probe"
    probes: list[ProbeRecord] = field(default_factory=list, init=False, repr=False)

    def hit(self, store, slot, rng):
        self.probes.append(entangle_probe(store, slot, rng))


@dataclass
class SemiHonestP1(AttackStrategy):
    """The preparer collapses every group in V1 before distributing it."""

    name = "semi-honest-p1"
    collapsed: dict[int, int] = field(default_factory=dict, init=False, repr=False)

    def before_send(self, run: SummationRun) -> None:
        for t in range(1, run.cfg.length + 1):
            values = {run.network.measure(run.preparer, s, Basis.V1, run.rng) for s in run.group_slots(t)}
            if len(values) != 1:
                raise ProtocolLogicError(f"group {t} collapsed to unequal digits {sorted(values)}")
            self.collapsed[t] = values.pop()


@dataclass
class Collusion(AttackStrategy):
    """Passive coalition of non-preparer parties pooling keys and results."""

    name = "collusion"
    colluders: frozenset[PartyId] = frozenset()

    def __post_init__(self):
        self.colluders = frozenset(int(c) for c in self.colluders)
        if 1 in self.colluders:
            raise DomainError("the preparer (party 1) never colludes")

    def validate(self, cfg: ProtocolConfig) -> None:
        if len(self.colluders) > cfg.n - 1:
            raise DomainError(f"at most {cfg.n - 1} colluders, got {len(self.colluders)}")
        bad = [c for c in self.colluders if c not in cfg.parties]
        if bad:
            raise DomainError(f"colluders {bad} are not parties")


# ---------------------------------------------------------------------------
# posteriors


@dataclass(frozen=True, eq=False)
class PosteriorTable:
    """An attacker's exact belief about ``k_target`` at group ``group``."""

    target: PartyId
    group: int
    posterior: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.posterior, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise DomainError(f"posterior is not a probability vector: {p}")
        p.setflags(write=False)
        object.__setattr__(self, "posterior", p)

    def deviation_from_uniform(self) -> float:
        return float(np.max(np.abs(self.posterior - 1.0 / len(self.posterior))))

    def entropy(self) -> float:
        p = self.posterior[self.posterior > 0]
        return float(-(p * np.log2(p)).sum())

    def mode(self) -> int:
        return int(np.argmax(self.posterior))


@dataclass
class SemiHonestReport:
    outcome: ProtocolOutcome
    collapsed: dict[int, int]
    posteriors: dict[PartyId, list[PosteriorTable]]
    true_sum: tuple[int, ...]


def readout_likelihood(d: int, r: int, m: int) -> np.ndarray:
    """``P(m | k, r) = |<m| U_k F |r>|^2`` for every key digit ``k``."""
    return np.array([abs(encode_op(d, k).matrix[m, r]) ** 2 for k in range(d)])


def semi_honest_p1_attack(cfg: ProtocolConfig, rng: np.random.Generator, keys=None) -> SemiHonestReport:
    """Run the protocol with a preparer that pre-measures every group.

    The decoys stay honest, so the check passes. For every honest party and
    group the preparer's posterior over the key digit is computed from the
    collapsed digit and the announced result by Bayes' rule with a uniform
    prior.
    """
    if keys is None:
        keys = random_keys(cfg, rng)
    keys = as_keys(cfg, keys)
    attack = SemiHonestP1()
    outcome = run_protocol(cfg, keys, adversary=attack, rng=rng)
    posteriors: dict[PartyId, list[PosteriorTable]] = {}
    if outcome.completed:
        announced = {
            e.sender: e.payload.values
            for e in outcome.transcript.public()
            if isinstance(e.payload, ResultVectorMsg)
        }
        for j, values in sorted(announced.items()):
            tables = []
            for t, m in enumerate(values, start=1):
                like = readout_likelihood(cfg.d, attack.collapsed[t], m)
                tables.append(PosteriorTable(j, t, like / like.sum()))
            posteriors[j] = tables
    return SemiHonestReport(outcome, dict(attack.collapsed), posteriors, mod_sum([k.digits for k in keys], cfg.d))


def _public_view(transcript: Transcript) -> tuple[dict[PartyId, tuple[int, ...]], tuple[int, ...]]:
    announced: dict[PartyId, tuple[int, ...]] = {}
    final = None
    for e in transcript.public():
        if isinstance(e.payload, ResultVectorMsg):
            announced[e.sender] = e.payload.values
        elif isinstance(e.payload, FinalSum):
            final = e.payload.values
    if final is None:
        raise ProtocolLogicError("transcript has no published sum; collusion analysis needs a completed public run")
    return announced, final


def collusion_posterior(
    colluders: Iterable[PartyId], transcript: Transcript, cfg: ProtocolConfig, keys
) -> dict[PartyId, list[PosteriorTable]]:
    """Exact posterior of a coalition over every honest party's key digits.

    The coalition sees all public broadcasts (every announced result vector
    and the sum) and knows its own members' keys; only the colluders' entries
    of ``keys`` are read. Honest keys have a uniform prior. The hidden
    zero-sum vector ``l`` and the honest key digits are enumerated jointly.
    """
    coalition = Collusion(frozenset(colluders))
    coalition.validate(cfg)
    colluders = coalition.colluders
    key_rows = as_keys(cfg, keys)
    d, n = cfg.d, cfg.n
    honest = [i for i in cfg.parties if i not in colluders]
    announced, final = _public_view(transcript)
    observed_parties = sorted(announced)

    coset = zero_sum_coset(d, n)  # (d**(n-1), n)
    grid = np.array(list(itertools.product(range(d), repeat=len(honest))), dtype=np.int64)
    honest_cols = [i - 1 for i in honest]
    obs_cols = [j - 1 for j in observed_parties]

    tables: dict[PartyId, list[PosteriorTable]] = {i: [] for i in honest}
    for t in range(cfg.length):
        full = np.zeros((len(grid), n), dtype=np.int64)
        for s in colluders:
            full[:, s - 1] = key_rows[s - 1].digits[t]
        full[:, honest_cols] = grid
        readout = (coset[None, :, :] + full[:, None, :]) % d  # (keys, l, n)
        observed = np.array([announced[j][t] for j in observed_parties], dtype=np.int64)
        match = np.all(readout[:, :, obs_cols] == observed, axis=2)
        match &= readout.sum(axis=2) % d == final[t]
        # P(l) is uniform on the coset and the honest-key prior is uniform
        likelihood = match.sum(axis=1) * float(d) ** -(n - 1)
        total = likelihood.sum()
        if total <= 0:
            raise ProtocolLogicError(f"group {t + 1}: public transcript is inconsistent with the colluders' keys")
        for col, i in enumerate(honest):
            marginal = np.bincount(grid[:, col], weights=likelihood, minlength=d) / total
            tables[i].append(PosteriorTable(i, t + 1, marginal))
    return tables


# ---------------------------------------------------------------------------
# campaigns


@dataclass(frozen=True)
class DetectionStats:
    trials: int
    aborted: int
    tested: int
    mismatches: int

    def __post_init__(self):
        if self.aborted > self.trials:
            raise DomainError("aborted cannot exceed trials")

    @property
    def abort_rate(self) -> float:
        return self.aborted / self.trials if self.trials else 0.0

    @property
    def per_decoy_error_rate(self) -> float:
        return self.mismatches / self.tested if self.tested else 0.0


def trial_streams(seed: int, trials: int) -> list[np.random.Generator]:
    """One independent stream per trial index, derived only from ``(seed, index)``."""
    return [np.random.default_rng([seed, i]) for i in range(trials)]


def campaign_trials(strategy: AttackStrategy | None, cfg: ProtocolConfig, trials: int, seed: int | None = None):
    """Yield ``(index, keys, attack, outcome)`` for each independent trial.

    Every trial draws fresh random keys from its own stream and runs against
    a fresh copy of ``strategy``.
    """
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    seed = cfg.seed if seed is None else seed
    for i, rng in enumerate(trial_streams(seed, trials)):
        attack = strategy.fresh() if strategy is not None else None
        keys = random_keys(cfg, rng)
        yield i, keys, attack, run_protocol(cfg, keys, adversary=attack, rng=rng)


def checked_decoys(outcome: ProtocolOutcome, attack: AttackStrategy | None) -> tuple[int, int]:
    """``(tested, mismatches)`` over the sequences the attack touched.

    Every sequence counts when the strategy is not a channel attack.
    """
    channel = isinstance(attack, _ChannelAttack)
    tested = mismatches = 0
    for j, rep in outcome.check_reports.items():
        if not channel or attack.attacked(j):
            tested += rep.tested
            mismatches += rep.mismatches
    return tested, mismatches


def detection_campaign(
    strategy: AttackStrategy | None, cfg: ProtocolConfig, trials: int, seed: int | None = None
) -> DetectionStats:
    """Abort count and pooled per-decoy error rate over ``trials`` runs."""
    aborted = tested = mismatches = 0
    for _, _, attack, out in campaign_trials(strategy, cfg, trials, seed):
        aborted += not out.completed
        t, m = checked_decoys(out, attack)
        tested += t
        mismatches += m
    return DetectionStats(trials, aborted, tested, mismatches)


def binomial_abort_probability(delta: int, p: float, threshold: float) -> float:
    """Chance that ``Binomial(delta, p)`` mismatches push the rate above ``threshold``."""
    if delta == 0:
        return 0.0
    return sum(
        math.comb(delta, k) * p**k * (1 - p) ** (delta - k) for k in range(delta + 1) if k / delta > threshold
    )
