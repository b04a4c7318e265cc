"""Closed-form ground truth for the simulator.

Two independent routes to the joint readout distribution of one encoded
group: :func:`exact_distribution` enumerates the zero-sum coset directly,
:func:`statevector_distribution` pushes the state through ``qudit_core``.
:func:`decoy_detection_probability` enumerates single-decoy attack branches
with its own Fourier matrix, never touching the simulator.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .qudit_core import apply_local, check_budget, encode_op, make_omega


@dataclass(frozen=True, eq=False)
class OutcomeDistribution:
    """Probability table over joint readouts ``(m_1, ..., m_n)``.

    ``table`` has shape ``(d,) * n``; ``table[m]`` is the probability of ``m``.
    """

    d: int
    n: int
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.shape != (self.d,) * self.n:
            raise DomainError(f"table must have shape {(self.d,) * self.n}, got {t.shape}")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def prob(self, outcome) -> float:
        return float(self.table[tuple(outcome)])

    @property
    def probs(self) -> dict[tuple[int, ...], float]:
        """Nonzero entries as a mapping."""
        return {tuple(int(x) for x in idx): float(self.table[idx]) for idx in zip(*np.nonzero(self.table > 1e-15))}

    def support(self) -> set[tuple[int, ...]]:
        return set(self.probs)

    def total(self) -> float:
        return float(self.table.sum())

    def marginal(self, party: int) -> np.ndarray:
        """Distribution of ``m_party`` (1-based)."""
        axes = tuple(a for a in range(self.n) if a != party - 1)
        return self.table.sum(axis=axes)

    def flat(self) -> np.ndarray:
        return self.table.reshape(-1)

    def max_abs_diff(self, other: OutcomeDistribution) -> float:
        return float(np.max(np.abs(self.table - other.table)))


def _check_keys(d: int, n: int, keys) -> tuple[int, ...]:
    keys = tuple(int(k) for k in keys)
    if len(keys) != n:
        raise DomainError(f"expected {n} key digits, got {len(keys)}")
    if any(not 0 <= k < d for k in keys):
        raise DomainError(f"key digits must lie in [0, {d})")
    return keys


def zero_sum_coset(d: int, n: int) -> np.ndarray:
    """All ``l`` in ``[0, d)**n`` with ``sum(l) % d == 0``, one per row."""
    free = np.array(list(itertools.product(range(d), repeat=n - 1)), dtype=np.int64).reshape(-1, n - 1)
    last = (-free.sum(axis=1)) % d
    return np.column_stack([free, last])


def exact_distribution(d: int, n: int, keys) -> OutcomeDistribution:
    """Uniform distribution on the key-shifted zero-sum coset."""
    if d < 2 or n < 2:
        raise DomainError("need d >= 2 and n >= 2")
    keys = _check_keys(d, n, keys)
    table = np.zeros((d,) * n)
    shifted = (zero_sum_coset(d, n) + np.array(keys)) % d
    table[tuple(shifted.T)] = float(d) ** -(n - 1)
    return OutcomeDistribution(d, n, table)


def statevector_distribution(d: int, n: int, keys, max_amplitudes: int | None = None) -> OutcomeDistribution:
    """Readout distribution obtained by simulating the encoded state."""
    keys = _check_keys(d, n, keys)
    check_budget(d, n, max_amplitudes)
    reg = make_omega(d, n, max_amplitudes)
    for wire, k in enumerate(keys, start=1):
        reg = apply_local(reg, wire, encode_op(d, k))
    return OutcomeDistribution(d, n, reg.probabilities().reshape((d,) * n))


# ---------------------------------------------------------------------------
# decoy detection


def _dft(d: int) -> np.ndarray:
    l, r = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    return np.exp(2j * np.pi * l * r / d) / np.sqrt(d)


def _basis_vectors(d: int) -> dict[str, np.ndarray]:
    # column v of each matrix is the basis state with label v
    return {"V1": np.eye(d, dtype=complex), "V2": _dft(d)}


_EVE_BASES = {
    "random": (("V1", 0.5), ("V2", 0.5)),
    "v1": (("V1", 1.0),),
    "v2": (("V2", 1.0),),
}


def _strategy_key(strategy) -> tuple[str, str | None]:
    if strategy is None:
        return "none", None
    if isinstance(strategy, str):
        name, policy = strategy, None
    else:
        name = strategy.name
        policy = getattr(strategy, "policy", None)
        policy = getattr(policy, "value", policy)
    if name == "intercept-resend":
        return name, policy or "random"
    if name == "measure-resend":
        return "intercept-resend", "v1"
    return name, None


def decoy_detection_probability(d: int, strategy) -> float:
    """Exact chance that one attacked decoy is reported as a mismatch.

    Decoy basis and value are uniform; the recipient measures in the decoy's
    basis. ``strategy`` is a name (``"none"``, ``"intercept-resend"``,
    ``"measure-resend"``, ``"entangle-probe"``) or an attack strategy object.
    """
    if d < 2:
        raise DomainError(f"d must be >= 2, got {d}")
    name, policy = _strategy_key(strategy)
    if name in ("none", "semi-honest-p1", "collusion"):
        return 0.0
    vecs = _basis_vectors(d)
    p_detect = 0.0
    for decoy_basis in ("V1", "V2"):
        for v in range(d):
            psi = vecs[decoy_basis][:, v]
            weight = 0.5 / d
            if name == "intercept-resend":
                p_ok = 0.0
                for eve_basis, p_b in _EVE_BASES[policy]:
                    for o in range(d):
                        e = vecs[eve_basis][:, o]
                        p_o = abs(np.vdot(e, psi)) ** 2
                        p_ok += p_b * p_o * abs(np.vdot(psi, e)) ** 2
            elif name == "entangle-probe":
                # |x>|0> -> |x>|x>: tracing out the ancilla dephases the decoy in V1
                rho = np.diag(np.abs(psi) ** 2)
                p_ok = float(np.real(np.vdot(psi, rho @ psi)))
            else:
                raise DomainError(f"no detection model for strategy {name!r}")
            p_detect += weight * (1.0 - p_ok)
    return float(p_detect)
