"""Dense state-vector simulation of d-level quantum registers.

Amplitudes are stored as a flat complex vector of length ``d**wires``. Index
digits are read in base ``d`` with wire 1 as the most significant digit, so
the amplitude of ``|x_1 x_2 ... x_w>`` lives at ``sum(x_i * d**(w - i))``.

Wires are 1-based in the public API (they name parties' particles); internal
helpers take 0-based axes.
"""

from __future__ import annotations

import cmath
import enum
import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InternalStateError, ResourceLimitError

#: Default cap on the number of amplitudes a single register may hold.
MAX_AMPLITUDES = 1 << 24

NORM_TOL = 1e-9
ARITH_TOL = 1e-12


class Basis(enum.Enum):
    """The two conjugate measurement bases.

    ``V1`` is the computational basis ``{|r>}``; ``V2`` is ``{F|r>}``.
    """

    V1 = "V1"
    V2 = "V2"


@dataclass(frozen=True)
class MeasurementOutcome:
    value: int
    basis: Basis


def _check_dim(d: int) -> None:
    if not isinstance(d, (int, np.integer)) or d < 2:
        raise DomainError(f"dimension d must be an integer >= 2, got {d!r}")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.complex128)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LocalOperator:
    """A ``d x d`` unitary acting on a single wire."""

    d: int
    matrix: np.ndarray

    def __post_init__(self):
        _check_dim(self.d)
        m = _frozen(self.matrix)
        if m.shape != (self.d, self.d):
            raise DomainError(f"operator must be {self.d}x{self.d}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise DomainError("operator has non-finite entries")
        object.__setattr__(self, "matrix", m)

    def __matmul__(self, other: LocalOperator) -> LocalOperator:
        if other.d != self.d:
            raise DomainError(f"cannot compose d={self.d} with d={other.d}")
        return LocalOperator(self.d, self.matrix @ other.matrix)

    def dagger(self) -> LocalOperator:
        return LocalOperator(self.d, self.matrix.conj().T)

    def is_unitary(self, atol: float = NORM_TOL) -> bool:
        prod = self.matrix.conj().T @ self.matrix
        return bool(np.allclose(prod, np.eye(self.d), rtol=0.0, atol=atol))

    def apply_to(self, value: int) -> np.ndarray:
        """Column ``value`` of the matrix, i.e. the image of ``|value>``."""
        return self.matrix[:, value]


@dataclass(frozen=True, eq=False)
class QuditRegister:
    """Normalized pure state of ``wires`` qudits of dimension ``d``."""

    d: int
    wires: int
    amps: np.ndarray

    def __post_init__(self):
        _check_dim(self.d)
        if self.wires < 1:
            raise DomainError(f"a register needs at least one wire, got {self.wires}")
        amps = _frozen(np.asarray(self.amps).reshape(-1))
        if amps.size != self.d**self.wires:
            raise DomainError(
                f"expected {self.d}**{self.wires} = {self.d ** self.wires} amplitudes, got {amps.size}"
            )
        if not np.all(np.isfinite(amps)):
            raise DomainError("register has non-finite amplitudes")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise DomainError(f"register is not normalized (squared norm {norm!r})")
        object.__setattr__(self, "amps", amps)

    def norm(self) -> float:
        return math.sqrt(float(np.vdot(self.amps, self.amps).real))

    def tensor(self) -> np.ndarray:
        """Amplitudes viewed as a rank-``wires`` tensor, one axis per wire."""
        return self.amps.reshape((self.d,) * self.wires)

    def probabilities(self) -> np.ndarray:
        """Born probabilities of every basis string in V1."""
        return np.abs(self.amps) ** 2

    def index_of(self, digits) -> int:
        idx = 0
        for x in digits:
            idx = idx * self.d + int(x)
        return idx

    @functools.cached_property
    def support(self) -> np.ndarray:
        """Flat indices of the nonzero amplitudes."""
        idx = np.flatnonzero(self.amps)
        idx.setflags(write=False)
        return idx

    def allclose(self, other: QuditRegister, atol: float = NORM_TOL) -> bool:
        return (
            self.d == other.d
            and self.wires == other.wires
            and bool(np.allclose(self.amps, other.amps, rtol=0.0, atol=atol))
        )


def primitive_root(d: int) -> complex:
    """Return ``exp(2*pi*i/d)``."""
    _check_dim(d)
    return cmath.exp(2j * math.pi / d)


def _root_powers(d: int) -> np.ndarray:
    # Reduce exponents mod d before exponentiating; keeps entries exact to ~1 ulp.
    return np.exp(2j * np.pi * np.arange(d) / d)


@functools.lru_cache(maxsize=64)
def fourier_op(d: int) -> LocalOperator:
    """Order-``d`` discrete Fourier transform, entry ``(l, r) = zeta**(l*r) / sqrt(d)``."""
    _check_dim(d)
    idx = np.arange(d)
    exponents = np.outer(idx, idx) % d
    return LocalOperator(d, _root_powers(d)[exponents] / math.sqrt(d))


@functools.lru_cache(maxsize=1024)
def shift_op(d: int, k: int) -> LocalOperator:
    """Cyclic shift ``|u> -> |u + k mod d>``."""
    _check_dim(d)
    if not 0 <= k < d:
        raise DomainError(f"shift k must lie in [0, {d}), got {k}")
    m = np.zeros((d, d), dtype=np.complex128)
    u = np.arange(d)
    m[(u + k) % d, u] = 1.0
    return LocalOperator(d, m)


@functools.lru_cache(maxsize=1024)
def encode_op(d: int, k: int) -> LocalOperator:
    """The encoding unitary: Fourier transform first, then shift by ``k``."""
    return shift_op(d, k) @ fourier_op(d)


def check_budget(d: int, wires: int, max_amplitudes: int | None = None) -> None:
    limit = MAX_AMPLITUDES if max_amplitudes is None else max_amplitudes
    size = d**wires
    if size > limit:
        raise ResourceLimitError(
            f"d**wires = {d}**{wires} = {size} amplitudes exceeds the limit of {limit} (max_amplitudes)"
        )


def make_omega(d: int, n: int, max_amplitudes: int | None = None) -> QuditRegister:
    """The n-party equal-digit state ``sum_r |r r ... r> / sqrt(d)``."""
    _check_dim(d)
    if n < 2:
        raise DomainError(f"entangled state needs n >= 2 wires, got {n}")
    check_budget(d, n, max_amplitudes)
    return _omega(d, n)


@functools.lru_cache(maxsize=32)
def _omega(d: int, n: int) -> QuditRegister:
    amps = np.zeros(d**n, dtype=np.complex128)
    # index of |r r ... r> is r * (1 + d + ... + d**(n-1))
    stride = (d**n - 1) // (d - 1)
    amps[np.arange(d) * stride] = 1.0 / math.sqrt(d)
    return QuditRegister(d, n, amps)


@functools.lru_cache(maxsize=4096)
def basis_state(d: int, value: int) -> QuditRegister:
    amps = np.zeros(d, dtype=np.complex128)
    amps[value] = 1.0
    return QuditRegister(d, 1, amps)


@functools.lru_cache(maxsize=4096)
def prepare_single(d: int, basis: Basis, value: int) -> QuditRegister:
    """One-wire register ``|value>`` (V1) or ``F|value>`` (V2)."""
    _check_dim(d)
    if not 0 <= value < d:
        raise DomainError(f"value must lie in [0, {d}), got {value}")
    if basis is Basis.V1:
        return basis_state(d, value)
    return QuditRegister(d, 1, fourier_op(d).apply_to(value))


def _check_wire(wires: int, wire: int) -> int:
    if not 1 <= wire <= wires:
        raise DomainError(f"wire must lie in [1, {wires}], got {wire}")
    return wire - 1


def apply_matrix(amps: np.ndarray, d: int, wires: int, axis: int, matrix: np.ndarray) -> np.ndarray:
    """Apply a ``d x d`` matrix to 0-based ``axis`` of a flat amplitude vector."""
    view = amps.reshape(d**axis, d, d ** (wires - axis - 1))
    return np.matmul(matrix, view).reshape(-1)


def apply_local(reg: QuditRegister, wire: int, op: LocalOperator) -> QuditRegister:
    """Apply ``op`` to one wire, identity elsewhere."""
    if op.d != reg.d:
        raise DomainError(f"operator dimension {op.d} does not match register dimension {reg.d}")
    axis = _check_wire(reg.wires, wire)
    return QuditRegister(reg.d, reg.wires, apply_matrix(reg.amps, reg.d, reg.wires, axis, op.matrix))


@functools.lru_cache(maxsize=128)
def readout_matrix(d: int, basis: Basis) -> np.ndarray:
    """Rows are the bras of the basis: V1 -> identity, V2 -> F^dagger."""
    if basis is Basis.V1:
        return _frozen(np.eye(d))
    return _frozen(fourier_op(d).matrix.conj().T)


def branch_amplitudes(amps: np.ndarray, d: int, wires: int, axis: int, rows: np.ndarray) -> np.ndarray:
    """Unnormalized post-measurement states of the other wires.

    Returns a ``(d, d**(wires-1))`` array whose row ``m`` is ``<m| rows |psi>``
    contracted on ``axis``; the remaining wires keep their relative order.
    """
    if axis == 0:
        return rows @ amps.reshape(d, -1)
    t = amps.reshape(d**axis, d, d ** (wires - axis - 1))
    return np.matmul(rows, t).transpose(1, 0, 2).reshape(d, -1)


def sparse_branch_amplitudes(
    amps: np.ndarray, support: np.ndarray, d: int, wires: int, axis: int, rows: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Same as :func:`branch_amplitudes` for a state with few nonzero amplitudes.

    ``support`` lists (a superset of) the nonzero flat indices. Returns the
    branch amplitudes restricted to the columns that can be nonzero, and
    those column indices in the flat layout of the remaining wires.
    """
    inner = d ** (wires - axis - 1)
    digit = (support // inner) % d
    rest = (support // (inner * d)) * inner + support % inner
    cols, inverse = np.unique(rest, return_inverse=True)
    compact = np.zeros((d, len(cols)), dtype=np.complex128)
    compact[digit, inverse] = amps[support]
    return rows @ compact, cols


def sample_branch(branches: np.ndarray, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Draw an outcome from the Born rule and return it with its normalized branch."""
    if branches.shape[1] < 4096:
        probs = (branches * branches.conj()).real.sum(axis=1)
    else:
        probs = np.array([np.vdot(row, row).real for row in branches])
    cdf = probs.cumsum()
    total = float(cdf[-1])
    if abs(total - 1.0) > NORM_TOL:
        raise InternalStateError(f"branch probabilities sum to {total!r}, not 1")
    m = min(int(cdf.searchsorted(rng.random() * total, side="right")), len(probs) - 1)
    p = float(probs[m])
    if p < ARITH_TOL:
        raise InternalStateError(f"selected branch {m} has near-zero probability {p!r}")
    return m, branches[m] / math.sqrt(p)


def measure_wire(
    reg: QuditRegister, wire: int, basis: Basis, rng: np.random.Generator
) -> tuple[MeasurementOutcome, QuditRegister]:
    """Projectively measure one wire in ``basis``.

    The returned register is the collapsed state on all wires, including the
    measured one (left in ``|m>`` for V1 or ``F|m>`` for V2).
    """
    axis = _check_wire(reg.wires, wire)
    d = reg.d
    branches = branch_amplitudes(reg.amps, d, reg.wires, axis, readout_matrix(d, basis))
    m, rest = sample_branch(branches, rng)
    local = prepare_single(d, basis, m).amps
    rest = rest.reshape(d**axis, 1, d ** (reg.wires - axis - 1))
    post = (rest * local.reshape(1, d, 1)).reshape(-1)
    return MeasurementOutcome(m, basis), QuditRegister(d, reg.wires, post)
