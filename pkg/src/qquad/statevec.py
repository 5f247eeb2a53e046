"""Exact complex state-vector engine for small qubit registers.

States live on m qubits (amplitude arrays of length 2**m).  Qubit 0 is the
most significant bit of the basis index, i.e. basis index
i = sum_k j_k * 2**(m-1-k) for qubit values j_k.  Unitaries are structured
(permutations, modular arithmetic, Hadamard layers, QFT, diagonal phases,
small dense blocks) rather than general 2**m x 2**m matrices, so registers
up to the mid-twenties of qubits stay feasible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CapacityError

QUBIT_CAP = 26
DENSE_BLOCK_CAP = 12
NORM_TOL = 1e-10


@dataclass(frozen=True)
class StateVector:
    """Normalized complex amplitudes over the 2**m basis states."""

    m: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        object.__setattr__(self, "amplitudes", amps)
        if self.m < 1:
            raise ValueError(f"qubit count must be >= 1, got {self.m}")
        if amps.shape != (1 << self.m,):
            raise ValueError(
                f"amplitude array has length {amps.shape}, expected 2**{self.m}"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-8:
            raise ValueError(f"state not normalized: |psi| = {norm!r}")

    @property
    def dim(self) -> int:
        return 1 << self.m

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def isclose(self, other: "StateVector", tol: float = 1e-10) -> bool:
        return self.m == other.m and bool(
            np.max(np.abs(self.amplitudes - other.amplitudes)) <= tol
        )

    def dump_lines(self) -> list[str]:
        """Debug text format: one line per basis index, "index re im"."""
        return [
            f"{i} {a.real!r} {a.imag!r}" for i, a in enumerate(self.amplitudes)
        ]


def basis_state(m: int, b: int) -> StateVector:
    """The computational basis state |b> on m qubits."""
    if m < 1 or m > QUBIT_CAP:
        raise ValueError(f"qubit count {m} outside [1, {QUBIT_CAP}]")
    if not 0 <= b < (1 << m):
        raise ValueError(f"basis index {b} out of range for {m} qubits")
    amps = np.zeros(1 << m, dtype=np.complex128)
    amps[b] = 1.0
    return StateVector(m, amps)


def _check_range(lo: int, hi: int, m: int):
    if not (0 <= lo < hi <= m):
        raise ValueError(f"register [{lo}, {hi}) out of bounds for m={m}")


def _axis_view(amps: np.ndarray, m: int, lo: int, hi: int) -> np.ndarray:
    """Reshape so the register [lo, hi) becomes the middle axis.

    With qubit 0 as MSB, qubits [lo, hi) occupy a contiguous block of bits,
    so the state splits as (prefix, register, suffix).
    """
    w = hi - lo
    pre = 1 << lo
    suf = 1 << (m - hi)
    return amps.reshape(pre, 1 << w, suf)


class StructuredUnitary:
    """Base class: a unitary with a structured action on basis states."""

    def apply(self, state: StateVector) -> StateVector:
        amps = self._apply_raw(state.amplitudes, state.m)
        return StateVector(state.m, amps)

    def _apply_raw(self, amps: np.ndarray, m: int) -> np.ndarray:
        raise NotImplementedError


class BasisPermutation(StructuredUnitary):
    """|i> -> |perm[i]> for a bijection perm on [0, 2**m)."""

    def __init__(self, perm: np.ndarray):
        self.perm = np.asarray(perm, dtype=np.int64)

    @classmethod
    def from_function(cls, m: int, fn: Callable[[int], int]) -> "BasisPermutation":
        return cls(np.array([fn(i) for i in range(1 << m)], dtype=np.int64))

    def inverse(self) -> "BasisPermutation":
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return BasisPermutation(inv)

    def _apply_raw(self, amps, m):
        if self.perm.size != amps.size:
            raise ValueError(
                f"permutation on {self.perm.size} indices applied to dim {amps.size}"
            )
        out = np.empty_like(amps)
        out[self.perm] = amps
        return out


class ModularAddConstant(StructuredUnitary):
    """x -> (x + c) mod 2**w on the register of qubits [lo, hi), w = hi - lo."""

    def __init__(self, lo: int, hi: int, c: int):
        self.lo, self.hi, self.c = lo, hi, c

    def inverse(self) -> "ModularAddConstant":
        return ModularAddConstant(self.lo, self.hi, -self.c)

    def _apply_raw(self, amps, m):
        _check_range(self.lo, self.hi, m)
        view = _axis_view(amps, m, self.lo, self.hi)
        return np.roll(view, self.c % view.shape[1], axis=1).reshape(amps.shape)


class ModularNegate(StructuredUnitary):
    """x -> (-x) mod 2**w on the register [lo, hi)."""

    def __init__(self, lo: int, hi: int):
        self.lo, self.hi = lo, hi

    def _apply_raw(self, amps, m):
        _check_range(self.lo, self.hi, m)
        view = _axis_view(amps, m, self.lo, self.hi)
        w = view.shape[1]
        idx = (-np.arange(w)) % w
        out = np.empty_like(view)
        out[:, idx, :] = view
        return out.reshape(amps.shape)


class HadamardLayer(StructuredUnitary):
    """Hadamard on every qubit in [lo, hi)."""

    def __init__(self, lo: int, hi: int):
        self.lo, self.hi = lo, hi

    def _apply_raw(self, amps, m):
        _check_range(self.lo, self.hi, m)
        out = amps
        inv_sqrt2 = 1.0 / np.sqrt(2.0)
        for q in range(self.lo, self.hi):
            view = _axis_view(out, m, q, q + 1)
            a, b = view[:, 0, :], view[:, 1, :]
            out = np.stack(((a + b) * inv_sqrt2, (a - b) * inv_sqrt2), axis=1)
            out = out.reshape(amps.shape)
        return out


class Qft(StructuredUnitary):
    """Discrete Fourier transform on the register [lo, hi).

    Applied as a dense DFT along the register axis; widths above
    DENSE_BLOCK_CAP are refused.
    """

    def __init__(self, lo: int, hi: int, inverse: bool = False):
        self.lo, self.hi, self.inv = lo, hi, inverse

    def inverse_op(self) -> "Qft":
        return Qft(self.lo, self.hi, not self.inv)

    def _apply_raw(self, amps, m):
        _check_range(self.lo, self.hi, m)
        w = self.hi - self.lo
        if w > DENSE_BLOCK_CAP:
            raise CapacityError(f"QFT register width {w} > {DENSE_BLOCK_CAP}")
        n = 1 << w
        x = np.arange(n)
        sign = -1.0 if self.inv else 1.0
        f = np.exp(sign * 2j * np.pi * np.outer(x, x) / n) / np.sqrt(n)
        view = _axis_view(amps, m, self.lo, self.hi)
        return np.einsum("yx,pxs->pys", f, view).reshape(amps.shape)


class ControlledPhase(StructuredUnitary):
    """Multiply amplitude of |i> by exp(1j*angle) where the predicate holds.

    ``predicate`` is either a boolean mask over basis indices or a callable
    accepting an int64 index array and returning a boolean array.
    """

    def __init__(self, predicate, angle: float):
        self.predicate = predicate
        self.angle = angle

    def _mask(self, dim: int) -> np.ndarray:
        if isinstance(self.predicate, np.ndarray):
            if self.predicate.size != dim:
                raise ValueError("predicate mask has wrong length")
            return self.predicate.astype(bool)
        return np.asarray(self.predicate(np.arange(dim, dtype=np.int64)), dtype=bool)

    def _apply_raw(self, amps, m):
        mask = self._mask(amps.size)
        out = amps.copy()
        out[mask] *= np.exp(1j * self.angle)
        return out


class SmallDenseBlock(StructuredUnitary):
    """Arbitrary unitary on an explicit tuple of target qubits (<= 12)."""

    def __init__(self, qubits: Sequence[int], matrix: np.ndarray):
        self.qubits = tuple(qubits)
        self.matrix = np.asarray(matrix, dtype=np.complex128)
        t = len(self.qubits)
        if t > DENSE_BLOCK_CAP:
            raise CapacityError(f"dense block on {t} qubits > {DENSE_BLOCK_CAP}")
        if self.matrix.shape != (1 << t, 1 << t):
            raise ValueError("dense block matrix shape does not match qubit count")

    def _apply_raw(self, amps, m):
        t = len(self.qubits)
        if any(not 0 <= q < m for q in self.qubits):
            raise ValueError(f"target qubits {self.qubits} out of range for m={m}")
        if len(set(self.qubits)) != t:
            raise ValueError("duplicate target qubits")
        tensor = amps.reshape((2,) * m)
        rest = [q for q in range(m) if q not in self.qubits]
        tensor = np.transpose(tensor, list(self.qubits) + rest)
        tensor = tensor.reshape(1 << t, -1)
        tensor = self.matrix @ tensor
        tensor = tensor.reshape((2,) * m)
        # undo the transpose
        order = list(self.qubits) + rest
        inv = np.argsort(order)
        return np.transpose(tensor, inv).reshape(amps.shape)


def apply(u: StructuredUnitary, state: StateVector) -> StateVector:
    """Apply a structured unitary, preserving normalization."""
    return u.apply(state)


def apply_program(program: Sequence[StructuredUnitary], state: StateVector) -> StateVector:
    for u in program:
        state = u.apply(state)
    return state


def measure(state: StateVector, rng: np.random.Generator) -> int:
    """Sample a basis index with probability |amplitude|^2."""
    p = state.probabilities()
    p = p / p.sum()
    return int(rng.choice(p.size, p=p))


@dataclass
class OutcomeDistribution:
    """A finite probability distribution over output values."""

    support: dict = field(default_factory=dict)

    def __post_init__(self):
        total = sum(self.support.values())
        if self.support and abs(total - 1.0) > NORM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        if any(p < -1e-15 for p in self.support.values()):
            raise ValueError("negative probability")

    def prob(self, value) -> float:
        return self.support.get(value, 0.0)

    def values(self) -> list:
        return sorted(self.support)

    def mean(self) -> float:
        return sum(v * p for v, p in self.support.items())

    def sample(self, rng: np.random.Generator, size: int | None = None):
        vals = np.array(sorted(self.support), dtype=float)
        probs = np.array([self.support[v] for v in sorted(self.support)])
        probs = probs / probs.sum()
        out = rng.choice(vals, p=probs, size=size)
        return float(out) if size is None else out

    def tv_distance(self, other: "OutcomeDistribution") -> float:
        keys = set(self.support) | set(other.support)
        return 0.5 * sum(abs(self.prob(k) - other.prob(k)) for k in keys)


def exact_distribution(
    state: StateVector, output_map: Callable[[int], object] | None = None
) -> OutcomeDistribution:
    """Exact measurement law of a state, grouped through ``output_map``."""
    probs = state.probabilities()
    support: dict = {}
    if output_map is None:
        for i in np.flatnonzero(probs > 0):
            support[int(i)] = support.get(int(i), 0.0) + float(probs[i])
    else:
        for i in np.flatnonzero(probs > 0):
            v = output_map(int(i))
            support[v] = support.get(v, 0.0) + float(probs[i])
    return OutcomeDistribution(support)


def matrix_of(u: StructuredUnitary, m: int) -> np.ndarray:
    """Dense matrix of a structured unitary (for small-m checks only)."""
    if m > 12:
        raise CapacityError("dense matrix extraction capped at 12 qubits")
    dim = 1 << m
    cols = np.empty((dim, dim), dtype=np.complex128)
    for b in range(dim):
        cols[:, b] = u.apply(basis_state(m, b)).amplitudes
    return cols


def is_unitary_on_basis(u: StructuredUnitary, m: int, tol: float = NORM_TOL) -> bool:
    """Exhaustive unitarity check: images of all basis states are orthonormal."""
    mat = matrix_of(u, m)
    gram = mat.conj().T @ mat
    return bool(np.max(np.abs(gram - np.eye(1 << m))) <= tol)
