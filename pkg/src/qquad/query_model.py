"""Oracle queries, query circuits, staged measured algorithms.

A query writes an encoded oracle value into a register by modular addition:

    |i>|x>|y>  ->  |i>|x (+) beta(f(tau(i)))>|y>    for i in Z,

identity otherwise, with (+) addition mod 2**m_out.  Circuits interleave
structured unitaries with query slots; measured algorithms chain circuits
with classical sampling between stages.  The fan-in reduction compiles a
query against a pointwise-transformed oracle into a plain circuit with
2*fan_in query slots on the original oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CapacityError
from .statevec import (
    BasisPermutation,
    ModularAddConstant,
    ModularNegate,
    OutcomeDistribution,
    StateVector,
    StructuredUnitary,
    apply_program,
    basis_state,
    measure,
)

ENUMERATION_BUDGET = 1 << 20


class Oracle:
    """Deterministic black-box function with an evaluation counter.

    The counter tracks classical evaluations (diagnostic); quantum query
    accounting is separate and lives with the circuit runners.
    """

    def __init__(self, fn: Callable, domain: str = ""):
        self.fn = fn
        self.domain = domain
        self.evaluations = 0

    def __call__(self, x):
        self.evaluations += 1
        return self.fn(x)


@dataclass
class QueryCounter:
    queries: int = 0

    def tick(self, amount: int = 1):
        self.queries += amount


@dataclass(frozen=True)
class QuerySpec:
    """Wiring of an oracle query: register widths, active index set,
    index-to-domain map and value encoder."""

    m: int
    m_in: int
    m_out: int
    z: frozenset
    tau: Callable[[int], object]
    beta: Callable[[object], int]

    def __post_init__(self):
        if self.m_in + self.m_out > self.m:
            raise ValueError(
                f"m_in + m_out = {self.m_in + self.m_out} exceeds m = {self.m}"
            )
        if self.m_in < 0 or self.m_out < 1:
            raise ValueError("register widths must be nonnegative (m_out >= 1)")
        if not self.z:
            raise ValueError("active index set is empty")
        if any(not 0 <= i < (1 << self.m_in) for i in self.z):
            raise ValueError("active index outside [0, 2**m_in)")


class QueryGate(StructuredUnitary):
    """The query unitary for a fixed (spec, oracle) pair.

    The permutation is built once on first use; each application counts
    one quantum query on the attached counter.
    """

    def __init__(self, spec: QuerySpec, oracle: Oracle, counter: QueryCounter | None = None):
        self.spec = spec
        self.oracle = oracle
        self.counter = counter
        self._perm: np.ndarray | None = None

    def _build(self) -> np.ndarray:
        spec = self.spec
        w_out = 1 << spec.m_out
        shifts = np.zeros(1 << spec.m_in, dtype=np.int64)
        for i in spec.z:
            shifts[i] = int(spec.beta(self.oracle(spec.tau(i)))) % w_out
        y_bits = spec.m - spec.m_in - spec.m_out
        idx = np.arange(1 << spec.m, dtype=np.int64)
        i_part = idx >> (spec.m_out + y_bits)
        x_part = (idx >> y_bits) & (w_out - 1)
        y_part = idx & ((1 << y_bits) - 1)
        new_x = (x_part + shifts[i_part]) % w_out
        return (i_part << (spec.m_out + y_bits)) | (new_x << y_bits) | y_part

    def _apply_raw(self, amps, m):
        if m != self.spec.m:
            raise ValueError(f"query expects {self.spec.m} qubits, state has {m}")
        if self._perm is None:
            self._perm = self._build()
        if self.counter is not None:
            self.counter.tick()
        out = np.empty_like(amps)
        out[self._perm] = amps
        return out


def apply_query(
    spec: QuerySpec,
    oracle: Oracle,
    state: StateVector,
    counter: QueryCounter | None = None,
) -> StateVector:
    """One application of the query unitary (counts one query)."""
    return QueryGate(spec, oracle, counter).apply(state)


Program = Sequence[StructuredUnitary]


@dataclass(frozen=True)
class QueryCircuit:
    """A measurement-free algorithm: unitary programs around query slots.

    ``programs`` has length n+1; the circuit applies programs[0], then
    alternates query / program n times.
    """

    query: QuerySpec
    programs: tuple

    def __post_init__(self):
        if len(self.programs) < 1:
            raise ValueError("need at least one unitary program")

    @property
    def m(self) -> int:
        return self.query.m

    @property
    def n_queries(self) -> int:
        return len(self.programs) - 1


def run_circuit(
    circuit: QueryCircuit,
    oracle: Oracle,
    b0: int,
    counter: QueryCounter | None = None,
) -> StateVector:
    """Evolve |b0> through the circuit; every query slot is counted."""
    if not 0 <= b0 < (1 << circuit.m):
        raise ValueError(f"start index {b0} out of range")
    gate = QueryGate(circuit.query, oracle, counter)
    state = apply_program(circuit.programs[0], basis_state(circuit.m, b0))
    for program in circuit.programs[1:]:
        state = gate.apply(state)
        state = apply_program(program, state)
    return state


@dataclass(frozen=True)
class MeasuredAlgorithm:
    """Staged algorithm: run a circuit, measure, choose the next start
    from the outcomes so far, and map the outcome tuple to a real value.

    ``starts[0]`` is an int; later entries are ints (outcome-independent)
    or callables of the preceding outcome tuple.  ``output_map_vec`` is an
    optional vectorized version of ``output_map`` taking an (runs, k)
    outcome matrix, used by the batch sampler.
    """

    stages: tuple
    starts: tuple
    output_map: Callable[[tuple], float]
    output_map_vec: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if len(self.stages) != len(self.starts):
            raise ValueError("one start rule per stage required")
        if not isinstance(self.starts[0], (int, np.integer)):
            raise ValueError("first start rule must be a basis index")

    @property
    def n_queries(self) -> int:
        return sum(s.n_queries for s in self.stages)

    @property
    def independent_stages(self) -> bool:
        return all(isinstance(s, (int, np.integer)) for s in self.starts)


@dataclass
class MeasuredRun:
    value: float
    queries: int
    outcomes: tuple


def _start_of(alg: MeasuredAlgorithm, ell: int, prefix: tuple) -> int:
    s = alg.starts[ell]
    return int(s) if isinstance(s, (int, np.integer)) else int(s(prefix))


def run_measured(
    alg: MeasuredAlgorithm, oracle: Oracle, rng: np.random.Generator
) -> MeasuredRun:
    """Single sampled execution with exact query accounting."""
    counter = QueryCounter()
    outcomes: list[int] = []
    for ell, stage in enumerate(alg.stages):
        state = run_circuit(stage, oracle, _start_of(alg, ell, tuple(outcomes)), counter)
        outcomes.append(measure(state, rng))
    return MeasuredRun(float(alg.output_map(tuple(outcomes))), counter.queries, tuple(outcomes))


def sample_outputs(
    alg: MeasuredAlgorithm, oracle: Oracle, rng: np.random.Generator, runs: int
) -> np.ndarray:
    """Batch of independent output samples.

    Falls back to run_measured when stages depend on earlier outcomes or no
    vectorized output map is available; otherwise samples every stage from
    its exact one-shot law (distributionally identical, far faster).
    """
    if not alg.independent_stages or alg.output_map_vec is None:
        return np.array(
            [run_measured(alg, oracle, rng).value for _ in range(runs)]
        )
    law_cache: dict[int, np.ndarray] = {}
    cols = []
    for ell, stage in enumerate(alg.stages):
        key = id(stage) ^ hash(int(alg.starts[ell]))
        if key not in law_cache:
            state = run_circuit(stage, oracle, int(alg.starts[ell]))
            law_cache[key] = state.probabilities()
        p = law_cache[key]
        cols.append(rng.choice(p.size, p=p / p.sum(), size=runs))
    outcomes = np.stack(cols, axis=1)
    return np.asarray(alg.output_map_vec(outcomes), dtype=float)


def exact_output_distribution(
    alg: MeasuredAlgorithm, oracle: Oracle, budget: int = ENUMERATION_BUDGET
) -> OutcomeDistribution:
    """Full output law by branch enumeration (zero-probability pruning).

    Refuses once the number of visited outcome tuples would exceed
    ``budget``.
    """
    support: dict = {}
    visited = 0

    def walk(ell: int, prefix: tuple, prob: float):
        nonlocal visited
        if ell == len(alg.stages):
            visited += 1
            if visited > budget:
                raise CapacityError(
                    f"outcome enumeration exceeded budget {budget}"
                )
            v = float(alg.output_map(prefix))
            support[v] = support.get(v, 0.0) + prob
            return
        state = run_circuit(alg.stages[ell], oracle, _start_of(alg, ell, prefix))
        probs = state.probabilities()
        for x in np.flatnonzero(probs > 1e-300):
            walk(ell + 1, prefix + (int(x),), prob * float(probs[x]))

    walk(0, (), 1.0)
    return OutcomeDistribution(support)


def compose_sum(parts: Sequence[MeasuredAlgorithm]) -> MeasuredAlgorithm:
    """Algorithm whose output is the sum of independent part outputs.

    Query counts add; stage start rules of each part only ever see that
    part's own outcomes.
    """
    parts = list(parts)
    if not parts:
        raise ValueError("empty composition")
    stages: list = []
    starts: list = []
    offsets: list[int] = []
    for part in parts:
        offsets.append(len(stages))
        for ell, s in enumerate(part.starts):
            if ell == 0 or isinstance(s, (int, np.integer)):
                starts.append(int(s))
            else:
                # slice out exactly this part's preceding outcomes
                def rule(prefix, s=s, lo=offsets[-1], ell=ell):
                    return s(tuple(prefix[lo: lo + ell]))

                starts.append(rule)
            stages.append(part.stages[ell])
    sizes = [len(p.stages) for p in parts]

    def output_map(outcomes: tuple) -> float:
        total = 0.0
        for part, off, k in zip(parts, offsets, sizes):
            total += part.output_map(tuple(outcomes[off: off + k]))
        return total

    vec = None
    if all(p.output_map_vec is not None for p in parts):

        def vec(matrix: np.ndarray) -> np.ndarray:
            total = np.zeros(matrix.shape[0])
            for part, off, k in zip(parts, offsets, sizes):
                total += part.output_map_vec(matrix[:, off: off + k])
            return total

    return MeasuredAlgorithm(tuple(stages), tuple(starts), output_map, vec)


def median_boost(alg: MeasuredAlgorithm, nu: int) -> MeasuredAlgorithm:
    """Run ``nu`` independent copies and output the lower median.

    Multiplies the query count by nu and drives the failure probability of
    a <=1/4-failure base algorithm down to exp(-nu/8).
    """
    if nu < 1:
        raise ValueError("repetition count must be >= 1")
    k = len(alg.stages)
    stages: list = []
    starts: list = []
    for copy in range(nu):
        for ell, s in enumerate(alg.starts):
            if isinstance(s, (int, np.integer)):
                starts.append(int(s))
            else:
                starts.append(lambda prefix, s=s, lo=copy * k, ell=ell: s(
                    tuple(prefix[lo: lo + ell])
                ))
            stages.append(alg.stages[ell])

    def output_map(outcomes: tuple) -> float:
        vals = sorted(
            alg.output_map(tuple(outcomes[c * k: (c + 1) * k])) for c in range(nu)
        )
        return vals[(nu - 1) // 2]

    vec = None
    if alg.output_map_vec is not None:

        def vec(matrix: np.ndarray) -> np.ndarray:
            vals = np.stack(
                [alg.output_map_vec(matrix[:, c * k: (c + 1) * k]) for c in range(nu)],
                axis=1,
            )
            vals.sort(axis=1)
            return vals[:, (nu - 1) // 2]

    return MeasuredAlgorithm(tuple(stages), tuple(starts), output_map, vec)


# ---------------------------------------------------------------------------
# Fan-in reduction: simulating a query on a pointwise-transformed oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FanInReduction:
    """Pointwise oracle transform g(s) = rho(s, enc(f(eta_0(s))), ...,
    enc(f(eta_{fan_in-1}(s)))).

    ``etas`` maps points of the transformed domain back to the base domain,
    ``beta`` encodes base values into code_bits-bit integers, and ``rho``
    combines the encoded values into the transformed value.
    """

    fan_in: int
    code_bits: int
    etas: tuple
    beta: Callable[[object], int]
    rho: Callable

    def __post_init__(self):
        if self.fan_in < 1:
            raise ValueError("fan_in must be >= 1")
        if len(self.etas) != self.fan_in:
            raise ValueError("need one eta per fan-in slot")

    def transform(self, oracle: Oracle) -> Oracle:
        """The transformed oracle itself (classical reference path)."""

        def g(s):
            codes = tuple(
                int(self.beta(oracle(eta(s)))) for eta in self.etas
            )
            return self.rho(s, *codes)

        return Oracle(g, domain="reduced")


def _pack_fields(values: list[np.ndarray], widths: list[int]) -> np.ndarray:
    out = np.zeros_like(values[0])
    for v, w in zip(values, widths):
        out = (out << w) | v
    return out


class _FieldPermutation(BasisPermutation):
    """Basis permutation that reorders contiguous bit fields."""

    def __init__(self, m: int, widths: list[int], new_order: list[int]):
        idx = np.arange(1 << m, dtype=np.int64)
        fields = []
        pos = m
        for w in widths:
            pos -= w
            fields.append((idx >> pos) & ((1 << w) - 1))
        # widths are listed MSB-first; pos walks down to 0
        if pos != 0:
            raise ValueError("field widths must cover the register")
        perm = _pack_fields([fields[i] for i in new_order], [widths[i] for i in new_order])
        super().__init__(perm)


def compile_reduction(query: QuerySpec, reduction: FanInReduction) -> QueryCircuit:
    """Circuit with 2*fan_in query slots on the base oracle that acts, on
    inputs with cleared ancillas, exactly like the query against the
    transformed oracle.

    Layout (MSB to LSB): |i>|x>|y>|j>|z_0>...|z_{fan_in-1}> where i, x, y
    are the original query registers, j is a ceil(log2 fan_in)-bit counter
    and each z_t holds one code_bits-bit encoded value.
    """
    kappa, mstar = reduction.fan_in, reduction.code_bits
    mt, mt_in, mt_out = query.m, query.m_in, query.m_out
    k0 = max(0, math.ceil(math.log2(kappa))) if kappa > 1 else 0
    m = mt + k0 + kappa * mstar
    if m > 24:
        raise CapacityError(f"reduction needs {m} qubits")
    y_bits = mt - mt_in - mt_out

    # post-shuffle layout: i | j | z_0 ... z_{kappa-1} | x | y
    j_lo = mt_in
    z_lo = mt_in + k0
    x_lo = z_lo + kappa * mstar

    def tau(v: int):
        i, j = v >> k0, v & ((1 << k0) - 1)
        return reduction.etas[j](query.tau(i))

    z_active = frozenset(
        (i << k0) | j for i in query.z for j in range(kappa)
    )
    inner = QuerySpec(m, mt_in + k0, mstar, z_active, tau, reduction.beta)

    # move (x, y) behind the ancilla block
    widths = [mt_in, mt_out, y_bits, k0, kappa * mstar]
    shuffle = _FieldPermutation(m, widths, [0, 3, 4, 1, 2])
    unshuffle = shuffle.inverse()

    programs: list[list[StructuredUnitary]] = []
    c_fwd = ModularAddConstant(j_lo, j_lo + k0, 1) if k0 else None
    c_bwd = ModularAddConstant(j_lo, j_lo + k0, -1) if k0 else None
    c_init = ModularAddConstant(j_lo, j_lo + k0, kappa) if k0 else None
    c_drop = ModularAddConstant(j_lo, j_lo + k0, -kappa) if k0 else None
    negate = ModularNegate(z_lo, z_lo + mstar)
    swap = _counter_swap(m, mt_in, k0, z_lo, mstar, kappa) if kappa > 1 else None
    combine = _combine_gate(query, reduction, m, k0, z_lo, x_lo, y_bits)

    def seg(*ops):
        return tuple(op for op in ops if op is not None)

    programs.append(seg(shuffle, c_init, c_bwd))
    for _ in range(kappa - 1):
        programs.append(seg(swap, c_bwd))
    programs.append(seg(swap, combine, swap, negate))
    for _ in range(kappa - 1):
        programs.append(seg(c_fwd, swap, negate))
    programs.append(seg(c_fwd, c_drop, unshuffle))

    return QueryCircuit(inner, tuple(programs))


def _counter_swap(m, mt_in, k0, z_lo, mstar, kappa) -> BasisPermutation:
    """Swap z_0 with z_j, conditioned on the counter value j (identity for
    j = 0 and for out-of-range counter values)."""
    idx = np.arange(1 << m, dtype=np.int64)
    j = (idx >> (m - mt_in - k0)) & ((1 << k0) - 1)
    z_shift = [m - z_lo - (t + 1) * mstar for t in range(kappa)]
    mask = (1 << mstar) - 1
    perm = idx.copy()
    for t in range(1, kappa):
        sel = j == t
        if not np.any(sel):
            continue
        z0 = (idx[sel] >> z_shift[0]) & mask
        zt = (idx[sel] >> z_shift[t]) & mask
        cleared = idx[sel] & ~(mask << z_shift[0]) & ~(mask << z_shift[t])
        perm[sel] = cleared | (zt << z_shift[0]) | (z0 << z_shift[t])
    return BasisPermutation(perm)


def _combine_gate(query, reduction, m, k0, z_lo, x_lo, y_bits) -> BasisPermutation:
    """Add the encoded combined value into the x register, for active i."""
    kappa, mstar = reduction.fan_in, reduction.code_bits
    idx = np.arange(1 << m, dtype=np.int64)
    i_part = idx >> (m - query.m_in)
    zblock = (idx >> (m - z_lo - kappa * mstar)) & ((1 << (kappa * mstar)) - 1)
    x_part = (idx >> (m - x_lo - query.m_out)) & ((1 << query.m_out) - 1)

    table = np.zeros((1 << query.m_in, 1 << (kappa * mstar)), dtype=np.int64)
    for i in query.z:
        s = query.tau(i)
        for zc in range(1 << (kappa * mstar)):
            codes = [
                (zc >> ((kappa - 1 - t) * mstar)) & ((1 << mstar) - 1)
                for t in range(kappa)
            ]
            table[i, zc] = int(query.beta(reduction.rho(s, *codes))) % (
                1 << query.m_out
            )
    new_x = (x_part + table[i_part, zblock]) % (1 << query.m_out)
    x_shift = m - x_lo - query.m_out
    perm = (idx & ~(((1 << query.m_out) - 1) << x_shift)) | (new_x << x_shift)
    return BasisPermutation(perm)
