"""Quantum-style mean estimation for bounded and norm-bounded sequences.

Two execution modes:

* ``statevec`` builds the full amplitude-estimation circuit (phase register,
  index register, value qubit) and computes or samples its exact output law.
* ``semantic`` samples the analytically known output law of amplitude
  estimation while keeping faithful query accounting; it scales to long
  sequences and is certified against the statevec mode at small sizes.

The norm-bounded estimator splits a sequence into dyadic magnitude bands,
estimates each rescaled band with amplitude estimation, and sums the band
contributions; entries at or above the cutoff are summed exactly by an
enumeration that stands in for a zero-error subroutine and is charged the
full budget ("semantic tail" in reports).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import hadamard

from .errors import CapacityError, ContractError
from .statevec import (
    DENSE_BLOCK_CAP,
    QUBIT_CAP,
    HadamardLayer,
    OutcomeDistribution,
    Qft,
    SmallDenseBlock,
    StateVector,
    apply_program,
    basis_state,
)
from .query_model import Oracle, QueryGate, QuerySpec

_CHUNK = 1 << 20
_MAX_BANDS = 200


class SequenceOracle:
    """Oracle access to a finite real sequence f: [0, N) -> R.

    Evaluations are counted (diagnostic).  Bulk evaluation is vectorized
    when the underlying function supports array arguments.
    """

    def __init__(self, n: int, fn: Callable, vectorized: bool = False):
        if n < 1:
            raise ValueError(f"sequence length must be >= 1, got {n}")
        self.n = n
        self.fn = fn
        self.vectorized = vectorized
        self.evaluations = 0
        self._profiles: dict = {}

    @classmethod
    def from_array(cls, values) -> "SequenceOracle":
        arr = np.asarray(values, dtype=float)
        return cls(arr.size, lambda i: arr[i], vectorized=True)

    def value(self, i: int) -> float:
        if not 0 <= i < self.n:
            raise ValueError(f"index {i} out of range [0, {self.n})")
        self.evaluations += 1
        return float(self.fn(i))

    def values_bulk(self, idx: np.ndarray) -> np.ndarray:
        self.evaluations += idx.size
        if self.vectorized:
            return np.asarray(self.fn(idx), dtype=float)
        return np.array([self.fn(int(i)) for i in idx], dtype=float)

    def sweep(self) -> np.ndarray:
        """All values (reference path; counted as N evaluations)."""
        return self.values_bulk(np.arange(self.n, dtype=np.int64))

    def band_profile(self, p: float) -> "BandProfile":
        key = float(p)
        if key not in self._profiles:
            self._profiles[key] = BandProfile.build(self, p)
        return self._profiles[key]


@dataclass(frozen=True)
class LpNormBound:
    """Certificate that (1/N sum |f(i)|^p)^(1/p) <= bound."""

    p: float
    bound: float

    def __post_init__(self):
        if not 1 <= self.p < math.inf:
            raise ValueError(f"exponent p must be in [1, inf), got {self.p}")
        if self.bound < 0:
            raise ValueError("norm bound must be nonnegative")

    def check(self, oracle: SequenceOracle, tol: float = 1e-9) -> bool:
        vals = oracle.sweep()
        norm = (np.mean(np.abs(vals) ** self.p)) ** (1.0 / self.p)
        return bool(norm <= self.bound + tol)


@dataclass(frozen=True)
class AEPlan:
    """Amplitude-estimation execution parameters."""

    iterations: int | None = None  # phase resolution M; derived from budget if None
    reps: int = 1
    mode: str = "semantic"

    def __post_init__(self):
        if self.iterations is not None:
            if self.iterations < 2 or self.iterations & (self.iterations - 1):
                raise ValueError("iteration count must be a power of 2, >= 2")
        if self.reps < 1:
            raise ValueError("repetition count must be >= 1")
        if self.mode not in ("semantic", "statevec"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class BandRecord:
    band: int
    sign: int
    amplitude: float
    iterations: int


@dataclass
class MagnitudeBands:
    """Dyadic magnitude decomposition: band j holds |value| in [2^j, 2^(j+1))
    (band 0 additionally holds everything below 2); the tail holds values at
    or above 2^cutoff_exp."""

    cutoff_exp: int
    records: list

    def __post_init__(self):
        if self.cutoff_exp < 2:
            raise ValueError("cutoff exponent must be >= 2")


@dataclass
class MeanEstimate:
    value: float
    queries_used: int
    mode: str
    bands: MagnitudeBands | None = None
    tail_value: float = 0.0
    tail_queries: int = 0


# ---------------------------------------------------------------------------
# Amplitude estimation: analytic law
# ---------------------------------------------------------------------------


def phase_kernel(delta, m_res: int) -> np.ndarray:
    """Phase-estimation probability kernel at offset ``delta`` (mod 1)."""
    d = np.asarray(delta, dtype=float) % 1.0
    s = np.sin(np.pi * d)
    num = np.sin(np.pi * m_res * d)
    out = np.empty_like(d)
    tiny = np.abs(s) < 1e-15
    np.divide(num, m_res * s, out=out, where=~tiny)
    out[~tiny] = out[~tiny] ** 2
    out[tiny] = 1.0
    return out


def _ae_law_arrays(a: float, m_res: int) -> tuple[np.ndarray, np.ndarray]:
    """Support (estimate values) and probabilities of the AE output law."""
    if not 0.0 <= a <= 1.0 + 1e-12:
        raise ValueError(f"amplitude {a} outside [0, 1]")
    a = min(max(a, 0.0), 1.0)
    omega = math.asin(math.sqrt(a)) / math.pi
    y = np.arange(m_res)
    probs = 0.5 * (
        phase_kernel(y / m_res - omega, m_res)
        + phase_kernel(y / m_res + omega, m_res)
    )
    # aggregate mirrored grid points (y and M-y) onto identical estimates
    y_canon = np.minimum(y, m_res - y)
    uniq, inverse = np.unique(y_canon, return_inverse=True)
    agg = np.zeros(uniq.size)
    np.add.at(agg, inverse, probs)
    est = np.sin(np.pi * uniq / m_res) ** 2
    return est, agg


def ae_exact_distribution(a: float, m_res: int) -> OutcomeDistribution:
    """Closed-form output law of amplitude estimation with resolution M.

    Estimates take the values sin^2(pi*y/M); mass within
    2*pi*sqrt(a(1-a))/M + pi^2/M^2 of the true amplitude is at least
    8/pi^2.
    """
    if m_res < 2 or m_res & (m_res - 1):
        raise ValueError("resolution must be a power of 2, >= 2")
    est, probs = _ae_law_arrays(a, m_res)
    return OutcomeDistribution({float(v): float(p) for v, p in zip(est, probs) if p > 0})


# ---------------------------------------------------------------------------
# Amplitude estimation: full state-vector circuit
# ---------------------------------------------------------------------------


def _hadamard_matrix(n1: int) -> np.ndarray:
    return hadamard(1 << n1).astype(float) / math.sqrt(1 << n1)


def _pad_pow2(values: np.ndarray) -> tuple[np.ndarray, float]:
    """Zero-pad to the next power of 2; the returned factor rescales a mean
    over the padded length back to a mean over the original length."""
    n = values.size
    target = 1 << max(1, math.ceil(math.log2(max(n, 2))))
    if target == n:
        return values, 1.0
    padded = np.zeros(target)
    padded[:n] = values
    return padded, target / n


def _boolean_prep_matrix(fvals: np.ndarray) -> np.ndarray:
    """Prep on index+value qubits: uniform index superposition, then a query
    writes f(i) into the value qubit."""
    n = fvals.size
    n1 = int(math.log2(n)) if n > 1 else 0
    if n1 == 0:
        # single entry: value qubit simply set to f(0)
        if fvals[0]:
            return np.array([[0.0, 1.0], [1.0, 0.0]])
        return np.eye(2)
    oracle = Oracle(lambda i: int(fvals[i]))
    spec = QuerySpec(
        n1 + 1, n1, 1, frozenset(range(n)), lambda i: i, lambda k: int(k)
    )
    program = (HadamardLayer(0, n1), QueryGate(spec, oracle))
    dim = 1 << (n1 + 1)
    cols = np.empty((dim, dim), dtype=np.complex128)
    for b in range(dim):
        cols[:, b] = apply_program(program, basis_state(n1 + 1, b)).amplitudes
    return cols


def _rotation_prep_matrix(values: np.ndarray) -> np.ndarray:
    """Prep for values in [0, 1]: uniform index superposition, then rotate
    the value qubit to sqrt(1-v)|0> + sqrt(v)|1> per index."""
    n = values.size
    n1 = int(math.log2(n)) if n > 1 else 0
    c = np.sqrt(1.0 - values)
    s = np.sqrt(values)
    rot = np.zeros((2 * n, 2 * n))
    idx = np.arange(n)
    rot[2 * idx, 2 * idx] = c
    rot[2 * idx + 1, 2 * idx] = s
    rot[2 * idx, 2 * idx + 1] = -s
    rot[2 * idx + 1, 2 * idx + 1] = c
    hn = _hadamard_matrix(n1) if n1 else np.array([[1.0]])
    return rot @ np.kron(hn, np.eye(2))


def _grover_matrix(prep: np.ndarray) -> np.ndarray:
    """Grover iterate for the prep state with good = value qubit set."""
    dim = prep.shape[0]
    refl0 = -np.eye(dim)
    refl0[0, 0] = 1.0
    sign_good = np.eye(dim)
    sign_good[1::2, 1::2] *= -1.0
    return prep @ refl0 @ prep.conj().T @ sign_good


def ae_statevec_law(prep: np.ndarray, m_res: int) -> OutcomeDistribution:
    """Exact output law of the amplitude-estimation circuit.

    The circuit uses t = log2(M) phase qubits, Hadamards on the phase
    register, controlled Grover powers, and an inverse Fourier transform.
    """
    t = int(math.log2(m_res))
    if (1 << t) != m_res or t < 1:
        raise ValueError("resolution must be a power of 2, >= 2")
    dim_sys = prep.shape[0]
    n_sys = int(math.log2(dim_sys))
    m = t + n_sys
    if m > QUBIT_CAP:
        raise CapacityError(f"AE circuit needs {m} qubits")
    if 1 + n_sys > DENSE_BLOCK_CAP:
        raise CapacityError("system register too wide for dense Grover blocks")

    grover = _grover_matrix(prep)
    sys_qubits = tuple(range(t, t + n_sys))
    program: list = [HadamardLayer(0, t), SmallDenseBlock(sys_qubits, prep)]
    for q in range(t):
        power = 1 << (t - 1 - q)
        block = np.eye(2 * dim_sys, dtype=np.complex128)
        block[dim_sys:, dim_sys:] = np.linalg.matrix_power(grover, power)
        program.append(SmallDenseBlock((q,) + sys_qubits, block))
    program.append(Qft(0, t, inverse=True))

    state = apply_program(program, basis_state(m, 0))
    phase_probs = state.probabilities().reshape(m_res, dim_sys).sum(axis=1)
    y = np.arange(m_res)
    y_canon = np.minimum(y, m_res - y)
    support: dict = {}
    for yc in np.unique(y_canon):
        est = float(np.sin(np.pi * yc / m_res) ** 2)
        support[est] = support.get(est, 0.0) + float(phase_probs[y_canon == yc].sum())
    return OutcomeDistribution(support)


def ae_statevec(
    oracle: SequenceOracle, m_res: int, rng: np.random.Generator
) -> tuple[float, int]:
    """Sampled amplitude estimate for a 0/1-valued sequence via the full
    circuit.  Returns (estimate, queries); M queries are charged (initial
    prep query plus M-1 Grover iterates at one query each)."""
    n = oracle.n
    if n & (n - 1):
        raise ValueError("sequence length must be a power of 2")
    vals = oracle.sweep()
    if not np.all((vals == 0) | (vals == 1)):
        raise ValueError("statevec amplitude estimation needs 0/1 values")
    law = ae_statevec_law(_boolean_prep_matrix(vals.astype(int)), m_res)
    return law.sample(rng), m_res


# ---------------------------------------------------------------------------
# Bounded-sequence mean estimation
# ---------------------------------------------------------------------------


def _resolution_for_budget(n: int) -> int:
    if n < 2:
        raise ValueError(f"query budget must be >= 2, got {n}")
    return 1 << int(math.floor(math.log2(n)))


class PreparedBoundedEstimator:
    """Reusable sampler for the mean of a [0, 1]-valued sequence."""

    def __init__(self, oracle: SequenceOracle, n: int, plan: AEPlan = AEPlan()):
        reps = plan.reps
        m_res = plan.iterations or _resolution_for_budget(max(2, n // reps))
        vals = oracle.sweep()
        if vals.min() < -1e-12 or vals.max() > 1.0 + 1e-12:
            raise ContractError("sequence values outside [0, 1]")
        self.true_mean = float(vals.mean())
        self.m_res = m_res
        self.reps = reps
        self.mode = plan.mode
        self.queries_per_run = m_res * reps
        self._factor = 1.0
        if plan.mode == "semantic":
            est, probs = _ae_law_arrays(self.true_mean, m_res)
        else:
            padded, self._factor = _pad_pow2(np.clip(vals, 0, 1))
            law = ae_statevec_law(_rotation_prep_matrix(padded), m_res)
            items = sorted(law.support.items())
            est = np.array([v for v, _ in items])
            probs = np.array([p for _, p in items])
        self._est = est
        self._cdf = np.cumsum(probs / probs.sum())

    def sample_values(self, rng: np.random.Generator, count: int) -> np.ndarray:
        idx = np.searchsorted(self._cdf, rng.random((count, self.reps)))
        draws = self._est[np.minimum(idx, self._est.size - 1)] * self._factor
        draws.sort(axis=1)
        return draws[:, (self.reps - 1) // 2]

    def sample(self, rng: np.random.Generator) -> MeanEstimate:
        value = float(self.sample_values(rng, 1)[0])
        return MeanEstimate(value, self.queries_per_run, self.mode)


def estimate_mean_bounded(
    oracle: SequenceOracle,
    n: int,
    rng: np.random.Generator,
    plan: AEPlan = AEPlan(),
) -> MeanEstimate:
    """Estimate the mean of a [0, 1]-valued sequence within O(1/n) with
    probability >= 3/4, using at most n queries."""
    return PreparedBoundedEstimator(oracle, n, plan).sample(rng)


# ---------------------------------------------------------------------------
# Magnitude-band profile and the norm-bounded estimator
# ---------------------------------------------------------------------------


_BAND_OFFSET = 120  # exponent histogram slot of magnitudes in [1, 2)


@dataclass
class BandProfile:
    """One-sweep statistics of a sequence: signed magnitude sums and counts
    per dyadic exponent cell |f| in [2^e, 2^(e+1)), plus norm and mean.

    The histogram is scale-free; views at any power-of-2 scale read off the
    appropriate slots exactly, because dyadic band boundaries align with
    the exponent cells.
    """

    n: int
    p: float
    pos_sums: np.ndarray
    neg_sums: np.ndarray
    pos_counts: np.ndarray
    neg_counts: np.ndarray
    norm: float
    mean: float
    max_abs: float

    @classmethod
    def build(cls, oracle: SequenceOracle, p: float) -> "BandProfile":
        pos_sums = np.zeros(_MAX_BANDS)
        neg_sums = np.zeros(_MAX_BANDS)
        pos_counts = np.zeros(_MAX_BANDS, dtype=np.int64)
        neg_counts = np.zeros(_MAX_BANDS, dtype=np.int64)
        norm_acc = 0.0
        mean_acc = 0.0
        max_abs = 0.0
        for lo in range(0, oracle.n, _CHUNK):
            idx = np.arange(lo, min(lo + _CHUNK, oracle.n), dtype=np.int64)
            vals = oracle.values_bulk(idx)
            mag = np.abs(vals)
            max_abs = max(max_abs, float(mag.max(initial=0.0)))
            norm_acc += float((mag**p).sum())
            mean_acc += float(vals.sum())
            # |f| in [2^e, 2^(e+1)) has frexp exponent e+1
            _, exponents = np.frexp(mag)
            slot = np.clip(exponents - 1 + _BAND_OFFSET, 0, _MAX_BANDS - 1)
            slot = slot.astype(np.int64)
            pos = vals > 0
            pos_sums += np.bincount(slot[pos], weights=mag[pos], minlength=_MAX_BANDS)
            neg_sums += np.bincount(slot[~pos], weights=mag[~pos], minlength=_MAX_BANDS)
            pos_counts += np.bincount(slot[pos], minlength=_MAX_BANDS)
            neg_counts += np.bincount(slot[~pos], minlength=_MAX_BANDS)
        return cls(
            oracle.n,
            p,
            pos_sums,
            neg_sums,
            pos_counts,
            neg_counts,
            (norm_acc / oracle.n) ** (1.0 / p),
            mean_acc / oracle.n,
            max_abs,
        )

    def _slot(self, j: int, scale_exp: int) -> int:
        slot = j + scale_exp + _BAND_OFFSET
        if not 0 < slot < _MAX_BANDS:
            raise ValueError("band outside the stored exponent range")
        return slot

    def band_mean(self, j: int, sign: int, scale_exp: int) -> float:
        """Mean of the [0,1]-rescaled sign part of band j at scale 2**scale_exp.

        Band j >= 1 holds |f|/2**scale_exp in [2^j, 2^(j+1)); band 0 holds
        everything below 2.
        """
        sums = self.pos_sums if sign > 0 else self.neg_sums
        top = self._slot(j, scale_exp)
        total = sums[top] if j >= 1 else sums[: top + 1].sum()
        return float(total / (self.n * 2.0 ** (j + 1 + scale_exp)))

    def tail_mean(self, cutoff_exp: int, scale_exp: int) -> float:
        """Unscaled mean of entries with |f| >= 2**(cutoff_exp + scale_exp)."""
        lo = self._slot(cutoff_exp, scale_exp)
        pos = self.pos_sums[lo:].sum()
        neg = self.neg_sums[lo:].sum()
        return float((pos - neg) / self.n)


def band_cutoff_exp(n: int, seq_len: int, c0: float = 1.0) -> int:
    """Smallest exponent k >= 2 with 2^k >= c0 * (N/n) * max(log2(n/sqrt(N)), 1)."""
    target = c0 * (seq_len / n) * max(math.log2(max(n / math.sqrt(seq_len), 2.0**-50)), 1.0)
    return max(2, math.ceil(math.log2(max(target, 1.0))))


def _band_budgets(n: int, cutoff_exp: int) -> list[int]:
    """Geometric budget shares 2^{-j/2} over bands 0..cutoff_exp-1, each
    split across the two sign parts; resolutions are powers of 2, >= 2."""
    weights = np.array([2.0 ** (-j / 2) for j in range(cutoff_exp)])
    shares = n * weights / weights.sum() / 2.0
    return [1 << int(math.floor(math.log2(max(2.0, s)))) for s in shares]


class PreparedLpEstimator:
    """Reusable sampler for the mean of a norm-bounded sequence.

    Construction sweeps the sequence once (band statistics, exact tail and
    certificate check); each sample draws one amplitude estimate per band
    and sign.  Queries charged: sum of band resolutions plus the full
    budget for the exact tail.

    The certificate bound is rounded up to a power of 2 internally so that
    band boundaries align with the profile's exponent histogram; hence the
    estimator is exactly scale-equivariant under power-of-2 rescaling and
    within a factor 2 otherwise.
    """

    def __init__(
        self,
        oracle: SequenceOracle,
        cert: LpNormBound,
        n: int,
        *,
        c0: float = 1.0,
        mode: str = "semantic",
        validate: bool = True,
    ):
        if n < 2:
            raise ValueError(f"query budget must be >= 2, got {n}")
        if mode not in ("semantic", "statevec"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.n_budget = n
        self.records: list[BandRecord] = []
        self._laws: list[tuple[np.ndarray, np.ndarray]] = []
        if cert.bound == 0.0:
            if validate and np.any(oracle.sweep() != 0.0):
                raise ContractError("zero certificate with nonzero values")
            self.scale_exp = 0
            self.cutoff_exp = 2
            self.tail_value = 0.0
            self.tail_queries = 0
            self.queries_per_run = 0
            self.bands = MagnitudeBands(2, [])
            return
        profile = oracle.band_profile(cert.p)
        if validate and profile.norm > cert.bound * (1.0 + 1e-9):
            raise ContractError(
                f"certificate violated: norm {profile.norm:.6g} > {cert.bound:.6g}"
            )
        self.scale_exp = math.ceil(math.log2(cert.bound))
        self.cutoff_exp = band_cutoff_exp(n, oracle.n, c0)
        budgets = _band_budgets(n, self.cutoff_exp)
        values = None
        self._factor = 1.0
        if mode == "statevec":
            values, self._factor = _pad_pow2(
                oracle.sweep() / 2.0**self.scale_exp
            )
        charged = 0
        for j, m_res in enumerate(budgets):
            for sign in (+1, -1):
                a = profile.band_mean(j, sign, self.scale_exp)
                if mode == "semantic":
                    est, probs = _ae_law_arrays(min(a, 1.0), m_res)
                else:
                    h = self._band_values(values, j, sign)
                    law = ae_statevec_law(_rotation_prep_matrix(h), m_res)
                    items = sorted(law.support.items())
                    est = np.array([v for v, _ in items])
                    probs = np.array([p for _, p in items])
                self.records.append(BandRecord(j, sign, a, m_res))
                self._laws.append((est, np.cumsum(probs / probs.sum())))
                charged += m_res
        self.tail_value = profile.tail_mean(self.cutoff_exp, self.scale_exp)
        self.tail_queries = n
        self.queries_per_run = charged + self.tail_queries
        self.bands = MagnitudeBands(self.cutoff_exp, self.records)

    @staticmethod
    def _band_values(values: np.ndarray, j: int, sign: int) -> np.ndarray:
        mag = np.abs(values)
        in_band = (mag < 2.0) if j == 0 else (mag >= 2.0**j) & (mag < 2.0 ** (j + 1))
        sel = in_band & ((values > 0) if sign > 0 else (values <= 0))
        return np.where(sel, mag, 0.0) / 2.0 ** (j + 1)

    def sample_values(self, rng: np.random.Generator, count: int) -> np.ndarray:
        out = np.full(count, self.tail_value)
        for rec, (est, cdf) in zip(self.records, self._laws):
            idx = np.searchsorted(cdf, rng.random(count))
            draws = est[np.minimum(idx, est.size - 1)] * self._factor
            out += rec.sign * 2.0 ** (rec.band + 1 + self.scale_exp) * draws
        return out

    def sample(self, rng: np.random.Generator) -> MeanEstimate:
        value = float(self.sample_values(rng, 1)[0])
        return MeanEstimate(
            value,
            self.queries_per_run,
            self.mode,
            bands=self.bands,
            tail_value=self.tail_value,
            tail_queries=self.tail_queries,
        )


def estimate_mean_lp(
    oracle: SequenceOracle,
    cert: LpNormBound,
    n: int,
    rng: np.random.Generator,
    *,
    c0: float = 1.0,
    mode: str = "semantic",
) -> MeanEstimate:
    """Estimate the mean of a sequence with certified L_p norm bound.

    Entries are split into dyadic magnitude bands below the cutoff 2^k with
    2^k >= c0 * (N/n) * max(log2(n/sqrt(N)), 1); each band is rescaled to
    [0, 1] and estimated by amplitude estimation under geometrically
    decaying budgets, the tail is computed exactly and charged n queries.
    """
    return PreparedLpEstimator(oracle, cert, n, c0=c0, mode=mode).sample(rng)


def truncated_sums(oracle: SequenceOracle, cutoff: float) -> tuple[float, float]:
    """Exact reference values (head, tail): head averages entries with
    |f(i)| < cutoff over N, tail the rest; head + tail = full mean."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    vals = oracle.sweep()
    below = np.abs(vals) < cutoff
    head = float(vals[below].sum() / oracle.n)
    tail = float(vals[~below].sum() / oracle.n)
    return head, tail
