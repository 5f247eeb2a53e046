"""Multilevel integration on the unit cube with quantum-style level estimates.

The integral is approximated by a composite quadrature at a coarse level
(computed classically) plus a telescoping sum of difference-quadrature
levels.  Each level's differences form a sequence whose p-norm decays
geometrically in the level; the sequence mean is estimated by the
norm-bounded amplitude-estimation machinery and boosted by medians.

Dyadic partition convention: level l splits [0,1]^d into 2^(d*l) congruent
half-open cubes; cube index i packs per-axis coordinates little-endian
(axis 0 in the lowest l bits).  The cube corner closest to the origin
anchors all node placements, so every node stays inside the cube.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.integrate import newton_cotes

from .errors import CapacityError, ContractError
from .mean_estimation import (
    LpNormBound,
    PreparedLpEstimator,
    SequenceOracle,
)

NEWTON_COTES_CAP = 8
_CHUNK = 1 << 20


# ---------------------------------------------------------------------------
# Partition and quadrature rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CubePartition:
    """The 2^(d*l) congruent cubes of side 2^-l tiling [0,1]^d."""

    d: int
    level: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.level < 0:
            raise ValueError("level must be >= 0")
        if self.d * self.level > 60:
            raise CapacityError("cube count exceeds 2**60")

    @property
    def count(self) -> int:
        return 1 << (self.d * self.level)

    def corner(self, i: int) -> np.ndarray:
        return self.corners(np.array([i], dtype=np.int64))[0]

    def corners(self, idx: np.ndarray) -> np.ndarray:
        """Corner of smallest Euclidean norm of each indexed cube."""
        if np.any((idx < 0) | (idx >= self.count)):
            raise ValueError("cube index out of range")
        out = np.empty((idx.size, self.d))
        mask = (1 << self.level) - 1
        for axis in range(self.d):
            out[:, axis] = ((idx >> (self.level * axis)) & mask) * 2.0**-self.level
        return out

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Index of the half-open cube containing each point (top faces
        belong to the last cube per axis)."""
        pts = np.atleast_2d(points)
        scale = 1 << self.level
        idx = np.zeros(pts.shape[0], dtype=np.int64)
        for axis in range(self.d):
            c = np.clip(np.floor(pts[:, axis] * scale).astype(np.int64), 0, scale - 1)
            idx |= c << (self.level * axis)
        return idx


@dataclass(frozen=True)
class BaseQuadrature:
    """Tensor-product closed Newton-Cotes rule on [0,1]^d, exact on all
    polynomials of total degree <= r-1."""

    d: int
    r: int
    nodes: np.ndarray  # (count, d)
    weights: np.ndarray  # (count,)

    @property
    def count(self) -> int:
        return self.weights.size


def base_quadrature(d: int, r: int) -> BaseQuadrature:
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if r < 1:
        raise ValueError("exactness degree must be >= 1")
    if r > NEWTON_COTES_CAP:
        raise ValueError(
            f"Newton-Cotes with {r} nodes per axis is unstable; cap is {NEWTON_COTES_CAP}"
        )
    if r == 1:
        nodes_1d = np.array([0.0])
        weights_1d = np.array([1.0])
    else:
        w, _ = newton_cotes(r - 1, equal=1)
        weights_1d = np.asarray(w, dtype=float) / (r - 1)
        nodes_1d = np.arange(r) / (r - 1)
    grids = np.meshgrid(*([nodes_1d] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([weights_1d] * d), indexing="ij")
    weights = np.ones(r**d)
    for g in wgrids:
        weights = weights * g.ravel()
    return BaseQuadrature(d, r, nodes, weights)


def composite_apply(
    rule: BaseQuadrature, level: int, f: Callable[[np.ndarray], np.ndarray]
) -> float:
    """Composite value: the rule rescaled to every level-l cube, averaged."""
    part = CubePartition(rule.d, level)
    h = 2.0**-level
    total = 0.0
    for lo in range(0, part.count, _CHUNK):
        idx = np.arange(lo, min(lo + _CHUNK, part.count), dtype=np.int64)
        corners = part.corners(idx)
        for node, w in zip(rule.nodes, rule.weights):
            total += w * float(np.sum(f(corners + h * node)))
    return total / part.count


@dataclass(frozen=True)
class DifferenceQuadrature:
    """One refinement step of the composite rule minus the rule itself;
    annihilates polynomials of total degree <= r-1."""

    d: int
    r: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def count(self) -> int:
        return self.weights.size

    @property
    def weight_abs_sum(self) -> float:
        return float(np.abs(self.weights).sum())


def difference_quadrature(rule: BaseQuadrature) -> DifferenceQuadrature:
    """Merged-node form of (level-1 composite) - (level-0 rule)."""
    merged: dict = {}

    def add(point: np.ndarray, w: float):
        key = tuple(np.round(point, 12))
        merged[key] = merged.get(key, 0.0) + w

    sub = CubePartition(rule.d, 1)
    scale = 0.5
    for i in range(sub.count):
        corner = sub.corner(i)
        for node, w in zip(rule.nodes, rule.weights):
            add(corner + scale * node, w / sub.count)
    for node, w in zip(rule.nodes, rule.weights):
        add(node, -w)

    items = [(k, w) for k, w in sorted(merged.items()) if abs(w) > 1e-13]
    nodes = np.array([k for k, _ in items])
    weights = np.array([w for _, w in items])
    if weights.size > rule.count * ((1 << rule.d) + 1):
        raise AssertionError("difference rule node count exceeds its bound")
    return DifferenceQuadrature(rule.d, rule.r, nodes.reshape(-1, rule.d), weights)


def difference_apply(
    diff: DifferenceQuadrature, level: int, f: Callable[[np.ndarray], np.ndarray]
) -> float:
    """Exact level increment: composite at level+1 minus composite at level."""
    part = CubePartition(diff.d, level)
    h = 2.0**-level
    total = 0.0
    for lo in range(0, part.count, _CHUNK):
        idx = np.arange(lo, min(lo + _CHUNK, part.count), dtype=np.int64)
        corners = part.corners(idx)
        for node, w in zip(diff.nodes, diff.weights):
            total += w * float(np.sum(f(corners + h * node)))
    return total / part.count


# ---------------------------------------------------------------------------
# Fixed-point codec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedPointCodec:
    """Fixed-point encoding of reals into code_bits-bit integers.

    Values in [-2^(code_bits/2 - 1), 2^(code_bits/2 - 1)) round down onto a
    grid of step 2^(-code_bits/2); out-of-range values clamp to the ends.
    """

    code_bits: int

    def __post_init__(self):
        if self.code_bits < 2 or self.code_bits % 2:
            raise ValueError("code width must be even and >= 2")
        if self.code_bits > 200:
            raise CapacityError("code width above 200 bits")

    @property
    def half_range(self) -> float:
        return 2.0 ** (self.code_bits // 2 - 1)

    @property
    def step(self) -> float:
        return 2.0 ** (-self.code_bits // 2)

    def _require_exact_ints(self):
        if self.code_bits > 60:
            raise CapacityError(
                "integer codes need code width <= 60 (use quantize instead)"
            )

    def encode(self, z) -> np.ndarray:
        """Integer codes (int64).  Width capped at 60 bits."""
        self._require_exact_ints()
        z = np.asarray(z, dtype=float)
        offset = 1 << (self.code_bits - 1)
        codes = np.floor(z * 2.0 ** (self.code_bits // 2)).astype(np.int64) + offset
        codes = np.where(z < -self.half_range, 0, codes)
        codes = np.where(z >= self.half_range, (1 << self.code_bits) - 1, codes)
        return codes

    def decode(self, y) -> np.ndarray:
        self._require_exact_ints()
        y = np.asarray(y, dtype=np.int64)
        offset = 1 << (self.code_bits - 1)
        return (y - offset).astype(float) * self.step

    def quantize(self, z) -> np.ndarray:
        """decode(encode(z)) computed without forming large integers.

        Exact for |z| * 2^(code_bits/2) below 2^53; for steps finer than
        double precision the grid is below float resolution and the value
        passes through unchanged (clamping still applies).
        """
        z = np.asarray(z, dtype=float)
        inv_step = 2.0 ** (self.code_bits // 2)
        if self.code_bits // 2 >= 52:
            out = np.array(z, copy=True)
        else:
            out = np.floor(z * inv_step) / inv_step
        out = np.where(z < -self.half_range, -self.half_range, out)
        out = np.where(z >= self.half_range, self.half_range - self.step, out)
        return out


# ---------------------------------------------------------------------------
# Level sequences
# ---------------------------------------------------------------------------


def level_sequence(
    f: Callable[[np.ndarray], np.ndarray],
    level: int,
    codec: FixedPointCodec,
    diff: DifferenceQuadrature,
) -> SequenceOracle:
    """The length-2^(d*l) sequence of encoded difference-rule values.

    Entry i applies the difference rule inside cube i, with every function
    value passed through the fixed-point codec.  Function values must stay
    within the codec range (checked during evaluation).
    """
    part = CubePartition(diff.d, level)
    h = 2.0**-level
    bound = codec.half_range

    def values(idx: np.ndarray) -> np.ndarray:
        corners = part.corners(np.asarray(idx, dtype=np.int64))
        out = np.zeros(corners.shape[0])
        for node, w in zip(diff.nodes, diff.weights):
            vals = np.asarray(f(corners + h * node), dtype=float)
            if np.any(np.abs(vals) > bound):
                raise ContractError(
                    "integrand exceeds the fixed-point range at a node"
                )
            out += w * codec.quantize(vals)
        return out

    return SequenceOracle(part.count, values, vectorized=True)


# ---------------------------------------------------------------------------
# Parameter planning
# ---------------------------------------------------------------------------


def default_budget_decay(d: int, r: int, p: float) -> float:
    """Half the supremum of the admissible geometric budget-decay rate."""
    sup = min(r, (p / 2.0) * (r - (2.0 / p - 1.0) * d))
    return 0.5 * sup


@dataclass(frozen=True)
class MultilevelPlan:
    """All balanced parameters of one integration run."""

    n: int
    d: int
    r: int
    p: float
    kappa: int
    kappa_prime: int
    base_level: int
    top_level: int
    decay: float
    level_budgets: tuple
    level_reps: tuple
    code_bits: int
    planned_queries: int
    failure_target: float = 0.25

    @property
    def levels(self) -> range:
        return range(self.base_level, self.top_level)

    @property
    def overhead(self) -> float:
        """Reported constant: planned total queries over the base budget."""
        return self.planned_queries / self.n

    def validate(self):
        if not self.base_level >= 0:
            raise AssertionError("base level negative")
        if not self.top_level > self.base_level:
            raise AssertionError("no levels between base and top")
        tail = sum(math.exp(-nu / 8.0) for nu in self.level_reps)
        if tail >= self.failure_target:
            raise AssertionError(f"failure budget {tail} >= {self.failure_target}")
        if 2.0 ** (-self.code_bits // 2) > 2.0 ** (-self.r * self.top_level) / self.top_level:
            raise AssertionError("code width too small for the top level")
        expect = self.n + 2 * self.kappa_prime * sum(
            nu * nl for nu, nl in zip(self.level_reps, self.level_budgets)
        )
        if expect != self.planned_queries:
            raise AssertionError("planned query total inconsistent")

    def to_lines(self) -> list[str]:
        pairs = [
            ("n", self.n), ("d", self.d), ("r", self.r), ("p", self.p),
            ("kappa", self.kappa), ("kappa_prime", self.kappa_prime),
            ("base_level", self.base_level), ("top_level", self.top_level),
            ("decay", self.decay), ("code_bits", self.code_bits),
            ("planned_queries", self.planned_queries),
            ("overhead", self.overhead),
            ("level_budgets", ",".join(str(x) for x in self.level_budgets)),
            ("level_reps", ",".join(str(x) for x in self.level_reps)),
        ]
        return [f"{k}={v}" for k, v in pairs]


def build_plan(
    n: int,
    d: int,
    r: int,
    p: float,
    kappa: int,
    kappa_prime: int,
    decay: float | None = None,
) -> MultilevelPlan:
    """Balance all multilevel parameters for a base budget of n queries.

    Requires the smoothness-over-dimension hypothesis r/d > 1/p and
    n >= max(kappa, 5).
    """
    if r / d <= 1.0 / p:
        raise ValueError(f"need r/d > 1/p, got r/d = {r/d} and 1/p = {1/p}")
    if n < max(kappa, 5):
        raise ValueError(f"budget {n} below minimum {max(kappa, 5)}")
    sup = min(r, (p / 2.0) * (r - (2.0 / p - 1.0) * d))
    if decay is None:
        decay = 0.5 * sup
    if not 0.0 < decay < sup:
        raise ValueError(f"budget decay {decay} outside (0, {sup})")

    base_level = int(math.floor(math.log2(n / kappa) / d))
    top_level = max(base_level + 1, math.ceil((1.0 + d / r) * base_level))
    budgets = tuple(
        int(math.ceil(2.0 ** (d * base_level - decay * (l - base_level))))
        for l in range(base_level, top_level)
    )
    reps = tuple(
        int(math.ceil(8.0 * (2.0 * math.log(l - base_level + 1) + math.log(8.0))))
        for l in range(base_level, top_level)
    )
    code_bits = 2 * math.ceil(r * top_level + math.log2(max(top_level, 1)))
    code_bits = max(code_bits, 4)
    planned = n + 2 * kappa_prime * sum(nu * nl for nu, nl in zip(reps, budgets))
    plan = MultilevelPlan(
        n, d, r, p, kappa, kappa_prime, base_level, top_level,
        decay, budgets, reps, code_bits, planned,
    )
    plan.validate()
    return plan


# ---------------------------------------------------------------------------
# End-to-end integration
# ---------------------------------------------------------------------------


@dataclass
class LevelRecord:
    level: int
    seq_len: int
    budget: int
    reps: int
    norm_bound: float
    norm_measured: float
    queries: int
    estimate: float = math.nan


@dataclass
class IntegralEstimate:
    value: float
    queries_used: int
    mode: str
    classical_value: float
    plan: MultilevelPlan
    levels: list

    def to_lines(self) -> list[str]:
        lines = [
            f"value={self.value!r}",
            f"queries_used={self.queries_used}",
            f"mode={self.mode}",
            f"classical_value={self.classical_value!r}",
        ]
        for rec in self.levels:
            lines.append(
                f"level_{rec.level}="
                f"len:{rec.seq_len},budget:{rec.budget},reps:{rec.reps},"
                f"estimate:{rec.estimate!r},queries:{rec.queries}"
            )
        return lines


class PreparedIntegrator:
    """One integration setup, reusable across independent trials.

    Construction performs all deterministic work: the plan, the classical
    coarse level, and one sweep per level to fix band statistics, norm
    certificates and amplitude-estimation laws.  ``run`` then only draws
    samples.
    """

    STATEVEC_MAX_LEVEL = 4

    def __init__(
        self,
        f: Callable[[np.ndarray], np.ndarray],
        n: int,
        d: int,
        r: int,
        p: float,
        *,
        mode: str = "semantic",
        c0: float = 1.0,
        decay: float | None = None,
        cert_margin: float = 2.0,
    ):
        if mode not in ("semantic", "statevec"):
            raise ValueError(f"unknown mode {mode!r}")
        rule = base_quadrature(d, r)
        diff = difference_quadrature(rule)
        plan = build_plan(n, d, r, p, rule.count, diff.count, decay)
        if mode == "statevec" and (d != 1 or plan.top_level > self.STATEVEC_MAX_LEVEL):
            raise CapacityError(
                "statevec integration restricted to d=1 with top level <= "
                f"{self.STATEVEC_MAX_LEVEL}"
            )
        self.mode = mode
        self.plan = plan
        self.rule = rule
        self.diff = diff
        self.classical_value = composite_apply(rule, plan.base_level, f)
        codec = FixedPointCodec(plan.code_bits)
        self.codec = codec

        self.level_records: list[LevelRecord] = []
        self._samplers: list[PreparedLpEstimator] = []
        for l, budget, reps in zip(plan.levels, plan.level_budgets, plan.level_reps):
            seq = level_sequence(f, l, codec, diff)
            profile = seq.band_profile(p)
            measured = profile.norm
            bound = measured * cert_margin
            if bound < 1e-14 * max(1.0, abs(self.classical_value)):
                bound = 0.0
            sampler = PreparedLpEstimator(
                seq, LpNormBound(p, bound), max(2, budget), c0=c0, mode=mode,
                validate=False,
            )
            self._samplers.append(sampler)
            self.level_records.append(
                LevelRecord(
                    l, seq.n, budget, reps, bound, measured,
                    reps * sampler.queries_per_run * 2 * plan.kappa_prime,
                )
            )
        self.queries_used = plan.n + sum(rec.queries for rec in self.level_records)

    def run_many(self, rng: np.random.Generator, trials: int) -> np.ndarray:
        """Independent integral estimates (vectorized across trials)."""
        values = np.full(trials, self.classical_value)
        for sampler, rec in zip(self._samplers, self.level_records):
            draws = sampler.sample_values(rng, trials * rec.reps)
            draws = draws.reshape(trials, rec.reps)
            draws.sort(axis=1)
            values += draws[:, (rec.reps - 1) // 2]
        return values

    def run(self, rng: np.random.Generator) -> IntegralEstimate:
        values = np.full(1, self.classical_value)
        levels = []
        for sampler, rec in zip(self._samplers, self.level_records):
            draws = np.sort(sampler.sample_values(rng, rec.reps))
            contribution = float(draws[(rec.reps - 1) // 2])
            values += contribution
            levels.append(replace(rec, estimate=contribution))
        return IntegralEstimate(
            float(values[0]), self.queries_used, self.mode,
            self.classical_value, self.plan, levels,
        )


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    n: int,
    d: int,
    r: int,
    p: float,
    rng: np.random.Generator,
    *,
    mode: str = "semantic",
    c0: float = 1.0,
    decay: float | None = None,
) -> IntegralEstimate:
    """One multilevel integration run at base budget n.

    With probability at least 3/4 the error tracks n^(-r/d-1) up to
    logarithmic factors; realized queries stay within a constant factor of
    n (the constant is reported on the plan).
    """
    prepared = PreparedIntegrator(f, n, d, r, p, mode=mode, c0=c0, decay=decay)
    return prepared.run(rng)
