"""Test integrands, worst-case instances, and classical baselines.

Smooth families carry closed-form (or high-precision) reference integrals
for rate experiments.  Hard instances are linear combinations of disjointly
supported scaled bumps whose exact integral is known from the coefficient
mean, used as stress-test integrands.  Baselines: composite quadrature and
Monte Carlo with an optional interpolation control variate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad, simpson

from .multilevel import (
    BaseQuadrature,
    CubePartition,
    FixedPointCodec,
    base_quadrature,
    composite_apply,
)


@dataclass
class TestFunction:
    """Integrand on [0,1]^d with a trusted reference integral."""

    name: str
    d: int
    fn: Callable[[np.ndarray], np.ndarray]
    reference: float
    smoothness_r: int | None = None
    norm_p: float | None = None
    norm_estimate: float | None = None
    meta: dict = field(default_factory=dict)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return self.fn(pts)


def smooth_family(d: int) -> list[TestFunction]:
    """Smooth integrands with closed-form references.

    Beyond the sine/exponential/product trio the family carries several
    asymmetric members; rate fits take medians across the family to damp
    the grid-alignment wobble of any single integrand.
    """
    if d < 1 or d > 3:
        raise ValueError("test family covers d in {1, 2, 3}")
    e1 = math.e - 1.0
    fam = [
        TestFunction(
            "sinpi", d,
            lambda pts: np.prod(np.sin(np.pi * pts), axis=1),
            (2.0 / math.pi) ** d,
        ),
        TestFunction(
            "expsum", d,
            lambda pts: np.exp(pts.sum(axis=1)),
            e1**d,
        ),
        TestFunction(
            "polyprod", d,
            lambda pts: np.prod(pts, axis=1),
            0.5**d,
        ),
        TestFunction(
            "invsum", d,
            lambda pts: 1.0 / (1.0 + pts.sum(axis=1)),
            _inv_sum_reference(d),
        ),
        TestFunction(
            "logshift", d,
            lambda pts: np.log(1.3 + pts[:, 0] + 0.5 * pts.sum(axis=1)),
            _log_shift_reference(d),
        ),
    ]
    if d == 1:
        extra = [
            TestFunction("cubicmix", 1, lambda pts: pts[:, 0] ** 3 + 0.2 * pts[:, 0], 0.35),
            TestFunction(
                "rootshift", 1,
                lambda pts: np.sqrt(pts[:, 0] + 0.5),
                (1.5**1.5 - 0.5**1.5) / 1.5,
            ),
            TestFunction("cosine", 1, lambda pts: np.cos(2.3 * pts[:, 0]), math.sin(2.3) / 2.3),
            TestFunction(
                "dampedsine", 1,
                lambda pts: np.exp(-2 * pts[:, 0]) * np.sin(4.7 * pts[:, 0]),
                (4.7 - math.exp(-2) * (2 * math.sin(4.7) + 4.7 * math.cos(4.7)))
                / (4 + 4.7**2),
            ),
            TestFunction(
                "runge", 1,
                lambda pts: 1.0 / (1.0 + 4 * pts[:, 0] ** 2),
                math.atan(2.0) / 2.0,
            ),
        ]
        fam.extend(extra)
    elif d == 2:
        fam.append(
            TestFunction(
                "cosexp", 2,
                lambda pts: np.cos(2.3 * pts[:, 0]) * np.exp(pts[:, 1]),
                math.sin(2.3) / 2.3 * e1,
            )
        )
    return fam


def _inv_sum_reference(d: int) -> float:
    # iterated antiderivatives of 1/(1+sum t_j); the polynomial parts of
    # the antiderivatives cancel under the alternating binomial weights
    if d == 1:
        return math.log(2.0)
    if d == 2:
        return 3 * math.log(3.0) - 4 * math.log(2.0)

    def g(x):
        return 0.5 * x * x * math.log(x)

    return g(4) - 3 * g(3) + 3 * g(2) - g(1)


def _log_shift_reference(d: int) -> float:
    # high-resolution tensor Simpson reference (smooth integrand)
    m = 801 if d <= 2 else 201
    axes = [np.linspace(0.0, 1.0, m)] * d
    grids = np.meshgrid(*axes, indexing="ij")
    vals = np.log(1.3 + grids[0] * 1.5 + 0.5 * sum(grids[1:], np.zeros_like(grids[0])))
    for _ in range(d):
        vals = simpson(vals, x=axes[0], axis=-1)
    return float(vals)


# ---------------------------------------------------------------------------
# Bump family and hard instances
# ---------------------------------------------------------------------------


def _bump_1d(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (ti * (1.0 - ti)))
    return out


@dataclass
class BumpFamily:
    """A C-infinity bump supported in the open unit cube, and its scaled
    disjointly supported copies on the level-k partition."""

    d: int
    level: int
    sigma1: float  # integral of the base bump

    def base(self, pts: np.ndarray) -> np.ndarray:
        vals = np.ones(pts.shape[0])
        for axis in range(self.d):
            vals = vals * _bump_1d(pts[:, axis])
        return vals

    def member(self, i: int) -> Callable[[np.ndarray], np.ndarray]:
        part = CubePartition(self.d, self.level)
        corner = part.corner(i)

        def psi_i(pts: np.ndarray) -> np.ndarray:
            return self.base((pts - corner) * 2.0**self.level)

        return psi_i


def bump_integral_1d() -> tuple[float, float]:
    """The base bump integral by two independent rules (adaptive Gauss and
    composite Simpson)."""
    gauss, _ = quad(lambda t: math.exp(-1.0 / (t * (1.0 - t))), 0.0, 1.0,
                    epsabs=1e-13, epsrel=1e-13)
    grid = np.linspace(0.0, 1.0, (1 << 15) + 1)
    simp = float(simpson(_bump_1d(grid), x=grid))
    return gauss, simp


def bump(d: int) -> BumpFamily:
    """Base bump (product of per-axis bumps) with its integral."""
    if d < 1 or d > 3:
        raise ValueError("bump families cover d in {1, 2, 3}")
    gauss, simp = bump_integral_1d()
    if abs(gauss - simp) > 1e-8:
        raise AssertionError("bump integral references disagree")
    return BumpFamily(d, 0, gauss**d)


def hard_instance(
    k: int,
    coefficients,
    codec: FixedPointCodec,
    d: int = 1,
) -> TestFunction:
    """Stress integrand: encoded coefficients times disjoint scaled bumps.

    Each evaluation locates its cube and touches exactly one bump.  The
    exact integral is sigma1 times the mean of the encoded coefficients.
    """
    coef = np.asarray(coefficients, dtype=float)
    n_seq = 1 << (d * k)
    if coef.shape != (n_seq,):
        raise ValueError(f"need 2^(d*k) = {n_seq} coefficients, got {coef.shape}")
    if np.any(np.abs(coef) > codec.half_range):
        raise ValueError("coefficient outside the fixed-point range")
    family = BumpFamily(d, k, bump(d).sigma1)
    part = CubePartition(d, k)
    encoded = codec.quantize(coef)
    reference = float(family.sigma1 * encoded.mean())
    counter = {"bump_evals": 0}

    def fn(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        idx = part.locate(pts)
        corners = part.corners(idx)
        local = (pts - corners) * 2.0**k
        counter["bump_evals"] += pts.shape[0]
        return encoded[idx] * family.base(local)

    return TestFunction(
        f"hard_k{k}", d, fn, reference,
        meta={"sigma1": family.sigma1, "level": k, "counter": counter},
    )


# ---------------------------------------------------------------------------
# Numerical smoothness metadata
# ---------------------------------------------------------------------------


def sobolev_norm_estimate(
    f: Callable[[np.ndarray], np.ndarray], d: int, r: int, p: float,
    grid_n: int = 128,
) -> float:
    """Finite-difference estimate of the order-r Sobolev norm.

    Crude by design: it is only used to scale test functions to roughly
    unit norm.
    """
    if d > 3:
        raise ValueError("norm estimation covers d <= 3")
    m = grid_n if d == 1 else (64 if d == 2 else 24)
    axes = [np.linspace(0.0, 1.0, m)] * d
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    vals = np.asarray(f(pts)).reshape(grids[0].shape)
    h = 1.0 / (m - 1)

    import itertools

    total = 0.0
    for order in range(r + 1):
        for alpha in itertools.product(range(order + 1), repeat=d):
            if sum(alpha) != order:
                continue
            der = vals
            for axis, a in enumerate(alpha):
                for _ in range(a):
                    der = np.gradient(der, h, axis=axis)
            total += float(np.mean(np.abs(der) ** p))
    return total ** (1.0 / p)


# ---------------------------------------------------------------------------
# Classical baselines
# ---------------------------------------------------------------------------


@dataclass
class BaselineResult:
    method: str
    n: int
    evals: int
    value: float
    error: float


def det_baseline(tf: TestFunction, n: int, r: int = 1) -> BaselineResult:
    """Composite quadrature at the deepest level affordable within n
    evaluations."""
    if n < 1:
        raise ValueError("budget must be >= 1")
    rule = base_quadrature(tf.d, r)
    level = max(0, int(math.floor(math.log2(max(n / rule.count, 1.0)) / tf.d)))
    value = composite_apply(rule, level, tf.fn)
    evals = rule.count * (1 << (tf.d * level))
    return BaselineResult("deterministic", n, evals, value, abs(value - tf.reference))


def _interp_constant(tf, part, pts):
    corners = part.corners(part.locate(pts))
    return tf.fn(corners), 1


def _interp_multilinear(tf, part, pts):
    level = part.level
    corners = part.corners(part.locate(pts))
    local = (pts - corners) * 2.0**level
    d = tf.d
    out = np.zeros(pts.shape[0])
    for mask in range(1 << d):
        offs = np.array([(mask >> a) & 1 for a in range(d)], dtype=float)
        weight = np.ones(pts.shape[0])
        for a in range(d):
            weight = weight * (local[:, a] if offs[a] else 1.0 - local[:, a])
        out += weight * tf.fn(corners + offs * 2.0**-level)
    return out, 1 << d


def mc_baseline(
    tf: TestFunction,
    n: int,
    rng: np.random.Generator,
    r: int = 1,
    control_variate: bool = True,
) -> BaselineResult:
    """Monte Carlo integration, optionally variance-reduced by a piecewise
    interpolation control variate (constant for r = 1, multilinear above).

    The plain estimator spends the whole budget on uniform samples; the
    variance-reduced one splits it between interpolation nodes and residual
    samples.
    """
    if n < 1:
        raise ValueError("budget must be >= 1")
    if not control_variate:
        pts = rng.random((n, tf.d))
        value = float(np.mean(tf.fn(pts)))
        return BaselineResult("monte-carlo", n, n, value, abs(value - tf.reference))

    interp = _interp_constant if r == 1 else _interp_multilinear
    cv_rule = base_quadrature(tf.d, 1 if r == 1 else 2)
    per_sample = 1 + (1 if r == 1 else 1 << tf.d)
    level = max(0, int(math.floor(math.log2(max(n / (2 * cv_rule.count), 1.0)) / tf.d)))
    nodes = cv_rule.count * (1 << (tf.d * level))
    samples = max(1, (n - nodes) // per_sample)
    part = CubePartition(tf.d, level)

    cv_integral = composite_apply(cv_rule, level, tf.fn)
    pts = rng.random((samples, tf.d))
    interp_vals, _ = interp(tf, part, pts)
    residual = tf.fn(pts) - interp_vals
    value = float(cv_integral + residual.mean())
    evals = nodes + samples * per_sample
    return BaselineResult("residual-mc", n, evals, value, abs(value - tf.reference))
