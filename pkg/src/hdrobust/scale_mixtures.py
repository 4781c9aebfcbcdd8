"""Scalar scale distributions driving elliptical covariates and heavy-tailed noise.

A scale mixture is the law of a positive random scale ``sigma``; covariates are
``sigma * z`` with isotropic Gaussian ``z`` and noise is ``sigma_hat * g``. The
module provides sampling, exact moments, the Stieltjes transform of ``sigma^2``,
the susceptibility function Y(v) = v E[sigma^2 / (1 + v sigma^2)], tail
classification, and the scaled Stieltjes limits used by rate predictions.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .errors import NonConvergedLimit, QuadratureFailure
from .quadrature import composite_legendre

__all__ = [
    "Dirac",
    "InverseGamma",
    "Pareto",
    "Discrete",
    "Contaminated",
    "ScaleMixture",
    "TailClass",
    "LimitEstimate",
    "sample_sigma",
    "moment",
    "expect",
    "stieltjes",
    "capital_y",
    "tail_class",
    "limit_sigma_tilde",
    "quad_nodes",
]

# Relative / absolute tolerances for adaptive quadrature (see module notes:
# channel updates need accuracy well below the solver's own threshold).
QUAD_EPSREL = 1e-10
QUAD_EPSABS = 1e-12
# Nominal log-scale integration window; extended until the boundary panels
# contribute less than BOUNDARY_FRACTION of the running total.
LOG_WINDOW = 30.0
BOUNDARY_FRACTION = 1e-13
EXTENSION_STEP = 10.0
MAX_LOG_U = 300.0


@dataclass(frozen=True)
class Dirac:
    """Point mass at ``scale``; zero is allowed (used for noise-free labels)."""

    scale: float

    def __post_init__(self):
        if not self.scale >= 0.0:
            raise ValueError(f"Dirac scale must be >= 0, got {self.scale}")


@dataclass(frozen=True)
class InverseGamma:
    """``sigma^2`` inverse-gamma with shape ``a`` and rate ``b``.

    The scale density is 2 b^a exp(-b/s^2) / (Gamma(a) s^(2a+1)); the implied
    covariate marginal is Student-like with k-th moment finite iff k < 2a.
    The unit-variance parametrisation a = 1 + b gives E[sigma^2] = 1.
    """

    shape: float
    rate: float

    def __post_init__(self):
        if not self.shape > 0.0:
            raise ValueError(f"InverseGamma shape must be > 0, got {self.shape}")
        if not self.rate > 0.0:
            raise ValueError(f"InverseGamma rate must be > 0, got {self.rate}")


@dataclass(frozen=True)
class Pareto:
    """Scale density 2a s^(-2a-1) on [1, inf); k-th moment finite iff k < 2a."""

    shape: float

    def __post_init__(self):
        if not self.shape > 0.0:
            raise ValueError(f"Pareto shape must be > 0, got {self.shape}")


@dataclass(frozen=True)
class Discrete:
    """Finite mixture of point masses; atoms are (scale, weight) pairs."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        atoms = tuple((float(s), float(w)) for s, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise ValueError("Discrete needs at least one atom")
        if any(s <= 0.0 for s, _ in atoms):
            raise ValueError("Discrete atoms must be strictly positive")
        if any(w < 0.0 for _, w in atoms):
            raise ValueError("Discrete weights must be non-negative")
        total = sum(w for _, w in atoms)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"Discrete weights sum to {total}, expected 1")


@dataclass(frozen=True)
class Contaminated:
    """(1 - eps) * base + eps * tail, the epsilon-contamination composite."""

    eps: float
    base: "ScaleMixture"
    tail: "ScaleMixture"

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"contamination fraction must be in [0, 1], got {self.eps}")


ScaleMixture = Union[Dirac, InverseGamma, Pareto, Discrete, Contaminated]


@dataclass(frozen=True)
class TailClass:
    """Power-law tail exponent ``a`` (density ~ s^(-2a-1)) and its regime."""

    exponent: float
    regime: str

    @staticmethod
    def from_exponent(a: float) -> "TailClass":
        if a > 1.0:
            regime = "finite_variance"
        elif a == 1.0:
            regime = "marginal"
        elif a > 0.0:
            regime = "infinite_variance"
        else:
            raise ValueError(f"tail exponent must be positive, got {a}")
        return TailClass(exponent=a, regime=regime)


@dataclass(frozen=True)
class LimitEstimate:
    """Extrapolated limit value together with the last extrapolation residual."""

    value: float
    residual: float


def _components(mix: ScaleMixture):
    """Flatten contamination composites into (weight, leaf) pairs, dropping
    zero-weight branches so eps in {0, 1} is extensionally exact."""
    if isinstance(mix, Contaminated):
        out = []
        if mix.eps < 1.0:
            out.extend((w * (1.0 - mix.eps), leaf) for w, leaf in _components(mix.base))
        if mix.eps > 0.0:
            out.extend((w * mix.eps, leaf) for w, leaf in _components(mix.tail))
        return out
    return [(1.0, mix)]


# ---------------------------------------------------------------------------
# sampling


def sample_sigma(mix: ScaleMixture, rng: np.random.Generator, size=None):
    """Draw scale(s) distributed per the mixture; deterministic given the rng."""
    if isinstance(mix, Dirac):
        return mix.scale if size is None else np.full(size, mix.scale)
    if isinstance(mix, Discrete):
        scales = np.array([s for s, _ in mix.atoms])
        weights = np.array([w for _, w in mix.atoms])
        idx = rng.choice(len(scales), size=size, p=weights)
        return scales[idx]
    if isinstance(mix, InverseGamma):
        g = rng.gamma(shape=mix.shape, scale=1.0 / mix.rate, size=size)
        return 1.0 / np.sqrt(g)
    if isinstance(mix, Pareto):
        u = rng.random(size)
        return (1.0 - u) ** (-0.5 / mix.shape)
    if isinstance(mix, Contaminated):
        if mix.eps == 0.0:
            return sample_sigma(mix.base, rng, size)
        if mix.eps == 1.0:
            return sample_sigma(mix.tail, rng, size)
        if size is None:
            branch = mix.tail if rng.random() < mix.eps else mix.base
            return sample_sigma(branch, rng, None)
        take_tail = rng.random(size) < mix.eps
        out = np.asarray(sample_sigma(mix.base, rng, size), dtype=float).copy()
        n_tail = int(take_tail.sum())
        if n_tail:
            out[take_tail] = sample_sigma(mix.tail, rng, n_tail)
        return out
    raise TypeError(f"unknown scale mixture {mix!r}")


# ---------------------------------------------------------------------------
# moments


def moment(mix: ScaleMixture, k: int) -> float:
    """Exact k-th moment E[sigma^k], or ``math.inf`` past the existence threshold."""
    if k < 1:
        raise ValueError("moment order must be a positive integer")
    if isinstance(mix, Dirac):
        return mix.scale**k
    if isinstance(mix, Discrete):
        return float(sum(w * s**k for s, w in mix.atoms))
    if isinstance(mix, InverseGamma):
        if k >= 2.0 * mix.shape:
            return math.inf
        return float(
            math.exp(0.5 * k * math.log(mix.rate) + gammaln(mix.shape - 0.5 * k) - gammaln(mix.shape))
        )
    if isinstance(mix, Pareto):
        if k >= 2.0 * mix.shape:
            return math.inf
        return 2.0 * mix.shape / (2.0 * mix.shape - k)
    if isinstance(mix, Contaminated):
        total = 0.0
        for w, leaf in _components(mix):
            part = moment(leaf, k)
            if math.isinf(part):
                return math.inf
            total += w * part
        return total
    raise TypeError(f"unknown scale mixture {mix!r}")


def second_moment(mix: ScaleMixture) -> float:
    return moment(mix, 2)


# ---------------------------------------------------------------------------
# expectations of bounded integrands


def _log_weight(leaf, u):
    """log of the density-in-log-scale weight rho(e^u) * e^u."""
    if isinstance(leaf, InverseGamma):
        a, b = leaf.shape, leaf.rate
        return math.log(2.0) + a * math.log(b) - gammaln(a) - b * np.exp(-2.0 * u) - 2.0 * a * u
    if isinstance(leaf, Pareto):
        a = leaf.shape
        return np.where(u >= 0.0, math.log(2.0 * a) - 2.0 * a * u, -np.inf)
    raise TypeError(f"no continuous density for {leaf!r}")


def _leaf_expect(leaf, g) -> float:
    """E[g(sigma)] for one leaf; g must be bounded on the support."""
    if isinstance(leaf, Dirac):
        return float(g(np.asarray(leaf.scale)))
    if isinstance(leaf, Discrete):
        scales = np.array([s for s, _ in leaf.atoms])
        weights = np.array([w for _, w in leaf.atoms])
        return float(np.dot(weights, np.asarray(g(scales), dtype=float)))

    def integrand(u):
        return float(np.exp(_log_weight(leaf, u)) * g(np.exp(u)))

    lo_hard = 0.0 if isinstance(leaf, Pareto) else -MAX_LOG_U
    lo = max(-LOG_WINDOW, lo_hard)
    hi = LOG_WINDOW

    def panel(a, b):
        val, err = integrate.quad(integrand, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
        return val, err

    total, err_total = panel(lo, hi)
    # Extend until boundary panels are negligible relative to the running total.
    for sign in (+1, -1):
        edge = hi if sign > 0 else lo
        while True:
            nxt = edge + sign * EXTENSION_STEP
            if sign < 0 and nxt < lo_hard:
                nxt = lo_hard
            if sign > 0 and nxt > MAX_LOG_U:
                break
            if sign < 0 and edge <= lo_hard:
                break
            piece, perr = panel(min(edge, nxt), max(edge, nxt))
            total += piece
            err_total += perr
            edge = nxt
            if abs(piece) <= BOUNDARY_FRACTION * max(abs(total), QUAD_EPSABS):
                break
            if abs(edge) >= MAX_LOG_U:
                raise QuadratureFailure(
                    f"integration window for {leaf!r} grew past |u| = {MAX_LOG_U}"
                )
    if err_total > max(1e-8 * abs(total), 1e-10):
        raise QuadratureFailure(
            f"adaptive quadrature error {err_total:.2e} too large for {leaf!r}"
        )
    return total


def expect(mix: ScaleMixture, g) -> float:
    """E[g(sigma)] for bounded vectorised ``g``; exact on atoms, quadrature otherwise."""
    return float(sum(w * _leaf_expect(leaf, g) for w, leaf in _components(mix)))


# ---------------------------------------------------------------------------
# transforms


def stieltjes(mix: ScaleMixture, x: float) -> float:
    """S(x) = E[1 / (x + sigma^2)] for x > 0; lies in (0, 1/x)."""
    if not x > 0.0:
        raise ValueError(f"stieltjes needs x > 0, got {x}")
    return expect(mix, lambda s: 1.0 / (x + s * s))


def capital_y(mix: ScaleMixture, v: float) -> float:
    """Y(v) = v E[sigma^2 / (1 + v sigma^2)] in (0, 1); equals 1 - S(1/v)/v."""
    if not v > 0.0:
        raise ValueError(f"capital_y needs v > 0, got {v}")
    return expect(mix, lambda s: v * s * s / (1.0 + v * s * s))


def capital_y_deriv(mix: ScaleMixture, v: float) -> float:
    """dY/dv = E[sigma^2 / (1 + v sigma^2)^2], evaluated directly (no differencing)."""
    if not v > 0.0:
        raise ValueError(f"capital_y_deriv needs v > 0, got {v}")
    return expect(mix, lambda s: s * s / (1.0 + v * s * s) ** 2)


# ---------------------------------------------------------------------------
# tails and scaled limits


def tail_class(mix: ScaleMixture) -> TailClass:
    """Tail exponent read off the variant parameters; min rule over mixtures."""
    if isinstance(mix, (Dirac, Discrete)):
        return TailClass.from_exponent(math.inf)
    if isinstance(mix, (InverseGamma, Pareto)):
        return TailClass.from_exponent(mix.shape)
    if isinstance(mix, Contaminated):
        exps = [tail_class(leaf).exponent for w, leaf in _components(mix) if w > 0.0]
        return TailClass.from_exponent(min(exps))
    raise TypeError(f"unknown scale mixture {mix!r}")


def _aitken(seq: np.ndarray) -> np.ndarray:
    d1 = np.diff(seq)
    d2 = np.diff(seq, 2)
    ok = np.abs(d2) > 1e-300
    out = seq[2:].copy()
    out[ok] = seq[2:][ok] - d1[1:][ok] ** 2 / d2[ok]
    return out


def limit_sigma_tilde(
    mix: ScaleMixture,
    regime: TailClass,
    x_grid=None,
    rtol: float = 1e-2,
) -> LimitEstimate:
    """Scaled large-x limit of 1 - x S(x), per tail regime.

    finite_variance: x (1 - x S(x)) -> E[sigma^2]
    marginal:        (x / ln x) (1 - x S(x))
    infinite_variance: x^a (1 - x S(x))

    Evaluated on a geometric grid of x using 1 - x S(x) = Y(1/x) (numerically
    stable at large x) and accelerated with two Aitken passes.
    """
    if x_grid is None:
        x_grid = 10.0 ** np.arange(4, 13)
    x_grid = np.asarray(x_grid, dtype=float)
    raw = np.array([capital_y(mix, 1.0 / x) for x in x_grid])
    if regime.regime == "finite_variance":
        scaled = x_grid * raw
    elif regime.regime == "marginal":
        scaled = x_grid / np.log(x_grid) * raw
    else:
        scaled = x_grid**regime.exponent * raw
    acc = scaled
    for _ in range(2):
        if len(acc) >= 3:
            acc = _aitken(acc)
    value = float(acc[-1])
    residual = float(abs(acc[-1] - acc[-2])) if len(acc) >= 2 else math.inf
    if not math.isfinite(value) or residual > rtol * max(abs(value), 1e-300):
        raise NonConvergedLimit(
            f"scaled Stieltjes limit did not settle: value={value}, residual={residual}"
        )
    return LimitEstimate(value=value, residual=residual)


# ---------------------------------------------------------------------------
# fixed nodes for joint expectations


def _leaf_window(leaf) -> tuple[float, float]:
    lo_hard = 0.0 if isinstance(leaf, Pareto) else -60.0
    grid = np.linspace(lo_hard, 60.0, 4801)
    logw = _log_weight(leaf, grid)
    peak = np.max(logw)
    mask = logw > peak - 46.0
    lo = grid[mask][0] - 0.5
    hi = grid[mask][-1] + 0.5
    return max(lo, lo_hard), hi


def _peak_anchored_edges(leaf, lo: float, hi: float) -> np.ndarray:
    """Log-scale panel edges growing geometrically away from the density peak,
    resolving the sharp shoulder near the mode without wasting tail panels."""
    grid = np.linspace(lo, hi, 2001)
    peak = grid[int(np.argmax(_log_weight(leaf, grid)))]
    offsets = [0.0]
    step = 0.75
    while offsets[-1] < max(hi - peak, peak - lo):
        offsets.append(offsets[-1] + step)
        step *= 1.7
    offsets = np.asarray(offsets)
    edges = np.clip(np.concatenate([peak - offsets[::-1], peak + offsets]), lo, hi)
    return np.unique(edges)


@lru_cache(maxsize=256)
def quad_nodes(mix: ScaleMixture, n: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Fixed (scales, weights) for vectorised expectations of bounded integrands.

    Atoms are exact; continuous parts use composite Gauss-Legendre on the log
    scale with peak-anchored panels over the region carrying the density mass.
    Weights sum to one.
    """
    scales, weights = [], []
    for w, leaf in _components(mix):
        if isinstance(leaf, Dirac):
            scales.append(np.array([leaf.scale]))
            weights.append(np.array([w]))
        elif isinstance(leaf, Discrete):
            scales.append(np.array([s for s, _ in leaf.atoms]))
            weights.append(w * np.array([wt for _, wt in leaf.atoms]))
        else:
            lo, hi = _leaf_window(leaf)
            edges = _peak_anchored_edges(leaf, lo, hi)
            per_panel = min(25, max(10, n // (len(edges) - 1)))
            u, gl_w = composite_legendre(edges, per_panel)
            dens = np.exp(_log_weight(leaf, u)) * gl_w
            dens *= 1.0 / dens.sum()
            scales.append(np.exp(u))
            weights.append(w * dens)
    return np.concatenate(scales), np.concatenate(weights)
