"""Bayes-optimal baseline for a single centered elliptical cloud.

Iterates the two-scalar self-consistent pair (q, q_hat) whose fixed point
gives the minimum mean-squared estimation error, and provides the
posterior-mean test-error baseline for teacher-scaled noise models.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import scale_mixtures as sm
from .channel import NoiseModel
from .errors import NotConverged, QuadratureFailure
from .quadrature import composite_legendre, gauss_hermite, scale_adapted_edges

__all__ = ["BOSolution", "bo_channel", "solve_bo", "bo_gen_baseline"]

_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class BOSolution:
    q: float
    q_hat: float
    eps_bo: float
    iterations: int
    residual: float
    converged: bool
    init_spread: float  # max disagreement across solver initialisations


def _label_integral(mu, cond_var, nw, nth, nsig, n_panel_nodes):
    """int dy (d_mu Z0)^2 / Z0 for one Gaussian-field point."""
    svar = nth * nth * cond_var + nsig * nsig
    s = np.sqrt(np.maximum(svar, 1e-300))
    centers = np.unique(nth * mu)
    edges = scale_adapted_edges(centers, s.min(), s.max())
    y, yw = composite_legendre(edges, n_panel_nodes)
    diff = y[:, None] - nth[None, :] * mu
    with np.errstate(under="ignore"):
        dens = np.exp(-0.5 * diff * diff / svar[None, :]) / (_SQRT2PI * s[None, :])
    z = dens @ nw
    dz = (dens * (nth[None, :] * diff / svar[None, :])) @ nw
    with np.errstate(invalid="ignore", divide="ignore"):
        integrand = np.where(z > 0.0, dz * dz / z, 0.0)
    return float(np.dot(yw, integrand))


def bo_channel(
    alpha: float,
    beta_star_sq: float,
    cov_law: sm.ScaleMixture,
    noise: NoiseModel,
    q: float,
    nodes: int = 200,
    zeta_nodes: int = 80,
) -> float:
    """Conjugate overlap q_hat = alpha E[sigma^2 * Fisher-type label integral].

    The label integral runs over the mixture density itself on a grid that
    resolves every noise component's scale; the node budget doubles until two
    refinements agree, then a persistent gap raises QuadratureFailure.

    For identity teacher scaling the channel is translation invariant in the
    field mean, so the Gaussian-field integral collapses to a single point.
    """
    if not 0.0 <= q <= beta_star_sq:
        raise ValueError(f"overlap must lie in [0, beta_star_sq], got {q}")
    if alpha == 0.0:
        return 0.0
    s_nodes, s_w = sm.quad_nodes(cov_law, nodes)
    nw, nth, nsig = noise.flat_nodes(nodes)
    sqrt_q = math.sqrt(max(q, 0.0))
    if noise.theta_identity():
        zg, zw = np.zeros(1), np.ones(1)
    else:
        zg, zw = gauss_hermite(zeta_nodes)

    def evaluate(n_panel_nodes):
        total = 0.0
        for sig, ws in zip(s_nodes, s_w):
            cond_var = sig * sig * (beta_star_sq - q)
            acc = 0.0
            for z, wz in zip(zg, zw):
                mu = sig * sqrt_q * z
                acc += wz * _label_integral(mu, cond_var, nw, nth, nsig, n_panel_nodes)
            total += ws * sig * sig * acc
        return alpha * total

    previous = evaluate(12)
    for n_panel in (24, 48, 96):
        current = evaluate(n_panel)
        if abs(current - previous) <= 1e-9 * max(abs(current), 1e-12):
            return current
        previous = current
    raise QuadratureFailure("label integral did not stabilise under refinement")


def _iterate(alpha, beta_star_sq, cov_law, noise, q0, tol, max_iters, damping, nodes, zeta_nodes):
    q = min(max(q0, 0.0), beta_star_sq * (1.0 - 1e-12))
    q_hat = 0.0
    res = math.inf
    for it in range(1, max_iters + 1):
        q_hat = bo_channel(alpha, beta_star_sq, cov_law, noise, q, nodes, zeta_nodes)
        fresh = beta_star_sq**2 * q_hat / (1.0 + beta_star_sq * q_hat)
        res = abs(fresh - q) / (abs(q) + 1e-12)
        if res < tol:
            # return the undamped map value so q = b^4 q_hat / (1 + b^2 q_hat) exactly
            return fresh, q_hat, it, res, True
        q = (1.0 - damping) * q + damping * fresh
        q = min(q, beta_star_sq * (1.0 - 1e-15))
    return q, q_hat, max_iters, res, False


def solve_bo(
    alpha: float,
    beta_star_sq: float,
    cov_law: sm.ScaleMixture,
    noise: NoiseModel,
    tol: float = 1e-9,
    max_iters: int = 2000,
    damping: float = 0.7,
    nodes: int = 200,
    zeta_nodes: int = 80,
    init_fractions: tuple[float, ...] = (0.01, 0.5, 0.99),
    raise_on_fail: bool = True,
) -> BOSolution:
    """Damped iteration of the (q_hat, q) pair; eps_bo = beta_star_sq - q.

    Uniqueness of the fixed point is not assumed: the iteration runs from
    several starting overlaps and the spread across them is reported.
    """
    if alpha < 0.0:
        raise ValueError(f"sample complexity must be >= 0, got {alpha}")
    if alpha == 0.0:
        return BOSolution(0.0, 0.0, beta_star_sq, 0, 0.0, True, 0.0)
    results = [
        _iterate(alpha, beta_star_sq, cov_law, noise, f * beta_star_sq, tol, max_iters, damping, nodes, zeta_nodes)
        for f in init_fractions
    ]
    qs = [r[0] for r in results]
    spread = max(qs) - min(qs) if len(qs) > 1 else 0.0
    q, q_hat, iters, res, ok = results[len(results) // 2]
    solution = BOSolution(
        q=q,
        q_hat=q_hat,
        eps_bo=beta_star_sq - q,
        iterations=iters,
        residual=res,
        converged=ok and all(r[4] for r in results),
        init_spread=spread,
    )
    if raise_on_fail and not solution.converged:
        raise NotConverged("Bayes-optimal iteration did not settle", solution=solution)
    return solution


def bo_gen_baseline(
    alpha: float,
    beta_star_sq: float,
    cov_law: sm.ScaleMixture,
    noise: NoiseModel,
    solution: BOSolution | None = None,
) -> tuple[float, float]:
    """Errors of the posterior-mean predictor rescaled for teacher-scaled labels.

    Returns (estimation error, population square error); entries are inf when
    the needed covariate or noise second moment diverges.
    """
    if solution is None:
        solution = solve_bo(alpha, beta_star_sq, cov_law, noise)
    q = solution.q
    mu1 = noise.theta_mean()
    mu2 = noise.theta_second_moment()
    eps_est = beta_star_sq - (2.0 * mu1 - mu1 * mu1) * q
    cov_power = sm.moment(cov_law, 2)
    noise_power = noise.second_moment()
    if math.isinf(cov_power) or math.isinf(noise_power):
        return eps_est, math.inf
    eps_gen = cov_power * (beta_star_sq * mu2 - mu1 * mu1 * q) + noise_power
    return eps_est, eps_gen
