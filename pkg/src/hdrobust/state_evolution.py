"""Self-consistent fixed-point equations for ridge-regularised M-estimation.

Solves the low-dimensional order-parameter system for a mixture of elliptical
covariate clusters under square or trimmed-square (huber) losses, and derives
estimation / generalisation / training errors plus the estimator-teacher angle.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf, erfc, ndtr

from . import scale_mixtures as sm
from .channel import LossSpec, NoiseModel
from .errors import (
    DegenerateDenominator,
    InfiniteNoiseVariance,
    NotConverged,
    RootNotBracketed,
)
from .quadrature import gauss_hermite

__all__ = [
    "Cluster",
    "ProblemSpec",
    "OrderParams",
    "HatParams",
    "SolverConfig",
    "FixedPointSolution",
    "channel_update",
    "channel_update_square",
    "channel_update_huber",
    "channel_update_generic",
    "prior_update",
    "solve",
    "training_loss",
    "gen_error",
    "stieltjes_form_solve",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)
_TWO_OVER_SQRTPI = 2.0 / math.sqrt(math.pi)


@dataclass(frozen=True)
class Cluster:
    """One elliptical cloud: mixture weight, scale law, teacher-mean overlap."""

    weight: float
    scale_law: sm.ScaleMixture
    teacher_overlap: float = 0.0  # mu_c . beta_star


@dataclass(frozen=True)
class ProblemSpec:
    alpha: float
    beta_star_sq: float
    clusters: tuple[Cluster, ...]
    noise: NoiseModel
    loss: LossSpec
    gram: np.ndarray | None = None  # d-scaled mean overlaps, shape (K, K)

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValueError(f"sample complexity must be > 0, got {self.alpha}")
        if not self.beta_star_sq > 0.0:
            raise ValueError(f"teacher norm must be > 0, got {self.beta_star_sq}")
        if not self.clusters:
            raise ValueError("need at least one cluster")
        total = sum(c.weight for c in self.clusters)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"cluster weights sum to {total}, expected 1")
        if self.gram is not None:
            g = np.asarray(self.gram, dtype=float)
            if g.shape != (len(self.clusters), len(self.clusters)):
                raise ValueError("gram matrix shape must be (K, K)")
            object.__setattr__(self, "gram", g)

    @classmethod
    def single(cls, alpha, scale_law, noise, loss, beta_star_sq=1.0) -> "ProblemSpec":
        """The centered one-cloud problem used throughout."""
        return cls(
            alpha=alpha,
            beta_star_sq=beta_star_sq,
            clusters=(Cluster(1.0, scale_law),),
            noise=noise,
            loss=loss,
        )

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def centered(self) -> bool:
        if any(c.teacher_overlap != 0.0 for c in self.clusters):
            return False
        return self.gram is None or not np.any(self.gram)


@dataclass(frozen=True)
class OrderParams:
    m: float
    q: float
    v: float
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def flat(self) -> np.ndarray:
        return np.concatenate([[self.m, self.q, self.v], np.atleast_1d(self.t)])


@dataclass(frozen=True)
class HatParams:
    m_hat: np.ndarray  # per cluster
    q_hat: np.ndarray  # per cluster
    v_hat: float
    t_hat: np.ndarray  # per cluster

    @property
    def m_hat_total(self) -> float:
        return float(np.sum(self.m_hat))

    @property
    def q_hat_total(self) -> float:
        return float(np.sum(self.q_hat))


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-9
    max_iters: int = 100_000
    damping: float = 0.5
    min_damping: float = 0.01
    nodes: int = 200
    zeta_nodes: int = 100
    raise_on_fail: bool = True


@dataclass(frozen=True)
class FixedPointSolution:
    params: OrderParams
    hats: HatParams
    eps_est: float
    eps_gen: float
    eps_train: float
    angle: float
    iterations: int
    residual: float
    converged: bool


# ---------------------------------------------------------------------------
# numerically stable pieces of the trimmed-square channel


def _erf_bracket(chi):
    """erf(chi) - 2/sqrt(pi) * chi * exp(-chi^2), evaluated without cancellation.

    Equals E[r^2 ; |r| <= R] / psi for r ~ N(0, psi), chi = R / sqrt(2 psi).
    Series around 0 where the direct form loses all significant digits.
    """
    chi = np.asarray(chi, dtype=float)
    small = np.abs(chi) < 0.05
    c = np.where(small, chi, 0.0)
    c2 = c * c
    series = _TWO_OVER_SQRTPI * c * c2 * (2.0 / 3.0 + c2 * (-2.0 / 5.0 + c2 * (1.0 / 7.0 - c2 / 27.0)))
    big = np.where(small, 1.0, chi)
    with np.errstate(invalid="ignore"):
        gauss_term = np.where(np.isfinite(big), big * np.exp(-big * big), 0.0)
    direct = erf(big) - _TWO_OVER_SQRTPI * gauss_term
    return np.where(small, series, direct)


def _clipped_m(m: float, q: float, b2: float) -> float:
    """Project the teacher overlap into the Cauchy-Schwarz ball |m| <= b sqrt(q),
    which keeps every per-component channel mismatch non-negative; physical
    fixed points already satisfy the bound, so only transients are affected."""
    bound = math.sqrt(b2 * max(q, 0.0))
    return max(-bound, min(bound, m))


def _mismatch(spec: ProblemSpec, params: OrderParams) -> tuple[float, float, float]:
    """theta moments and the channel mismatch beta^2 E[th^2] - 2 E[th] m + q."""
    mu1 = spec.noise.theta_mean()
    mu2 = spec.noise.theta_second_moment()
    m = _clipped_m(params.m, params.q, spec.beta_star_sq)
    gap = spec.beta_star_sq * mu2 - 2.0 * mu1 * m + params.q
    return mu1, mu2, max(gap, 0.0)


# ---------------------------------------------------------------------------
# channel updates


def channel_update_square(spec: ProblemSpec, params: OrderParams, nodes: int = 200) -> HatParams:
    """Closed-form hat parameters for the square loss (finite noise power only)."""
    noise_power = spec.noise.second_moment()
    if math.isinf(noise_power):
        raise InfiniteNoiseVariance("square-loss channel needs E[eta^2] < inf")
    mu1, mu2, gap = _mismatch(spec, params)
    v = params.v
    t = params.t if params.t.size else np.zeros(spec.n_clusters)
    alpha = spec.alpha

    m_hat = np.zeros(spec.n_clusters)
    q_hat = np.zeros(spec.n_clusters)
    t_hat = np.zeros(spec.n_clusters)
    v_hat = 0.0
    for idx, cl in enumerate(spec.clusters):
        law = cl.scale_law
        e_s2 = sm.expect(law, lambda s: s * s / (1.0 + v * s * s))
        e_s2_sq = sm.expect(law, lambda s: (s / (1.0 + v * s * s)) ** 2)
        e_s4_sq = sm.expect(law, lambda s: (s * s / (1.0 + v * s * s)) ** 2)
        e_inv = sm.expect(law, lambda s: 1.0 / (1.0 + v * s * s))
        # E_theta[(theta t0 - t)^2] decomposed on theta moments
        mean_sq = mu2 * cl.teacher_overlap**2 - 2.0 * mu1 * cl.teacher_overlap * t[idx] + t[idx] ** 2
        m_hat[idx] = alpha * cl.weight * mu1 * e_s2
        v_hat += alpha * cl.weight * e_s2
        q_hat[idx] = alpha * cl.weight * ((noise_power + mean_sq) * e_s2_sq + gap * e_s4_sq)
        t_hat[idx] = alpha * cl.weight * (mu1 * cl.teacher_overlap - t[idx]) * e_inv
    return HatParams(m_hat=m_hat, q_hat=q_hat, v_hat=v_hat, t_hat=t_hat)


def channel_update_huber(spec: ProblemSpec, params: OrderParams, nodes: int = 200) -> HatParams:
    """Hat parameters for the trimmed-square loss on centered clusters.

    Joint (sigma, sigma_hat, theta) expectation of the erf-form channel; every
    integrand stays bounded, so infinite noise power is allowed here.
    """
    if spec.loss.square_like:
        return channel_update_square(spec, params, nodes)
    if not spec.centered:
        return channel_update_generic(spec, params, nodes=nodes)
    delta = spec.loss.delta
    v, q = params.v, params.q
    b2 = spec.beta_star_sq
    m = _clipped_m(params.m, q, b2)
    alpha = spec.alpha

    nw, nth, nsig = spec.noise.flat_nodes(nodes)
    m_hat = np.zeros(spec.n_clusters)
    q_hat = np.zeros(spec.n_clusters)
    v_hat = 0.0
    for idx, cl in enumerate(spec.clusters):
        s, w = sm.quad_nodes(cl.scale_law, nodes)
        s2 = (s * s)[:, None]
        denom = 1.0 + v * s2
        gap_th = b2 * nth * nth - 2.0 * nth * m + q  # per noise node
        psi = np.maximum(nsig * nsig + s2 * gap_th[None, :], 0.0)
        with np.errstate(divide="ignore"):
            chi = np.where(psi > 0.0, delta * denom / np.sqrt(2.0 * psi), np.inf)
        erf_chi = erf(chi)
        weight = w[:, None] * nw[None, :]
        m_hat[idx] = alpha * cl.weight * float(np.sum(weight * s2 * nth[None, :] * erf_chi / denom))
        v_hat += alpha * cl.weight * float(np.sum(weight * s2 * erf_chi / denom))
        q_term = s2 * psi * _erf_bracket(chi) / denom**2 + s2 * delta**2 * erfc(chi)
        q_hat[idx] = alpha * cl.weight * float(np.sum(weight * q_term))
    return HatParams(m_hat=m_hat, q_hat=q_hat, v_hat=v_hat, t_hat=np.zeros(spec.n_clusters))


def _truncated_pieces(a, s, omega, radius, vs2):
    """Exact Gaussian y-integrals of the proximal over the three branches.

    y ~ N(a, s^2); the quadratic branch is |y - omega| <= radius. Returns the
    branch-resolved moments needed by every hat equation.
    """
    with np.errstate(invalid="ignore"):
        t_lo = (omega - radius - a) / s
        t_hi = (omega + radius - a) / s
    if np.isinf(radius):
        t_lo = np.full_like(np.broadcast_to(a, np.broadcast_shapes(a.shape, s.shape)), -np.inf)
        t_hi = -t_lo
    with np.errstate(invalid="ignore"):
        phi_lo = np.where(np.isfinite(t_lo), np.exp(-0.5 * t_lo * t_lo) / _SQRT2PI, 0.0)
        phi_hi = np.where(np.isfinite(t_hi), np.exp(-0.5 * t_hi * t_hi) / _SQRT2PI, 0.0)
        cdf_lo = ndtr(t_lo)
        cdf_hi = ndtr(t_hi)
        p_in = np.maximum(cdf_hi - cdf_lo, 0.0)
        p_lo = cdf_lo
        p_hi = 1.0 - cdf_hi
        tphi_lo = np.where(np.isfinite(t_lo), t_lo * phi_lo, 0.0)
        tphi_hi = np.where(np.isfinite(t_hi), t_hi * phi_hi, 0.0)
    shift = a - omega
    ey_a_in = s * (phi_lo - phi_hi)  # E[(y - a); in]
    e2_a_in = s * s * (p_in + tphi_lo - tphi_hi)  # E[(y - a)^2; in]
    e1_in = ey_a_in + shift * p_in  # E[(y - omega); in]
    e2_in = e2_a_in + 2.0 * shift * ey_a_in + shift * shift * p_in
    return {
        "p_in": p_in,
        "p_lo": p_lo,
        "p_hi": p_hi,
        "phi_lo": phi_lo,
        "phi_hi": phi_hi,
        "ey_a_in": ey_a_in,
        "e2_a_in": e2_a_in,
        "e1_in": e1_in,
        "e2_in": e2_in,
        "shift": shift,
    }


def channel_update_generic(
    spec: ProblemSpec,
    params: OrderParams,
    nodes: int = 200,
    zeta_nodes: int = 100,
) -> HatParams:
    """Hat parameters for arbitrary cluster means via quadrature over the
    Gaussian field, with exact per-branch label integrals of the proximal."""
    delta = spec.loss.delta if spec.loss.kind == "huber" else math.inf
    v = params.v
    q = max(params.q, 1e-300)
    b2 = spec.beta_star_sq
    m = _clipped_m(params.m, q, b2)
    alpha = spec.alpha
    t = params.t if params.t.size else np.zeros(spec.n_clusters)
    zg, zw = gauss_hermite(zeta_nodes)
    nw, nth, nsig = spec.noise.flat_nodes(nodes)

    m_hat = np.zeros(spec.n_clusters)
    q_hat = np.zeros(spec.n_clusters)
    t_hat = np.zeros(spec.n_clusters)
    v_hat = 0.0
    ratio_sq = m * m / q
    for idx, cl in enumerate(spec.clusters):
        s_nodes, s_w = sm.quad_nodes(cl.scale_law, nodes)
        acc_m = acc_q = acc_v = acc_t = 0.0
        for sig, ws in zip(s_nodes, s_w):
            s2 = sig * sig
            vs2 = v * s2
            cond_var = s2 * max(b2 - ratio_sq, 0.0)
            mu = cl.teacher_overlap + sig * (m / math.sqrt(q)) * zg  # teacher field mean
            omega = t[idx] + sig * math.sqrt(q) * zg
            a = nth[None, :] * mu[:, None]
            svar = nth[None, :] ** 2 * cond_var + nsig[None, :] ** 2
            s_lbl = np.sqrt(np.maximum(svar, 1e-300))
            radius = delta * (1.0 + vs2)
            pc = _truncated_pieces(a, s_lbl, omega[:, None], radius, vs2)
            inv = 1.0 / (1.0 + vs2)
            e_f = pc["e1_in"] * inv + (delta * (pc["p_hi"] - pc["p_lo"]) if np.isfinite(delta) else 0.0)
            e_f2 = pc["e2_in"] * inv * inv + (
                delta**2 * (pc["p_hi"] + pc["p_lo"]) if np.isfinite(delta) else 0.0
            )
            e_dw = -pc["p_in"] * inv
            e_ya_f = (pc["e2_a_in"] + pc["shift"] * pc["ey_a_in"]) * inv
            if np.isfinite(delta):
                e_ya_f = e_ya_f + delta * s_lbl * (pc["phi_hi"] + pc["phi_lo"])
            wz = zw[:, None] * nw[None, :]
            acc_q += ws * s2 * float(np.sum(wz * e_f2))
            acc_v += ws * s2 * float(np.sum(wz * (-e_dw)))
            acc_m += ws * s2 * float(np.sum(wz * nth[None, :] / svar * e_ya_f))
            acc_t += ws * float(np.sum(wz * e_f))
        m_hat[idx] = alpha * cl.weight * acc_m
        q_hat[idx] = alpha * cl.weight * acc_q
        v_hat += alpha * cl.weight * acc_v
        t_hat[idx] = alpha * cl.weight * acc_t
    return HatParams(m_hat=m_hat, q_hat=q_hat, v_hat=v_hat, t_hat=t_hat)


def channel_update(spec: ProblemSpec, params: OrderParams, cfg: SolverConfig) -> HatParams:
    if spec.loss.square_like:
        return channel_update_square(spec, params, cfg.nodes)
    if spec.centered:
        return channel_update_huber(spec, params, cfg.nodes)
    return channel_update_generic(spec, params, nodes=cfg.nodes, zeta_nodes=cfg.zeta_nodes)


# ---------------------------------------------------------------------------
# prior update and iteration


def prior_update(spec: ProblemSpec, hats: HatParams) -> OrderParams:
    """Closed-form ridge prior update, including cluster magnetisations."""
    denom = spec.loss.ridge + hats.v_hat
    if denom <= 0.0 or denom * denom == 0.0:
        raise DegenerateDenominator(f"lambda + v_hat = {denom} is not positive")
    b2 = spec.beta_star_sq
    t0 = np.array([c.teacher_overlap for c in spec.clusters])
    sum_m = hats.m_hat_total
    cross = float(np.dot(hats.t_hat, t0))
    gram = spec.gram if spec.gram is not None else np.zeros((spec.n_clusters, spec.n_clusters))
    m = (b2 * sum_m + cross) / denom
    q = (
        b2 * sum_m**2
        + 2.0 * sum_m * cross
        + float(hats.t_hat @ gram @ hats.t_hat)
        + hats.q_hat_total
    ) / denom**2
    v = 1.0 / denom
    t = (t0 * sum_m + gram.T @ hats.t_hat) / denom
    if spec.centered:
        t = np.zeros(spec.n_clusters)
    return OrderParams(m=m, q=q, v=v, t=t)


def _initial_params(spec: ProblemSpec) -> OrderParams:
    return OrderParams(
        m=0.1 * spec.beta_star_sq,
        q=spec.beta_star_sq,
        v=1.0,
        t=np.zeros(spec.n_clusters),
    )


def solve(
    spec: ProblemSpec,
    cfg: SolverConfig | None = None,
    init: OrderParams | None = None,
) -> FixedPointSolution:
    """Damped fixed-point iteration of channel and prior updates.

    Convergence is measured on the undamped residual (max relative change of
    any order parameter under one full update), so the returned point is
    idempotent at the reported tolerance. Damping halves, down to the
    configured floor, whenever the residual keeps oscillating.
    """
    cfg = cfg or SolverConfig()
    params = init if init is not None else _initial_params(spec)
    if params.t.size != spec.n_clusters:
        params = replace(params, t=np.zeros(spec.n_clusters))
    gamma = cfg.damping
    osc = 0
    prev_res = math.inf
    hats = None
    res = math.inf
    for it in range(1, cfg.max_iters + 1):
        hats = channel_update(spec, params, cfg)
        fresh = prior_update(spec, hats)
        old = params.flat()
        new = fresh.flat()
        res = float(np.max(np.abs(new - old) / (np.abs(old) + 1e-12)))
        mixed = (1.0 - gamma) * old + gamma * new
        params = OrderParams(
            m=float(mixed[0]),
            q=max(float(mixed[1]), 0.0),
            v=float(mixed[2]),
            t=mixed[3:],
        )
        if res < cfg.tol:
            return _finalize(spec, params, hats, it, res, True, cfg)
        if res > prev_res:
            osc += 1
            if osc >= 10:
                gamma = max(gamma / 2.0, cfg.min_damping)
                osc = 0
        else:
            osc = 0
        prev_res = res
    solution = _finalize(spec, params, hats, cfg.max_iters, res, False, cfg)
    if cfg.raise_on_fail:
        raise NotConverged(
            f"no fixed point after {cfg.max_iters} iterations (residual {res:.3e})",
            solution=solution,
        )
    return solution


def _finalize(spec, params, hats, iterations, residual, converged, cfg, eps_est=None) -> FixedPointSolution:
    b2 = spec.beta_star_sq
    if eps_est is None:
        eps_est = b2 - 2.0 * params.m + params.q
    eps_gen = gen_error(spec, params)
    eps_train = training_loss(spec, params, nodes=cfg.nodes, zeta_nodes=cfg.zeta_nodes)
    denom = math.sqrt(b2 * max(params.q, 1e-300))
    angle = math.acos(min(1.0, max(-1.0, params.m / denom))) / math.pi
    return FixedPointSolution(
        params=params,
        hats=hats,
        eps_est=eps_est,
        eps_gen=eps_gen,
        eps_train=eps_train,
        angle=angle,
        iterations=iterations,
        residual=residual,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# error functionals


def gen_error(spec: ProblemSpec, params: OrderParams) -> float:
    """Population square error of the estimator; inf when covariates or noise
    have no second moment (the order parameters stay finite regardless)."""
    noise_power = spec.noise.second_moment()
    if math.isinf(noise_power):
        return math.inf
    mu1, mu2, gap = _mismatch(spec, params)
    t = params.t if params.t.size else np.zeros(spec.n_clusters)
    total = noise_power
    for idx, cl in enumerate(spec.clusters):
        mean_sq = mu2 * cl.teacher_overlap**2 - 2.0 * mu1 * cl.teacher_overlap * t[idx] + t[idx] ** 2
        total += cl.weight * mean_sq
        if gap > 0.0:
            s2 = sm.moment(cl.scale_law, 2)
            if math.isinf(s2):
                return math.inf
            total += cl.weight * gap * s2
    return total


def training_loss(
    spec: ProblemSpec,
    params: OrderParams,
    nodes: int = 200,
    zeta_nodes: int = 100,
) -> float:
    """Asymptotic training objective (the loss itself as test function)."""
    v = params.v
    if spec.loss.square_like:
        noise_power = spec.noise.second_moment()
        if math.isinf(noise_power):
            return math.inf
        mu1, mu2, gap = _mismatch(spec, params)
        t = params.t if params.t.size else np.zeros(spec.n_clusters)
        total = 0.0
        for idx, cl in enumerate(spec.clusters):
            law = cl.scale_law
            e_inv2 = sm.expect(law, lambda s: (1.0 / (1.0 + v * s * s)) ** 2)
            e_s2_sq = sm.expect(law, lambda s: (s / (1.0 + v * s * s)) ** 2)
            mean_sq = mu2 * cl.teacher_overlap**2 - 2.0 * mu1 * cl.teacher_overlap * t[idx] + t[idx] ** 2
            total += 0.5 * cl.weight * ((noise_power + mean_sq) * e_inv2 + gap * e_s2_sq)
        return total
    if spec.centered:
        delta = spec.loss.delta
        b2, q = spec.beta_star_sq, params.q
        m = _clipped_m(params.m, q, b2)
        nw, nth, nsig = spec.noise.flat_nodes(nodes)
        total = 0.0
        for cl in spec.clusters:
            s, w = sm.quad_nodes(cl.scale_law, nodes)
            s2 = (s * s)[:, None]
            denom = 1.0 + v * s2
            gap_th = b2 * nth * nth - 2.0 * nth * m + q
            psi = np.maximum(nsig * nsig + s2 * gap_th[None, :], 0.0)
            with np.errstate(divide="ignore"):
                chi = np.where(psi > 0.0, delta * denom / np.sqrt(2.0 * psi), np.inf)
            weight = w[:, None] * nw[None, :]
            quad_part = psi * _erf_bracket(chi) / (2.0 * denom**2)
            lin_part = delta * np.sqrt(2.0 * psi / math.pi) * np.exp(-chi * chi) - delta**2 * (
                v * s2 + 0.5
            ) * erfc(chi)
            total += cl.weight * float(np.sum(weight * (quad_part + lin_part)))
        return total
    return _training_loss_generic(spec, params, nodes, zeta_nodes)


def _training_loss_generic(spec, params, nodes, zeta_nodes) -> float:
    delta = spec.loss.delta
    v = params.v
    q = max(params.q, 1e-300)
    b2 = spec.beta_star_sq
    m = _clipped_m(params.m, q, b2)
    t = params.t if params.t.size else np.zeros(spec.n_clusters)
    zg, zw = gauss_hermite(zeta_nodes)
    nw, nth, nsig = spec.noise.flat_nodes(nodes)
    ratio_sq = m * m / q
    total = 0.0
    for idx, cl in enumerate(spec.clusters):
        s_nodes, s_w = sm.quad_nodes(cl.scale_law, nodes)
        for sig, ws in zip(s_nodes, s_w):
            s2 = sig * sig
            vs2 = v * s2
            cond_var = s2 * max(b2 - ratio_sq, 0.0)
            mu = cl.teacher_overlap + sig * (m / math.sqrt(q)) * zg
            omega = t[idx] + sig * math.sqrt(q) * zg
            a = nth[None, :] * mu[:, None]
            svar = nth[None, :] ** 2 * cond_var + nsig[None, :] ** 2
            s_lbl = np.sqrt(np.maximum(svar, 1e-300))
            radius = delta * (1.0 + vs2)
            pc = _truncated_pieces(a, s_lbl, omega[:, None], radius, vs2)
            inv2 = 1.0 / (1.0 + vs2) ** 2
            quad_part = 0.5 * pc["e2_in"] * inv2
            abs_out = s_lbl * (pc["phi_hi"] + pc["phi_lo"]) + pc["shift"] * (pc["p_hi"] - pc["p_lo"])
            p_out = pc["p_hi"] + pc["p_lo"]
            lin_part = delta * abs_out - delta**2 * (vs2 + 0.5) * p_out
            wz = zw[:, None] * nw[None, :]
            total += cl.weight * ws * float(np.sum(wz * (quad_part + lin_part)))
    return total


# ---------------------------------------------------------------------------
# square-loss fast path in terms of the susceptibility function


def stieltjes_form_solve(spec: ProblemSpec, cfg: SolverConfig | None = None) -> FixedPointSolution:
    """Square-loss single-cloud solver via the scalar equation 1 - lambda v = alpha Y(v).

    Bracketed root-finding in v, then closed-form order parameters. Raises
    RootNotBracketed for the unregularised alpha <= 1 branch where no valid v exists.
    """
    cfg = cfg or SolverConfig()
    if not spec.loss.square_like:
        raise ValueError("fast path applies to the square loss only")
    if spec.n_clusters != 1 or not spec.centered:
        raise ValueError("fast path applies to a single centered cloud")
    noise_power = spec.noise.second_moment()
    if math.isinf(noise_power):
        raise InfiniteNoiseVariance("square-loss channel needs E[eta^2] < inf")
    law = spec.clusters[0].scale_law
    lam = spec.loss.ridge
    alpha = spec.alpha
    b2 = spec.beta_star_sq

    def g(v):
        return 1.0 - lam * v - alpha * sm.capital_y(law, v)

    lo = 1e-14
    if g(lo) <= 0.0:
        lo = 1e-300
        if g(lo) <= 0.0:
            raise RootNotBracketed("no positive v solves the susceptibility equation")
    if lam > 0.0:
        hi = 1.0 / lam
    else:
        # Y(v) < 1 for all v, so the ridgeless equation has a root iff alpha > 1
        if alpha <= 1.0:
            raise RootNotBracketed("ridgeless square loss has no valid solution at alpha <= 1")
        hi = 1.0
        while g(hi) > 0.0:
            hi *= 10.0
            if hi > 1e18:
                raise RootNotBracketed("susceptibility equation root escaped the bracket")
    v = brentq(g, lo, hi, xtol=1e-300, rtol=8.9e-16, maxiter=200)
    y = sm.capital_y(law, v)
    yp = sm.capital_y_deriv(law, v)
    mu1 = spec.noise.theta_mean()
    mu2 = spec.noise.theta_second_moment()
    m_hat = alpha * mu1 * y / v
    v_hat = 1.0 / v - lam
    m = b2 * m_hat * v
    # channel mismatch x2 = b2 mu2 - 2 mu1 m + q from the linearised q-equation
    numer = b2 * (mu2 - mu1 * mu1 * (1.0 - (lam * v) ** 2)) + alpha * noise_power * v * v * yp
    x2 = numer / (v * (lam + alpha * yp))
    q_hat = alpha * (noise_power * yp + (y - v * yp) * x2 / (v * v))
    q = (m_hat**2 * b2 + q_hat) * v * v
    params = OrderParams(m=m, q=q, v=v, t=np.zeros(1))
    hats = HatParams(
        m_hat=np.array([m_hat]),
        q_hat=np.array([q_hat]),
        v_hat=v_hat,
        t_hat=np.zeros(1),
    )
    # b2 - 2m + q evaluated through the mismatch variable: the direct
    # subtraction cancels catastrophically once eps_est < 1e-16 * b2
    eps_est = x2 + b2 * (1.0 - mu2) + 2.0 * m * (mu1 - 1.0)
    return _finalize(spec, params, hats, 0, abs(g(v)), True, cfg, eps_est=eps_est)
