"""Finite-dimensional Monte Carlo oracle for the asymptotic theory.

Generates datasets from the elliptical mixture + scale-mixture noise model,
solves the ridge / trimmed-square problems exactly or by IRLS, and measures
the empirical errors the theory predicts. Everything is reproducible from the
dataset seed; replica seeds derive from a master seed via SeedSequence.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import scale_mixtures as sm
from .channel import LossSpec, NoiseModel, loss_value
from .errors import NotConverged, SingularSystem

__all__ = [
    "CovariateCluster",
    "DatasetSpec",
    "Dataset",
    "ErmResult",
    "generate",
    "ridge_solve",
    "huber_solve",
    "lad_solve",
    "empirical_metrics",
    "save_dataset",
    "load_dataset",
    "replica_seed",
]


@dataclass(frozen=True)
class CovariateCluster:
    weight: float
    scale_law: sm.ScaleMixture
    mean: np.ndarray | None = None  # length-d vector; None = centered


@dataclass(frozen=True)
class DatasetSpec:
    n: int
    d: int
    clusters: tuple[CovariateCluster, ...]
    noise: NoiseModel
    seed: int
    beta_star_sq: float = 1.0
    teacher: np.ndarray | None = None  # overrides the Gaussian teacher draw

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("need n >= 1 and d >= 1")
        total = sum(c.weight for c in self.clusters)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"cluster weights sum to {total}, expected 1")

    @classmethod
    def single(cls, n, d, scale_law, noise, seed, beta_star_sq=1.0) -> "DatasetSpec":
        return cls(
            n=n,
            d=d,
            clusters=(CovariateCluster(1.0, scale_law),),
            noise=noise,
            seed=seed,
            beta_star_sq=beta_star_sq,
        )


@dataclass(frozen=True)
class Dataset:
    spec: DatasetSpec
    x: np.ndarray  # (n, d) design
    y: np.ndarray  # (n,) labels
    teacher: np.ndarray  # (d,)
    sigmas: np.ndarray  # per-row covariate scales
    noise_scales: np.ndarray  # per-row label noise scales
    thetas: np.ndarray  # per-row teacher scalings
    cluster_idx: np.ndarray


@dataclass(frozen=True)
class ErmResult:
    coef: np.ndarray
    eps_est: float
    train_loss: float
    angle: float
    iterations: int
    converged: bool
    min_norm: bool = False
    opt_residual: float = 0.0
    objective_path: np.ndarray = field(default_factory=lambda: np.zeros(0))


def replica_seed(master_seed: int, k: int) -> int:
    """Deterministic per-replica seed derived from (master_seed, k)."""
    state = np.random.SeedSequence((master_seed, k)).generate_state(2)
    return int(state[0]) << 32 | int(state[1])


def generate(spec: DatasetSpec) -> Dataset:
    """Draw x_i = mu_c + sigma_i z_i / sqrt(d), y_i = theta_i x_i.beta + sighat_i g_i."""
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n, spec.d
    if spec.teacher is not None:
        teacher = np.asarray(spec.teacher, dtype=float)
        rng.standard_normal(d)  # keep the stream layout fixed either way
    else:
        teacher = math.sqrt(spec.beta_star_sq) * rng.standard_normal(d)
    weights = np.array([c.weight for c in spec.clusters])
    cluster_idx = rng.choice(len(spec.clusters), size=n, p=weights)
    sigmas = np.empty(n)
    for c, cl in enumerate(spec.clusters):
        mask = cluster_idx == c
        if mask.any():
            sigmas[mask] = np.atleast_1d(sm.sample_sigma(cl.scale_law, rng, int(mask.sum())))
    z = rng.standard_normal((n, d))
    x = sigmas[:, None] * z / math.sqrt(d)
    for c, cl in enumerate(spec.clusters):
        if cl.mean is not None:
            x[cluster_idx == c] += np.asarray(cl.mean, dtype=float)
    comp_w = np.array([c.weight for c in spec.noise.components])
    comp_idx = rng.choice(len(comp_w), size=n, p=comp_w)
    thetas = np.empty(n)
    noise_scales = np.empty(n)
    for j, comp in enumerate(spec.noise.components):
        mask = comp_idx == j
        if mask.any():
            thetas[mask] = comp.theta
            noise_scales[mask] = np.atleast_1d(sm.sample_sigma(comp.scale_law, rng, int(mask.sum())))
    g = rng.standard_normal(n)
    y = thetas * (x @ teacher) + noise_scales * g
    return Dataset(
        spec=spec,
        x=x,
        y=y,
        teacher=teacher,
        sigmas=sigmas,
        noise_scales=noise_scales,
        thetas=thetas,
        cluster_idx=cluster_idx,
    )


# ---------------------------------------------------------------------------
# solvers


def _normal_solve(gram: np.ndarray, rhs: np.ndarray, refine_with=None):
    """Cholesky solve with iterative refinement to keep the optimality residual tight."""
    try:
        factor = linalg.cho_factor(gram, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularSystem("normal equations are rank deficient") from exc
    beta = linalg.cho_solve(factor, rhs, check_finite=False)
    scale = np.linalg.norm(rhs) + 1e-300
    for _ in range(3):
        resid = rhs - gram @ beta
        if np.linalg.norm(resid) <= 1e-11 * scale:
            break
        beta = beta + linalg.cho_solve(factor, resid, check_finite=False)
    return beta


def ridge_solve(dataset: Dataset, lam: float) -> ErmResult:
    """Exact normal-equations ridge estimator; min-norm interpolator when
    lam = 0 with fewer samples than features (flagged, not an error)."""
    x, y = dataset.x, dataset.y
    n, d = x.shape
    if lam < 0.0:
        raise ValueError("ridge strength must be >= 0")
    min_norm = False
    if lam == 0.0 and n < d:
        gram = x @ x.T
        dual = _normal_solve(gram, y)
        beta = x.T @ dual
        min_norm = True
        opt_res = float(np.linalg.norm(x @ beta - y))
    else:
        gram = x.T @ x
        if lam > 0.0:
            gram = gram + lam * np.eye(d)
        rhs = x.T @ y
        beta = _normal_solve(gram, rhs)
        opt_res = float(np.linalg.norm(gram @ beta - rhs))
    eps_est, train, angle = empirical_metrics(dataset, beta, LossSpec.square(lam))
    return ErmResult(
        coef=beta,
        eps_est=eps_est,
        train_loss=train,
        angle=angle,
        iterations=1,
        converged=True,
        min_norm=min_norm,
        opt_residual=opt_res,
    )


def _huber_objective(r, beta, lam, delta):
    return float(np.sum(loss_value(LossSpec.huber(delta), r)) + 0.5 * lam * np.dot(beta, beta))


def huber_solve(dataset: Dataset, lam: float, delta: float, max_iters: int = 500) -> ErmResult:
    """Trimmed-square M-estimation by iteratively reweighted least squares.

    Weights min(1, delta/|r|) majorise the objective, so the iteration is
    monotone; convergence is declared on the gradient sup-norm. The objective
    is convex, hence the stationary point is the global minimiser.
    """
    x, y = dataset.x, dataset.y
    n, d = x.shape
    grad_scale = 1.0 + float(np.max(np.abs(x.T @ y)))
    beta = ridge_solve(dataset, lam if lam > 0.0 else 1e-10).coef
    objectives = []
    eye = lam * np.eye(d)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        r = y - x @ beta
        objectives.append(_huber_objective(r, beta, lam, delta))
        with np.errstate(divide="ignore"):
            w = np.minimum(1.0, delta / np.abs(r))
        w = np.where(np.isfinite(w), w, 1.0)  # r = 0 rows sit in the quadratic branch
        gram = (x.T * w) @ x + eye
        rhs = x.T @ (w * y)
        beta_new = _normal_solve(gram, rhs)
        beta = beta_new
        r = y - x @ beta
        grad = -x.T @ np.clip(r, -delta, delta) + lam * beta
        if float(np.max(np.abs(grad))) < 1e-8 * grad_scale:
            converged = True
            break
    r = y - x @ beta
    objectives.append(_huber_objective(r, beta, lam, delta))
    if not converged:
        raise NotConverged(
            f"IRLS did not reach the gradient tolerance in {max_iters} iterations",
            solution=None,
        )
    eps_est, train, angle = empirical_metrics(dataset, beta, LossSpec.huber(delta, lam))
    grad_res = float(np.max(np.abs(-x.T @ np.clip(r, -delta, delta) + lam * beta)))
    return ErmResult(
        coef=beta,
        eps_est=eps_est,
        train_loss=train,
        angle=angle,
        iterations=it,
        converged=converged,
        opt_residual=grad_res,
        objective_path=np.asarray(objectives),
    )


def lad_solve(dataset: Dataset, lam: float, max_iters: int = 500) -> ErmResult:
    """Least absolute deviations as the small-threshold endpoint of huber_solve."""
    delta = 1e-6 * float(np.median(np.abs(dataset.y)) + 1e-300)
    return huber_solve(dataset, lam, delta, max_iters=max_iters)


def empirical_metrics(dataset: Dataset, coef: np.ndarray, loss: LossSpec):
    """(eps_est, training loss under rho, normalised angle) for an estimator."""
    d = dataset.spec.d
    diff = coef - dataset.teacher
    eps_est = float(np.dot(diff, diff)) / d
    resid = dataset.y - dataset.x @ coef
    train = float(np.mean(loss_value(loss, resid)))
    denom = np.linalg.norm(coef) * np.linalg.norm(dataset.teacher)
    if denom == 0.0:
        angle = 0.5
    else:
        cosine = float(np.dot(coef, dataset.teacher) / denom)
        angle = math.acos(min(1.0, max(-1.0, cosine))) / math.pi
    return eps_est, train, angle


# ---------------------------------------------------------------------------
# dataset dump/load: int64 header (n, d, seed) then row-major design matrix,
# labels, teacher as little-endian float64


def save_dataset(path, dataset: Dataset) -> None:
    n, d = dataset.x.shape
    with open(path, "wb") as fh:
        fh.write(np.array([n, d, dataset.spec.seed], dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(dataset.x, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.y, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.teacher, dtype="<f8").tobytes())


def load_dataset(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Read back (design, labels, teacher, seed) from the columnar binary dump."""
    with open(path, "rb") as fh:
        header = np.frombuffer(fh.read(24), dtype="<i8")
        n, d, seed = (int(v) for v in header)
        x = np.frombuffer(fh.read(8 * n * d), dtype="<f8").reshape(n, d).copy()
        y = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
        teacher = np.frombuffer(fh.read(8 * d), dtype="<f8").copy()
    return x, y, teacher, seed
