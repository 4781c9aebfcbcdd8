"""Loss objects with scalar proximal operators, and the teacher label channel.

The teacher channel is a scale-mixture Gaussian: each noise component emits
``y = theta * tau + sigma_hat * g`` with its own teacher scaling ``theta`` and
scale law for ``sigma_hat``. ``z0`` evaluates the induced conditional density
of ``y`` given a Gaussian field, together with its mean-derivative.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import scale_mixtures as sm
from .scale_mixtures import Contaminated, Dirac, ScaleMixture

__all__ = [
    "LossSpec",
    "NoiseComponent",
    "NoiseModel",
    "LAD_DELTA_FLOOR",
    "proximal_f",
    "prox_derivative",
    "loss_value",
    "z0",
]

# LAD is treated as the delta -> 0 endpoint of the trimmed-square family; a
# small positive floor regularises the degenerate threshold.
LAD_DELTA_FLOOR = 1e-8

_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LossSpec:
    """Objective: square or trimmed-square ("huber") with ridge strength."""

    kind: str
    ridge: float
    delta: float = math.inf

    def __post_init__(self):
        if self.kind not in ("square", "huber"):
            raise ValueError(f"loss kind must be 'square' or 'huber', got {self.kind!r}")
        if not self.ridge >= 0.0:
            raise ValueError(f"ridge strength must be >= 0, got {self.ridge}")
        if not self.delta >= 0.0:
            raise ValueError(f"huber threshold must be >= 0, got {self.delta}")

    @classmethod
    def square(cls, ridge: float = 0.0) -> "LossSpec":
        return cls(kind="square", ridge=ridge)

    @classmethod
    def huber(cls, delta: float, ridge: float = 0.0) -> "LossSpec":
        return cls(kind="huber", ridge=ridge, delta=delta)

    @classmethod
    def lad(cls, ridge: float = 0.0) -> "LossSpec":
        return cls(kind="huber", ridge=ridge, delta=LAD_DELTA_FLOOR)

    @property
    def square_like(self) -> bool:
        """True when the loss acts as a pure square (kind or saturated threshold)."""
        return self.kind == "square" or math.isinf(self.delta)


@dataclass(frozen=True)
class NoiseComponent:
    weight: float
    theta: float
    scale_law: ScaleMixture


@dataclass(frozen=True)
class NoiseModel:
    """Mixture of teacher-scaled Gaussian noise channels."""

    components: tuple[NoiseComponent, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("noise model needs at least one component")
        if any(c.weight < 0.0 for c in self.components):
            raise ValueError("component weights must be non-negative")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"component weights sum to {total}, expected 1")

    @classmethod
    def gaussian(cls, variance: float = 1.0) -> "NoiseModel":
        return cls((NoiseComponent(1.0, 1.0, Dirac(math.sqrt(variance))),))

    @classmethod
    def from_scale_law(cls, law: ScaleMixture) -> "NoiseModel":
        return cls((NoiseComponent(1.0, 1.0, law),))

    @classmethod
    def contaminated(cls, eps: float, tail: ScaleMixture, base: ScaleMixture = Dirac(1.0)) -> "NoiseModel":
        return cls.from_scale_law(Contaminated(eps, base, tail))

    @classmethod
    def with_outliers(
        cls, eps: float, theta_out: float, sigma_in: float = 1.0, sigma_out: float = 1.0
    ) -> "NoiseModel":
        """Two-population labels: inliers (theta=1) and scaled outliers."""
        return cls(
            (
                NoiseComponent(1.0 - eps, 1.0, Dirac(sigma_in)),
                NoiseComponent(eps, theta_out, Dirac(sigma_out)),
            )
        )

    def second_moment(self) -> float:
        """E[sigma_hat^2] across components; math.inf when any part diverges."""
        total = 0.0
        for c in self.components:
            if c.weight == 0.0:
                continue
            part = sm.moment(c.scale_law, 2)
            if math.isinf(part):
                return math.inf
            total += c.weight * part
        return total

    def theta_mean(self) -> float:
        return sum(c.weight * c.theta for c in self.components)

    def theta_second_moment(self) -> float:
        return sum(c.weight * c.theta**2 for c in self.components)

    def theta_identity(self) -> bool:
        return all(c.theta == 1.0 for c in self.components if c.weight > 0.0)

    def flat_nodes(self, n: int = 200) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened (weight, theta, sigma_hat) arrays across all components."""
        ws, ths, sigs = [], [], []
        for c in self.components:
            if c.weight == 0.0:
                continue
            s, w = sm.quad_nodes(c.scale_law, n)
            ws.append(c.weight * w)
            ths.append(np.full_like(s, c.theta))
            sigs.append(s)
        return np.concatenate(ws), np.concatenate(ths), np.concatenate(sigs)


# ---------------------------------------------------------------------------
# proximal operators


def proximal_f(loss: LossSpec, y, omega, vs):
    """Scalar channel proximal: the minimiser f of vs*u^2/2 + rho(y - omega - vs*u).

    Square: f = (y - omega) / (1 + vs). Trimmed square saturates at |f| = delta.
    """
    r = np.asarray(y, dtype=float) - np.asarray(omega, dtype=float)
    vs = np.asarray(vs, dtype=float)
    if loss.kind == "square" or math.isinf(loss.delta):
        return r / (1.0 + vs)
    if loss.delta == 0.0:
        return np.zeros_like(r + vs)
    denom = np.maximum(np.abs(r) / loss.delta, 1.0 + vs)
    return r / denom


def prox_derivative(loss: LossSpec, y, omega, vs):
    """Analytic d(proximal)/d(omega); the quadratic-branch value is used at the kink."""
    r = np.asarray(y, dtype=float) - np.asarray(omega, dtype=float)
    vs = np.asarray(vs, dtype=float)
    quad = -1.0 / (1.0 + vs)
    if loss.kind == "square" or math.isinf(loss.delta):
        return quad * np.ones_like(r)
    inside = np.abs(r) <= loss.delta * (1.0 + vs)
    return np.where(inside, quad, 0.0)


def loss_value(loss: LossSpec, t):
    """Pointwise objective rho(t)."""
    t = np.asarray(t, dtype=float)
    if loss.kind == "square" or math.isinf(loss.delta):
        return 0.5 * t * t
    d = loss.delta
    return np.where(np.abs(t) < d, 0.5 * t * t, d * np.abs(t) - 0.5 * d * d)


# ---------------------------------------------------------------------------
# teacher channel


def z0(noise: NoiseModel, y, mu: float, v: float, nodes: int = 200):
    """Z0(y, mu, V) and its mu-derivative for the scale-mixture Gaussian channel.

    Z0 = sum_j p_j E_{sigma_hat}[ N(y; theta_j mu, theta_j^2 V + sigma_hat^2) ];
    the derivative is taken analytically on the same expansion.
    """
    if v < 0.0:
        raise ValueError(f"z0 needs V >= 0, got {v}")
    y = np.asarray(y, dtype=float)
    w, th, sig = noise.flat_nodes(nodes)
    s2 = th * th * v + sig * sig
    if np.any(s2 <= 0.0):
        raise ValueError("z0 is a point mass here (V = 0 and a zero noise scale)")
    diff = y[..., None] - th * mu
    dens = np.exp(-0.5 * diff * diff / s2) / (_SQRT2PI * np.sqrt(s2))
    z = dens @ w
    dz = (dens * (th * diff / s2)) @ w
    return z, dz
