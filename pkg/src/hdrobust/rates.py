"""Large-sample decay of the estimation error: predictions and empirical fits.

The predicted log-log slope is -1 for finite-variance covariate scales (with a
1/log correction at the marginal exponent) and -1/a when the second moment
diverges; leading coefficients come from the scaled Stieltjes limits.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import scale_mixtures as sm
from .errors import InfiniteNoiseVariance, InsufficientPoints, NonConvergedLimit

__all__ = ["RatePrediction", "RateFit", "predict_rate", "fit_rate", "tail_index_from_norms"]


@dataclass(frozen=True)
class RatePrediction:
    tail: sm.TailClass
    exponent: float  # predicted log-log slope of eps_est vs alpha
    log_correction: bool  # extra 1/ln(alpha) factor (marginal regime)
    coefficient: float | None  # leading constant, None when the limit did not settle


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual: float  # RMS of log-space fit residuals
    n_points: int


def predict_rate(cov_law: sm.ScaleMixture, noise_power: float) -> RatePrediction:
    """Decay prediction for square / trimmed-square losses with finite noise power."""
    if math.isinf(noise_power):
        raise InfiniteNoiseVariance("rate predictions need E[eta^2] < inf")
    tail = sm.tail_class(cov_law)
    try:
        limit = sm.limit_sigma_tilde(cov_law, tail)
    except NonConvergedLimit:
        limit = None
    if tail.regime == "finite_variance":
        exponent, logc = -1.0, False
        coefficient = None if limit is None else noise_power / limit.value
    elif tail.regime == "marginal":
        exponent, logc = -1.0, True
        coefficient = None if limit is None else noise_power / limit.value
    else:
        a = tail.exponent
        exponent, logc = -1.0 / a, False
        coefficient = None if limit is None else noise_power / limit.value ** (1.0 / a)
    return RatePrediction(tail=tail, exponent=exponent, log_correction=logc, coefficient=coefficient)


def _ls_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid**2)))


def fit_rate(
    alphas,
    eps_est,
    window: tuple[float, float] | None = None,
    marginal: bool = False,
) -> RateFit:
    """Least squares on (ln alpha, ln eps).

    With ``marginal=True`` the regression is ln(eps * alpha) on ln ln alpha,
    whose slope is -1 when the decay carries the logarithmic correction; a
    three-parameter fit would be badly conditioned on realistic grids.
    """
    alphas = np.asarray(alphas, dtype=float)
    eps_est = np.asarray(eps_est, dtype=float)
    if window is not None:
        keep = (alphas >= window[0]) & (alphas <= window[1])
        alphas, eps_est = alphas[keep], eps_est[keep]
    if len(alphas) < 5:
        raise InsufficientPoints(f"rate fit needs >= 5 points, got {len(alphas)}")
    if np.any(np.diff(alphas) <= 0.0):
        raise ValueError("alphas must be strictly increasing")
    if marginal:
        slope, intercept, resid = _ls_line(np.log(np.log(alphas)), np.log(eps_est * alphas))
    else:
        slope, intercept, resid = _ls_line(np.log(alphas), np.log(eps_est))
    return RateFit(slope=slope, intercept=intercept, residual=resid, n_points=len(alphas))


def tail_index_from_norms(norms, window: tuple[float, float]) -> tuple[float, float]:
    """Power-law decay index of data norms from the empirical complementary CDF.

    Fits ln P[Z >= z] = -2a ln z + c over samples inside ``window`` and returns
    (2a estimate, RMS fit residual). The fit interval is dataset specific and
    therefore a required input.
    """
    norms = np.sort(np.asarray(norms, dtype=float))[::-1]
    n = len(norms)
    if n == 0:
        raise InsufficientPoints("no samples given")
    ccdf = np.arange(1, n + 1) / n  # P[Z >= z_k] at the k-th largest sample
    keep = (norms >= window[0]) & (norms <= window[1]) & (norms > 0.0)
    if int(keep.sum()) < 100:
        raise InsufficientPoints(
            f"tail fit needs >= 100 samples inside the window, got {int(keep.sum())}"
        )
    slope, _, resid = _ls_line(np.log(norms[keep]), np.log(ccdf[keep]))
    return -slope, resid
