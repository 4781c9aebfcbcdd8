"""Quadrature helpers: Gauss-Hermite, composite Gauss-Legendre, scale-adapted grids."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for expectations against a standard normal.

    Probabilist's convention: E[g(Z)] ~= sum(w * g(x)) with Z ~ N(0, 1).
    """
    knots, weights = np.polynomial.hermite.hermgauss(n)
    return knots * np.sqrt(2.0), weights / np.sqrt(np.pi)


@lru_cache(maxsize=64)
def _legendre_unit(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [a, b]."""
    knots, weights = _legendre_unit(n)
    return 0.5 * (b - a) * knots + 0.5 * (b + a), 0.5 * (b - a) * weights


def composite_legendre(edges: np.ndarray, n_per_panel: int) -> tuple[np.ndarray, np.ndarray]:
    """Panel-wise Gauss-Legendre rule over consecutive intervals in ``edges``."""
    edges = np.asarray(edges, dtype=float)
    knots, weights = _legendre_unit(n_per_panel)
    lo = edges[:-1]
    width = np.diff(edges)
    x = (lo[:, None] + 0.5 * width[:, None] * (knots[None, :] + 1.0)).ravel()
    w = (0.5 * width[:, None] * weights[None, :]).ravel()
    return x, w


def scale_adapted_edges(
    centers: np.ndarray, s_min: float, s_max: float, pad: float = 9.0
) -> np.ndarray:
    """Panel edges that resolve Gaussian bumps of widths in [s_min, s_max].

    Around every center, edges are placed geometrically from the finest scale
    out to ``pad * s_max``, so a composite rule on the result integrates a
    mixture of Gaussians whose widths span several orders of magnitude.
    """
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    s_min = max(float(s_min), 1e-300)
    s_max = max(float(s_max), s_min)
    n_steps = int(np.ceil(2.0 * np.log2(pad * s_max / s_min))) + 2
    offsets = s_min * 2.0 ** (0.5 * np.arange(n_steps))
    offsets = offsets[offsets <= 1.05 * pad * s_max]
    deltas = np.concatenate([-offsets[::-1], [0.0], offsets])
    edges = np.unique((centers[:, None] + deltas[None, :]).ravel())
    keep_lo = centers.min() - pad * s_max
    keep_hi = centers.max() + pad * s_max
    edges = edges[(edges >= keep_lo - 1e-300) & (edges <= keep_hi + 1e-300)]
    # collapse panels much narrower than the finest useful scale
    mask = np.ones(len(edges), dtype=bool)
    mask[1:] = np.diff(edges) > 1e-9 * s_min
    return edges[mask]
