"""Per-image lambda selection for L2-TV by Monte-Carlo SURE, plus the avg-oracle baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SeededRng
from .solvers import HyperVector, denoise_tv_l2

SURE_GRID_POINTS = 30
SURE_LOG10_RANGE = (-3.0, 1.0)


@dataclass(frozen=True)
class SureEstimate:
    lam: float
    risk: float
    divergence: float


def default_lambda_grid(points: int = SURE_GRID_POINTS, bounds=SURE_LOG10_RANGE) -> np.ndarray:
    return np.logspace(bounds[0], bounds[1], points)


def default_epsilon(y) -> float:
    return 1e-3 * max(1.0, float(np.max(np.abs(y))))


def _divergence(f, y, fy, b, eps) -> float:
    return float(np.sum(b * (np.asarray(f(y + eps * b), dtype=np.float64) - fy)) / eps)


def mc_divergence(denoiser, y, epsilon: float, rng: SeededRng, fy=None) -> float:
    """One-probe estimate ``b.(f(y + eps b) - f(y)) / eps`` with Rademacher ``b``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    y = np.asarray(y, dtype=np.float64)
    b = rng.rademacher(y.shape)
    if fy is None:
        fy = denoiser(y)
    return _divergence(denoiser, y, np.asarray(fy, dtype=np.float64), b, epsilon)


def _risk(y, fy, sigma, div) -> float:
    n = y.size
    return float(np.sum((fy - y) ** 2) / n - sigma ** 2 + 2.0 * sigma ** 2 * div / n)


def sure_risk(y, denoiser, sigma: float, epsilon: float, rng: SeededRng,
              lam: float = float("nan")) -> SureEstimate:
    """Per-value SURE of ``denoiser`` at ``y`` for Gaussian noise of std ``sigma``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    y = np.asarray(y, dtype=np.float64)
    fy = np.asarray(denoiser(y), dtype=np.float64)
    div = mc_divergence(denoiser, y, epsilon, rng, fy=fy)
    return SureEstimate(lam, _risk(y, fy, sigma, div), div)


def sure_curve(y, sigma: float, lambda_grid, epsilon: float | None = None,
               rng: SeededRng | None = None, denoiser_for=None) -> list[SureEstimate]:
    """SURE for every grid lambda with one shared probe.

    ``denoiser_for(lam)`` builds the denoiser; defaults to L2-TV.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    grid = np.asarray(lambda_grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    y = np.asarray(y, dtype=np.float64)
    if epsilon is None:
        epsilon = default_epsilon(y)
    rng = rng or SeededRng(0)
    if denoiser_for is None:
        def denoiser_for(lam):
            return lambda z: denoise_tv_l2(z, lam)
    b = rng.rademacher(y.shape)
    out = []
    for lam in grid:
        f = denoiser_for(float(lam))
        fy = np.asarray(f(y), dtype=np.float64)
        div = _divergence(f, y, fy, b, epsilon)
        out.append(SureEstimate(float(lam), _risk(y, fy, sigma, div), div))
    return out


def sure_select_lambda(y, sigma: float, lambda_grid=None, epsilon: float | None = None,
                       rng: SeededRng | None = None, denoiser_for=None) -> float:
    """Grid lambda with the lowest SURE; ties go to the smaller lambda."""
    if lambda_grid is None:
        lambda_grid = default_lambda_grid()
    curve = sure_curve(y, sigma, lambda_grid, epsilon, rng, denoiser_for)
    best = min(curve, key=lambda e: (e.risk, e.lam))
    return best.lam


def avg_oracle_baseline(labels) -> HyperVector:
    """Slot-wise mean of oracle labels in the learning domain."""
    vecs = [getattr(lab, "p_star", lab) for lab in labels]
    if not vecs:
        raise ValueError("empty label table")
    masks = {tuple(v.mask) for v in vecs}
    if len(masks) != 1:
        raise ValueError("labels mix configurations with different slot masks")
    arr = np.array([v.to_learning().slots for v in vecs])
    return HyperVector(tuple(arr.mean(axis=0)), masks.pop(), "learning")
