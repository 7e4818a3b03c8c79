"""Optimal firing-threshold calibration for ReLU-fed spiking layers.

The pre-activation feeding a ReLU is modeled as Gaussian. A spiking layer
with threshold theta and N effective quantization levels realizes, in
expectation, the clipped round-to-nearest encoding f(x, theta); the
calibration objective QE(theta) is the Gaussian-weighted squared gap between
that encoding and the exact ReLU. The optimal rescaling factor k1 of the
output amplitude has a closed form in erf/exp sums, and iterating
theta <- k1 * theta drives k1 to 1 at the optimum.

Implementation notes that matter for robustness:

* The erf sums are evaluated through erfc (the weights sum to one, so
  ``1 - sum(w*erf)`` equals ``sum(w*erfc)`` exactly), which keeps the ratio
  accurate when theta sits far above the Gaussian mass instead of
  cancelling to zero.
* Bare Picard iteration contracts arbitrarily slowly (factors above 0.98
  occur in the coarse-quantizer regime), so the solver wraps pairs of plain
  k1*theta updates in a safeguarded Aitken extrapolation and exits only when
  both |k1 - 1| < eps and the iterate has stopped moving.
* For theta far above mu + 8*sigma the objective is dominated by
  quantizer-alignment wiggles with spurious stationary points; starting
  values are clamped into (0, mu + 8*sigma], where the fixed point is
  unique.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import erfc, integrate_segments

_SQRT2 = np.sqrt(2.0)
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


class DegenerateStatsError(ArithmeticError):
    """The Gaussian model is too degenerate to calibrate a threshold."""


class IterationLimitError(RuntimeError):
    """Threshold iteration exhausted its iteration budget."""


@dataclass
class SolverConfig:
    quant_levels: int
    eps: float = 1e-6
    max_iters: int = 500
    theta0: float = 1.0
    theta_min: float = 1e-12

    def __post_init__(self):
        if self.quant_levels < 1:
            raise ValueError("quant_levels must be >= 1")
        if self.eps <= 0 or self.theta0 <= 0 or self.max_iters < 1:
            raise ValueError("eps and theta0 must be positive, max_iters >= 1")


def quant_levels_for(n_thresholds: int, timesteps: int) -> int:
    """Effective level count of a multi-threshold layer: 2**n * T."""
    return int(2**n_thresholds) * int(timesteps)


@dataclass
class QeResult:
    value: float
    theta: float


@dataclass
class ThresholdSolution:
    theta: float
    iterations: int
    k1_final: float
    trajectory: list = field(default_factory=list)  # (theta, k1) per evaluation


def quantizer_f(x, theta: float, N: int):
    """Expected spiking encoding of a ReLU: clipped round-to-nearest."""
    x = np.asarray(x, dtype=np.float64)
    return theta / N * np.clip(np.floor((N * x + theta / 2.0) / theta), 0.0, N)


def quantizer_f1(x, theta: float, k: float, N: int):
    """Output amplitude rescaled by k."""
    return k * quantizer_f(x, theta, N)


def quantizer_f2(x, theta: float, k: float, N: int):
    """Decision threshold rescaled by k, amplitude unchanged."""
    x = np.asarray(x, dtype=np.float64)
    return theta / N * np.clip(np.floor((N * x + k * theta / 2.0) / (k * theta)), 0.0, N)


def k1_closed_form(theta: float, mu: float, sigma: float, N: int) -> float:
    """Amplitude factor minimizing the Gaussian-weighted error at fixed theta."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    i = np.arange(1, N + 1, dtype=np.float64)
    z = ((2.0 * i - 1.0) * theta / (2.0 * N) - mu) / (_SQRT2 * sigma)
    comp = erfc(z)
    gauss = np.exp(-z * z)
    a = comp.sum() / N
    b = gauss.sum() / N
    d = ((2.0 * i - 1.0) * comp).sum() / (N * N)
    if d < 1e-300:
        raise DegenerateStatsError(
            f"threshold {theta:g} sits beyond the representable Gaussian tail (mu={mu:g}, sigma={sigma:g})"
        )
    return float((mu * a + sigma * b * _SQRT_2_OVER_PI) / (theta * d))


def _gaussian_weight(x, mu, sigma):
    return np.exp(-((x - mu) ** 2) / (2.0 * sigma * sigma))


def _segments(mu, sigma, breakpoints):
    lo = mu - 8.0 * sigma
    hi = mu + 8.0 * sigma
    pts = [lo, hi]
    if lo < 0.0 < hi:
        pts.append(0.0)
    bp = np.asarray(breakpoints, dtype=np.float64)
    pts.extend(bp[(bp > lo) & (bp < hi)].tolist())
    edges = np.unique(np.asarray(pts))
    return edges[:-1], edges[1:]


def _qe_integral(err_fn, mu, sigma, breakpoints, tol):
    lo, hi = _segments(mu, sigma, breakpoints)

    def integrand(x, _tag):
        return err_fn(x) ** 2 * _gaussian_weight(x, mu, sigma)

    return float(integrate_segments(integrand, lo, hi, tol))


def qe_numeric(theta: float, mu: float, sigma: float, N: int, tol: float = 1e-10) -> QeResult:
    """Quantization-plus-clipping error by adaptive quadrature.

    The integration window is mu +- 8 sigma, split at x = 0 and at every
    quantizer breakpoint (j - 1/2) theta / N where the integrand has kinks.
    """
    if theta <= 0 or sigma <= 0:
        raise ValueError("theta and sigma must be positive")
    bp = (2.0 * np.arange(1, N + 1) - 1.0) * theta / (2.0 * N)
    value = _qe_integral(
        lambda x: quantizer_f(x, theta, N) - np.maximum(x, 0.0), mu, sigma, bp, tol
    )
    return QeResult(value=value, theta=float(theta))


def qe1_numeric(theta: float, k: float, mu: float, sigma: float, N: int, tol: float = 1e-10) -> float:
    if theta <= 0 or sigma <= 0:
        raise ValueError("theta and sigma must be positive")
    bp = (2.0 * np.arange(1, N + 1) - 1.0) * theta / (2.0 * N)
    return _qe_integral(
        lambda x: quantizer_f1(x, theta, k, N) - np.maximum(x, 0.0), mu, sigma, bp, tol
    )


def qe2_numeric(theta: float, k: float, mu: float, sigma: float, N: int, tol: float = 1e-10) -> float:
    if theta <= 0 or sigma <= 0 or k <= 0:
        raise ValueError("theta, k, and sigma must be positive")
    bp = (2.0 * np.arange(1, N + 1) - 1.0) * k * theta / (2.0 * N)
    return _qe_integral(
        lambda x: quantizer_f2(x, theta, k, N) - np.maximum(x, 0.0), mu, sigma, bp, tol
    )


def qe_grid(thetas, mu: float, sigma: float, N: int, tol: float = 1e-10) -> np.ndarray:
    """QE at many thresholds in one batched adaptive pass (grid oracles)."""
    thetas = np.asarray(thetas, dtype=np.float64)
    if np.any(thetas <= 0) or sigma <= 0:
        raise ValueError("thetas and sigma must be positive")
    j = 2.0 * np.arange(1, N + 1) - 1.0
    lo_parts, hi_parts, tag_parts = [], [], []
    for idx, th in enumerate(thetas):
        lo, hi = _segments(mu, sigma, j * th / (2.0 * N))
        lo_parts.append(lo)
        hi_parts.append(hi)
        tag_parts.append(np.full(lo.size, idx, dtype=np.int64))
    lo = np.concatenate(lo_parts)
    hi = np.concatenate(hi_parts)
    tags = np.concatenate(tag_parts)

    def integrand(x, tag):
        th = thetas[tag]
        f = th / N * np.clip(np.floor((N * x + th / 2.0) / th), 0.0, N)
        d = f - np.maximum(x, 0.0)
        return d * d * _gaussian_weight(x, mu, sigma)

    return integrate_segments(integrand, lo, hi, tol, tags=tags, n_tags=thetas.size)


def iterate_threshold(mu: float, sigma: float, cfg: SolverConfig) -> ThresholdSolution:
    """Fixed-point threshold search theta <- k1 * theta.

    Pairs of plain updates feed a safeguarded Aitken extrapolation; the
    iteration exits once |k1 - 1| < eps and the iterate has stopped moving,
    so independent starts land on the same fixed point to within the
    extrapolation's quadratic-convergence resolution. ``iterations`` counts
    k1 evaluations.
    """
    mu = float(mu)
    sigma = float(sigma)
    N = cfg.quant_levels
    hi = mu + 8.0 * sigma
    if hi <= cfg.theta_min:
        raise DegenerateStatsError(
            f"Gaussian support is entirely negative (mu={mu:g}, sigma={sigma:g}); no positive threshold exists"
        )
    theta = min(max(cfg.theta0, cfg.theta_min), hi)
    trajectory: list = []
    evals = 0
    move = np.inf

    def k1_at(th):
        nonlocal evals
        k = k1_closed_form(th, mu, sigma, N)
        evals += 1
        trajectory.append((float(th), float(k)))
        if k <= 0:
            raise DegenerateStatsError(
                f"k1 <= 0 at theta={th:g} (mu={mu:g}, sigma={sigma:g}); stats are degenerate"
            )
        return k

    def clamp(th):
        return min(max(th, cfg.theta_min), hi)

    while evals < cfg.max_iters:
        k0 = k1_at(theta)
        if abs(k0 - 1.0) < cfg.eps and move <= cfg.eps * max(1.0, abs(theta)):
            return ThresholdSolution(theta=float(theta), iterations=evals, k1_final=float(k0), trajectory=trajectory)
        t1 = clamp(k0 * theta)
        if evals >= cfg.max_iters:
            break
        k1v = k1_at(t1)
        t2 = clamp(k1v * t1)
        theta_new = t2
        denom = t2 - 2.0 * t1 + theta
        if denom != 0.0:
            accel = theta - (t1 - theta) ** 2 / denom
            if np.isfinite(accel) and cfg.theta_min < accel <= hi:
                theta_new = accel
        move = abs(theta_new - theta)
        theta = theta_new
    raise IterationLimitError(
        f"no convergence after {evals} k1 evaluations (mu={mu:g}, sigma={sigma:g}, N={N})"
    )


def iterate_threshold_per_channel(means, stds, cfg: SolverConfig):
    """Channel-wise thresholds; returns (thetas, solutions)."""
    means = np.atleast_1d(np.asarray(means, dtype=np.float64))
    stds = np.atleast_1d(np.asarray(stds, dtype=np.float64))
    if means.shape != stds.shape:
        raise ValueError("means and stds must have the same shape")
    sols = [iterate_threshold(m, s, cfg) for m, s in zip(means, stds)]
    return np.array([s.theta for s in sols]), sols
