"""Unconditional quantiles (check-loss minimisers) and kernel densities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_SQRT_2PI = math.sqrt(2 * math.pi)


@dataclass(frozen=True)
class QuantileFit:
    tau: float
    q_hat: float
    n: int


@dataclass(frozen=True)
class DensityFit:
    at: float
    f_hat: float
    bandwidth: float
    kernel: str


@dataclass(frozen=True)
class BandwidthConfig:
    """h = constant * sd(y) * n^(-exponent); the exponent must lie in (1/8, 1/2)."""

    constant: float = 1.06
    exponent: float = 0.2
    kernel: str = "gaussian"

    def __post_init__(self):
        if not (1 / 8 < self.exponent < 1 / 2):
            raise ValueError("bandwidth exponent must lie strictly between 1/8 and 1/2")
        if self.constant <= 0:
            raise ValueError("bandwidth constant must be positive")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")

    def bandwidth(self, y) -> float:
        y = np.asarray(y, dtype=float)
        return self.constant * float(np.std(y, ddof=1)) * y.shape[0] ** (-self.exponent)


def gaussian_kernel(u):
    return np.exp(-0.5 * np.square(u)) / _SQRT_2PI


def epanechnikov_kernel(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


KERNELS = {"gaussian": gaussian_kernel, "epanechnikov": epanechnikov_kernel}


def order_index(n: int, tau: float) -> int:
    """Zero-based position of the ceil(n tau)-th order statistic."""
    # Rounding guards against n*tau landing a hair above an integer.
    k = math.ceil(round(n * tau, 9))
    return min(max(k, 1), n) - 1


def estimate_quantile(y, tau: float) -> QuantileFit:
    """Exact minimiser of sum rho_tau(y_i - q): the ceil(n tau)-th order statistic."""
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n < 2:
        raise ValueError("need at least two observations")
    k = order_index(n, tau)
    return QuantileFit(float(tau), float(np.partition(y, k)[k]), n)


def check_loss(y, q, tau):
    u = np.asarray(y, dtype=float) - q
    return float(np.sum((tau - (u < 0)) * u))


def estimate_density(y, at: float, config: BandwidthConfig | None = None, bandwidth=None) -> DensityFit:
    """Kernel estimate (1 / (n h)) sum K((y_i - at) / h)."""
    config = config or BandwidthConfig()
    y = np.asarray(y, dtype=float)
    h = config.bandwidth(y) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    k = KERNELS[config.kernel]((y - at) / h)
    return DensityFit(float(at), float(k.sum() / (y.shape[0] * h)), h, config.kernel)


def kde(y, points, config: BandwidthConfig | None = None, bandwidth=None, chunk: int = 2048):
    """Vectorised kernel density of ``y`` at many points."""
    config = config or BandwidthConfig()
    y = np.asarray(y, dtype=float)
    pts = np.asarray(points, dtype=float)
    h = config.bandwidth(y) if bandwidth is None else float(bandwidth)
    kern = KERNELS[config.kernel]
    out = np.empty(pts.shape[0])
    for s in range(0, pts.shape[0], chunk):
        blk = pts[s : s + chunk]
        out[s : s + chunk] = kern((y[None, :] - blk[:, None]) / h).sum(axis=1)
    return out / (y.shape[0] * h)
