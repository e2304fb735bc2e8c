"""Gaussian random field samples on a 1D grid (squared-exponential kernel)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..errors import ConfigError, NumericalError

JITTER = 1e-10


@dataclass(frozen=True)
class GrfSpec:
    length_scale: float
    variance: float = 1.0
    grid: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.length_scale <= 0:
            raise ConfigError("length scale must be positive")
        if self.variance < 0:
            raise ConfigError("variance must be nonnegative")
        if len(self.grid) == 0:
            raise ConfigError("sample grid is empty")

    def covariance(self):
        x = np.asarray(self.grid, dtype=float)
        d = x[:, None] - x[None, :]
        return self.variance * np.exp(-0.5 * (d / self.length_scale) ** 2)


def covariance_factor(spec: GrfSpec):
    """Lower Cholesky factor of the kernel matrix, escalating the jitter if needed."""
    cov = spec.covariance()
    n = len(cov)
    if spec.variance == 0:
        return np.zeros((n, n))
    jitter = JITTER
    for _ in range(7):
        try:
            return linalg.cholesky(cov + jitter * np.eye(n), lower=True)
        except linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError("covariance factorization failed after jitter escalation")


def sample_grf(spec: GrfSpec, count, rng: np.random.Generator | None = None, factor=None):
    """``count`` samples, rows of ``L z`` with ``z`` standard normal."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    lower = covariance_factor(spec) if factor is None else factor
    z = rng.standard_normal((count, lower.shape[0]))
    return z @ lower.T
