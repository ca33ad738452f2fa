"""Exponential tail-up, tail-down and Euclidean covariance kernels.

All kernels use the ``exp(-3 h / alpha)`` parameterization, so ``alpha`` is
the effective range (correlation ~0.05 at ``h = alpha``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NotPositiveDefinite
from .network import StreamNetwork

__all__ = [
    "SpatialCovParams",
    "cov_tailup",
    "cov_taildown_exponential",
    "cov_euclidean_exponential",
    "total_covariance",
]


@dataclass(frozen=True)
class SpatialCovParams:
    """Partial sills, ranges and nugget of the spatial covariance mixture.

    ``u`` is tail-up, ``d`` tail-down, ``e`` Euclidean.  A component with a
    zero sill is switched off.
    """

    sigma2_u: float = 0.0
    alpha_u: float = 1.0
    sigma2_d: float = 0.0
    alpha_d: float = 1.0
    sigma2_e: float = 0.0
    alpha_e: float = 1.0
    sigma2_0: float = 0.0

    def validate(self) -> "SpatialCovParams":
        sills = (self.sigma2_u, self.sigma2_d, self.sigma2_e, self.sigma2_0)
        if any(not np.isfinite(v) or v < 0 for v in sills):
            raise DataError(f"sills and nugget must be finite and >= 0: {self}")
        if any(not np.isfinite(a) or a <= 0 for a in (self.alpha_u, self.alpha_d, self.alpha_e)):
            raise DataError(f"ranges must be finite and > 0: {self}")
        if not any(v > 0 for v in sills):
            raise DataError("at least one variance component must be positive")
        return self


def _check(sigma2: float, alpha: float) -> None:
    if not (np.isfinite(sigma2) and sigma2 >= 0):
        raise DataError(f"sill must be finite and >= 0, got {sigma2}")
    if not (np.isfinite(alpha) and alpha > 0):
        raise DataError(f"range must be finite and > 0, got {alpha}")


def cov_tailup(net: StreamNetwork, sigma2: float, alpha: float) -> np.ndarray:
    """Tail-up covariance: nonzero only between flow-connected sites."""
    _check(sigma2, alpha)
    C = sigma2 * np.exp(-3.0 * net.D_stream / alpha) * net.W
    return np.where(net.connected, C, 0.0)


def cov_taildown_exponential(net: StreamNetwork, sigma2: float, alpha: float) -> np.ndarray:
    """Exponential tail-down covariance.

    Connected pairs decay with stream distance ``h``; unconnected pairs with
    ``a + b``, the summed distances to the junction.  For the exponential
    model the two cases share one formula.
    """
    _check(sigma2, alpha)
    h = np.where(net.connected, net.D_stream, net.D_a + net.D_b)
    return sigma2 * np.exp(-3.0 * h / alpha)


def cov_euclidean_exponential(net: StreamNetwork, sigma2: float, alpha: float) -> np.ndarray:
    _check(sigma2, alpha)
    return sigma2 * np.exp(-3.0 * net.D_euclid / alpha)


def total_covariance(net: StreamNetwork, p: SpatialCovParams, return_cholesky: bool = False):
    """``Sigma + sigma2_0 I`` for the active components.

    Raises
    ------
    NotPositiveDefinite
        If the Cholesky factorization fails.
    """
    p.validate()
    S = net.n_sites
    C = np.zeros((S, S))
    if p.sigma2_u > 0:
        C += cov_tailup(net, p.sigma2_u, p.alpha_u)
    if p.sigma2_d > 0:
        C += cov_taildown_exponential(net, p.sigma2_d, p.alpha_d)
    if p.sigma2_e > 0:
        C += cov_euclidean_exponential(net, p.sigma2_e, p.alpha_e)
    C[np.diag_indices(S)] += p.sigma2_0
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"covariance not positive definite for {p}") from None
    return (C, L) if return_cholesky else C
