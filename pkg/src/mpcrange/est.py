"""Closed-form distance estimators for errorless delay differences.

The synchronous estimators use the largest ``|delta_k|``; the asynchronous
ones use the spread ``max - min`` so that a common clock offset cancels.
``*_batch`` kernels take a ``(trials, K)`` array and return one estimate per
row; they back the Monte Carlo drivers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .constants import SPEED_OF_LIGHT
from .obs import ObservationError, ObservationSet

C = SPEED_OF_LIGHT


class Method(str, enum.Enum):
    SYNC_MLE = "SyncMLE"
    SYNC_UMVUE = "SyncUMVUE"
    ASYNC_MLE = "AsyncMLE"
    ASYNC_UMVUE = "AsyncUMVUE"
    SYNC_NOISY_MLE = "SyncNoisyMLE"
    ASYNC_NOISY_MLE = "AsyncNoisyMLE"

    @property
    def is_async(self) -> bool:
        return self.name.startswith("ASYNC")


@dataclass(frozen=True)
class Diagnostics:
    converged: bool = True
    iterations: int = 0
    loglik: float = np.nan
    starts_agree: bool = True


@dataclass(frozen=True)
class Estimate:
    d_hat: float
    method: Method
    epsilon_hat: float | None = None
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def __post_init__(self):
        if self.d_hat < 0:
            raise ValueError("distance estimate must be non-negative")
        if (self.epsilon_hat is not None) != self.method.is_async:
            raise ValueError("epsilon_hat is present exactly for asynchronous methods")


ASYNC_MIN_K = "need ≥2 observations for asynchronous estimation"


def _check_async(obs: ObservationSet):
    if obs.K < 2:
        raise ObservationError(ASYNC_MIN_K)


def sync_mle_batch(deltas: np.ndarray) -> np.ndarray:
    return C * np.max(np.abs(deltas), axis=-1)


def sync_umvue_batch(deltas: np.ndarray) -> np.ndarray:
    K = deltas.shape[-1]
    return (K + 1) / K * sync_mle_batch(deltas)


def async_mle_batch(deltas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hi, lo = np.max(deltas, axis=-1), np.min(deltas, axis=-1)
    return C / 2 * (hi - lo), (hi + lo) / 2


def async_umvue_batch(deltas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    K = deltas.shape[-1]
    d, eps = async_mle_batch(deltas)
    return (K + 1) / (K - 1) * d, eps


def mle_sync(obs: ObservationSet) -> Estimate:
    return Estimate(float(sync_mle_batch(obs.deltas)), Method.SYNC_MLE)


def umvue_sync(obs: ObservationSet) -> Estimate:
    return Estimate(float(sync_umvue_batch(obs.deltas)), Method.SYNC_UMVUE)


def mle_async(obs: ObservationSet) -> Estimate:
    _check_async(obs)
    d, eps = async_mle_batch(obs.deltas)
    return Estimate(float(d), Method.ASYNC_MLE, float(eps))


def umvue_async(obs: ObservationSet) -> Estimate:
    _check_async(obs)
    d, eps = async_umvue_batch(obs.deltas)
    return Estimate(float(d), Method.ASYNC_UMVUE, float(eps))


# -- analytic error laws -----------------------------------------------------


def std_sync_analytic(d: float, K: int) -> float:
    """Exact standard deviation of the synchronous UMVUE."""
    return d / np.sqrt(K * (K + 2))


def std_async_analytic(d: float, K: int) -> float:
    """Large-K standard deviation of the asynchronous UMVUE (good for K >= 5)."""
    return d / (K - 1) * np.sqrt(2 * K / (K + 2))


def std_offset_analytic(d: float, K: int) -> float:
    """Large-K standard deviation [s] of the clock-offset estimate."""
    return (d / C) / (K + 1) * np.sqrt(2 * K / (K + 2))


def std_async_exact(d: float, K: int) -> float:
    """Exact standard deviation of the asynchronous UMVUE.

    The sample range of K uniforms is Beta(K-1, 2) distributed; unlike the
    large-K law this keeps the covariance of the two extremes.
    """
    return d * np.sqrt(2.0 / ((K - 1) * (K + 2)))


def std_offset_exact(d: float, K: int) -> float:
    """Exact standard deviation [s] of the mid-range clock-offset estimate."""
    return (d / C) * np.sqrt(2.0 / ((K + 1) * (K + 2)))


def bias_sync(d: float, K: int) -> float:
    return -d / (K + 1)


def bias_async(d: float, K: int) -> float:
    return -2 * d / (K + 1)
