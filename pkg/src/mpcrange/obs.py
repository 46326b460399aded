"""Observation sets of delay differences.

Two sources: the statistical model (uniform MPC directions, so ``c * delta``
is uniform on ``[-d, d]``) and ray-traced scenes, where every path detected
from both nodes at an observer yields one delay difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .constants import SPEED_OF_LIGHT
from .channel import DetectedMpc


class ObservationError(ValueError):
    """Domain error while building observation sets."""


@dataclass(frozen=True)
class Truth:
    d: float
    epsilon: float = 0.0


@dataclass(frozen=True)
class ObservationSet:
    """K delay differences [s] with their error standard deviations [s]."""

    deltas: np.ndarray
    sigmas: np.ndarray
    sync: bool = True
    truth: Truth | None = None

    def __post_init__(self):
        deltas = np.atleast_1d(np.asarray(self.deltas, dtype=float))
        sigmas = np.broadcast_to(np.asarray(self.sigmas, dtype=float), deltas.shape).copy()
        if deltas.ndim != 1 or deltas.size == 0:
            raise ObservationError("an observation set needs at least one delay difference")
        if np.any(sigmas < 0) or not np.all(np.isfinite(deltas)):
            raise ObservationError("sigmas must be >= 0 and deltas finite")
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def K(self) -> int:
        return self.deltas.size

    @property
    def noiseless(self) -> bool:
        return bool(np.all(self.sigmas == 0))


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``; same inputs, same stream."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def sample_unit_sphere(rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform direction(s) on the unit sphere via normalized Gaussian vectors."""
    shape = (3,) if size is None else tuple(np.atleast_1d(size)) + (3,)
    v = rng.standard_normal(shape)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    # a zero draw has probability zero but would poison the batch
    while np.any(norm == 0):
        bad = norm[..., 0] == 0
        v[bad] = rng.standard_normal((int(bad.sum()), 3))
        norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / norm


# Displacement B - A used by the statistical model; the direction is
# immaterial because the MPC directions are isotropic.
DISPLACEMENT_AXIS = np.array([0.0, 0.0, 1.0])


def statistical_deltas(d: float, shape, rng: np.random.Generator) -> np.ndarray:
    """Errorless synchronous delay differences ``-e_k . d_vec / c`` for ``shape``."""
    e = sample_unit_sphere(rng, shape)
    return -(e @ (d * DISPLACEMENT_AXIS)) / SPEED_OF_LIGHT


def synth_statistical(
    d: float,
    K: int,
    epsilon: float = 0.0,
    sigma: float = 0.0,
    sync: bool = True,
    rng: np.random.Generator | None = None,
) -> ObservationSet:
    if d < 0 or K < 1 or sigma < 0:
        raise ObservationError("need d >= 0, K >= 1 and sigma >= 0")
    rng = rng if rng is not None else np.random.default_rng()
    deltas = statistical_deltas(d, K, rng)
    if not sync:
        deltas = deltas + epsilon
    if sigma > 0:
        deltas = deltas + sigma * rng.standard_normal(K)
    return ObservationSet(deltas, np.full(K, float(sigma)), sync, Truth(d, epsilon if not sync else 0.0))


@dataclass(frozen=True)
class ObserverLinks:
    """Detected paths from node A and node B to one observer, keyed by path."""

    from_a: Mapping[tuple, DetectedMpc]
    from_b: Mapping[tuple, DetectedMpc]

    def common(self) -> list[tuple]:
        # deterministic order: sorted by the delay seen from A, then path
        keys = self.from_a.keys() & self.from_b.keys()
        return sorted(keys, key=lambda k: (self.from_a[k].mpc.delay, k))


@dataclass(frozen=True)
class Scene:
    p_a: np.ndarray
    p_b: np.ndarray
    links: Sequence[ObserverLinks] = field(default_factory=tuple)

    @property
    def d(self) -> float:
        return float(np.linalg.norm(np.asarray(self.p_b) - np.asarray(self.p_a)))

    def common_counts(self) -> list[int]:
        return [len(link.common()) for link in self.links]


def synth_from_scene(
    scene: Scene,
    epsilon: float = 0.0,
    inject_noise: bool = False,
    rng: np.random.Generator | None = None,
    sync: bool | None = None,
) -> ObservationSet:
    """Pool the common detected paths of all observers into one set.

    ``sync`` defaults to ``epsilon == 0``.
    """
    deltas, sigmas = [], []
    for link in scene.links:
        for k in link.common():
            a, b = link.from_a[k], link.from_b[k]
            deltas.append(b.mpc.delay - a.mpc.delay)
            sigmas.append(np.hypot(a.sigma_tau, b.sigma_tau))
    if not deltas:
        raise ObservationError("no common MPCs")
    deltas = np.asarray(deltas) + epsilon
    sigmas = np.asarray(sigmas)
    if inject_noise:
        rng = rng if rng is not None else np.random.default_rng()
        deltas = deltas + sigmas * rng.standard_normal(deltas.size)
    else:
        sigmas = np.zeros_like(sigmas)
    sync = (epsilon == 0.0) if sync is None else sync
    return ObservationSet(deltas, sigmas, sync, Truth(scene.d, epsilon))
