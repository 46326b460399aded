"""3D geometry, box-shaped room model and image-method ray tracer.

Points and directions are plain ``numpy`` arrays of shape ``(3,)``.  The
tracer works with *virtual sinks*: the sink (observer) mirrored across the
reflecting surfaces of a path, which turns every specular path into a
straight line from the source.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .constants import SPEED_OF_LIGHT

PathSpec = tuple  # ordered surface names, source side first; () is LOS

_UNIT_TOL = 1e-12
# Parametric slack when testing whether a segment crosses a plane / hits
# a finite rectangle.
_EPS = 1e-9


class GeometryError(ValueError):
    """Raised for invalid geometric input (points outside the room etc.)."""


def point3(p) -> np.ndarray:
    """Validate and return a finite 3-vector as a float array."""
    arr = np.asarray(p, dtype=float)
    if arr.shape != (3,):
        raise GeometryError(f"expected a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("point coordinates must be finite")
    return arr


def unit3(v) -> np.ndarray:
    arr = point3(v)
    n = np.linalg.norm(arr)
    if n == 0.0:
        raise GeometryError("cannot normalize the zero vector")
    return arr / n


@dataclass(frozen=True)
class Surface:
    """Finite rectangular reflector.

    The rectangle is ``origin + s*u_axis + t*v_axis`` with ``0 <= s <= u_len``
    and ``0 <= t <= v_len``; ``normal`` points into the room.
    """

    name: str
    origin: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    u_len: float
    v_len: float

    def __post_init__(self):
        for attr in ("origin", "normal", "u_axis", "v_axis"):
            object.__setattr__(self, attr, point3(getattr(self, attr)))
        if abs(np.linalg.norm(self.normal) - 1.0) > _UNIT_TOL:
            raise GeometryError(f"surface {self.name!r}: normal must be unit length")

    @property
    def offset(self) -> float:
        """Plane constant: the plane is ``normal . x == offset``."""
        return float(self.normal @ self.origin)

    def signed_distance(self, p) -> np.ndarray:
        return np.asarray(p) @ self.normal - self.offset

    def contains_projection(self, p) -> np.ndarray:
        """True where points (assumed on the plane) fall inside the rectangle."""
        rel = np.asarray(p) - self.origin
        s = rel @ self.u_axis
        t = rel @ self.v_axis
        return (
            (s >= -_EPS * max(1.0, self.u_len))
            & (s <= self.u_len * (1 + _EPS) + _EPS)
            & (t >= -_EPS * max(1.0, self.v_len))
            & (t <= self.v_len * (1 + _EPS) + _EPS)
        )


def mirror_point(p, surface: Surface) -> np.ndarray:
    """Reflect ``p`` (one point or an ``(N, 3)`` stack) across the plane of ``surface``."""
    p = np.asarray(p, dtype=float)
    dist = p @ surface.normal - surface.offset
    return p - 2.0 * np.multiply.outer(dist, surface.normal) if p.ndim > 1 else p - 2.0 * dist * surface.normal


@dataclass(frozen=True)
class Room:
    """Convex room bounded by rectangular surfaces.

    Only axis-aligned boxes are built by the factories; ``Room.empty()`` has no
    reflectors at all and admits only the LOS path.
    """

    surfaces: tuple = ()
    height: float = np.inf
    size: tuple = (np.inf, np.inf)

    def __post_init__(self):
        if not self.height > 0:
            raise GeometryError("room height must be positive")
        names = [s.name for s in self.surfaces]
        if len(set(names)) != len(names):
            raise GeometryError("surface names must be unique")

    @classmethod
    def box(cls, length: float, width: float, height: float) -> "Room":
        """Rectangular room ``[0, length] x [0, width] x [0, height]``."""
        if min(length, width, height) <= 0:
            raise GeometryError("room dimensions must be positive")
        ex, ey, ez = np.eye(3)
        L, W, H = float(length), float(width), float(height)
        surfaces = (
            Surface("wall_x0", (0, 0, 0), ex, ey, ez, W, H),
            Surface("wall_x1", (L, 0, 0), -ex, ey, ez, W, H),
            Surface("wall_y0", (0, 0, 0), ey, ex, ez, L, H),
            Surface("wall_y1", (0, W, 0), -ey, ex, ez, L, H),
            Surface("floor", (0, 0, 0), ez, ex, ey, L, W),
            Surface("ceiling", (0, 0, H), -ez, ex, ey, L, W),
        )
        return cls(surfaces=surfaces, height=H, size=(L, W))

    @classmethod
    def empty(cls) -> "Room":
        return cls()

    def surface(self, name: str) -> Surface:
        for s in self.surfaces:
            if s.name == name:
                return s
        raise KeyError(name)

    def contains(self, p, margin: float = 0.0) -> np.ndarray:
        """Strict interior test for one point or an ``(N, 3)`` stack."""
        p = np.asarray(p, dtype=float)
        inside = np.ones(p.shape[:-1], dtype=bool)
        for s in self.surfaces:
            inside &= s.signed_distance(p) > margin
        return inside


@dataclass(frozen=True)
class Mpc:
    """One specular propagation path from a source node to a sink."""

    path: PathSpec
    virtual_sink: np.ndarray
    delay: float
    direction: np.ndarray
    amplitude: float = field(default=np.nan)

    @property
    def bounces(self) -> int:
        return len(self.path)

    @property
    def length(self) -> float:
        return self.delay * SPEED_OF_LIGHT


@lru_cache(maxsize=64)
def path_specs(names: tuple, max_bounces: int) -> tuple:
    """All surface sequences up to ``max_bounces`` without immediate repeats."""
    if not 0 <= max_bounces <= 4:
        raise GeometryError("max_bounces must be within 0..4")
    specs = [()]
    for n in range(1, max_bounces + 1):
        for seq in itertools.product(names, repeat=n):
            if all(a != b for a, b in zip(seq, seq[1:])):
                specs.append(seq)
    return tuple(specs)


def virtual_sinks(sink, room: Room, spec: PathSpec) -> list[np.ndarray]:
    """Partial images ``[q_1, ..., q_n, sink]`` of ``sink`` for path ``spec``.

    ``q_i`` is the sink mirrored across surfaces ``spec[n-1], ..., spec[i-1]``
    (last bounce first); ``q_1`` is the virtual sink of the whole path.
    """
    images = [np.asarray(sink, dtype=float)]
    for name in reversed(spec):
        images.append(mirror_point(images[-1], room.surface(name)))
    return images[::-1]


def trace_batch(sources, sink, room: Room, spec: PathSpec):
    """Trace one path specification from many sources to a single sink.

    Returns ``(valid, delays, virtual_sink)`` where ``valid`` and ``delays``
    have one entry per source.  A path is valid if each unfolded segment
    crosses its reflector strictly between its endpoints and inside the
    reflector's rectangle.
    """
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    images = virtual_sinks(sink, room, spec)
    valid = np.ones(len(sources), dtype=bool)
    cur = sources
    for name, target in zip(spec, images[:-1]):
        s = room.surface(name)
        d0 = s.signed_distance(cur)
        d1 = s.signed_distance(target)
        denom = d0 - d1
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(denom != 0.0, d0 / denom, np.nan)
        ok = (t > _EPS) & (t < 1.0 - _EPS)
        hit = cur + t[:, None] * (target - cur)
        ok &= s.contains_projection(np.nan_to_num(hit))
        valid &= ok
        cur = np.where(ok[:, None], hit, cur)
    vsink = images[0]
    delays = np.linalg.norm(sources - vsink, axis=1) / SPEED_OF_LIGHT
    return valid, delays, vsink


def trace_paths(source, sink, room: Room, max_bounces: int = 3, params=None) -> list[Mpc]:
    """All valid specular paths from ``source`` to ``sink`` (LOS included).

    Amplitudes follow :func:`mpcrange.channel.path_amplitude` with
    ``params`` (default channel parameters when omitted).
    """
    from .channel import ChannelParams, path_amplitude

    source, sink = point3(source), point3(sink)
    for label, p in (("source", source), ("sink", sink)):
        if not room.contains(p):
            raise GeometryError(f"{label} {p.tolist()} is not strictly inside the room")
    if np.array_equal(source, sink):
        raise GeometryError("source and sink coincide")
    params = params if params is not None else ChannelParams()
    names = tuple(s.name for s in room.surfaces)
    out = []
    for spec in path_specs(names, max_bounces):
        valid, delays, vsink = trace_batch(source, sink, room, spec)
        if not valid[0]:
            continue
        direction = (vsink - source) / np.linalg.norm(vsink - source)
        mpc = Mpc(spec, vsink, float(delays[0]), direction)
        out.append(Mpc(spec, vsink, mpc.delay, direction, path_amplitude(mpc, params)))
    return out


def delay_difference_bound_check(p_a, p_b, mpcs_a: Sequence[Mpc], mpcs_b: Sequence[Mpc], slack: float = 1e-9) -> bool:
    """Check ``c |tau_B - tau_A| <= |p_B - p_A|`` over paths common to both lists."""
    by_path_a = {m.path: m for m in mpcs_a}
    by_path_b = {m.path: m for m in mpcs_b}
    if by_path_a.keys() != by_path_b.keys():
        raise GeometryError("MPC lists must cover identical path specifications")
    d = float(np.linalg.norm(point3(p_b) - point3(p_a)))
    return all(
        SPEED_OF_LIGHT * abs(by_path_b[k].delay - by_path_a[k].delay) <= d + slack for k in by_path_a
    )
