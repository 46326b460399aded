"""Experiment drivers: Monte Carlo sweeps and ray-traced room scenarios.

Randomness is keyed by ``(seed, experiment, point, chunk)`` through
:func:`mpcrange.obs.make_rng`, so results do not depend on the number of
worker threads.  Chunks are reduced in order with ``math.fsum``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .channel import ChannelParams, amplitude_for, crlb_sigma, detect, sinr_linear
from .config import ScenarioConfig
from .constants import SPEED_OF_LIGHT, lin_to_db
from .est import Method
from .geom import Room, trace_batch, trace_paths
from .mle import SolverSettings, solve_async_batch, solve_sync_batch
from .obs import ObserverLinks, Scene, make_rng, statistical_deltas

C = SPEED_OF_LIGHT
CHUNK = 20_000

# rng stream identifiers per experiment type
_K_SWEEP, _SIGMA_SWEEP, _HEATMAP, _CIRCLE, _TRIALS = range(5)

ALL_METHODS = tuple(Method)
CLOSED_FORM = (Method.SYNC_MLE, Method.SYNC_UMVUE, Method.ASYNC_MLE, Method.ASYNC_UMVUE)


def _parallel_map(fn, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- estimation on padded batches ----------------------------------------------


@dataclass
class BatchOutcome:
    d_hat: np.ndarray
    epsilon_hat: np.ndarray | None
    ok: np.ndarray  # False where the estimator is undefined or failed
    starts_agree: np.ndarray | None = None


def estimate_batch(
    method: Method,
    deltas: np.ndarray,
    sigmas: np.ndarray | float = 0.0,
    mask: np.ndarray | None = None,
    settings: SolverSettings = SolverSettings(),
) -> BatchOutcome:
    """Apply ``method`` to every row of ``deltas`` ``(N, K)``; ``mask`` marks real entries."""
    method = Method(method)
    deltas = np.atleast_2d(deltas)
    mask = np.ones(deltas.shape, dtype=bool) if mask is None else mask
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), deltas.shape)
    K = mask.sum(axis=1)
    n = deltas.shape[0]
    if method in (Method.SYNC_MLE, Method.SYNC_UMVUE):
        ok = K >= 1
        d = C * np.max(np.where(mask, np.abs(deltas), 0.0), axis=1)
        if method is Method.SYNC_UMVUE:
            d = (K + 1) / np.maximum(K, 1) * d
        return BatchOutcome(d, None, ok)
    ok = K >= 2
    hi = np.max(np.where(mask, deltas, -np.inf), axis=1)
    lo = np.min(np.where(mask, deltas, np.inf), axis=1)
    with np.errstate(invalid="ignore"):
        d_mle = np.where(ok, C / 2 * (hi - lo), np.nan)
        eps = np.where(ok, (hi + lo) / 2, np.nan)
    if method is Method.ASYNC_MLE:
        return BatchOutcome(d_mle, eps, ok)
    if method is Method.ASYNC_UMVUE:
        return BatchOutcome((K + 1) / np.maximum(K - 1, 1) * d_mle, eps, ok)

    # general-case MLEs; rows without extraction errors reduce to the closed forms
    noiseless = np.all(np.where(mask, sigmas, 0.0) == 0, axis=1)
    is_async = method is Method.ASYNC_NOISY_MLE
    d_out = np.where(noiseless, d_mle if is_async else C * np.max(np.where(mask, np.abs(deltas), 0.0), axis=1), np.nan)
    eps_out = np.where(noiseless, eps, np.nan) if is_async else None
    agree = np.ones(n, dtype=bool)
    rows = np.flatnonzero(~noiseless & ok if is_async else ~noiseless & (K >= 1))
    ok = ok.copy() if is_async else K >= 1
    if rows.size:
        solve = solve_async_batch if is_async else solve_sync_batch
        for start in range(0, rows.size, CHUNK):
            r = rows[start : start + CHUNK]
            res = solve(deltas[r], sigmas[r], mask[r], settings)
            d_out[r] = res.d_hat
            if is_async:
                eps_out[r] = res.epsilon_hat
            ok[r] &= res.converged
            agree[r] = res.starts_agree
    return BatchOutcome(d_out, eps_out, ok, agree)


# -- statistical sweeps -----------------------------------------------------------


@dataclass
class SweepResult:
    axis: str  # "k", "sigma" or "d"
    values: list
    methods: list
    rel_bias: dict
    rel_rmse: dict
    rmse: dict
    rel_std: dict
    trials: int
    seed: int
    counts: dict = field(default_factory=dict)  # usable samples per point
    offset_bias: dict = field(default_factory=dict)  # s, async methods only
    offset_std: dict = field(default_factory=dict)
    unimodal_flags: dict = field(default_factory=dict)  # points with disagreeing starts

    def rows(self) -> Iterable[tuple]:
        for i, v in enumerate(self.values):
            for m in self.methods:
                yield v, m, self.rel_bias[m][i], self.rel_rmse[m][i]

    def series(self, method, quantity="rel_rmse") -> np.ndarray:
        return np.asarray(getattr(self, quantity)[Method(method).value])


@dataclass
class Moments:
    """Error moments of one estimator at one sweep point."""

    n: int
    mean: float
    rmse: float
    std: float

    @classmethod
    def of(cls, estimates: np.ndarray, truth: float) -> "Moments":
        x = np.asarray(estimates, dtype=float)
        x = x[np.isfinite(x)]
        n = x.size
        if n == 0:
            return cls(0, np.nan, np.nan, np.nan)
        mean = math.fsum(x) / n
        mse = math.fsum((x - truth) ** 2) / n
        var = math.fsum((x - mean) ** 2) / n
        return cls(n, mean, math.sqrt(mse), math.sqrt(var))


def run_statistical(
    d: float,
    K: int,
    sigma: float,
    trials: int,
    methods: Sequence,
    seed: int,
    key: tuple = (),
    epsilon: float = 0.0,
    settings: SolverSettings = SolverSettings(),
    threads: int = 1,
    chunk: int = CHUNK,
) -> dict:
    """Estimates of every method on ``trials`` statistical observation sets.

    All methods see the same draws; asynchronous methods get ``epsilon``
    added.  Returns ``{method: BatchOutcome}`` with outcomes concatenated in
    chunk order.
    """
    methods = [Method(m) for m in methods]
    starts = list(range(0, trials, chunk))

    def one(ci):
        n = min(chunk, trials - starts[ci])
        rng = make_rng(seed, *key, ci)
        deltas = statistical_deltas(d, (n, K), rng)
        if sigma > 0:
            deltas = deltas + sigma * rng.standard_normal((n, K))
        out = {}
        for m in methods:
            obs = deltas + epsilon if m.is_async else deltas
            out[m] = estimate_batch(m, obs, sigma, settings=settings)
        return out

    parts = _parallel_map(one, range(len(starts)), threads)
    merged = {}
    for m in methods:
        ps = [p[m] for p in parts]
        eps = None if ps[0].epsilon_hat is None else np.concatenate([p.epsilon_hat for p in ps])
        agree = None if ps[0].starts_agree is None else np.concatenate([p.starts_agree for p in ps])
        merged[m] = BatchOutcome(
            np.concatenate([p.d_hat for p in ps]), eps, np.concatenate([p.ok for p in ps]), agree
        )
    return merged


def _sweep(axis, points, trials, methods, seed, stream, epsilon, settings, threads, d=1.0) -> SweepResult:
    methods = [Method(m) for m in methods]
    names = [m.value for m in methods]
    res = SweepResult(axis, [p[0] for p in points], names, *({n: [] for n in names} for _ in range(4)), trials, seed)
    for n in names:
        res.counts[n] = []
        res.offset_bias[n] = []
        res.offset_std[n] = []
        res.unimodal_flags[n] = []
    for i, (value, K, sigma_ratio) in enumerate(points):
        sigma = sigma_ratio * d / C
        out = run_statistical(d, K, sigma, trials, methods, seed, (stream, i), epsilon, settings, threads)
        for m in methods:
            o = out[m]
            est = np.where(o.ok, o.d_hat, np.nan)
            mom = Moments.of(est, d)
            n = m.value
            res.rel_bias[n].append(mom.mean / d - 1)
            res.rel_rmse[n].append(mom.rmse / d)
            res.rmse[n].append(mom.rmse)
            res.rel_std[n].append(mom.std / d)
            res.counts[n].append(mom.n)
            if o.epsilon_hat is not None:
                em = Moments.of(np.where(o.ok, o.epsilon_hat, np.nan), epsilon)
                res.offset_bias[n].append(em.mean - epsilon)
                res.offset_std[n].append(em.std)
            else:
                res.offset_bias[n].append(np.nan)
                res.offset_std[n].append(np.nan)
            flags = 0 if o.starts_agree is None else int(np.sum(~o.starts_agree & o.ok))
            res.unimodal_flags[n].append(flags)
    return res


def sweep_over_k(
    ks: Sequence[int],
    sigma_ratio: float = 0.5,
    trials: int = 100_000,
    methods: Sequence = ALL_METHODS,
    seed: int = 1,
    epsilon: float = 0.0,
    settings: SolverSettings = SolverSettings(),
    threads: int = 1,
) -> SweepResult:
    """Relative bias / RMSE against K at fixed ``c sigma / d``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    points = [(int(K), int(K), sigma_ratio) for K in ks]
    return _sweep("k", points, trials, _usable(methods, min(ks)), seed, _K_SWEEP, epsilon, settings, threads)


def sweep_over_sigma(
    sigma_ratios: Sequence[float],
    K: int = 18,
    trials: int = 100_000,
    methods: Sequence = ALL_METHODS,
    seed: int = 1,
    epsilon: float = 0.0,
    settings: SolverSettings = SolverSettings(),
    threads: int = 1,
) -> SweepResult:
    """Relative bias / RMSE against ``c sigma / d`` at fixed K."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    points = [(float(s), int(K), float(s)) for s in sigma_ratios]
    return _sweep("sigma", points, trials, _usable(methods, K), seed, _SIGMA_SWEEP, epsilon, settings, threads)


def _usable(methods, k_min):
    methods = [Method(m) for m in methods]
    if k_min < 2:
        methods = [m for m in methods if not m.is_async]
    return methods


# -- ray-traced scenes ----------------------------------------------------------------


@dataclass
class SceneTables:
    """Padded pooled observations for many B positions.

    Column ``j`` is one path detected from node A at one observer; ``mask``
    marks where node B detected the same path.
    """

    positions: np.ndarray  # (N, 3)
    deltas: np.ndarray  # (N, J) s, errorless
    sigmas: np.ndarray  # (N, J) s, combined CRLB std
    mask: np.ndarray  # (N, J)
    observer_of: np.ndarray  # (J,)
    d: np.ndarray  # (N,)

    @property
    def k(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def k_per_observer(self, i: int) -> np.ndarray:
        return self.mask[:, self.observer_of == i].sum(axis=1)


def _detected_from(src, observer, room, params, max_bounces):
    return {m.mpc.path: m for m in detect(trace_paths(src, observer, room, max_bounces, params), params)}


def build_scene(cfg: ScenarioConfig, p_b) -> Scene:
    """Trace and detect the paths of nodes A and B to every observer."""
    room, params = cfg.room, cfg.channel
    links = []
    for o in cfg.observers:
        links.append(
            ObserverLinks(
                _detected_from(cfg.node_a, o, room, params, cfg.max_bounces),
                _detected_from(p_b, o, room, params, cfg.max_bounces),
            )
        )
    return Scene(np.asarray(cfg.node_a, dtype=float), np.asarray(p_b, dtype=float), tuple(links))


def scene_tables(cfg: ScenarioConfig, positions) -> SceneTables:
    """Vectorized counterpart of :func:`build_scene` + pooling, over B positions."""
    room, params = cfg.room, cfg.channel
    P = np.atleast_2d(np.asarray(positions, dtype=float))
    if not np.all(room.contains(P)):
        raise ValueError("all B positions must lie strictly inside the room")
    a = np.asarray(cfg.node_a, dtype=float)
    cols_delta, cols_sigma, cols_mask, owner = [], [], [], []
    for i, o in enumerate(cfg.observers):
        det_a = _detected_from(a, o, room, params, cfg.max_bounces)
        ordered = sorted(det_a, key=lambda k: (det_a[k].mpc.delay, k))
        _, los, _ = trace_batch(P, o, room, ())
        for spec in ordered:
            valid, delays, _ = trace_batch(P, o, room, spec)
            amp = amplitude_for(C * delays, len(spec), params)
            with np.errstate(divide="ignore"):
                s_db = lin_to_db(sinr_linear(amp, delays - los, params))
            hit = valid & (s_db >= params.sinr_threshold)
            sig_b = np.where(hit, crlb_sigma(np.where(hit, s_db, 0.0), params), np.nan)
            cols_delta.append(np.where(hit, delays - det_a[spec].mpc.delay, 0.0))
            cols_sigma.append(np.where(hit, np.hypot(det_a[spec].sigma_tau, sig_b), 0.0))
            cols_mask.append(hit)
            owner.append(i)
    n = len(P)
    stack = lambda cols, dt: np.stack(cols, axis=1) if cols else np.zeros((n, 0), dtype=dt)  # noqa: E731
    return SceneTables(
        P,
        stack(cols_delta, float),
        stack(cols_sigma, float),
        stack(cols_mask, bool),
        np.asarray(owner, dtype=int),
        np.linalg.norm(P - a, axis=1),
    )


def room_grid(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grid on multiples of the pitch strictly inside the room, at node height."""
    pitch = cfg.grid_pitch
    xs = pitch * np.arange(1, int(round(cfg.length / pitch)))
    ys = pitch * np.arange(1, int(round(cfg.width / pitch)))
    xs, ys = np.round(xs, 9), np.round(ys, 9)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    P = np.stack([X.ravel(), Y.ravel(), np.full(X.size, cfg.node_a[2])], axis=1)
    return xs, ys, P


@dataclass
class HeatmapResult:
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # (len(ys), len(xs)); NaN where missing
    status: np.ndarray  # same shape, str codes
    method: str
    mode: str
    observers: int

    def rows(self) -> Iterable[tuple]:
        for j, y in enumerate(self.ys):
            for i, x in enumerate(self.xs):
                yield x, y, self.values[j, i], self.status[j, i]


def _noisy(tables: SceneTables, rng_for_row, draws: int = 1) -> np.ndarray:
    """``(draws, N, J)`` noisy deltas with one generator per row."""
    n, J = tables.deltas.shape
    out = np.empty((draws, n, J))
    for r in range(n):
        w = rng_for_row(r).standard_normal((draws, J))
        out[:, r] = tables.deltas[r] + tables.sigmas[r] * w
    return out


def _method_inputs(cfg: ScenarioConfig, method: Method, deltas):
    return deltas + cfg.epsilon if method.is_async else deltas


def room_heatmap(cfg: ScenarioConfig, method=Method.SYNC_UMVUE, mode: str = "error", positions=None) -> HeatmapResult:
    """Per grid cell: absolute distance error (``mode="error"``) or common-path count."""
    method = Method(method)
    if mode not in ("error", "kcount"):
        raise ValueError("mode must be 'error' or 'kcount'")
    xs, ys, P = room_grid(cfg)
    if positions is not None:
        P = np.atleast_2d(np.asarray(positions, dtype=float))
        xs, ys = P[:, 0], np.zeros(1)
    t = scene_tables(cfg, P)
    K = t.k
    status = np.where(K > 0, "ok", "no_common").astype(object)
    if mode == "kcount":
        values = K.astype(float)
    else:
        values = np.full(len(P), np.nan)
        if cfg.noise:
            deltas = _noisy(t, lambda r: make_rng(cfg.seed, _HEATMAP, r))[0]
            sig = t.sigmas
        else:
            deltas, sig = t.deltas, np.zeros_like(t.sigmas)
        usable = K >= (2 if method.is_async else 1)
        status[(K > 0) & ~usable] = "k_lt_2"
        rows = np.flatnonzero(usable)
        if rows.size:
            out = estimate_batch(method, _method_inputs(cfg, method, deltas[rows]), sig[rows], t.mask[rows], cfg.solver)
            err = np.abs(out.d_hat - t.d[rows])
            values[rows] = np.where(out.ok, err, np.nan)
            status[rows[~out.ok]] = "solver_failed"
    shape = (len(ys), len(xs)) if positions is None else (1, len(P))
    return HeatmapResult(xs, ys, values.reshape(shape), status.reshape(shape), method.value, mode, len(cfg.observers))


# -- circles around node A ------------------------------------------------------------


def circle_positions(cfg: ScenarioConfig, radius: float, margin: float = 0.05) -> np.ndarray:
    """Points at ``radius`` around node A (equally spaced angles) that lie inside the room."""
    th = 2 * np.pi * np.arange(cfg.angles) / cfg.angles
    a = np.asarray(cfg.node_a, dtype=float)
    P = a + radius * np.stack([np.cos(th), np.sin(th), np.zeros_like(th)], axis=1)
    return P[cfg.room.contains(P, margin)]


def circle_rmse(
    cfg: ScenarioConfig,
    radii: Sequence[float] | None = None,
    methods: Sequence = (Method.SYNC_UMVUE, Method.ASYNC_UMVUE),
    trials: int | None = None,
    noise: bool | None = None,
) -> SweepResult:
    """RMSE over positions on circles of radius ``d`` around node A.

    With ``noise`` each position gets ``trials`` independent draws of the
    CRLB extraction errors; otherwise one errorless evaluation per position.
    Angles whose position falls outside the room are skipped.
    """
    radii = list(cfg.radii if radii is None else radii)
    noise = cfg.noise if noise is None else noise
    trials = (cfg.trials if trials is None else trials) if noise else 1
    methods = [Method(m) for m in methods]
    names = [m.value for m in methods]
    res = SweepResult("d", radii, names, *({n: [] for n in names} for _ in range(4)), trials, cfg.seed)
    for n in names:
        res.counts[n] = []
        res.unimodal_flags[n] = []

    def one(ri):
        r = radii[ri]
        P = circle_positions(cfg, r)
        out = {}
        if len(P) == 0:
            return out
        t = scene_tables(cfg, P)
        if noise:
            draws = _noisy(t, lambda row: make_rng(cfg.seed, _CIRCLE, ri, row), trials)
            deltas = draws.reshape(-1, draws.shape[-1])
            sig = np.tile(t.sigmas, (trials, 1))
        else:
            deltas, sig = t.deltas, np.zeros_like(t.sigmas)
        mask = np.tile(t.mask, (trials, 1))
        truth = np.tile(t.d, trials)
        for m in methods:
            o = estimate_batch(m, _method_inputs(cfg, m, deltas), sig, mask, cfg.solver)
            out[m] = (np.where(o.ok, o.d_hat - truth, np.nan), o)
        return out

    parts = _parallel_map(one, range(len(radii)), cfg.threads)
    for ri, r in enumerate(radii):
        for m in methods:
            n = m.value
            if m not in parts[ri]:
                for q in (res.rel_bias, res.rel_rmse, res.rmse, res.rel_std):
                    q[n].append(np.nan)
                res.counts[n].append(0)
                res.unimodal_flags[n].append(0)
                continue
            err, o = parts[ri][m]
            mom = Moments.of(err, 0.0)
            res.rel_bias[n].append(mom.mean / r)
            res.rmse[n].append(mom.rmse)
            res.rel_rmse[n].append(mom.rmse / r)
            res.rel_std[n].append(mom.std / r)
            res.counts[n].append(mom.n)
            flags = 0 if o.starts_agree is None else int(np.sum(~o.starts_agree & o.ok))
            res.unimodal_flags[n].append(flags)
    return res


def rmse_slope(result: SweepResult, method) -> float:
    """Least-squares slope through the origin of RMSE against ``d``."""
    d = np.asarray(result.values, dtype=float)
    r = result.series(method, "rmse")
    ok = np.isfinite(r)
    return float(np.sum(d[ok] * r[ok]) / np.sum(d[ok] ** 2))
