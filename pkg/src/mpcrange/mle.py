"""Likelihood-based distance estimation for delay differences with errors.

Each observation contributes ``(c / 2d) * I_k`` to the likelihood, where the
soft indicator ``I_k`` is the probability that the extraction error moves an
in-range delay difference to the observed value.  The maximizers are found
with a damped Newton ascent (analytic gradient and Hessian) in log-distance,
vectorized over many independent problems.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import log_ndtr, ndtr

from .constants import SPEED_OF_LIGHT
from .est import ASYNC_MIN_K, Diagnostics, Estimate, Method, async_mle_batch, sync_mle_batch
from .obs import ObservationError, ObservationSet

C = SPEED_OF_LIGHT
_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)
_TAYLOR_WIDTH = 1e-2
MULTISTART_FACTORS = (0.5, 1.5, 2.0, 3.0)


class SolverError(RuntimeError):
    """No start converged; ``best`` holds the best iterate found."""

    def __init__(self, message: str, best: Estimate | None = None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 100
    gtol: float = 1e-10
    xtol: float = 1e-12
    multistart: int = 5
    d_min: float = 1e-6  # m
    max_step: float = 1.0  # Newton step cap in log-distance units
    max_halvings: int = 30
    agree_tol: float = 1e-6  # relative spread allowed between converged starts

    def __post_init__(self):
        if min(self.max_iterations, self.gtol, self.xtol, self.multistart, self.d_min, self.max_step) <= 0:
            raise ValueError("solver settings must be positive")


# -- soft indicators -----------------------------------------------------------


def _log_phi(z):
    return -0.5 * z * z - _LOG_SQRT_2PI


def log_normal_mass(hi, lo):
    """``log(Phi(hi) - Phi(lo))`` for ``hi >= lo``, stable in both tails.

    Narrow intervals use a fourth-order expansion around the midpoint so the
    result keeps full relative precision when ``hi - lo`` is tiny.
    """
    hi, lo = np.broadcast_arrays(np.asarray(hi, dtype=float), np.asarray(lo, dtype=float))
    return _log_mass(0.5 * (hi + lo), 0.5 * (hi - lo))


def _log_mass(mid, w):
    """``log(Phi(mid + w) - Phi(mid - w))`` from the midpoint and half-width.

    Taking ``w`` directly avoids recovering it as a difference of two
    nearly equal bounds, which loses digits when ``w << |mid|``.
    """
    mid, w = np.broadcast_arrays(np.asarray(mid, dtype=float), np.asarray(w, dtype=float))
    # reflect so the interval sits in the lower half-line
    flip = mid > 0
    a = np.where(flip, -(mid - w), mid + w)
    b = np.where(flip, -(mid + w), mid - w)
    with np.errstate(divide="ignore", invalid="ignore"):
        la = log_ndtr(a)
        lb = log_ndtr(b)
        wide = la + np.log(-np.expm1(lb - la))
        m2 = mid * mid
        w2 = w * w
        narrow = (
            np.log(2 * w)
            + _log_phi(mid)
            + np.log1p(w2 * (m2 - 1) / 6 + w2 * w2 * (m2 * m2 - 6 * m2 + 3) / 120)
        )
    use_narrow = w * np.maximum(1.0, np.abs(mid)) < _TAYLOR_WIDTH
    out = np.where(use_narrow, narrow, wide)
    return np.where(w > 0, out, -np.inf)


def soft_indicator(delta, d, sigma):
    """Probability mass ``Q((delta - d/c)/sigma) - Q((delta + d/c)/sigma)``.

    With ``sigma == 0`` this is the hard indicator of ``c |delta| <= d``.
    """
    delta, d, sigma = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (delta, d, sigma)))
    h = d / C
    hard = (np.abs(delta) <= h).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        soft = np.exp(_log_mass(delta / sigma, h / sigma))
    out = np.where(sigma > 0, np.where(h > 0, soft, 0.0), hard)
    return out if out.ndim else float(out)


def _gaussian_log(x, h, sigma):
    """Per-observation ``log I`` only (no derivatives)."""
    hard = sigma == 0
    s = np.where(hard, 1.0, sigma)
    logI = _log_mass(x / s, h / s)
    if np.any(hard):
        logI = np.where(hard, np.where(np.abs(x) <= h, 0.0, -np.inf), logI)
    return logI


def _narrow_derivatives(mid, w):
    """Derivatives of the narrow-interval expansion of ``log I`` in ``(mid, w)``.

    ``log I = log(2w) + log phi(mid) + log T`` with ``T`` the quartic
    correction used by :func:`_log_mass`.  Returns ``(L_m, L_w, L_mm, L_ww, L_mw)``.
    """
    m2, w2 = mid * mid, w * w
    A = (m2 - 1) / 6
    B = (m2 * m2 - 6 * m2 + 3) / 120
    T = 1 + A * w2 + B * w2 * w2
    T_m = w2 * mid / 3 + w2 * w2 * (m2 - 3) * mid / 30
    T_w = 2 * A * w + 4 * B * w2 * w
    T_mm = w2 / 3 + w2 * w2 * (m2 - 1) / 10
    T_ww = 2 * A + 12 * B * w2
    T_mw = 2 * w * mid / 3 + 2 * w2 * w * (m2 - 3) * mid / 15
    with np.errstate(divide="ignore"):
        inv_w = 1 / w
    g_m, g_w = T_m / T, T_w / T
    return (
        -mid + g_m,
        inv_w + g_w,
        -1 + T_mm / T - g_m * g_m,
        -inv_w * inv_w + T_ww / T - g_w * g_w,
        T_mw / T - g_m * g_w,
    )


def _gaussian_terms(x, h, sigma):
    """Per-observation ``log I`` and its derivatives w.r.t. ``h`` and ``x``.

    Returns ``(l, l_h, l_x, l_hh, l_xx, l_hx)``.  Hard observations
    (``sigma == 0``) give ``0`` or ``-inf`` and zero derivatives.  Narrow
    intervals use the derivatives of the series expansion; the density
    ratios of the general branch cancel catastrophically there.
    """
    hard = sigma == 0
    s = np.where(hard, 1.0, sigma)
    mid, w = x / s, h / s
    p, m = mid + w, mid - w
    logI = _log_mass(mid, w)
    with np.errstate(over="ignore", invalid="ignore"):
        rp = np.exp(_log_phi(p) - logI)
        rm = np.exp(_log_phi(m) - logI)
        l_w = rp + rm
        l_m = rp - rm
        curv = -p * rp + m * rm
        l_ww = curv - l_w**2
        l_mm = curv - l_m**2
        l_mw = -p * rp - m * rm - l_w * l_m
    narrow = w * np.maximum(1.0, np.abs(mid)) < _TAYLOR_WIDTH
    if np.any(narrow):
        with np.errstate(invalid="ignore"):
            n_m, n_w, n_mm, n_ww, n_mw = _narrow_derivatives(mid, w)
        l_m, l_w, l_mm, l_ww, l_mw = (
            np.where(narrow, a, b) for a, b in ((n_m, l_m), (n_w, l_w), (n_mm, l_mm), (n_ww, l_ww), (n_mw, l_mw))
        )
    l_h, l_x = l_w / s, l_m / s
    l_hh, l_xx, l_hx = l_ww / s**2, l_mm / s**2, l_mw / s**2
    if np.any(hard):
        inside = np.abs(x) <= h
        logI = np.where(hard, np.where(inside, 0.0, -np.inf), logI)
        zero = np.zeros_like(logI)
        l_h, l_x, l_hh, l_xx, l_hx = (np.where(hard, zero, v) for v in (l_h, l_x, l_hh, l_xx, l_hx))
    return logI, l_h, l_x, l_hh, l_xx, l_hx


class ErrorModel:
    """Independent per-observation extraction errors.

    Subclasses supply ``log I_k`` and its derivatives; the Gaussian model
    does so in closed form.
    """

    def terms(self, x, h):
        raise NotImplementedError

    def log_mass(self, x, h):
        return self.terms(x, h)[0]


class GaussianErrors(ErrorModel):
    def __init__(self, sigmas):
        self.sigmas = np.asarray(sigmas, dtype=float)
        if np.any(self.sigmas < 0):
            raise ValueError("sigmas must be non-negative")

    def terms(self, x, h):
        return _gaussian_terms(x, h, self.sigmas)

    def log_mass(self, x, h):
        return _gaussian_log(x, h, self.sigmas)


class CdfErrors(ErrorModel):
    """Arbitrary error CDFs; derivatives by central differences.

    ``cdf(w)`` must be vectorized and broadcast over the observation axis.
    """

    def __init__(self, cdf: Callable, scale: float):
        self.cdf = cdf
        self.scale = scale  # typical error size [s], sets the difference step

    def _log(self, x, h):
        with np.errstate(divide="ignore"):
            return np.log(np.clip(self.cdf(x + h) - self.cdf(x - h), 1e-300, None))

    def terms(self, x, h):
        e = 1e-4 * self.scale
        f = self._log
        l0 = f(x, h)
        l_h = (f(x, h + e) - f(x, h - e)) / (2 * e)
        l_x = (f(x + e, h) - f(x - e, h)) / (2 * e)
        l_hh = (f(x, h + e) - 2 * l0 + f(x, h - e)) / e**2
        l_xx = (f(x + e, h) - 2 * l0 + f(x - e, h)) / e**2
        l_hx = (f(x + e, h + e) - f(x + e, h - e) - f(x - e, h + e) + f(x - e, h - e)) / (4 * e**2)
        return l0, l_h, l_x, l_hh, l_xx, l_hx


def gaussian_cdf(sigma: float) -> Callable:
    return lambda w: ndtr(np.asarray(w) / sigma)


def _model(obs: ObservationSet, em: ErrorModel | None) -> ErrorModel:
    return em if em is not None else GaussianErrors(obs.sigmas)


# -- log-likelihoods -----------------------------------------------------------


def _check_d(d):
    if not np.all(np.asarray(d) > 0):
        raise ObservationError("distance must be positive")


def loglik_sync(d: float, obs: ObservationSet, em: ErrorModel | None = None) -> float:
    """``K log(c/2d) + sum log I_k``; ``-inf`` when some ``I_k`` vanishes."""
    _check_d(d)
    logI = _model(obs, em).log_mass(obs.deltas, d / C)
    return float(obs.K * np.log(C / (2 * d)) + np.sum(logI))


def loglik_sync_grad(d: float, obs: ObservationSet, em: ErrorModel | None = None) -> float:
    """Derivative of :func:`loglik_sync` with respect to ``d`` [1/m]."""
    _check_d(d)
    l_h = _model(obs, em).terms(obs.deltas, d / C)[1]
    return float(-obs.K / d + np.sum(l_h) / C)


def loglik_async(d: float, epsilon: float, obs: ObservationSet, em: ErrorModel | None = None) -> float:
    _check_d(d)
    logI = _model(obs, em).log_mass(obs.deltas - epsilon, d / C)
    return float(obs.K * np.log(C / (2 * d)) + np.sum(logI))


def loglik_async_grad(d: float, epsilon: float, obs: ObservationSet, em: ErrorModel | None = None):
    """Gradient of :func:`loglik_async` as ``(d/dd [1/m], d/d epsilon [1/s])``."""
    _check_d(d)
    _, l_h, l_x, *_ = _model(obs, em).terms(obs.deltas - epsilon, d / C)
    return float(-obs.K / d + np.sum(l_h) / C), float(-np.sum(l_x))


# -- batched damped Newton ascent ----------------------------------------------


@dataclass
class BatchResult:
    x: np.ndarray  # (N, p) final iterates
    f: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray


_F_RESOLUTION = 16 * np.finfo(float).eps


def newton_ascent(fun, x0: np.ndarray, lower: np.ndarray, settings: SolverSettings, fun_value=None) -> BatchResult:
    """Maximize independent objectives with damped, projected Newton steps.

    ``fun(x, idx)`` returns ``(f, g, H)`` for rows ``idx`` of the batch, with
    shapes ``(n,)``, ``(n, p)``, ``(n, p, p)``; ``fun_value(x, idx)`` returns
    ``f`` alone (defaults to ``fun``).  Coordinate 0 is bounded below by
    ``lower``.  Rows whose start has ``f = -inf`` are reported unconverged.
    """
    fun_value = fun_value or (lambda x, idx: fun(x, idx)[0])
    x = np.array(x0, dtype=float)
    n, p = x.shape
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (n,))
    x[:, 0] = np.maximum(x[:, 0], lower)
    f = np.full(n, -np.inf)
    converged = np.zeros(n, dtype=bool)
    failed = np.zeros(n, dtype=bool)
    iterations = np.zeros(n, dtype=int)
    active = np.arange(n)
    g = H = None
    for it in range(settings.max_iterations + 1):
        if active.size == 0:
            break
        fa, ga, Ha = fun(x[active], active)
        f[active] = fa
        bad = ~np.isfinite(fa)
        failed[active[bad]] = True
        # a bound-active coordinate with an outward gradient is stationary
        at_lower = (x[active, 0] <= lower[active]) & (ga[:, 0] < 0)
        gproj = ga.copy()
        gproj[at_lower, 0] = 0.0
        step = _newton_direction(gproj, Ha, at_lower)
        # gradients are in log-distance (and scaled offset) units, hence
        # dimensionless; on flat maxima a small gradient alone does not pin
        # the location, so the Newton step must be small as well.  A step
        # whose predicted gain is below the resolution of f cannot be
        # verified by the line search and also counts as converged.
        with np.errstate(over="ignore", invalid="ignore"):
            gain = np.sum(gproj * step, axis=1)
        flat = (np.max(np.abs(gproj), axis=1) <= settings.gtol) | (gain <= _F_RESOLUTION * np.maximum(1.0, np.abs(fa)))
        done = ~bad & flat & (np.max(np.abs(step), axis=1) <= 0.1 * settings.agree_tol)
        converged[active[done]] = True
        keep = ~bad & ~done
        if it == settings.max_iterations:
            break
        active, gproj, step = active[keep], gproj[keep], step[keep]
        if active.size == 0:
            break
        norm = np.max(np.abs(step), axis=1)
        step *= np.minimum(1.0, settings.max_step / np.maximum(norm, 1e-300))[:, None]
        slope = np.sum(gproj * step, axis=1)
        alpha = np.ones(active.size)
        accepted = np.zeros(active.size, dtype=bool)
        f0 = f[active]
        x_new = x[active].copy()
        f_new = f0.copy()
        pending = np.arange(active.size)
        for _ in range(settings.max_halvings + 1):
            trial = x[active[pending]] + alpha[pending, None] * step[pending]
            trial[:, 0] = np.maximum(trial[:, 0], lower[active[pending]])
            ft = fun_value(trial, active[pending])
            ok = np.isfinite(ft) & (ft >= f0[pending] + 1e-4 * alpha[pending] * slope[pending])
            idx = pending[ok]
            accepted[idx] = True
            x_new[idx] = trial[ok]
            f_new[idx] = ft[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            alpha[pending] *= 0.5
        moved = np.max(np.abs(x_new - x[active]), axis=1)
        x[active] = x_new
        f[active] = f_new
        iterations[active] += 1
        tiny = accepted & (moved <= settings.xtol * (1.0 + np.max(np.abs(x_new), axis=1)))
        # no ascent possible along a Newton/gradient direction: numerically stationary
        stuck = ~accepted
        converged[active[tiny | stuck]] = True
        active = active[~(tiny | stuck)]
    converged &= ~failed
    _snap_to_lower(x, f, converged, lower, fun_value)
    return BatchResult(x, f, converged, iterations)


def _snap_to_lower(x, f, converged, lower, fun_value):
    """Move converged rows onto the bound when it is at least as good.

    The likelihood has a finite limit as d -> 0, approached with vanishing
    slope in log-distance; starts heading there stop at scattered tiny
    values.  If the bound scores no worse, up to the accuracy of a sum of K
    log terms, the supremum is at the bound.
    """
    rows = np.flatnonzero(converged & (x[:, 0] > lower))
    if rows.size == 0:
        return
    trial = x[rows].copy()
    trial[:, 0] = lower[rows]
    ft = fun_value(trial, rows)
    tol = 1e-12 * np.maximum(1.0, np.abs(f[rows]))
    snap = np.isfinite(ft) & (ft >= f[rows] - tol)
    x[rows[snap]] = trial[snap]
    f[rows[snap]] = ft[snap]


def _newton_direction(g, H, at_lower):
    """Ascent direction from the gradient ``g`` and Hessian ``H``.

    Newton where ``H`` is negative definite.  Elsewhere each eigenvalue is
    replaced by ``-max(|lambda|, 1)``, which keeps the direction uphill while
    preserving the relative scaling of the coordinates; a plain gradient step
    zigzags slowly across saddle regions between modes.
    """
    n, p = g.shape
    if p == 1:
        h = H[:, 0, 0]
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            newton = -g[:, 0] / np.where(h < 0, h, -1.0)
            modified = g[:, 0] / np.maximum(np.abs(h), 1.0)
        d = np.where((h < 0) & np.isfinite(newton), newton, modified)
        d = np.where(at_lower, 0.0, d)
        return d[:, None]
    a, b, c = H[:, 0, 0], H[:, 0, 1], H[:, 1, 1]
    det = a * c - b * b
    negdef = (a < 0) & (det > 0)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        d0 = -(c * g[:, 0] - b * g[:, 1]) / det
        d1 = -(-b * g[:, 0] + a * g[:, 1]) / det
        # bound active: Newton in the free coordinate only
        d1_free = np.where(c < 0, -g[:, 1] / np.where(c < 0, c, -1.0), g[:, 1] / np.maximum(np.abs(c), 1.0))
        modified = g.copy()
        rows = np.flatnonzero(~negdef & np.all(np.isfinite(H.reshape(n, -1)), axis=1))
        if rows.size:
            lam, vec = np.linalg.eigh(H[rows])
            coef = np.einsum("nij,ni->nj", vec, g[rows]) / np.maximum(np.abs(lam), 1.0)
            modified[rows] = np.einsum("nij,nj->ni", vec, coef)
    out = np.where(negdef[:, None], np.stack([d0, d1], axis=1), modified)
    out = np.where(at_lower[:, None], np.stack([np.zeros(n), d1_free], axis=1), out)
    return np.where(np.isfinite(out), out, g)


# -- objectives in solver coordinates ---------------------------------------------


class _SyncObjective:
    """F(u) with ``d = exp(u)``; ``deltas``/``sigmas``/``mask`` are ``(N, K)``."""

    def __init__(self, deltas, sigmas, mask, model=None):
        self.deltas, self.sigmas, self.mask, self.model = deltas, sigmas, mask, model
        self.K = mask.sum(axis=1)

    def _terms(self, x, h, idx):
        if self.model is not None:
            return self.model.terms(x, h)
        return _gaussian_terms(x, h, self.sigmas[idx])

    def _log(self, x, h, idx):
        if self.model is not None:
            return self.model.log_mass(x, h)
        return _gaussian_log(x, h, self.sigmas[idx])

    def value(self, u, idx):
        d = np.exp(u[:, 0])
        logI = self._log(self.deltas[idx], (d / C)[:, None], idx)
        logI = np.where(self.mask[idx], logI, 0.0)
        return self.K[idx] * (np.log(C / 2) - u[:, 0]) + logI.sum(axis=1)

    def __call__(self, u, idx):
        d = np.exp(u[:, 0])
        h = (d / C)[:, None]
        logI, l_h, _, l_hh, _, _ = self._terms(self.deltas[idx], h, idx)
        m = self.mask[idx]
        K = self.K[idx]
        f = K * (np.log(C / 2) - u[:, 0]) + np.where(m, logI, 0.0).sum(axis=1)
        s1 = np.where(m, l_h * h, 0.0).sum(axis=1)
        s2 = np.where(m, l_hh * h * h, 0.0).sum(axis=1)
        g = (-K + s1)[:, None]
        H = (s1 + s2)[:, None, None]
        return f, g, H


class _AsyncObjective(_SyncObjective):
    """F(u, v) with ``d = exp(u)`` and ``epsilon = v * scale / c``."""

    def __init__(self, deltas, sigmas, mask, scale, model=None):
        super().__init__(deltas, sigmas, mask, model)
        self.scale = scale  # (N,) meters

    def _x(self, v, idx):
        return self.deltas[idx] - (v * self.scale[idx] / C)[:, None]

    def value(self, x, idx):
        h = (np.exp(x[:, 0]) / C)[:, None]
        logI = self._log(self._x(x[:, 1], idx), h, idx)
        logI = np.where(self.mask[idx], logI, 0.0)
        return self.K[idx] * (np.log(C / 2) - x[:, 0]) + logI.sum(axis=1)

    def __call__(self, x, idx):
        h = (np.exp(x[:, 0]) / C)[:, None]
        logI, l_h, l_x, l_hh, l_xx, l_hx = self._terms(self._x(x[:, 1], idx), h, idx)
        m = self.mask[idx]
        K = self.K[idx]
        dx = (-self.scale[idx] / C)[:, None]

        def msum(v):
            return np.where(m, v, 0.0).sum(axis=1)

        f = K * (np.log(C / 2) - x[:, 0]) + msum(logI)
        s1 = msum(l_h * h)
        gu = -K + s1
        gv = msum(l_x * dx)
        huu = s1 + msum(l_hh * h * h)
        hvv = msum(l_xx * dx * dx)
        huv = msum(l_hx * h * dx)
        g = np.stack([gu, gv], axis=1)
        H = np.stack([np.stack([huu, huv], axis=1), np.stack([huv, hvv], axis=1)], axis=1)
        return f, g, H


# -- batch solvers -----------------------------------------------------------------


@dataclass
class BatchEstimates:
    d_hat: np.ndarray
    epsilon_hat: np.ndarray | None
    converged: np.ndarray
    iterations: np.ndarray
    loglik: np.ndarray
    starts_agree: np.ndarray


def _starts(d0, settings: SolverSettings):
    factors = (1.0,) + MULTISTART_FACTORS[: max(settings.multistart - 1, 0)]
    return np.concatenate([np.maximum(d0 * f, settings.d_min) for f in factors]), len(factors)


def _resolution(obj, x, idx, f):
    """Half-width per coordinate within which a maximum is numerically unresolved.

    Moving ``t`` along coordinate ``i`` changes ``f`` by about
    ``t^2 / (2 (-H^-1)_ii)``; below the resolution of ``f`` such moves cannot
    be told apart, so starts ending that close to each other agree.
    """
    _, _, H = obj(x, idx)
    tol = _F_RESOLUTION * np.maximum(1.0, np.abs(f))
    with np.errstate(divide="ignore", invalid="ignore"):
        if H.shape[1] == 1:
            cov = -1.0 / H[:, 0, 0]
            var = cov[:, None]
        else:
            a, b, c = H[:, 0, 0], H[:, 0, 1], H[:, 1, 1]
            det = a * c - b * b
            var = np.stack([-c / det, -a / det], axis=1)
        out = np.sqrt(2.0 * tol[:, None] * var)
    # not negative definite: no curvature-based allowance
    return np.where(np.isfinite(out) & (var > 0), out, 0.0)


def _select(res: BatchResult, n: int, S: int, settings: SolverSettings, obj=None):
    f = np.where(res.converged, res.f, -np.inf).reshape(S, n)
    best = np.argmax(f, axis=0)
    cols = np.arange(n)
    pick = best * n + cols
    d_all = np.exp(res.x[:, 0]).reshape(S, n)
    conv = res.converged.reshape(S, n)
    any_conv = conv.any(axis=0)
    p = res.x.shape[1]
    slack = np.zeros((n, p))
    if obj is not None and settings.multistart > 1:
        rows = np.flatnonzero(any_conv)
        if rows.size:
            slack[rows] = _resolution(obj, res.x[pick[rows]], pick[rows], res.f[pick[rows]])

    def spread(v):
        hi = np.where(conv, v, -np.inf).max(axis=0)
        lo = np.where(conv, v, np.inf).min(axis=0)
        return np.where(any_conv, hi - lo, 0.0), np.where(any_conv, hi, 0.0)

    width, top = spread(d_all)
    # d_min is the distance resolution of the solver, so spreads below it do not count
    agree = width <= np.maximum(settings.agree_tol, 2 * slack[:, 0]) * top + settings.d_min
    if settings.multistart > 1 and p > 1:
        width, top = spread(res.x[:, 1].reshape(S, n))
        agree &= width <= settings.agree_tol * (1 + np.abs(top)) + 2 * slack[:, 1]
    return pick, any_conv, agree


def _prep(deltas, sigmas, mask):
    deltas = np.atleast_2d(np.asarray(deltas, dtype=float))
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), deltas.shape)
    mask = np.ones(deltas.shape, dtype=bool) if mask is None else np.broadcast_to(mask, deltas.shape)
    return deltas, sigmas, mask


def solve_sync_batch(deltas, sigmas, mask=None, settings: SolverSettings = SolverSettings(), model=None) -> BatchEstimates:
    """Synchronous noisy-delay MLE for each row of ``deltas`` ``(N, K)``."""
    deltas, sigmas, mask = _prep(deltas, sigmas, mask)
    n = deltas.shape[0]
    K = mask.sum(axis=1)
    dmax = C * np.max(np.where(mask, np.abs(deltas), 0.0), axis=1)
    d0 = (K + 1) / K * dmax
    starts, S = _starts(d0, settings)
    tile = lambda a: np.concatenate([a] * S)  # noqa: E731
    obj = _SyncObjective(tile(deltas), tile(sigmas), tile(mask), model)
    lower = np.log(settings.d_min)
    res = newton_ascent(obj, np.log(starts)[:, None], lower, settings, obj.value)
    pick, any_conv, agree = _select(res, n, S, settings, obj)
    return BatchEstimates(
        d_hat=np.exp(res.x[pick, 0]),
        epsilon_hat=None,
        converged=any_conv,
        iterations=res.iterations.reshape(S, n).sum(axis=0),
        loglik=res.f[pick],
        starts_agree=agree,
    )


def solve_async_batch(deltas, sigmas, mask=None, settings: SolverSettings = SolverSettings(), model=None) -> BatchEstimates:
    """Joint distance / clock-offset MLE for each row of ``deltas`` ``(N, K)``."""
    deltas, sigmas, mask = _prep(deltas, sigmas, mask)
    n = deltas.shape[0]
    K = mask.sum(axis=1)
    hi = np.max(np.where(mask, deltas, -np.inf), axis=1)
    lo = np.min(np.where(mask, deltas, np.inf), axis=1)
    eps0 = 0.5 * (hi + lo)
    d0 = (K + 1) / np.maximum(K - 1, 1) * C / 2 * (hi - lo)
    # scale of the offset coordinate: typical distance, never below the noise level
    noise = C * np.max(np.where(mask, sigmas, 0.0), axis=1)
    scale = np.maximum.reduce([d0, noise, np.full(n, settings.d_min)])
    starts, S = _starts(d0, settings)
    tile = lambda a: np.concatenate([a] * S)  # noqa: E731
    obj = _AsyncObjective(tile(deltas), tile(sigmas), tile(mask), tile(scale), model)
    v0 = tile(eps0 * C / scale)
    x0 = np.stack([np.log(starts), v0], axis=1)
    res = newton_ascent(obj, x0, np.log(settings.d_min), settings, obj.value)
    pick, any_conv, agree = _select(res, n, S, settings, obj)
    return BatchEstimates(
        d_hat=np.exp(res.x[pick, 0]),
        epsilon_hat=res.x[pick, 1] * tile(scale)[pick] / C,
        converged=any_conv,
        iterations=res.iterations.reshape(S, n).sum(axis=0),
        loglik=res.f[pick],
        starts_agree=agree,
    )


# -- single-instance API -----------------------------------------------------------


def _as_estimate(b: BatchEstimates, method: Method) -> Estimate:
    diag = Diagnostics(bool(b.converged[0]), int(b.iterations[0]), float(b.loglik[0]), bool(b.starts_agree[0]))
    eps = None if b.epsilon_hat is None else float(b.epsilon_hat[0])
    est = Estimate(float(b.d_hat[0]), method, eps, diag)
    if not diag.converged:
        raise SolverError("solver failed", est)
    return est


def solve_sync_mle(obs: ObservationSet, em: ErrorModel | None = None, settings: SolverSettings = SolverSettings()) -> Estimate:
    if obs.noiseless and em is None:
        d = float(sync_mle_batch(obs.deltas))
        if d > 0:
            loglik = obs.K * np.log(C / (2 * d))
            return Estimate(d, Method.SYNC_NOISY_MLE, diagnostics=Diagnostics(True, 0, float(loglik)))
    b = solve_sync_batch(obs.deltas[None], obs.sigmas[None], settings=settings, model=em)
    return _as_estimate(b, Method.SYNC_NOISY_MLE)


def solve_async_mle(obs: ObservationSet, em: ErrorModel | None = None, settings: SolverSettings = SolverSettings()) -> Estimate:
    if obs.K < 2:
        raise ObservationError(ASYNC_MIN_K)
    if obs.noiseless and em is None:
        d, eps = (float(v) for v in async_mle_batch(obs.deltas))
        if d > 0:
            loglik = obs.K * np.log(C / (2 * d))
            return Estimate(d, Method.ASYNC_NOISY_MLE, eps, Diagnostics(True, 0, float(loglik)))
    b = solve_async_batch(obs.deltas[None], obs.sigmas[None], settings=settings, model=em)
    return _as_estimate(b, Method.ASYNC_NOISY_MLE)
