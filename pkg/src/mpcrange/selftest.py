"""Reduced-size consistency checks, run by ``mpcrange selftest``.

Each check returns ``(name, passed, detail)``.  Trial counts are small so the
whole run takes seconds; tolerances are widened accordingly.
"""

from __future__ import annotations

import numpy as np

from . import est, mle
from .config import ScenarioConfig
from .constants import SPEED_OF_LIGHT as C
from .obs import ObservationSet, make_rng, statistical_deltas
from .sim import scene_tables


def _std_law(seed):
    d, K, n = 1.0, 10, 40_000
    x = statistical_deltas(d, (n, K), make_rng(seed, 90))
    s = est.sync_umvue_batch(x).std()
    a, _ = est.async_umvue_batch(x)
    rs = s / est.std_sync_analytic(d, K) - 1
    # the large-K async law is about 5% high at K=10, so compare with the exact one
    ra = a.std() / est.std_async_exact(d, K) - 1
    ok = abs(rs) < 0.03 and abs(ra) < 0.03
    return "std laws (K=10)", ok, f"sync {rs:+.2%}, async {ra:+.2%}"


def _collapse(seed):
    rng = make_rng(seed, 91)
    worst = 0.0
    for _ in range(20):
        x = statistical_deltas(1.0 + rng.random(), (12,), rng)
        obs = ObservationSet(x, np.full(12, 1e-15))
        worst = max(worst, abs(mle.solve_sync_mle(obs).d_hat - est.mle_sync(obs).d_hat))
    # the soft likelihood sits a few c*sigma above the hard maximum
    ok = worst < 20 * C * 1e-15
    return "noisy MLE approaches closed form", ok, f"max |diff| {worst:.3g} m"


def _gradient(seed):
    rng = make_rng(seed, 92)
    worst = 0.0
    for _ in range(10):
        sig = (0.05 + 0.2 * rng.random(8)) / C
        x = statistical_deltas(1.0, (8,), rng) + sig * rng.standard_normal(8)
        obs = ObservationSet(x, sig, sync=False)
        d, e = 0.8 + rng.random(), 0.3e-9 * rng.standard_normal()
        gd, ge = mle.loglik_async_grad(d, e, obs)
        hd, he = 1e-6, 1e-15
        fd = (mle.loglik_async(d + hd, e, obs) - mle.loglik_async(d - hd, e, obs)) / (2 * hd)
        fe = (mle.loglik_async(d, e + he, obs) - mle.loglik_async(d, e - he, obs)) / (2 * he)
        worst = max(worst, abs(gd - fd) / max(abs(fd), 1.0), abs(ge - fe) / max(abs(fe), 1e9))
    return "async log-likelihood gradient", worst < 1e-4, f"max rel err {worst:.2g}"


def _bound(seed):
    cfg = ScenarioConfig()
    rng = make_rng(seed, 93)
    lo, hi = np.array([0.2, 0.2, 0.3]), np.array([cfg.length - 0.2, cfg.width - 0.2, cfg.height - 0.3])
    t = scene_tables(cfg, lo + (hi - lo) * rng.random((50, 3)))
    worst = np.max(np.where(t.mask, C * np.abs(t.deltas), 0.0).max(axis=1) - t.d)
    return "c max|delta| <= d on traced scenes", bool(worst <= 1e-9), f"max excess {worst:.3g} m"


CHECKS = (_std_law, _collapse, _gradient, _bound)


def run_selftest(seed: int = 1):
    return [check(seed) for check in CHECKS]
