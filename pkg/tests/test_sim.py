import math
from dataclasses import replace

import numpy as np
import pytest

from mpcrange import est, sim
from mpcrange.constants import SPEED_OF_LIGHT as C
from mpcrange.est import Method
from mpcrange.obs import make_rng, statistical_deltas


def test_estimate_batch_closed_forms(rng):
    x = statistical_deltas(1.0, (50, 7), rng)
    np.testing.assert_array_equal(sim.estimate_batch(Method.SYNC_UMVUE, x).d_hat, est.sync_umvue_batch(x))
    o = sim.estimate_batch(Method.ASYNC_MLE, x)
    d, e = est.async_mle_batch(x)
    np.testing.assert_array_equal(o.d_hat, d)
    np.testing.assert_array_equal(o.epsilon_hat, e)
    assert o.ok.all()


def test_estimate_batch_mask_and_k_lt_2(rng):
    x = statistical_deltas(1.0, (3, 4), rng)
    mask = np.array([[1, 1, 1, 0], [1, 0, 0, 0], [0, 0, 0, 0]], dtype=bool)
    s = sim.estimate_batch(Method.SYNC_MLE, x, 0.0, mask)
    assert s.d_hat[0] == pytest.approx(C * np.abs(x[0, :3]).max())
    assert s.ok.tolist() == [True, True, False]
    a = sim.estimate_batch(Method.ASYNC_UMVUE, x, 0.0, mask)
    assert a.ok.tolist() == [True, False, False]
    assert a.d_hat[0] == pytest.approx(C / 2 * np.ptp(x[0, :3]) * 4 / 2)
    n = sim.estimate_batch(Method.ASYNC_NOISY_MLE, x, 1e-10, mask)
    assert n.ok.tolist() == [True, False, False]


def test_noisy_method_on_noiseless_rows(rng):
    x = statistical_deltas(1.0, (5, 6), rng)
    o = sim.estimate_batch(Method.SYNC_NOISY_MLE, x, 0.0)
    np.testing.assert_array_equal(o.d_hat, est.sync_mle_batch(x))


def test_moments_identity(rng):
    x = 1 + 0.1 * rng.standard_normal(1000)
    m = sim.Moments.of(x, 1.0)
    assert m.rmse**2 == pytest.approx((m.mean - 1.0) ** 2 + m.std**2, rel=1e-12)
    assert sim.Moments.of(np.array([np.nan]), 1.0).n == 0


def test_run_statistical_thread_independent():
    kw = dict(d=1.0, K=6, sigma=0.2 / C, trials=300, methods=sim.ALL_METHODS, seed=4, chunk=70)
    one = sim.run_statistical(threads=1, **kw)
    many = sim.run_statistical(threads=3, **kw)
    for m in sim.ALL_METHODS:
        np.testing.assert_array_equal(one[m].d_hat, many[m].d_hat)


def test_sweep_k_umvue_rmse():
    r = sim.sweep_over_k([10], sigma_ratio=0.0, trials=10**6, methods=[Method.SYNC_UMVUE, Method.ASYNC_UMVUE])
    assert r.series(Method.SYNC_UMVUE)[0] == pytest.approx(1 / math.sqrt(120), rel=0.03)
    se = r.series(Method.SYNC_UMVUE, "rel_std")[0] / math.sqrt(10**6)
    assert abs(r.series(Method.SYNC_UMVUE, "rel_bias")[0]) < 4 * se
    assert abs(r.series(Method.ASYNC_UMVUE, "rel_bias")[0]) < 4 * r.series(Method.ASYNC_UMVUE, "rel_std")[0] / 1e3


def test_sweep_drops_async_below_two():
    r = sim.sweep_over_k([1, 4], sigma_ratio=0.0, trials=100)
    assert r.methods == [m.value for m in sim.ALL_METHODS if not m.is_async]


def test_sweep_rows_and_reproducible():
    a = sim.sweep_over_sigma([0.0, 0.5], K=6, trials=200, methods=[Method.SYNC_MLE, Method.SYNC_NOISY_MLE])
    b = sim.sweep_over_sigma([0.0, 0.5], K=6, trials=200, methods=[Method.SYNC_MLE, Method.SYNC_NOISY_MLE])
    assert list(a.rows()) == list(b.rows())
    assert len(list(a.rows())) == 4
    # errorless point: general-case MLE equals the naive one
    assert a.rel_rmse["SyncNoisyMLE"][0] == a.rel_rmse["SyncMLE"][0]


def test_sigma_sweep_regimes():
    methods = [Method.SYNC_MLE, Method.SYNC_NOISY_MLE, Method.ASYNC_MLE, Method.ASYNC_NOISY_MLE]
    r = sim.sweep_over_sigma([0.1, 0.5], K=18, trials=3000, methods=methods)
    for naive, general in (("SyncMLE", "SyncNoisyMLE"), ("AsyncMLE", "AsyncNoisyMLE")):
        lo_n, hi_n = r.rel_rmse[naive]
        lo_g, hi_g = r.rel_rmse[general]
        assert abs(lo_n / lo_g - 1) < 0.2
        assert hi_g < hi_n
    assert sum(sum(v) for v in r.unimodal_flags.values()) == 0


def test_room_grid(cfg):
    xs, ys, P = sim.room_grid(cfg)
    assert xs[0] == pytest.approx(0.1) and xs[-1] == pytest.approx(6.9)
    assert ys[-1] == pytest.approx(5.9) and len(P) == len(xs) * len(ys)
    assert np.all(cfg.room.contains(P))


def test_heatmap_kcount_pooling(cfg):
    three = sim.room_heatmap(cfg, mode="kcount")
    one = sim.room_heatmap(cfg.with_observers(1), mode="kcount")
    assert np.all(three.values >= one.values)
    assert three.values.shape == (59, 69)


def test_heatmap_b_at_a(cfg):
    h = sim.room_heatmap(cfg, Method.SYNC_UMVUE, positions=[cfg.node_a, [4.6, 2.0, 1.2]])
    assert h.values[0, 0] == pytest.approx(0.0, abs=1e-12)
    k = sim.room_heatmap(cfg, mode="kcount", positions=[cfg.node_a])
    assert k.values[0, 0] == sum(len(t) for t in _a_detections(cfg))


def _a_detections(cfg):
    from mpcrange.channel import detect
    from mpcrange.geom import trace_paths

    return [detect(trace_paths(cfg.node_a, o, cfg.room), cfg.channel) for o in cfg.observers]


def test_heatmap_median_error(cfg):
    h = sim.room_heatmap(cfg, Method.SYNC_UMVUE)
    assert np.nanmedian(h.values) < 0.10
    assert set(np.unique(h.status)) <= {"ok", "no_common", "k_lt_2", "solver_failed"}


def test_heatmap_missing_cells_are_nan(cfg):
    blind = replace(cfg, channel=cfg.channel.with_(sinr_threshold=23.0))
    h = sim.room_heatmap(blind.with_observers(1), Method.ASYNC_UMVUE, positions=[[0.2, 0.2, 1.2], [4.4, 2.0, 1.2]])
    for v, s in zip(h.values.ravel(), h.status.ravel()):
        assert (s == "ok") == np.isfinite(v)


def test_heatmap_noise_seeded(cfg):
    noisy = replace(cfg, noise=True)
    pos = [[2.0, 3.0, 1.2], [5.0, 4.0, 1.2]]
    a = sim.room_heatmap(noisy, Method.SYNC_NOISY_MLE, positions=pos)
    b = sim.room_heatmap(noisy, Method.SYNC_NOISY_MLE, positions=pos)
    np.testing.assert_array_equal(a.values, b.values)


def test_circle_positions(cfg):
    P = sim.circle_positions(cfg, 1.0)
    assert len(P) == 360
    np.testing.assert_allclose(np.linalg.norm(P - cfg.node_a, axis=1), 1.0)
    assert len(sim.circle_positions(cfg, 3.0)) < 360


def test_circle_rmse_linear(cfg):
    r = sim.circle_rmse(cfg, radii=[0.5, 1.0, 1.5, 2.0], methods=[Method.SYNC_UMVUE])
    assert 0.03 <= sim.rmse_slope(r, Method.SYNC_UMVUE) <= 0.08
    rel = r.series(Method.SYNC_UMVUE)
    # relative RMSE roughly flat in d
    assert np.ptp(rel) < 0.5 * rel.mean()


def test_circle_rmse_threads(cfg):
    noisy = replace(cfg, noise=True, trials=3)
    a = sim.circle_rmse(noisy, radii=[0.5, 1.0], methods=[Method.SYNC_NOISY_MLE])
    b = sim.circle_rmse(replace(noisy, threads=2), radii=[0.5, 1.0], methods=[Method.SYNC_NOISY_MLE])
    assert a.rmse == b.rmse
