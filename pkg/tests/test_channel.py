import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from mpcrange.channel import (
    ChannelParams,
    amplitude_for,
    crlb_sigma,
    detect,
    path_amplitude,
    pdp,
    sinr,
    sinr_linear,
)
from mpcrange.constants import SPEED_OF_LIGHT as C
from mpcrange.geom import Mpc, Room, trace_paths
from mpcrange.sim import scene_tables

P = ChannelParams()


def los(length, bounces=0):
    path = ("floor",) * bounces if bounces < 2 else ("floor", "ceiling") * (bounces // 2) + ("floor",) * (bounces % 2)
    return Mpc(path, np.zeros(3), length / C, np.array([1.0, 0, 0]))


def test_params_validation():
    for bad in (dict(bandwidth=0), dict(pdp_rise=0), dict(pdp_decay=-1), dict(pdp_power=-1), dict(pulse_duration=0)):
        with pytest.raises(ValueError):
            ChannelParams(**bad)
    assert P.tp == pytest.approx(1e-9)
    assert P.with_(bandwidth=2e9).tp == pytest.approx(0.5e-9)


def test_reference_amplitude_at_one_metre():
    assert path_amplitude(los(1.0), P) == pytest.approx(P.reference_amplitude, rel=1e-12)
    # LOS at 1 m has the configured SNR against noise alone
    assert sinr(los(1.0), P) == pytest.approx(P.reference_snr, abs=1e-9)


def test_bounce_loss_and_free_space():
    a0 = path_amplitude(los(4.0, 0), P)
    a1 = path_amplitude(los(4.0, 1), P)
    assert a1 / a0 == pytest.approx(10 ** (-3 / 20), rel=1e-12)
    assert a1 / a0 == pytest.approx(0.70795, abs=1e-5)
    assert path_amplitude(los(8.0), P) == pytest.approx(path_amplitude(los(4.0), P) / 2, rel=1e-12)
    with pytest.raises(ValueError):
        path_amplitude(Mpc((), np.zeros(3), 0.0, np.zeros(3)), P)


def test_pdp_shape_and_quadrature():
    assert pdp(0.0, P) == 0.0
    assert pdp(-1e-9, P) == 0.0
    assert pdp(1e-5, P) < 1e-200
    # integrate in nanoseconds; the tail beyond 2 us is below exp(-100)
    total, _ = integrate.quad(lambda t: float(pdp(t * 1e-9, P)), 0, 2000, points=[5, 20, 100], limit=400)
    assert total * 1e-9 == pytest.approx(1.16e-6, rel=1e-8)
    # peak sits where rise and decay balance
    t = np.linspace(0, 200e-9, 20001)
    peak = t[np.argmax(pdp(t, P))]
    assert peak == pytest.approx(5e-9 * math.log(1 + 20 / 5), abs=2e-11)


def test_sinr_examples():
    flat = P.with_(pdp_power=0.0, noise_density=1.0)
    m = Mpc((), np.zeros(3), 1 / C, np.zeros(3), amplitude=1.0)
    assert sinr(m, flat) == pytest.approx(0.0, abs=1e-12)
    m2 = Mpc((), np.zeros(3), 1 / C, np.zeros(3), amplitude=2.0)
    assert sinr(m2, flat) - sinr(m, flat) == pytest.approx(6.0206, abs=1e-4)


@given(st.floats(1e-3, 1e3), st.floats(0.1e-9, 200e-9))
def test_sinr_decreasing_in_n0_and_pdp(scale, tau):
    a = 1e-4
    base = sinr_linear(a, tau, P)
    assert sinr_linear(a, tau, P.with_(noise_density=P.n0 * (1 + scale))) < base
    assert sinr_linear(a, tau, P.with_(pdp_power=P.pdp_power * (1 + scale))) < base


def test_crlb_examples():
    s = crlb_sigma(0.0, P.with_(bandwidth=1e9))
    assert s == pytest.approx(0.390e-9, abs=1e-12)
    assert C * s == pytest.approx(0.117, abs=5e-4)
    assert crlb_sigma(300.0, P) < 1e-22
    sinrs = np.linspace(-10, 40, 51)
    assert np.all(np.diff(crlb_sigma(sinrs, P)) < 0)
    assert crlb_sigma(10.0, P.with_(bandwidth=2e9)) < crlb_sigma(10.0, P)


def test_detect_thresholds(room):
    mpcs = trace_paths([1.0, 2.5, 1.2], [4.5, 2.0, 1.2], room)
    assert len(detect(mpcs, P.with_(sinr_threshold=-np.inf))) == len(mpcs)
    assert detect(mpcs, P.with_(sinr_threshold=np.inf)) == []
    assert detect([], P) == []
    counts = [len(detect(mpcs, P.with_(sinr_threshold=t))) for t in np.arange(-10, 30, 2.5)]
    assert counts == sorted(counts, reverse=True)
    for m in detect(mpcs, P):
        assert m.sinr >= P.sinr_threshold and m.sigma_tau > 0


def brute_force_count(src, obs, room, params):
    """Independent recomputation of the detection rule on traced paths."""
    mpcs = trace_paths(src, obs, room, 3, params)
    t0 = min(m.delay for m in mpcs)
    lam = C / params.carrier_frequency
    n0 = (lam / (4 * math.pi)) ** 2 / 10 ** (params.reference_snr / 10)
    r, d = params.pdp_rise, params.pdp_decay
    const = params.pdp_power / (d - r * d / (r + d))
    n = 0
    for m in mpcs:
        a2 = (lam / (4 * math.pi)) ** 2 / (C * m.delay) ** 2 * 10 ** (-0.3 * len(m.path))
        x = m.delay - t0
        s_nu = const * (1 - math.exp(-x / r)) * math.exp(-x / d) if x > 0 else 0.0
        n += 10 * math.log10(a2 / (n0 + s_nu / params.bandwidth)) >= params.sinr_threshold
    return n


def test_detected_counts_match_brute_force(room, cfg, rng):
    from conftest import interior_points

    for p in interior_points(rng, 15, margin=0.2):
        p[2] = 1.2
        for o in cfg.observers:
            got = len(detect(trace_paths(p, o, room), P))
            assert got == brute_force_count(p, o, room, P)


def test_scene_table_mask_uses_same_rule(cfg, rng):
    from conftest import interior_points

    pts = interior_points(rng, 10, margin=0.2)
    t = scene_tables(cfg, pts)
    for i, p in enumerate(pts):
        for j, o in enumerate(cfg.observers):
            det_a = {m.mpc.path for m in detect(trace_paths(cfg.node_a, o, cfg.room), P)}
            det_b = {m.mpc.path for m in detect(trace_paths(p, o, cfg.room), P)}
            assert t.k_per_observer(j)[i] == len(det_a & det_b)


def test_amplitude_vectorized():
    a = amplitude_for(np.array([1.0, 2.0]), np.array([0, 1]), P)
    assert a[0] == pytest.approx(P.reference_amplitude)
    assert a[1] == pytest.approx(P.reference_amplitude / 2 * 10 ** (-0.15))


def test_los_toa_bound_scale(cfg):
    # LOS from node A to an observer: c * sigma_A of a few centimetres (quoted as about 2.7 cm)
    a = np.asarray(cfg.node_a)
    for o in cfg.observers:
        first = detect(trace_paths(a, np.asarray(o), cfg.room, 0), cfg.channel)[0]
        assert 0.015 <= C * first.sigma_tau <= 0.035


def test_combined_sigma_distribution(cfg):
    from mpcrange.sim import room_grid

    _, _, grid = room_grid(cfg)
    t = scene_tables(cfg, grid)
    v = C * t.sigmas[t.mask]
    assert 0.05 <= np.median(v) <= 0.10
    assert np.all(v > 0)
