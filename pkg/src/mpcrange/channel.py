"""Radio-level annotations of traced paths.

Path amplitudes follow free-space loss plus a fixed loss per bounce.  A path
is detected when its SINR against receiver noise plus diffuse multipath
(double-exponential power delay profile) clears a threshold, and detected
paths get a delay-extraction error from the Cramer-Rao bound.

All powers are in one normalized energy unit in which the LOS path at 1 m
has energy ``reference_gain`` (the free-space gain ``(lambda / 4 pi)^2`` at
the carrier frequency) and the diffuse multipath integrates to
``pdp_power``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .constants import SPEED_OF_LIGHT, db_to_lin, lin_to_db
from .geom import Mpc


@dataclass(frozen=True)
class ChannelParams:
    bandwidth: float = 1e9  # Hz
    pdp_rise: float = 5e-9  # s
    pdp_decay: float = 20e-9  # s
    pdp_power: float = 1.16e-6
    sinr_threshold: float = 0.0  # dB
    reflection_loss: float = 3.0  # dB per bounce
    reference_snr: float = 25.0  # dB, LOS at 1 m against noise only
    carrier_frequency: float = 7e9  # Hz, only sets reference_gain
    noise_density: float | None = None  # overrides reference_snr when given
    pulse_duration: float | None = None  # defaults to 1 / bandwidth

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not (self.pdp_rise > 0 and self.pdp_decay > 0):
            raise ValueError("PDP time constants must be positive")
        if self.pdp_power < 0:
            raise ValueError("pdp_power must be non-negative")
        if self.pulse_duration is not None and not self.pulse_duration > 0:
            raise ValueError("pulse_duration must be positive")

    def with_(self, **changes) -> "ChannelParams":
        return replace(self, **changes)

    @property
    def reference_gain(self) -> float:
        """LOS energy at 1 m, ``|a_ref|^2``."""
        wavelength = SPEED_OF_LIGHT / self.carrier_frequency
        return (wavelength / (4 * np.pi)) ** 2

    @property
    def reference_amplitude(self) -> float:
        return float(np.sqrt(self.reference_gain))

    @property
    def n0(self) -> float:
        if self.noise_density is not None:
            return self.noise_density
        return self.reference_gain / db_to_lin(self.reference_snr)

    @property
    def tp(self) -> float:
        return self.pulse_duration if self.pulse_duration is not None else 1.0 / self.bandwidth

    @property
    def effective_bandwidth(self) -> float:
        """RMS bandwidth of a flat spectrum of width B."""
        return self.bandwidth / np.sqrt(12.0)


@dataclass(frozen=True)
class DetectedMpc:
    mpc: Mpc
    sinr: float  # dB
    sigma_tau: float  # s


def amplitude_for(length, bounces, params: ChannelParams):
    """Vectorized amplitude from path length [m] and bounce count."""
    length = np.asarray(length, dtype=float)
    with np.errstate(divide="ignore"):
        return params.reference_amplitude / length * 10.0 ** (-np.asarray(bounces) * params.reflection_loss / 20.0)


def path_amplitude(mpc: Mpc, params: ChannelParams) -> float:
    if not mpc.delay > 0:
        raise ValueError("path delay must be positive")
    return float(amplitude_for(SPEED_OF_LIGHT * mpc.delay, mpc.bounces, params))


def pdp_scale(params: ChannelParams) -> float:
    """Constant C making the double-exponential PDP integrate to ``pdp_power``."""
    rise, decay = params.pdp_rise, params.pdp_decay
    shape_integral = decay - rise * decay / (rise + decay)
    return params.pdp_power / shape_integral


def pdp(tau, params: ChannelParams):
    """Diffuse-multipath power density at excess delay ``tau`` (s, >= 0)."""
    tau = np.asarray(tau, dtype=float)
    val = pdp_scale(params) * -np.expm1(-tau / params.pdp_rise) * np.exp(-tau / params.pdp_decay)
    return np.where(tau > 0, val, 0.0)


def sinr_linear(amplitude, excess_delay, params: ChannelParams):
    amplitude = np.asarray(amplitude, dtype=float)
    return amplitude**2 / (params.n0 + params.tp * pdp(excess_delay, params))


def sinr(mpc: Mpc, params: ChannelParams, los_delay: float | None = None) -> float:
    """SINR [dB] of ``mpc``; the PDP is evaluated relative to ``los_delay``.

    Without ``los_delay`` the PDP term is taken at the path's own zero excess
    delay, i.e. noise only.
    """
    amp = mpc.amplitude if np.isfinite(mpc.amplitude) else path_amplitude(mpc, params)
    excess = 0.0 if los_delay is None else max(mpc.delay - los_delay, 0.0)
    return float(lin_to_db(sinr_linear(amp, excess, params)))


def crlb_sigma(sinr_db, params: ChannelParams):
    """Delay-extraction standard deviation [s] at the given SINR [dB]."""
    snr = db_to_lin(np.asarray(sinr_db, dtype=float))
    out = 1.0 / (2.0 * np.sqrt(2.0) * np.pi * params.effective_bandwidth * np.sqrt(snr))
    return out if out.ndim else float(out)


def detect(mpcs: Sequence[Mpc], params: ChannelParams) -> list[DetectedMpc]:
    """Keep the paths of one link whose SINR reaches the threshold.

    The diffuse PDP is anchored at the earliest arrival in ``mpcs``.
    """
    if not mpcs:
        return []
    los = min(m.delay for m in mpcs)
    out = []
    for m in mpcs:
        s = sinr(m, params, los)
        if s >= params.sinr_threshold:
            out.append(DetectedMpc(m, s, crlb_sigma(s, params)))
    return out
