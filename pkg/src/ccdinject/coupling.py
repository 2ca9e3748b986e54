"""RF channel and sensor susceptibility.

Free-space link budget (Friis) gives the received power; a Lorentzian
resonance turns that into induced charge per unit of envelope amplitude.
Friis is applied even at centimetre range, where it is only a rough
estimate (near field).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ChannelConfig:
    tx_power_dbm: float = 20.1
    tx_gain_dbi: float = 3.0
    rx_gain_dbi: float = 0.0
    distance_m: float = 0.03
    carrier_hz: float = 190e6

    def __post_init__(self):
        if not self.distance_m > 0:
            raise ValueError("distance_m must be positive")
        if not self.carrier_hz > 0:
            raise ValueError("carrier_hz must be positive")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass(frozen=True)
class SusceptibilityProfile:
    """Frequency response of the sensor's charge pathway to incident RF.

    Coupling is in charge units per volt-equivalent of received field.
    """

    resonant_hz: float = 190e6
    bandwidth_hz: float = 40e6
    peak_coupling: float = 1.2
    floor_coupling: float = 0.0

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise ValueError("bandwidth_hz must be positive")
        if not (self.peak_coupling >= self.floor_coupling >= 0):
            raise ValueError("need peak_coupling >= floor_coupling >= 0")


@dataclass(frozen=True)
class InducedWaveform:
    """Malicious charge per readout sample, already on the sensor clock.

    ``samples[i]`` is the charge added at readout tick ``start_sample + i``.
    """

    samples: np.ndarray
    sample_rate: float
    offset_samples: float
    source_rate: float
    start_sample: int = 0

    def __len__(self):
        return len(self.samples)


def friis_received_power(channel: ChannelConfig) -> float:
    """Received power in dBm."""
    if channel.distance_m <= 0:
        raise ValueError("distance_m must be positive")
    path = 20.0 * math.log10(channel.wavelength_m / (4.0 * math.pi * channel.distance_m))
    return channel.tx_power_dbm + channel.tx_gain_dbi + channel.rx_gain_dbi + path


def volts_equiv(power_dbm: float) -> float:
    """Linear field amplitude relative to 0 dBm (amplitude goes as sqrt(power))."""
    return 10.0 ** (power_dbm / 20.0)


def coupling_factor(carrier_hz, profile: SusceptibilityProfile):
    x = 2.0 * (np.asarray(carrier_hz, dtype=np.float64) - profile.resonant_hz) / profile.bandwidth_hz
    out = profile.floor_coupling + (profile.peak_coupling - profile.floor_coupling) / (1.0 + x * x)
    return float(out) if np.ndim(out) == 0 else out


def injection_amplitude(channel: ChannelConfig, profile: SusceptibilityProfile) -> float:
    """Charge induced per readout sample at envelope amplitude 1.0."""
    return coupling_factor(channel.carrier_hz, profile) * volts_equiv(friis_received_power(channel))


def induce(attack, channel: ChannelConfig, profile: SusceptibilityProfile,
           readout_rate: float, offset_samples: float, duration_samples: int,
           start_sample: int = 0, loop: bool = False) -> InducedWaveform:
    """Put an attack envelope onto the sensor's readout clock.

    The attack's symbol 0 starts at readout tick ``offset_samples`` (may be
    fractional); tick ``k`` sees envelope position
    ``(k - offset) * symbol_rate / readout_rate``, linearly interpolated.
    With ``loop`` the envelope repeats forever (how an SDR replays a file);
    otherwise ticks outside the single pass get no charge.
    """
    if duration_samples <= 0:
        raise ValueError("duration_samples must be positive")
    if readout_rate <= 0:
        raise ValueError("readout_rate must be positive")
    env = attack.envelope
    if env.min() < 0.0 or env.max() > 1.0:
        raise ValueError("attack envelope must lie in [0, 1]")
    k = np.arange(start_sample, start_sample + duration_samples, dtype=np.float64)
    if attack.symbol_rate == readout_rate:
        pos = k - offset_samples
    else:
        pos = (k - offset_samples) * (attack.symbol_rate / readout_rate)
    xp = np.arange(env.size, dtype=np.float64)
    if loop:
        if env.size == 1:
            shaped = np.full(k.shape, env[0])
        else:
            shaped = np.interp(pos, xp, env, period=env.size)
    else:
        shaped = np.interp(pos, xp, env, left=0.0, right=0.0)
    amp = injection_amplitude(channel, profile)
    return InducedWaveform(
        samples=amp * shaped,
        sample_rate=float(readout_rate),
        offset_samples=float(offset_samples),
        source_rate=float(attack.symbol_rate),
        start_sample=int(start_sample),
    )
