"""Attacker-side signal construction.

Turns a source image (or a synthetic waveform) into an amplitude envelope
with one symbol per sensor sample, resamples it to whatever rate the radio
can transmit at, and amplitude-modulates it into complex baseband IQ.

Envelopes are plain float64 arrays with values in [0, 1].
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Rec. 709 luma weights.
LUMA_WEIGHTS = (0.2126, 0.7152, 0.0722)


@dataclass(frozen=True)
class AttackSignal:
    """Amplitude envelope plus the rate it is clocked out at.

    ``envelope[i]`` is the amplitude of symbol ``i``; when the attacker has
    matched the sensor, symbol ``i`` lands on serialized pixel ``i``.
    """

    envelope: np.ndarray
    symbol_rate: float
    carrier_hz: float = 190e6

    def __post_init__(self):
        env = np.asarray(self.envelope, dtype=np.float64).ravel()
        if env.size == 0:
            raise ValueError("attack envelope is empty")
        if not np.all(np.isfinite(env)) or env.min() < 0.0 or env.max() > 1.0:
            raise ValueError("attack envelope must lie in [0, 1]")
        if self.symbol_rate <= 0:
            raise ValueError("symbol_rate must be positive")
        if self.carrier_hz <= 0:
            raise ValueError("carrier_hz must be positive")
        object.__setattr__(self, "envelope", env)

    def scaled(self, factor: float) -> "AttackSignal":
        return AttackSignal(np.clip(self.envelope * factor, 0.0, 1.0),
                            self.symbol_rate, self.carrier_hz)


def extract_luminance(image, cols_total: int, rows_total: int) -> np.ndarray:
    """Serialize an 8-bit RGB(A) image into a row-major luminance envelope.

    The image is placed at the top-left of a ``rows_total`` x ``cols_total``
    canvas; everything outside its footprint gets zero amplitude. Alpha
    scales luminance linearly, so fully transparent pixels contribute 0.
    """
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    if img.ndim != 3 or img.shape[2] not in (3, 4):
        raise ValueError(f"expected an RGB or RGBA image, got shape {img.shape}")
    h, w = img.shape[:2]
    if h < 1 or w < 1:
        raise ValueError("image must be at least 1x1")
    if h > rows_total or w > cols_total:
        raise ValueError(
            f"image {w}x{h} does not fit the {cols_total}x{rows_total} sensor"
        )
    rgb = img[..., :3].astype(np.int64)
    # Integer weights keep the sum exact: white is exactly 1.0.
    y = (2126 * rgb[..., 0] + 7152 * rgb[..., 1] + 722 * rgb[..., 2]) / 2_550_000.0
    if img.shape[2] == 4:
        y = y * (img[..., 3].astype(np.float64) / 255.0)
    canvas = np.zeros((rows_total, cols_total), dtype=np.float64)
    canvas[:h, :w] = np.clip(y, 0.0, 1.0)
    return canvas.ravel()


def required_sample_rate(cols_total: int, rows_total: int, frame_rate: float) -> float:
    """Readout rate needed to serialize every photodiode once per frame."""
    if cols_total <= 0 or rows_total <= 0 or frame_rate <= 0:
        raise ValueError("columns, rows and frame rate must be positive")
    return float(cols_total) * float(rows_total) * float(frame_rate)


def _ceil_len(n: int, ratio: float) -> int:
    # Absorb float noise so e.g. 3 * (1/3 ratio inverse) does not round up.
    x = n * ratio
    return int(math.ceil(x - 1e-9 * max(1.0, x)))


def resample(envelope, from_rate: float, to_rate: float) -> np.ndarray:
    """Linear-interpolation rate conversion.

    Output sample ``i`` sits at input position ``i * from_rate / to_rate``;
    positions past the last input sample take the last value.
    """
    if from_rate <= 0 or to_rate <= 0:
        raise ValueError("rates must be positive")
    env = np.asarray(envelope, dtype=np.float64).ravel()
    if from_rate == to_rate:
        return env.copy()
    n_out = _ceil_len(env.size, to_rate / from_rate)
    pos = np.arange(n_out, dtype=np.float64) * (from_rate / to_rate)
    return np.interp(pos, np.arange(env.size, dtype=np.float64), env)


def modulate(envelope, symbol_rate: float, carrier_hz: float, iq_rate: float,
             f_offset: float = 0.0) -> np.ndarray:
    """Complex-baseband AM: each symbol is held for ``iq_rate/symbol_rate`` samples.

    ``carrier_hz`` is applied by the radio, so it only matters here for
    validation; the envelope goes on I, optionally rotated by ``f_offset``.
    """
    if symbol_rate <= 0 or iq_rate <= 0 or carrier_hz <= 0:
        raise ValueError("rates and carrier must be positive")
    if iq_rate < symbol_rate * (1 - 1e-12):
        raise ValueError("iq_rate must be at least the symbol rate")
    if abs(f_offset) > iq_rate / 2:
        raise ValueError("f_offset exceeds the IQ Nyquist band")
    env = np.asarray(envelope, dtype=np.float64).ravel()
    n_out = _ceil_len(env.size, iq_rate / symbol_rate)
    sym = np.floor(np.arange(n_out) * (symbol_rate / iq_rate) + 1e-9).astype(np.int64)
    held = env[np.minimum(sym, env.size - 1)]
    if f_offset == 0.0:
        return held.astype(np.complex128)
    t = np.arange(n_out) / iq_rate
    return held * np.exp(2j * np.pi * f_offset * t)


def gaussian_noise_signal(n_symbols: int, seed: int, mean: float = 0.5,
                          sigma: float = 0.25) -> np.ndarray:
    """White Gaussian envelope clipped into [0, 1]."""
    if n_symbols < 1:
        raise ValueError("n_symbols must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    return np.clip(rng.normal(mean, sigma, n_symbols), 0.0, 1.0)


def sine_signal(tone_hz: float = 1e3, symbol_rate: float = 25e6) -> np.ndarray:
    """One period of a raised sine tone, ``0.5 * (1 + sin)``, for looped playback."""
    if tone_hz <= 0 or symbol_rate <= 0:
        raise ValueError("tone and symbol rate must be positive")
    n = int(round(symbol_rate / tone_hz))
    if n < 2:
        raise ValueError("tone too fast for the symbol rate")
    t = np.arange(n) / n
    return 0.5 * (1.0 + np.sin(2 * np.pi * t))


# -- IQ and envelope files ---------------------------------------------------

def write_iq(path, iq, sample_rate: float, carrier_hz: float, symbol_rate: float) -> Path:
    """Write interleaved little-endian float32 I/Q plus a JSON sidecar.

    Returns the sidecar path (``<path>.json``).
    """
    path = Path(path)
    iq = np.asarray(iq, dtype=np.complex128).ravel()
    inter = np.empty(2 * iq.size, dtype="<f4")
    inter[0::2] = iq.real
    inter[1::2] = iq.imag
    path.write_bytes(inter.tobytes())
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = {
        "sample_rate": float(sample_rate),
        "carrier_hz": float(carrier_hz),
        "symbol_rate": float(symbol_rate),
        "length": int(iq.size),
    }
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def read_iq(path):
    """Inverse of :func:`write_iq`; returns ``(iq, metadata)``."""
    path = Path(path)
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size % 2:
        raise ValueError(f"{path}: odd number of floats in IQ file")
    iq = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    if meta.get("length") != iq.size:
        raise ValueError(f"{path}: sidecar length does not match data")
    return iq, meta


def write_envelope_csv(path, envelope) -> None:
    env = np.asarray(envelope, dtype=np.float64).ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "amplitude"])
        for i, v in enumerate(env):
            w.writerow([i, repr(float(v))])


def read_envelope_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([float(r[1]) for r in rows[1:]], dtype=np.float64)
