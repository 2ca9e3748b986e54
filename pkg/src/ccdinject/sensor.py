"""Interline-transfer CCD capture simulation.

The pipeline is expose -> readout -> demosaic. All photodiodes, including the
light-shielded border, are serialized row-major from (0, 0) through a single
measurement unit; that serialization is where induced charge enters:

    digital[k] = clamp(round(alpha * (C_light[k] + C_induced[k] + n_read) + n_adc))

with n_adc (post-gain noise, in counts) off by default.

Frames are plain numpy arrays:

* charge frames: float64, shape (rows_total, cols_total)
* raw frames: uint16, shape (rows_total, cols_total)
* RGB frames: uint8 (or uint16 above 8 bits), shape (rows_eff, cols_eff, 3)
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .attack import AttackSignal, required_sample_rate
from .coupling import ChannelConfig, InducedWaveform, SusceptibilityProfile, induce

ARCHITECTURES = ("ccd_interline", "cmos")
CFA_LAYOUTS = {
    # channel index (0=R, 1=G, 2=B) at (0,0), (0,1), (1,0), (1,1)
    "RGGB": (0, 1, 1, 2),
    "BGGR": (2, 1, 1, 0),
    "GRBG": (1, 0, 2, 1),
    "GBRG": (1, 2, 0, 1),
}
MAX_GAIN_INDEX = 29


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary hashable parts (ints, floats, strings)."""
    h = hashlib.sha256(repr(tuple(parts)).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


@dataclass(frozen=True)
class SensorConfig:
    """Geometry, timing, gain/ADC, noise and RF susceptibility of one camera.

    Times are in microseconds, charge in arbitrary charge units. ``full_well``
    charge maps to ADC full scale at gain index 0.
    """

    name: str = "dfm-desk"
    architecture: str = "ccd_interline"
    cols_total: int = 328
    rows_total: int = 248
    cols_effective: int = 320
    rows_effective: int = 240
    col_offset: int = 4
    row_offset: int = 4
    frame_rate: float = 30.0
    readout_rate: float | None = None
    exposure_time: float = 10_000.0
    reference_exposure: float = 10_000.0
    gain_index: int = 0
    gain_db_per_step: float = 1.0
    adc_bits: int = 8
    full_well: float = 10_000.0
    dark_current_rate: float = 0.01
    read_noise_sigma: float = 8.0
    adc_noise_dn: float = 0.0
    shot_noise: bool = False
    cfa: str = "RGGB"
    susceptibility: SusceptibilityProfile = field(default_factory=SusceptibilityProfile)
    cmos_coupling_factor: float = 0.0
    min_exposure: float = 10.0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if min(self.cols_total, self.rows_total, self.cols_effective, self.rows_effective) < 1:
            raise ValueError("pixel counts must be positive")
        if self.col_offset < 0 or self.row_offset < 0:
            raise ValueError("border offsets must be non-negative")
        if self.col_offset + self.cols_effective > self.cols_total:
            raise ValueError("effective columns do not fit inside the total grid")
        if self.row_offset + self.rows_effective > self.rows_total:
            raise ValueError("effective rows do not fit inside the total grid")
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        if self.readout_rate is not None and not self.readout_rate > 0:
            raise ValueError("readout_rate must be positive")
        if not self.exposure_time > 0 or not self.reference_exposure > 0:
            raise ValueError("exposure times must be positive")
        if not 0 <= self.gain_index <= MAX_GAIN_INDEX or int(self.gain_index) != self.gain_index:
            raise ValueError(f"gain_index must be an integer in [0, {MAX_GAIN_INDEX}]")
        if not 1 <= self.adc_bits <= 16:
            raise ValueError("adc_bits must be in [1, 16]")
        if not self.full_well > 0:
            raise ValueError("full_well must be positive")
        if self.dark_current_rate < 0 or self.read_noise_sigma < 0 or self.adc_noise_dn < 0:
            raise ValueError("noise parameters must be non-negative")
        if self.cfa not in CFA_LAYOUTS:
            raise ValueError(f"cfa must be one of {sorted(CFA_LAYOUTS)}")
        if self.cmos_coupling_factor < 0:
            raise ValueError("cmos_coupling_factor must be non-negative")

    def replace(self, **changes) -> "SensorConfig":
        return dataclasses.replace(self, **changes)

    @property
    def sample_rate(self) -> float:
        """Readout rate in samples/s; derived from geometry when not configured."""
        if self.readout_rate is not None:
            return float(self.readout_rate)
        return required_sample_rate(self.cols_total, self.rows_total, self.frame_rate)

    @property
    def samples_per_frame(self) -> float:
        return self.sample_rate / self.frame_rate

    @property
    def n_pixels(self) -> int:
        return self.cols_total * self.rows_total

    @property
    def full_scale(self) -> int:
        return (1 << self.adc_bits) - 1

    @property
    def alpha(self) -> float:
        """Digital counts per unit charge at the configured gain."""
        gain = 10.0 ** (self.gain_index * self.gain_db_per_step / 20.0)
        return self.full_scale / self.full_well * gain

    @property
    def effective_window(self) -> tuple[slice, slice]:
        return (slice(self.row_offset, self.row_offset + self.rows_effective),
                slice(self.col_offset, self.col_offset + self.cols_effective))

    def cfa_map(self) -> np.ndarray:
        """Channel index (0=R, 1=G, 2=B) of every photodiode on the total grid."""
        tile = np.array(CFA_LAYOUTS[self.cfa], dtype=np.int8).reshape(2, 2)
        reps = (self.rows_total + 1) // 2, (self.cols_total + 1) // 2
        return np.tile(tile, reps)[: self.rows_total, : self.cols_total]


@dataclass(frozen=True)
class Scene:
    """Normalized RGB radiance over the effective window.

    Radiance 1.0 fills the well at the reference exposure under unit
    ``illuminance``; the scalar lets a scene be arbitrarily bright (sunlight)
    while the map itself stays in [0, 1].
    """

    radiance: np.ndarray
    illuminance: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.radiance, dtype=np.float64)
        if r.ndim == 2:
            r = np.repeat(r[..., None], 3, axis=2)
        if r.ndim != 3 or r.shape[2] != 3:
            raise ValueError(f"scene radiance must be HxWx3, got {r.shape}")
        if not np.all(np.isfinite(r)) or r.min() < 0 or r.max() > 1:
            raise ValueError("scene radiance must be finite and within [0, 1]")
        if not self.illuminance >= 0:
            raise ValueError("illuminance must be non-negative")
        object.__setattr__(self, "radiance", r)

    @classmethod
    def dark(cls, config: SensorConfig) -> "Scene":
        return cls(np.zeros((config.rows_effective, config.cols_effective, 3)))

    @classmethod
    def uniform(cls, config: SensorConfig, value: float, illuminance: float = 1.0) -> "Scene":
        return cls(np.full((config.rows_effective, config.cols_effective, 3), value), illuminance)


def expose(scene: Scene, config: SensorConfig, seed: int) -> np.ndarray:
    """Integrate light and dark current into signal charge (pre-gain, pre-injection)."""
    if not isinstance(scene, Scene):
        scene = Scene(scene)
    if scene.radiance.shape[:2] != (config.rows_effective, config.cols_effective):
        raise ValueError(
            f"scene is {scene.radiance.shape[1]}x{scene.radiance.shape[0]}, sensor window is "
            f"{config.cols_effective}x{config.rows_effective}"
        )
    rng = np.random.default_rng(seed)
    charge = np.zeros((config.rows_total, config.cols_total), dtype=np.float64)
    win = config.effective_window
    chan = config.cfa_map()[win]
    per_site = np.take_along_axis(scene.radiance, chan[..., None].astype(np.intp), axis=2)[..., 0]
    light = (config.full_well * scene.illuminance
             * (config.exposure_time / config.reference_exposure)) * per_site
    if config.shot_noise:
        light = rng.poisson(light).astype(np.float64)
    charge[win] = light
    dark_mean = config.dark_current_rate * config.exposure_time
    if dark_mean > 0:
        charge += rng.poisson(dark_mean, size=charge.shape)
    return charge


def amplify(charge, config: SensorConfig) -> np.ndarray:
    """Analog measurement-unit output in ADC counts, before rounding/clamping."""
    # Scale before dividing so that exact fractions of the well (e.g. half of
    # it) land on exact half counts and round as documented.
    gain = 10.0 ** (config.gain_index * config.gain_db_per_step / 20.0)
    return (np.asarray(charge, dtype=np.float64) * config.full_scale / config.full_well) * gain


def quantize(analog, config: SensorConfig) -> np.ndarray:
    """Round half up, then clamp to the ADC range."""
    return np.clip(np.floor(analog + 0.5), 0, config.full_scale).astype(np.uint16)


def readout(charge, config: SensorConfig, interference: InducedWaveform | None = None,
            seed: int = 0) -> np.ndarray:
    """Serialize, inject, amplify and digitize one frame.

    ``interference.samples[k]`` is added to serialized pixel ``k``. For CMOS
    sensors, with a measurement unit per pixel, the induced charge is
    scaled by ``cmos_coupling_factor``.
    """
    charge = np.asarray(charge, dtype=np.float64)
    shape = (config.rows_total, config.cols_total)
    if charge.shape != shape:
        raise ValueError(f"charge frame shape {charge.shape} != sensor {shape}")
    rng = np.random.default_rng(seed)
    total = charge.copy()
    if config.read_noise_sigma > 0:
        total += rng.normal(0.0, config.read_noise_sigma, size=shape)
    if interference is not None:
        rate = config.sample_rate
        if abs(interference.sample_rate - rate) > 1e-9 * rate:
            raise ValueError(
                f"interference sampled at {interference.sample_rate} Hz, sensor reads out at "
                f"{rate} Hz; resample first"
            )
        if len(interference) < config.n_pixels:
            raise ValueError("interference shorter than one frame readout")
        cm = np.asarray(interference.samples[: config.n_pixels], dtype=np.float64)
        if cm.min() < 0:
            raise ValueError("induced charge must be non-negative")
        if config.architecture == "cmos":
            cm = cm * config.cmos_coupling_factor
        total += cm.reshape(shape)
    analog = amplify(total, config)
    if config.adc_noise_dn > 0:
        # Post-amplifier noise: fixed in counts, so higher gain improves SNR.
        analog += rng.normal(0.0, config.adc_noise_dn, size=shape)
    return quantize(analog, config)


_K_GREEN = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4.0
_K_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4.0


def demosaic(raw, config: SensorConfig) -> np.ndarray:
    """Bilinear Bayer interpolation over the full grid, cropped to the effective window."""
    raw = np.asarray(raw)
    if raw.shape != (config.rows_total, config.cols_total):
        raise ValueError(f"raw frame shape {raw.shape} does not match sensor geometry")
    vals = raw.astype(np.float64)
    chan = config.cfa_map()
    out = np.empty(raw.shape + (3,), dtype=np.float64)
    for c, kern in ((0, _K_RB), (1, _K_GREEN), (2, _K_RB)):
        # 'mirror' reflects about the edge sample, which keeps Bayer parity.
        out[..., c] = ndimage.convolve(np.where(chan == c, vals, 0.0), kern, mode="mirror")
    rgb = quantize(out[config.effective_window], config)
    return rgb.astype(np.uint8) if config.adc_bits <= 8 else rgb


# -- capture sequences --------------------------------------------------------

@dataclass(frozen=True)
class AttackScenario:
    """A transmitter running on its own clock against a capture sequence.

    ``offset`` is the readout tick at which attack symbol 0 arrives; ``None``
    draws it uniformly from one frame period (no synchronization).
    ``amplitude_scale`` multiplies the induced charge (calibration sweeps).
    """

    signal: AttackSignal
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    offset: float | None = None
    loop: bool = True
    amplitude_scale: float = 1.0


@dataclass
class Capture:
    rgb: list
    raw: list
    offset_samples: float | None
    frame_starts: list


def frame_start(config: SensorConfig, frame_index: int) -> int:
    return int(math.floor(frame_index * config.samples_per_frame + 0.5))


def draw_offset(config: SensorConfig, seed: int) -> float:
    rng = np.random.default_rng(derive_seed(seed, "offset"))
    return float(rng.uniform(0.0, config.samples_per_frame))


def capture_frame(scene: Scene, config: SensorConfig, attack: AttackScenario | None,
                  frame_index: int, seed: int, offset: float | None = None):
    """One frame of a sequence: (raw, rgb). Noise depends only on (seed, frame_index)."""
    charge = expose(scene, config, derive_seed(seed, frame_index, "expose"))
    interference = None
    if attack is not None:
        interference = induce(
            attack.signal, attack.channel, config.susceptibility, config.sample_rate,
            offset_samples=offset, duration_samples=config.n_pixels,
            start_sample=frame_start(config, frame_index), loop=attack.loop,
        )
        if attack.amplitude_scale != 1.0:
            interference = dataclasses.replace(
                interference, samples=interference.samples * attack.amplitude_scale)
    raw = readout(charge, config, interference, derive_seed(seed, frame_index, "readout"))
    return raw, demosaic(raw, config)


def capture_sequence(scene: Scene, config: SensorConfig, attack: AttackScenario | None = None,
                     n_frames: int = 1, seed: int = 0, first_frame: int = 0) -> Capture:
    """Capture consecutive frames on one continuous readout clock.

    Frame ``i`` starts at readout tick ``round(i * samples_per_frame)``. A
    rate-mismatched attack therefore drifts by
    ``samples_per_frame * (1 - readout_rate / symbol_rate)`` ticks per frame.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if config.samples_per_frame < config.n_pixels:
        raise ValueError("readout rate too low to serialize a frame within one frame period")
    offset = None
    if attack is not None:
        offset = attack.offset if attack.offset is not None else draw_offset(config, seed)
    raws, rgbs, starts = [], [], []
    for i in range(first_frame, first_frame + n_frames):
        raw, rgb = capture_frame(scene, config, attack, i, seed, offset)
        raws.append(raw)
        rgbs.append(rgb)
        starts.append(frame_start(config, i))
    return Capture(rgb=rgbs, raw=raws, offset_samples=offset, frame_starts=starts)
