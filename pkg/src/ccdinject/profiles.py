"""Versioned, calibrated default configurations.

The qualitative trends the test suite checks depend on these numbers;
change them only together with ``CALIBRATION_VERSION``.

Coupling (charge per volt-equivalent) is pinned by two desk targets at
3 cm, 10 us exposure and gain 29: a -2.1 dBm transmission must be visible
(delta-SSIM >= 0.05) while 20.1 dBm from 50 cm must not (< 0.05).
"""

from __future__ import annotations

import numpy as np

from .coupling import SusceptibilityProfile
from .experiments import BarcodeCampaign, ExperimentPlan, ProbeStream
from .sensor import AttackScenario, Scene, SensorConfig

CALIBRATION_VERSION = "1"

PEAK_COUPLING = 1.2
VISIBILITY_DELTA_SSIM = 0.05
POWER_LEVELS_DBM = tuple(float(v) for v in np.round(np.linspace(-6.8, 20.1, 10), 3))
SWEEP_GAINS = (0, 10, 20, 25, 29)
DISTANCES_CM = (3.0, 10.0, 20.0, 50.0)
# Longest exposure that still sustains 30 fps.
AUTO_EXPOSURE = 33_000.0
AUTO_GAIN = 25
# Barcode desk scene: dim warehouse lighting, post-gain noise of 1 count and
# an attack 2.5x the default induced amplitude (+8 dB, e.g. a closer antenna).
BARCODE_ILLUMINANCE = 0.01
BARCODE_ADC_NOISE_DN = 1.0
BARCODE_ATTACK_SCALE = 2.5


def dfm_desk(**changes) -> SensorConfig:
    """Scaled-down IT-CCD industrial camera, 190 MHz wide-band susceptibility."""
    cfg = SensorConfig(
        name="dfm-desk",
        susceptibility=SusceptibilityProfile(190e6, 40e6, PEAK_COUPLING, 0.0),
    )
    return cfg.replace(**changes)


def dfm_auto(**changes) -> SensorConfig:
    """The desk camera as auto exposure/gain would set it in a dark enclosure."""
    return dfm_desk(exposure_time=AUTO_EXPOSURE, gain_index=AUTO_GAIN).replace(**changes)


def cctv_desk(**changes) -> SensorConfig:
    """Analog board-camera stand-in: narrow 341 MHz resonance.

    Its exposure and gain are representative only. Peak coupling is doubled
    so that its on-resonance distortion is comparable to the desk camera's
    despite the higher path loss at 341 MHz.
    """
    return dfm_auto(
        name="cctv-desk",
        susceptibility=SusceptibilityProfile(341e6, 4e6, 2 * PEAK_COUPLING, 0.0),
    ).replace(**changes)


def cmos_desk(**changes) -> SensorConfig:
    """Same geometry with one measurement unit per pixel: no serialized injection."""
    return dfm_desk(name="cmos-desk", architecture="cmos", cmos_coupling_factor=0.0).replace(**changes)


def noise_floor_scenario(**changes) -> SensorConfig:
    """Hot, noisy sensor whose floor alone saturates some pixels at gain 29."""
    return dfm_desk(name="dfm-noisy", exposure_time=10.0, dark_current_rate=30.0,
                    read_noise_sigma=40.0).replace(**changes)


def barcode_sensor(**changes) -> SensorConfig:
    """Shot noise plus post-gain noise, so low gain really underexposes."""
    return dfm_desk(name="dfm-barcode", shot_noise=True,
                    adc_noise_dn=BARCODE_ADC_NOISE_DN).replace(**changes)


def dfm_full(**changes) -> SensorConfig:
    """Full-resolution 1280x960 camera with its 36 MHz readout stored directly.

    Border size and frame rate are illustrative: they only have to fit one
    readout of the total grid into a frame period. Too large for routine runs.
    """
    return SensorConfig(
        name="dfm-full", cols_total=1296, rows_total=966, cols_effective=1280,
        rows_effective=960, col_offset=8, row_offset=3, frame_rate=28.0,
        readout_rate=36e6,
        susceptibility=SusceptibilityProfile(190e6, 40e6, PEAK_COUPLING, 0.0),
    ).replace(**changes)


SENSOR_PROFILES = {
    "dfm-desk": dfm_desk,
    "dfm-auto": dfm_auto,
    "cctv-desk": cctv_desk,
    "cmos-desk": cmos_desk,
    "dfm-noisy": noise_floor_scenario,
    "dfm-barcode": barcode_sensor,
    "dfm-full": dfm_full,
}


def frequency_plan(sensor: SensorConfig | None = None, **changes) -> ExperimentPlan:
    """50-500 MHz in 5 MHz steps, 1 kHz sine envelope, 3 + 7 frames per point."""
    kw = dict(axis="frequency", start=50.0, stop=500.0, step=5.0,
              sensor=sensor or dfm_auto(), source="sine")
    kw.update(changes)
    return ExperimentPlan(**kw)


def power_plan(sensor: SensorConfig | None = None, **changes) -> ExperimentPlan:
    """-6.8 to 20.1 dBm at 3 cm, minimum exposure, one series per gain."""
    kw = dict(axis="power", values=POWER_LEVELS_DBM, sensor=sensor or dfm_desk(exposure_time=10.0),
              gains=SWEEP_GAINS, source="sine")
    kw.update(changes)
    return ExperimentPlan(**kw)


def distance_plan(sensor: SensorConfig | None = None, **changes) -> ExperimentPlan:
    """3/10/20/50 cm at full power, minimum exposure, one series per gain."""
    kw = dict(axis="distance", values=DISTANCES_CM, sensor=sensor or dfm_desk(exposure_time=10.0),
              gains=SWEEP_GAINS, source="sine")
    kw.update(changes)
    return ExperimentPlan(**kw)


def barcode_campaign_default(**changes) -> BarcodeCampaign:
    """Warehouse-lit scene; exposure 20-33 ms, gain 0-9 dB; full-depth noise attack."""
    kw = dict(sensor=barcode_sensor(), illuminance=BARCODE_ILLUMINANCE,
              amplitude_scale=BARCODE_ATTACK_SCALE)
    kw.update(changes)
    return BarcodeCampaign(**kw)


def detector_stream(attack: AttackScenario | None = None, scene: Scene | None = None,
                    **changes) -> ProbeStream:
    kw = dict(sensor=dfm_desk(), attack=attack, scene=scene)
    kw.update(changes)
    return ProbeStream(**kw)


BRIGHT_ILLUMINANCE = 500.0


def bright_scene(config: SensorConfig, value: float = 0.5) -> Scene:
    """Sunlit scene: even the minimum exposure collects visible charge."""
    return Scene.uniform(config, value, BRIGHT_ILLUMINANCE)
