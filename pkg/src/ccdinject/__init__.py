"""Simulated electromagnetic signal injection into interline CCD cameras."""

from .attack import AttackSignal, extract_luminance, modulate, required_sample_rate, resample
from .barcode import BarcodeSpec, checksum, decode, render_barcode
from .coupling import ChannelConfig, SusceptibilityProfile, friis_received_power, induce
from .metrics import FrameSet, delta_ssim, l2_norm, ms_ssim, protocol_mean, ssim, uqi
from .sensor import AttackScenario, Scene, SensorConfig, capture_sequence, demosaic, expose, readout

__version__ = "0.1.0"

__all__ = [
    "AttackSignal", "extract_luminance", "modulate", "required_sample_rate", "resample",
    "BarcodeSpec", "checksum", "decode", "render_barcode",
    "ChannelConfig", "SusceptibilityProfile", "friis_received_power", "induce",
    "FrameSet", "delta_ssim", "l2_norm", "ms_ssim", "protocol_mean", "ssim", "uqi",
    "AttackScenario", "Scene", "SensorConfig", "capture_sequence", "demosaic", "expose", "readout",
]
