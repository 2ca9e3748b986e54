"""End-to-end experiment campaigns on the simulated camera.

Every campaign is a pure function of its plan and master seed. Sweep points
get independent seeds derived from ``(master_seed, axis, value, gain)``,
so points can run concurrently; rows are always returned sorted.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import barcode as bc
from .attack import AttackSignal, extract_luminance, gaussian_noise_signal, sine_signal
from .coupling import ChannelConfig, friis_received_power
from .metrics import FrameSet, evaluate_frameset, luma
from .sensor import (AttackScenario, Scene, SensorConfig, capture_frame, capture_sequence,
                     derive_seed, draw_offset)

AXES = ("frequency", "power", "distance", "gain", "exposure")
SOURCES = ("sine", "gaussian-noise", "image")
THREADS_ENV = "CCDINJECT_THREADS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _pmap(fn, items, on_result=None):
    items = list(items)
    n = worker_count()
    if n == 1:
        out = []
        for it in items:
            r = fn(it)
            if on_result:
                on_result(r)
            out.append(r)
        return out
    with ThreadPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(fn, it) for it in items]
        out = []
        for f in futures:
            r = f.result()
            if on_result:
                on_result(r)
            out.append(r)
        return out


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentPlan:
    axis: str
    start: float | None = None
    stop: float | None = None
    step: float | None = None
    values: tuple | None = None
    sensor: SensorConfig = field(default_factory=SensorConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    gains: tuple | None = None
    legitimate: int = 3
    malicious: int = 7
    source: str = "sine"
    sine_hz: float = 1e3
    symbol_rate: float | None = None
    image: np.ndarray | None = None
    master_seed: int = 0
    scene: Scene | None = None
    metrics: tuple = ("ssim", "ms_ssim", "l2", "uqi")

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}")
        if self.source == "image" and self.image is None:
            raise ValueError("image source needs an image")
        if self.legitimate < 1 or self.malicious < 1:
            raise ValueError("frame counts must be >= 1")
        if self.values is None:
            if None in (self.start, self.stop, self.step):
                raise ValueError("give either values or start/stop/step")
            if not self.step > 0:
                raise ValueError("step must be positive")
            if self.stop < self.start:
                raise ValueError("start must not exceed stop")
        elif len(self.values) == 0:
            raise ValueError("values must not be empty")

    def axis_values(self) -> list[float]:
        if self.values is not None:
            return [float(v) for v in self.values]
        n = int(np.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        # Rounded so float accumulation never leaks into CSVs or seeds.
        return [round(self.start + i * self.step, 9) for i in range(n)]

    def gain_list(self) -> list[int]:
        return [int(g) for g in self.gains] if self.gains else [self.sensor.gain_index]


@dataclass(frozen=True)
class SweepResult:
    axis: str
    swept_value: float
    gain_index: int
    received_power_dbm: float
    ssim: float
    ms_ssim: float
    l2: float
    uqi: float
    ssim_legitimate: float
    delta_ssim: float


CSV_FIELDS = [f.name for f in dataclasses.fields(SweepResult)]
CSV_FOOTER = "# end-of-run"


def build_attack_signal(plan: ExperimentPlan, config: SensorConfig, carrier_hz: float,
                        seed: int) -> AttackSignal:
    if plan.source == "sine":
        rate = plan.symbol_rate or 25e6
        return AttackSignal(sine_signal(plan.sine_hz, rate), rate, carrier_hz)
    rate = plan.symbol_rate or config.sample_rate
    if plan.source == "gaussian-noise":
        return AttackSignal(gaussian_noise_signal(config.n_pixels, derive_seed(seed, "noise")),
                            rate, carrier_hz)
    env = extract_luminance(plan.image, config.cols_total, config.rows_total)
    return AttackSignal(env, rate, carrier_hz)


def point_setup(plan: ExperimentPlan, value: float, gain: int):
    cfg = plan.sensor.replace(gain_index=gain)
    ch = plan.channel
    if plan.axis == "frequency":
        ch = dataclasses.replace(ch, carrier_hz=value * 1e6)
    elif plan.axis == "power":
        ch = dataclasses.replace(ch, tx_power_dbm=value)
    elif plan.axis == "distance":
        ch = dataclasses.replace(ch, distance_m=value / 100.0)
    elif plan.axis == "gain":
        cfg = cfg.replace(gain_index=int(value))
    elif plan.axis == "exposure":
        cfg = cfg.replace(exposure_time=value)
    return cfg, ch


def run_point(plan: ExperimentPlan, value: float, gain: int) -> SweepResult:
    """Capture legitimate then malicious frames at one sweep point and score them.

    Frequency values are in MHz, distances in cm, power in dBm.
    """
    cfg, ch = point_setup(plan, value, gain)
    seed = derive_seed(plan.master_seed, plan.axis, float(value), int(gain))
    scene = plan.scene or Scene.dark(cfg)
    attack = AttackScenario(build_attack_signal(plan, cfg, ch.carrier_hz, seed), ch)
    legit = capture_sequence(scene, cfg, None, plan.legitimate, seed)
    mal = capture_sequence(scene, cfg, attack, plan.malicious, seed, first_frame=plan.legitimate)
    m = evaluate_frameset(FrameSet(legit.rgb, mal.rgb), cfg.full_scale, plan.metrics)
    nan = float("nan")
    return SweepResult(
        axis=plan.axis, swept_value=float(value), gain_index=int(cfg.gain_index),
        received_power_dbm=friis_received_power(ch),
        ssim=m.get("ssim", nan), ms_ssim=m.get("ms_ssim", nan), l2=m.get("l2", nan),
        uqi=m.get("uqi", nan), ssim_legitimate=m.get("ssim_legitimate", nan),
        delta_ssim=m.get("delta_ssim", nan),
    )


def run_sweep(plan: ExperimentPlan, on_row=None) -> list[SweepResult]:
    points = [(v, g) for g in plan.gain_list() for v in plan.axis_values()]
    rows = _pmap(lambda p: run_point(plan, *p), points, on_row)
    return sorted(rows, key=lambda r: (r.swept_value, r.gain_index))


def _require_axis(plan, axis):
    if plan.axis != axis:
        raise ValueError(f"plan axis is {plan.axis!r}, expected {axis!r}")


def frequency_sweep(plan: ExperimentPlan, on_row=None) -> list[SweepResult]:
    _require_axis(plan, "frequency")
    return run_sweep(plan, on_row)


def power_sweep(plan: ExperimentPlan, on_row=None) -> list[SweepResult]:
    _require_axis(plan, "power")
    return run_sweep(plan, on_row)


def distance_sweep(plan: ExperimentPlan, on_row=None) -> list[SweepResult]:
    _require_axis(plan, "distance")
    return run_sweep(plan, on_row)


def format_row(row: SweepResult) -> list[str]:
    out = []
    for name in CSV_FIELDS:
        v = getattr(row, name)
        out.append(f"{v:.9g}" if isinstance(v, float) else str(v))
    return out


def sweep_csv(rows, complete: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow(format_row(r))
    if complete:
        buf.write(f"{CSV_FOOTER},{len(rows)}\n")
    return buf.getvalue()


def read_sweep_csv(text: str) -> tuple[list[dict], bool]:
    """Parse a sweep CSV; the flag says whether the end-of-run footer is present."""
    lines = text.splitlines()
    complete = bool(lines) and lines[-1].startswith(CSV_FOOTER)
    body = lines[:-1] if complete else lines
    rows = []
    for rec in csv.DictReader(body):
        rows.append({k: (rec[k] if k == "axis" else
                         int(rec[k]) if k == "gain_index" else float(rec[k])) for k in rec})
    return rows, complete


# -- fine-grained pattern injection ----------------------------------------------

def normalized_correlation(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    return float(np.dot(a, b) / den) if den > 0 else 0.0


def circular_xcorr(reference, signal) -> np.ndarray:
    """Normalized circular cross-correlation; entry ``t`` scores ``signal ~ roll(reference, t)``."""
    r = np.asarray(reference, dtype=np.float64).ravel()
    s = np.asarray(signal, dtype=np.float64).ravel()
    if r.size != s.size:
        raise ValueError("sequences must have equal length")
    r = r - r.mean()
    s = s - s.mean()
    den = np.sqrt(np.dot(r, r) * np.dot(s, s))
    if den == 0:
        return np.zeros(r.size)
    c = np.fft.irfft(np.conj(np.fft.rfft(r)) * np.fft.rfft(s), n=r.size)
    return c / den


def register(reference, signal) -> tuple[int, float]:
    """Circular lag (in samples) of ``signal`` relative to ``reference`` and the peak NCC."""
    c = circular_xcorr(reference, signal)
    lag = int(np.argmax(c))
    return lag, float(c[lag])


def wrap_lag(lag: int, n: int) -> int:
    return lag - n if lag > n // 2 else lag


def predicted_drift(samples_per_frame: float, readout_rate: float, symbol_rate: float) -> float:
    """Samples by which a rate-mismatched pattern moves earlier in each successive frame."""
    return samples_per_frame * (1.0 - readout_rate / symbol_rate)


def measure_drift(raw_diffs) -> list[int]:
    """Per-frame pattern advance between consecutive serialized difference frames."""
    out = []
    for prev, cur in zip(raw_diffs, raw_diffs[1:]):
        lag, _ = register(cur, prev)
        out.append(wrap_lag(lag, np.size(prev)))
    return out


@dataclass(frozen=True)
class DriftReport:
    epsilon: float
    predicted: float
    measured: tuple


def rate_mismatch_drift(sensor: SensorConfig, epsilon: float, n_frames: int = 4,
                        seed: int = 0, channel: ChannelConfig | None = None) -> DriftReport:
    """Inject frame-sized noise at ``(1 + epsilon)`` times the readout rate and track it.

    Sensor noise is switched off so frame differences hold only the injection.
    """
    cfg = sensor.replace(read_noise_sigma=0.0, dark_current_rate=0.0, shot_noise=False)
    rate = cfg.sample_rate * (1.0 + epsilon)
    env = gaussian_noise_signal(cfg.n_pixels, derive_seed(seed, "drift-noise"))
    attack = AttackScenario(AttackSignal(env, rate), channel or ChannelConfig())
    scene = Scene.dark(cfg)
    on = capture_sequence(scene, cfg, attack, n_frames, seed)
    off = capture_sequence(scene, cfg, None, n_frames, seed)
    diffs = [(a.astype(np.float64) - b).ravel() for a, b in zip(on.raw, off.raw)]
    return DriftReport(float(epsilon), predicted_drift(cfg.samples_per_frame, cfg.sample_rate, rate),
                       tuple(measure_drift(diffs)))


@dataclass
class InjectionReport:
    attacked: list
    unattacked: list
    offset_samples: float
    ncc_zero_lag: list
    lag_samples: list
    xy_offset: list
    peak_ncc: list
    drift_samples: list


def pattern_injection(image, plan: ExperimentPlan, n_frames: int = 2,
                      offset: float | None = None, noise_free: bool = False) -> InjectionReport:
    """Inject ``image`` into a capture and register where it landed.

    ``offset=0`` mimics a synchronized (debug) attacker. Attacked and
    unattacked captures share a seed, so their difference isolates the
    injected charge.
    """
    cfg = plan.sensor
    if noise_free:
        cfg = cfg.replace(read_noise_sigma=0.0, dark_current_rate=0.0)
    env = extract_luminance(image, cfg.cols_total, cfg.rows_total)
    rate = plan.symbol_rate or cfg.sample_rate
    attack = AttackScenario(AttackSignal(env, rate, plan.channel.carrier_hz), plan.channel,
                            offset=offset)
    seed = derive_seed(plan.master_seed, "inject")
    scene = plan.scene or Scene.dark(cfg)
    on = capture_sequence(scene, cfg, attack, n_frames, seed)
    off = capture_sequence(scene, cfg, None, n_frames, seed)
    pattern = env.reshape(cfg.rows_total, cfg.cols_total)[cfg.effective_window]
    ncc0, lags, xy, peaks, diffs = [], [], [], [], []
    for a_rgb, u_rgb, a_raw, u_raw in zip(on.rgb, off.rgb, on.raw, off.raw):
        ncc0.append(normalized_correlation(pattern, luma(a_rgb) - luma(u_rgb)))
        d = a_raw.astype(np.float64) - u_raw.astype(np.float64)
        diffs.append(d.ravel())
        lag, peak = register(env, d)
        lags.append(lag)
        xy.append((lag % cfg.cols_total, lag // cfg.cols_total))
        peaks.append(peak)
    return InjectionReport(on.rgb, off.rgb, float(on.offset_samples), ncc0, lags, xy, peaks,
                           measure_drift(diffs))


def glyph_image(width: int = 200, height: int = 120) -> np.ndarray:
    """A synthetic RGBA test glyph: a ring, a bar and a block letter 'T' on transparency."""
    img = np.zeros((height, width, 4), dtype=np.uint8)
    yy, xx = np.mgrid[0:height, 0:width]
    cy, cx, r = height / 2, height / 2, height * 0.4
    ring = np.abs(np.hypot(yy - cy, xx - cx) - r) < height * 0.08
    bar = (xx > width * 0.55) & (xx < width * 0.62) & (yy > height * 0.1) & (yy < height * 0.9)
    t_top = (xx > width * 0.68) & (xx < width * 0.95) & (yy > height * 0.1) & (yy < height * 0.22)
    t_stem = (xx > width * 0.78) & (xx < width * 0.85) & (yy > height * 0.1) & (yy < height * 0.9)
    img[ring] = (255, 255, 255, 255)
    img[bar] = (255, 200, 60, 255)
    img[t_top | t_stem] = (60, 160, 255, 255)
    return img


# -- barcode campaign --------------------------------------------------------------

BARCODE_CODES = ("5901234123457", "4006381333931")


def barcode_scene(config: SensorConfig, codes=BARCODE_CODES, module_px: int = 2,
                  illuminance: float = 0.01, bar: float = 0.05,
                  background: float = 0.9) -> Scene:
    """Two EAN-13 symbols stacked on a lit cardboard-like background."""
    h, w = config.rows_effective, config.cols_effective
    canvas = np.full((h, w), background)
    slot = h // len(codes)
    for k, code in enumerate(codes):
        spec = bc.BarcodeSpec(code, module_px=module_px, height_px=int(slot * 0.7))
        top = k * slot + (slot - spec.height_px) // 2
        left = (w - spec.width_px) // 2
        canvas = bc.render_barcode(spec, canvas, top, left, bar=bar, background=background)
    return Scene(canvas, illuminance)


@dataclass(frozen=True)
class BarcodeCampaign:
    sensor: SensorConfig = field(default_factory=lambda: SensorConfig(shot_noise=True))
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    exposures: tuple = (20_000.0, 26_500.0, 33_000.0)
    gains: tuple = (0, 4, 9)
    frames: int = 100
    illuminance: float = 0.01
    amplitude_scale: float = 1.0
    noise_sigma: float = 1.0
    master_seed: int = 0
    codes: tuple = BARCODE_CODES


@dataclass(frozen=True)
class BarcodeRow:
    exposure_time: float
    gain_index: int
    attack_on: bool
    frames: int
    detected: int
    detection_rate: float
    per_code: tuple
    decoded: tuple = ()  # per frame: the codes read, in frame order


def _barcode_frame(camp: BarcodeCampaign, cfg: SensorConfig, scene: Scene, attack_on: bool,
                   seed: int, amplitude_scale: float):
    attack = None
    offset = None
    if attack_on:
        env = gaussian_noise_signal(cfg.n_pixels, derive_seed(seed, "noise"),
                                    sigma=camp.noise_sigma)
        sig = AttackSignal(env, cfg.sample_rate, camp.channel.carrier_hz)
        attack = AttackScenario(sig, camp.channel, amplitude_scale=amplitude_scale)
        offset = draw_offset(cfg, seed)
    _, rgb = capture_frame(scene, cfg, attack, 0, seed, offset)
    return bc.decode(rgb)


def barcode_detection(camp: BarcodeCampaign, exposure: float, gain: int, attack_on: bool,
                      amplitude_scale: float | None = None) -> BarcodeRow:
    """Decode ``camp.frames`` independent frames at one (exposure, gain) setting.

    A frame counts as detected when at least one symbol decodes.
    """
    cfg = camp.sensor.replace(exposure_time=float(exposure), gain_index=int(gain))
    scene = barcode_scene(cfg, camp.codes, illuminance=camp.illuminance)
    scale = camp.amplitude_scale if amplitude_scale is None else amplitude_scale
    hits = {c: 0 for c in camp.codes}
    detected = 0
    decoded = []
    for i in range(camp.frames):
        # Attack state depends on the attack flag; sensor noise does not.
        seed = derive_seed(camp.master_seed, "barcode", float(exposure), int(gain), i)
        codes = _barcode_frame(camp, cfg, scene, attack_on, seed, scale)
        detected += bool(codes)
        decoded.append(tuple(codes))
        for c in codes:
            if c in hits:
                hits[c] += 1
    return BarcodeRow(float(exposure), int(gain), attack_on, camp.frames, detected,
                      detected / camp.frames, tuple(hits[c] for c in camp.codes),
                      tuple(decoded))


def barcode_campaign(camp: BarcodeCampaign, on_row=None) -> list[BarcodeRow]:
    points = [(e, g, a) for e in camp.exposures for g in camp.gains for a in (False, True)]
    rows = _pmap(lambda p: barcode_detection(camp, *p), points, on_row)
    return sorted(rows, key=lambda r: (r.exposure_time, r.gain_index, r.attack_on))


def barcode_csv(rows, codes=BARCODE_CODES) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["exposure_time", "gain_index", "attack_on", "frames", "detected",
                "detection_rate"] + [f"decoded_{c}" for c in codes])
    for r in rows:
        w.writerow([f"{r.exposure_time:.9g}", r.gain_index, int(r.attack_on), r.frames,
                    r.detected, f"{r.detection_rate:.6f}"] + list(r.per_code))
    buf.write(f"{CSV_FOOTER},{len(rows)}\n")
    return buf.getvalue()


def barcode_frames_csv(rows) -> str:
    """One line per decoded frame; ``digits`` lists the codes read, ';'-separated."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["exposure_time", "gain_index", "frame_index", "attack_on", "n_decoded", "digits"])
    n = 0
    for r in rows:
        for i, codes in enumerate(r.decoded):
            w.writerow([f"{r.exposure_time:.9g}", r.gain_index, i, int(r.attack_on), len(codes),
                        ";".join(codes)])
            n += 1
    buf.write(f"{CSV_FOOTER},{n}\n")
    return buf.getvalue()


# -- exposure-drop detector ----------------------------------------------------------

@dataclass(frozen=True)
class ProbeStream:
    """A camera stream in which random frames are captured at minimum exposure."""

    sensor: SensorConfig = field(default_factory=SensorConfig)
    scene: Scene | None = None
    attack: AttackScenario | None = None
    n_frames: int = 2000
    probe_probability: float = 0.1
    seed: int = 0

    def probe_schedule(self) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(self.seed, "probes"))
        return np.flatnonzero(rng.random(self.n_frames) < self.probe_probability)


def probe_levels(stream: ProbeStream) -> tuple[np.ndarray, np.ndarray]:
    """Frame indices of the probes and each probe frame's mean luma (ADC counts)."""
    cfg = stream.sensor.replace(exposure_time=stream.sensor.min_exposure)
    scene = stream.scene or Scene.dark(cfg)
    idx = stream.probe_schedule()
    offset = None
    if stream.attack is not None:
        offset = (stream.attack.offset if stream.attack.offset is not None
                  else draw_offset(cfg, stream.seed))
    means = _pmap(lambda i: float(np.mean(luma(
        capture_frame(scene, cfg, stream.attack, int(i), stream.seed, offset)[1]))), idx)
    return idx, np.asarray(means, dtype=np.float64)


def calibrate_threshold(stream: ProbeStream, k_sigma: float = 6.0, floor: float = 0.5) -> float:
    """Detection threshold from attack-free probes: mean + k*std, at least mean + ``floor``."""
    quiet = dataclasses.replace(stream, attack=None, seed=derive_seed(stream.seed, "calibration"))
    _, m = probe_levels(quiet)
    if m.size == 0:
        raise ValueError("calibration stream produced no probe frames")
    return float(m.mean() + max(k_sigma * m.std(), floor))


@dataclass(frozen=True)
class DetectorReport:
    threshold: float
    probe_frames: tuple
    probe_means: tuple
    flags: tuple
    attack_on: bool

    @property
    def flag_rate(self) -> float:
        return float(np.mean(self.flags)) if self.flags else 0.0

    @property
    def true_positive_rate(self) -> float | None:
        return self.flag_rate if self.attack_on else None

    @property
    def false_positive_rate(self) -> float | None:
        return None if self.attack_on else self.flag_rate


def exposure_drop_detector(stream: ProbeStream, threshold: float) -> DetectorReport:
    """Flag each probe frame whose mean luma exceeds ``threshold``.

    With the exposure at its minimum almost no light charge accumulates, but
    induced charge does not depend on exposure, so injection shows up.
    """
    idx, means = probe_levels(stream)
    flags = tuple(bool(m > threshold) for m in means)
    return DetectorReport(float(threshold), tuple(int(i) for i in idx),
                          tuple(float(m) for m in means), flags, stream.attack is not None)


def detector_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "attack_on", "threshold", "probes", "flagged",
                "true_positive_rate", "false_positive_rate"])
    for name, r in reports:
        tp = "" if r.true_positive_rate is None else f"{r.true_positive_rate:.6f}"
        fp = "" if r.false_positive_rate is None else f"{r.false_positive_rate:.6f}"
        w.writerow([name, int(r.attack_on), f"{r.threshold:.6f}", len(r.flags), sum(r.flags),
                    tp, fp])
    buf.write(f"{CSV_FOOTER},{len(reports)}\n")
    return buf.getvalue()
