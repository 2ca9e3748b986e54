import math

import numpy as np
import pytest

from ccdinject.attack import AttackSignal
from ccdinject.coupling import ChannelConfig, InducedWaveform
from ccdinject.metrics import ssim
from ccdinject.sensor import (AttackScenario, Scene, SensorConfig, capture_sequence, demosaic,
                              derive_seed, expose, readout)

QUIET = dict(dark_current_rate=0.0, read_noise_sigma=0.0)


def small(**kw):
    base = dict(cols_total=6, rows_total=6, cols_effective=6, rows_effective=6,
                col_offset=0, row_offset=0)
    base.update(kw)
    return SensorConfig(**base)


def test_expose_zero_scene_is_zero():
    cfg = SensorConfig(**QUIET)
    assert np.all(expose(Scene.dark(cfg), cfg, 1) == 0)


def test_expose_green_site_fills_well():
    cfg = SensorConfig(**QUIET)
    charge = expose(Scene.uniform(cfg, 1.0), cfg, 0)
    r, c = cfg.row_offset, cfg.col_offset + 1  # RGGB: (even, odd) is green
    assert cfg.cfa_map()[r, c] == 1
    assert charge[r, c] == cfg.full_well
    # Border photodiodes are shielded.
    assert charge[0, 0] == 0


def test_dark_current_scales_with_exposure():
    cfg = SensorConfig(dark_current_rate=0.5, read_noise_sigma=0.0)
    long = expose(Scene.dark(cfg), cfg.replace(exposure_time=33_000.0), 3)
    short = expose(Scene.dark(cfg), cfg.replace(exposure_time=10.0), 4)
    ratio = long.mean() / short.mean()
    assert long.size >= 10**4
    assert abs(ratio / 3300 - 1) < 0.05


def test_expose_rejects_wrong_scene_size():
    cfg = SensorConfig()
    with pytest.raises(ValueError):
        expose(Scene(np.zeros((10, 10, 3))), cfg, 0)


def test_readout_full_well_is_full_scale():
    cfg = SensorConfig(**QUIET)
    raw = readout(np.full((cfg.rows_total, cfg.cols_total), cfg.full_well), cfg)
    assert raw.dtype == np.uint16 and np.all(raw == 255)


def _const_wave(cfg, value):
    return InducedWaveform(np.full(cfg.n_pixels, value), cfg.sample_rate, 0.0, cfg.sample_rate)


def test_readout_half_well_injection_rounds_half_up():
    cfg = SensorConfig(**QUIET)
    zeros = np.zeros((cfg.rows_total, cfg.cols_total))
    # 255 / 2 = 127.5 rounds up.
    assert np.all(readout(zeros, cfg, _const_wave(cfg, cfg.full_well / 2)) == 128)


def test_readout_injection_never_lowers_pixels():
    cfg = SensorConfig()
    charge = expose(Scene.uniform(cfg, 0.6), cfg, 5)
    wave = InducedWaveform(np.random.default_rng(0).random(cfg.n_pixels) * 3000,
                           cfg.sample_rate, 0.0, cfg.sample_rate)
    plain = readout(charge, cfg, None, seed=9)
    hit = readout(charge, cfg, wave, seed=9)
    assert np.all(hit >= plain)
    assert np.any(hit > plain)


def test_readout_rejects_rate_mismatch_and_negative_charge():
    cfg = SensorConfig(**QUIET)
    zeros = np.zeros((cfg.rows_total, cfg.cols_total))
    with pytest.raises(ValueError):
        readout(zeros, cfg, InducedWaveform(np.zeros(cfg.n_pixels), cfg.sample_rate * 1.01, 0.0, 1.0))
    with pytest.raises(ValueError):
        readout(zeros, cfg, _const_wave(cfg, -1.0))
    with pytest.raises(ValueError):
        readout(np.zeros((3, 3)), cfg)


def test_cmos_ignores_injection_by_default():
    cfg = SensorConfig(architecture="cmos")
    charge = expose(Scene.uniform(cfg, 0.3), cfg, 2)
    a = readout(charge, cfg, None, seed=1)
    b = readout(charge, cfg, _const_wave(cfg, 5000.0), seed=1)
    np.testing.assert_array_equal(a, b)


def test_gain_doubles_every_six_db():
    cfg = SensorConfig(**QUIET)
    assert cfg.replace(gain_index=6).alpha / cfg.alpha == pytest.approx(10 ** 0.3)
    assert cfg.replace(gain_index=20).alpha / cfg.alpha == pytest.approx(10.0)


def test_bayer_layout_fractions():
    chan = SensorConfig().cfa_map()
    counts = np.bincount(chan.ravel(), minlength=3) / chan.size
    np.testing.assert_allclose(counts, [0.25, 0.5, 0.25])
    assert tuple(chan[:2, :2].ravel()) == (0, 1, 1, 2)


def test_demosaic_uniform():
    cfg = SensorConfig()
    rgb = demosaic(np.full((cfg.rows_total, cfg.cols_total), 77, np.uint16), cfg)
    assert rgb.shape == (240, 320, 3) and rgb.dtype == np.uint8
    assert np.all(rgb == 77)


def test_demosaic_single_red_pixel():
    cfg = small()
    raw = np.zeros((6, 6), np.uint16)
    raw[2, 2] = 200  # (even, even) is red in RGGB
    rgb = demosaic(raw, cfg).astype(int)
    red = rgb[..., 0]
    assert red[2, 2] == 200 and red[2, 2] == red.max()
    assert rgb[2, 2, 1] < 200 and rgb[2, 2, 2] < 200


def _bilinear_oracle(raw, chan):
    """Average of the nearest same-colour samples; indices reflect about the edge."""
    h, w = raw.shape

    def ref(i, n):
        return -i if i < 0 else (2 * (n - 1) - i if i >= n else i)

    out = np.zeros((h, w, 3))
    for i in range(h):
        for j in range(w):
            for c in range(3):
                if chan[i, j] == c:
                    out[i, j, c] = raw[i, j]
                    continue
                for ring in (((-1, 0), (1, 0), (0, -1), (0, 1)),
                             ((-1, -1), (-1, 1), (1, -1), (1, 1))):
                    vals = [raw[ref(i + di, h), ref(j + dj, w)] for di, dj in ring
                            if chan[ref(i + di, h), ref(j + dj, w)] == c]
                    if vals:
                        out[i, j, c] = sum(vals) / len(vals)
                        break
    return np.floor(out + 0.5).astype(np.uint8)


def test_demosaic_checkerboard_matches_oracle():
    cfg = small()
    yy, xx = np.mgrid[0:6, 0:6]
    raw = np.where((yy // 2 + xx // 2) % 2 == 0, 240, 16).astype(np.uint16)
    raw[1, 4] = 99
    np.testing.assert_array_equal(demosaic(raw, cfg), _bilinear_oracle(raw, cfg.cfa_map()))


def test_demosaic_random_matches_oracle():
    cfg = small(cfa="GBRG")
    raw = np.random.default_rng(4).integers(0, 256, (6, 6)).astype(np.uint16)
    np.testing.assert_array_equal(demosaic(raw, cfg), _bilinear_oracle(raw, cfg.cfa_map()))


def test_config_validation():
    with pytest.raises(ValueError):
        SensorConfig(gain_index=30)
    with pytest.raises(ValueError):
        SensorConfig(cols_effective=400)
    with pytest.raises(ValueError):
        SensorConfig(architecture="cmos-ish")
    assert SensorConfig().sample_rate == 328 * 248 * 30


def test_derive_seed_is_stable():
    assert derive_seed(1, "a", 2.5) == derive_seed(1, "a", 2.5)
    assert derive_seed(1, "a") != derive_seed(1, "b")
    assert 0 <= derive_seed("x") < 2**63


def test_unattacked_frames_differ_only_by_noise():
    cfg = SensorConfig()
    yy, xx = np.mgrid[0:240, 0:320]
    scene = Scene(np.repeat(((xx + yy) % 64 / 63.0)[..., None], 3, axis=2))
    cap = capture_sequence(scene, cfg, None, n_frames=4, seed=11)
    scores = [ssim(cap.rgb[i], cap.rgb[j]) for i in range(4) for j in range(i + 1, 4)]
    assert np.mean(scores) > 0.95


def test_capture_is_deterministic():
    cfg = SensorConfig()
    attack = AttackScenario(AttackSignal(np.linspace(0, 1, 500), 25e6), ChannelConfig())
    a = capture_sequence(Scene.dark(cfg), cfg, attack, n_frames=2, seed=3)
    b = capture_sequence(Scene.dark(cfg), cfg, attack, n_frames=2, seed=3)
    assert a.offset_samples == b.offset_samples
    for x, y in zip(a.raw + a.rgb, b.raw + b.rgb):
        np.testing.assert_array_equal(x, y)


def test_rate_matched_pattern_is_stationary():
    cfg = SensorConfig(**QUIET)
    env = np.zeros(cfg.n_pixels)
    env[5000:5400] = 1.0
    attack = AttackScenario(AttackSignal(env, cfg.sample_rate), ChannelConfig(), offset=123.0)
    cap = capture_sequence(Scene.dark(cfg), cfg, attack, n_frames=3, seed=0)
    assert cap.rgb[0].max() > 0
    for f in cap.raw[1:]:
        np.testing.assert_array_equal(f, cap.raw[0])


def test_frame_starts_follow_readout_clock():
    cfg = SensorConfig(readout_rate=2_500_000.0)
    cap = capture_sequence(Scene.dark(cfg), cfg, None, n_frames=3)
    per = cfg.samples_per_frame
    assert cap.frame_starts == [int(math.floor(i * per + 0.5)) for i in range(3)]
