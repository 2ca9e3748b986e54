"""Image-quality metrics and the legitimate/malicious frame comparison protocol.

Every metric first reduces an RGB frame to Rec. 709 luma (2-D inputs are
taken as luma already), so each comparison yields one scalar.

SSIM uses the usual 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
averaged over fully-contained ("valid") windows.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .attack import LUMA_WEIGHTS

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WIN = 11
SSIM_SIGMA = 1.5
UQI_WIN = 8


def luma(frame) -> np.ndarray:
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 2:
        return f
    if f.ndim == 3 and f.shape[2] == 3:
        return LUMA_WEIGHTS[0] * f[..., 0] + LUMA_WEIGHTS[1] * f[..., 1] + LUMA_WEIGHTS[2] * f[..., 2]
    raise ValueError(f"expected HxW or HxWx3 frame, got {f.shape}")


def _pair(a, b):
    x, y = luma(a), luma(b)
    if x.shape != y.shape:
        raise ValueError(f"frame shapes differ: {x.shape} vs {y.shape}")
    return x, y


def _gaussian_taps(size=SSIM_WIN, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


_GAUSS = _gaussian_taps()


def _window_mean(img, taps):
    # Separable filter, then keep only windows that lie fully inside the image.
    out = ndimage.correlate1d(img, taps, axis=0, mode="constant")
    out = ndimage.correlate1d(out, taps, axis=1, mode="constant")
    h = len(taps) // 2
    return out[h:img.shape[0] - h, h:img.shape[1] - h]


def _box_mean(img, n):
    # Mean over every fully-contained n x n box (integral image).
    c = np.cumsum(np.cumsum(np.pad(img, ((1, 0), (1, 0))), axis=0), axis=1)
    s = c[n:, n:] - c[:-n, n:] - c[n:, :-n] + c[:-n, :-n]
    return s / (n * n)


class _Prepared:
    """Per-frame window statistics, reusable across every pair a frame is in."""

    def __init__(self, x, scales=1):
        self.levels = []
        for j in range(scales):
            if j:
                x = _downsample(x)
            mu = _window_mean(x, _GAUSS)
            var = _window_mean(x * x, _GAUSS) - mu * mu
            self.levels.append((x, mu, var))


def _prepare(frame, scales=1):
    x = luma(frame)
    if min(x.shape) < SSIM_WIN * 2 ** (scales - 1):
        raise ValueError(
            f"frames {x.shape} too small for {scales}-scale SSIM "
            f"(need >= {SSIM_WIN * 2 ** (scales - 1)} px per side)"
        )
    return _Prepared(x, scales)


def _ssim_terms(p, q, level, data_range, k1=0.01, k2=0.03):
    x, mx, sxx = p.levels[level]
    y, my, syy = q.levels[level]
    if x.shape != y.shape:
        raise ValueError(f"frame shapes differ: {x.shape} vs {y.shape}")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    sxy = _window_mean(x * y, _GAUSS) - mx * my
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    return lum, cs


def _ssim_prepared(p, q, data_range):
    lum, cs = _ssim_terms(p, q, 0, data_range)
    return float(np.mean(lum * cs))


def _ms_ssim_prepared(p, q, data_range, scales, level0=None):
    # ``level0`` lets a caller that already has the full-scale terms reuse them.
    w = np.array(MS_SSIM_WEIGHTS[:scales])
    w = w / w.sum() if scales < len(MS_SSIM_WEIGHTS) else w
    result = 1.0
    for j in range(scales):
        lum, cs = level0 if (j == 0 and level0 is not None) else _ssim_terms(p, q, j, data_range)
        # Negative structure terms have no real fractional power; clip like TF.
        if j == scales - 1:
            result *= max(float(np.mean(lum * cs)), 0.0) ** w[j]
        else:
            result *= max(float(np.mean(cs)), 0.0) ** w[j]
    return float(result)


def ssim(a, b, data_range: float = 255.0) -> float:
    x, y = _pair(a, b)
    return _ssim_prepared(_prepare(x), _prepare(y), data_range)


def _ms_scales(shape, scales):
    fit = 1
    while fit < len(MS_SSIM_WEIGHTS) and min(shape) // 2 ** fit >= SSIM_WIN:
        fit += 1
    if scales is None:
        scales = fit
    if not 1 <= scales <= len(MS_SSIM_WEIGHTS):
        raise ValueError(f"scales must be in [1, {len(MS_SSIM_WEIGHTS)}]")
    return scales


def ms_ssim(a, b, data_range: float = 255.0, scales: int | None = 5) -> float:
    """Multi-scale SSIM with 2x2-mean dyadic downsampling.

    ``scales=None`` uses as many scales as the frame size allows (weights
    renormalized); a fixed count that does not fit raises ``ValueError``.
    """
    x, y = _pair(a, b)
    scales = _ms_scales(x.shape, scales)
    return _ms_ssim_prepared(_prepare(x, scales), _prepare(y, scales), data_range, scales)


def _downsample(img):
    h, w = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    v = img[:h, :w]
    return 0.25 * (v[0::2, 0::2] + v[1::2, 0::2] + v[0::2, 1::2] + v[1::2, 1::2])


def l2_norm(a, b) -> float:
    """RMS luma difference: Euclidean norm divided by sqrt(pixel count)."""
    x, y = _pair(a, b)
    return float(np.linalg.norm(x - y) / np.sqrt(x.size))


def _uqi_prepare(x, window):
    if min(x.shape) < window:
        raise ValueError(f"frames must be at least {window}x{window} for UQI")
    mu = _box_mean(x, window)
    return x, mu, _box_mean(x * x, window) - mu * mu, float(np.max(np.abs(x)))


def _uqi_prepared(p, q, window):
    x, mx, sxx, ax = p
    y, my, syy, ay = q
    if x.shape != y.shape:
        raise ValueError(f"frame shapes differ: {x.shape} vs {y.shape}")
    sxy = _box_mean(x * y, window) - mx * my
    # Variances below float noise of E[x^2] - mu^2 count as exactly zero.
    tol = 1e-9 * max(ax, ay, 1.0) ** 2
    vsum = sxx + syy
    vsum = np.where(vsum > tol, vsum, 0.0)
    msum = mx * mx + my * my
    lum = np.where(msum > 0, 2 * mx * my / np.where(msum > 0, msum, 1.0), 1.0)
    cs = np.where(vsum > 0, 2 * sxy / np.where(vsum > 0, vsum, 1.0), 1.0)
    return float(np.mean(lum * cs))


def uqi(a, b, window: int = UQI_WIN) -> float:
    """Universal image quality index over sliding ``window`` x ``window`` boxes.

    Windows where both variances vanish score their luminance term alone
    (1 for equal means); a luminance term with both means zero scores 1.
    """
    x, y = _pair(a, b)
    return _uqi_prepared(_uqi_prepare(x, window), _uqi_prepare(y, window), window)


METRICS = {"ssim": ssim, "ms_ssim": ms_ssim, "l2": l2_norm, "uqi": uqi}


@dataclass
class FrameSet:
    legitimate: list = field(default_factory=list)
    malicious: list = field(default_factory=list)

    def __post_init__(self):
        shapes = {np.shape(f) for f in list(self.legitimate) + list(self.malicious)}
        if len(shapes) > 1:
            raise ValueError(f"frames have differing shapes: {sorted(shapes)}")


def protocol_mean(metric, frames: FrameSet) -> float:
    """Mean of ``metric(legit, malicious)`` over the full cross product."""
    if not frames.legitimate or not frames.malicious:
        raise ValueError("need at least one legitimate and one malicious frame")
    vals = [metric(l, m) for l, m in itertools.product(frames.legitimate, frames.malicious)]
    return float(np.mean(vals))


def legitimate_mean(metric, frames: FrameSet) -> float:
    """Mean of ``metric`` over unordered pairs of legitimate frames."""
    if len(frames.legitimate) < 2:
        raise ValueError("need at least two legitimate frames")
    vals = [metric(a, b) for a, b in itertools.combinations(frames.legitimate, 2)]
    return float(np.mean(vals))


def delta_ssim(frames: FrameSet, data_range: float = 255.0) -> float:
    """SSIM among legitimate frames minus SSIM between legitimate and malicious ones."""
    m = lambda a, b: ssim(a, b, data_range)  # noqa: E731
    return legitimate_mean(m, frames) - protocol_mean(m, frames)


def evaluate_frameset(frames: FrameSet, data_range: float = 255.0,
                      metrics=("ssim", "ms_ssim", "l2", "uqi")) -> dict:
    """Protocol means of each metric plus legitimate-pair SSIM and delta-SSIM.

    Same numbers as calling :func:`protocol_mean` per metric, but window
    statistics are computed once per frame instead of once per pair.
    """
    if not frames.legitimate or not frames.malicious:
        raise ValueError("need at least one legitimate and one malicious frame")
    legit = [luma(f) for f in frames.legitimate]
    mal = [luma(f) for f in frames.malicious]
    pairs = list(itertools.product(range(len(legit)), range(len(mal))))
    out = {}
    need_ssim = "ssim" in metrics or len(legit) >= 2
    if need_ssim or "ms_ssim" in metrics:
        scales = _ms_scales(legit[0].shape, 5) if "ms_ssim" in metrics else 1
        pl = [_prepare(x, scales) for x in legit]
        pm = [_prepare(x, scales) for x in mal]
        ss, ms = [], []
        for i, j in pairs:
            terms = _ssim_terms(pl[i], pm[j], 0, data_range)
            ss.append(float(np.mean(terms[0] * terms[1])))
            if "ms_ssim" in metrics:
                ms.append(_ms_ssim_prepared(pl[i], pm[j], data_range, scales, terms))
        if need_ssim:
            out["ssim"] = float(np.mean(ss))
        if ms:
            out["ms_ssim"] = float(np.mean(ms))
        if len(legit) >= 2:
            out["ssim_legitimate"] = float(np.mean(
                [_ssim_prepared(pl[i], pl[j], data_range)
                 for i, j in itertools.combinations(range(len(legit)), 2)]))
            out["delta_ssim"] = out["ssim_legitimate"] - out["ssim"]
    if "l2" in metrics:
        out["l2"] = float(np.mean([l2_norm(legit[i], mal[j]) for i, j in pairs]))
    if "uqi" in metrics:
        ul = [_uqi_prepare(x, UQI_WIN) for x in legit]
        um = [_uqi_prepare(x, UQI_WIN) for x in mal]
        out["uqi"] = float(np.mean([_uqi_prepared(ul[i], um[j], UQI_WIN) for i, j in pairs]))
    return out
