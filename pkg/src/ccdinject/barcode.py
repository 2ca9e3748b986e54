"""EAN-13 rendering and scanline decoding.

The decoder is deliberately simple and camera-like: per horizontal
scanline it thresholds luma against a sliding mean, run-length encodes the
result and matches guard and digit patterns on the run widths. Only reads
whose check digit verifies are returned, so an attacked frame that fails
to decode yields ``[]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .metrics import luma

# Left-hand odd-parity ("L") module patterns; 1 = bar.
_L = ["0001101", "0011001", "0010011", "0111101", "0100011",
      "0110001", "0101111", "0111011", "0110111", "0001011"]
_R = ["".join("1" if c == "0" else "0" for c in p) for p in _L]
_G = [p[::-1] for p in _R]
# Parity of the six left digits for each implicit first digit.
_PARITY = ["LLLLLL", "LLGLGG", "LLGGLG", "LLGGGL", "LGLLGG",
           "LGGLLG", "LGGGLL", "LGLGLG", "LGLGGL", "LGGLGL"]
_PARITY_LOOKUP = {p: d for d, p in enumerate(_PARITY)}

SYMBOL_MODULES = 95
RUNS_PER_SYMBOL = 59  # 3 guard + 24 left + 5 centre + 24 right + 3 guard


def _runs(pattern: str) -> tuple[int, ...]:
    out, n = [], 1
    for a, b in zip(pattern, pattern[1:]):
        if a == b:
            n += 1
        else:
            out.append(n)
            n = 1
    out.append(n)
    return tuple(out)


_L_RUNS = np.array([_runs(p) for p in _L], dtype=np.float64)
_G_RUNS = np.array([_runs(p) for p in _G], dtype=np.float64)
_R_RUNS = np.array([_runs(p) for p in _R], dtype=np.float64)


def checksum(digits12: str) -> int:
    """EAN-13 check digit: weights 1,3,1,3,... from the left, modulo 10."""
    if not isinstance(digits12, str) or len(digits12) != 12 or not digits12.isdigit() \
            or not digits12.isascii():
        raise ValueError(f"expected exactly 12 decimal digits, got {digits12!r}")
    total = sum(int(c) * (3 if i % 2 else 1) for i, c in enumerate(digits12))
    return (10 - total % 10) % 10


def is_valid(code: str) -> bool:
    return len(code) == 13 and code.isdigit() and checksum(code[:12]) == int(code[12])


@dataclass(frozen=True)
class BarcodeSpec:
    digits: str
    module_px: int = 2
    quiet_modules: int = 10
    height_px: int = 60

    def __post_init__(self):
        if len(self.digits) == 12:
            object.__setattr__(self, "digits", self.digits + str(checksum(self.digits)))
        if not is_valid(self.digits):
            raise ValueError(f"{self.digits!r} is not a valid EAN-13 code")
        if self.module_px < 1 or self.quiet_modules < 0 or self.height_px < 1:
            raise ValueError("module width and height must be >= 1, quiet zone >= 0")

    @property
    def width_px(self) -> int:
        return (SYMBOL_MODULES + 2 * self.quiet_modules) * self.module_px


def modules(code: str) -> str:
    """The 95-module bar/space string for a 13-digit code."""
    if not is_valid(code):
        raise ValueError(f"{code!r} is not a valid EAN-13 code")
    parity = _PARITY[int(code[0])]
    left = "".join((_L if p == "L" else _G)[int(d)] for p, d in zip(parity, code[1:7]))
    right = "".join(_R[int(d)] for d in code[7:])
    return "101" + left + "01010" + right + "101"


def render_barcode(spec: BarcodeSpec, canvas, top: int = 0, left: int = 0,
                   bar: float = 0.05, background: float = 0.9) -> np.ndarray:
    """Draw ``spec`` (with its quiet zone) into a copy of a 2-D radiance canvas."""
    canvas = np.array(canvas, dtype=np.float64, copy=True)
    if canvas.ndim != 2:
        raise ValueError("canvas must be 2-D")
    h, w = spec.height_px, spec.width_px
    if top < 0 or left < 0 or top + h > canvas.shape[0] or left + w > canvas.shape[1]:
        raise ValueError(
            f"barcode needs {w}x{h} px at ({left}, {top}); canvas is "
            f"{canvas.shape[1]}x{canvas.shape[0]}"
        )
    row = np.full(w, background)
    mods = np.array([c == "1" for c in modules(spec.digits)])
    bars = np.repeat(mods, spec.module_px)
    q = spec.quiet_modules * spec.module_px
    row[q:q + bars.size] = np.where(bars, bar, background)
    canvas[top:top + h, left:left + w] = row
    return canvas


@dataclass(frozen=True)
class _Read:
    row_index: int
    x0: int
    x1: int
    code: str


def _match(widths, table):
    w = widths * (7.0 / widths.sum())
    d = np.abs(table - w).sum(axis=1)
    order = np.argsort(d, kind="stable")
    return int(order[0]), float(d[order[0]]), float(d[order[1]])


def _decode_runs(lengths, pos, start, max_dist, min_margin):
    """Try to decode one symbol whose start guard is run ``start``."""
    seg = lengths[start:start + RUNS_PER_SYMBOL].astype(np.float64)
    m = seg.sum() / SYMBOL_MODULES
    guards = np.concatenate([seg[:3], seg[27:32], seg[56:59]])
    if np.any(guards < 0.4 * m) or np.any(guards > 1.7 * m):
        return None
    digits, parity = [], []
    for k in range(6):
        w = seg[3 + 4 * k: 7 + 4 * k]
        li, ld, l2 = _match(w, _L_RUNS)
        gi, gd, g2 = _match(w, _G_RUNS)
        if ld <= gd:
            best, dist, second = li, ld, min(l2, gd)
            parity.append("L")
        else:
            best, dist, second = gi, gd, min(g2, ld)
            parity.append("G")
        if dist > max_dist or second - dist < min_margin:
            return None
        digits.append(best)
    first = _PARITY_LOOKUP.get("".join(parity))
    if first is None:
        return None
    for k in range(6):
        w = seg[32 + 4 * k: 36 + 4 * k]
        ri, rd, r2 = _match(w, _R_RUNS)
        if rd > max_dist or r2 - rd < min_margin:
            return None
        digits.append(ri)
    code = str(first) + "".join(map(str, digits))
    if not is_valid(code):
        return None
    return code, int(pos[start]), int(pos[start + RUNS_PER_SYMBOL - 1] + lengths[start + RUNS_PER_SYMBOL - 1])


def scan_line(line, window: int = 51, offset: float = 0.0, quiet: float = 5.0,
              max_dist: float = 1.6, min_margin: float = 0.3):
    """All checksum-valid symbols on one luma scanline as ``(code, x0, x1)``."""
    line = np.asarray(line, dtype=np.float64)
    thr = ndimage.uniform_filter1d(line, window, mode="nearest") - offset
    dark = line < thr
    edges = np.flatnonzero(dark[1:] != dark[:-1]) + 1
    pos = np.concatenate([[0], edges])
    lengths = np.diff(np.concatenate([pos, [line.size]]))
    colors = dark[pos]
    found = []
    n = lengths.size
    i = 1
    while i + RUNS_PER_SYMBOL < n:
        # A start guard is a bar with a quiet zone on either side of the symbol.
        # Offset-0 thresholding turns flat background noise into isolated
        # specks, so a quiet zone only has to be mostly light, not unbroken.
        if colors[i] and not colors[i - 1]:
            m = (lengths[i] + lengths[i + 1] + lengths[i + 2]) / 3.0
            end = i + RUNS_PER_SYMBOL
            q = int(round(quiet * m))
            x0, x1 = pos[i], pos[end]
            if (not colors[end] and x0 >= q and x1 + q <= line.size
                    and dark[x0 - q:x0].mean() <= 0.2 and dark[x1:x1 + q].mean() <= 0.2):
                res = _decode_runs(lengths, pos, i, max_dist, min_margin)
                if res is not None:
                    found.append(res)
                    i = end
                    continue
        i += 1
    return found


def scanline_rows(height: int, n: int = 16) -> np.ndarray:
    return np.unique(np.round(np.linspace(0, height - 1, n + 2)[1:-1]).astype(int))


def decode(frame, scanlines: int = 16, window: int = 51, offset: float = 0.0) -> list[str]:
    """Decode every EAN-13 symbol readable on ``scanlines`` evenly spaced rows.

    Reads from adjacent scanlines that overlap horizontally are treated as
    the same physical symbol; the most frequent code among them wins.
    Returns distinct codes in top-to-bottom order.
    """
    y = luma(frame)
    reads = []
    for idx, r in enumerate(scanline_rows(y.shape[0], scanlines)):
        for code, x0, x1 in scan_line(y[r], window, offset):
            reads.append(_Read(idx, x0, x1, code))
    clusters: list[list[_Read]] = []
    for rd in reads:
        for cl in clusters:
            last = cl[-1]
            overlap = min(last.x1, rd.x1) - max(last.x0, rd.x0)
            if rd.row_index - last.row_index <= 2 and overlap > 0.5 * (rd.x1 - rd.x0):
                cl.append(rd)
                break
        else:
            clusters.append([rd])
    out = []
    for cl in clusters:
        codes = [r.code for r in cl]
        # Counts tie-break on first appearance, keeping the result deterministic.
        best = max(dict.fromkeys(codes), key=codes.count)
        if best not in out:
            out.append(best)
    return out
