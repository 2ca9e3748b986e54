"""Bit-exact frame files and JSON configuration.

Frames use the Netpbm family: binary PPM (P6) for RGB, PGM (P5) for raw
Bayer frames and PAM (P7) when an alpha channel must survive. Samples
wider than 8 bits are stored big-endian 16-bit, as the format prescribes.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .coupling import ChannelConfig, SusceptibilityProfile
from .sensor import SensorConfig


def _dtype_for(maxval: int):
    if not 0 < maxval < 65536:
        raise ValueError(f"maxval {maxval} out of range")
    return np.dtype(">u2") if maxval > 255 else np.dtype("u1")


def _encode(magic: str, img: np.ndarray, maxval: int | None, extra: str = "") -> bytes:
    img = np.asarray(img)
    if not np.issubdtype(img.dtype, np.integer):
        raise ValueError("frames must be integer arrays")
    if img.size and (img.min() < 0):
        raise ValueError("negative sample values")
    if maxval is None:
        maxval = 255 if img.dtype == np.uint8 else max(int(img.max(initial=0)), 1)
    if img.size and img.max() > maxval:
        raise ValueError(f"sample value {int(img.max())} exceeds maxval {maxval}")
    h, w = img.shape[:2]
    if magic == "P7":
        header = f"P7\nWIDTH {w}\nHEIGHT {h}\nDEPTH {img.shape[2]}\nMAXVAL {maxval}\n{extra}ENDHDR\n"
    else:
        header = f"{magic}\n{w} {h}\n{maxval}\n"
    return header.encode("ascii") + img.astype(_dtype_for(maxval)).tobytes()


def write_ppm(path, rgb, maxval: int | None = None) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"PPM needs HxWx3, got {rgb.shape}")
    Path(path).write_bytes(_encode("P6", rgb, maxval))


def write_pgm(path, gray, maxval: int | None = None) -> None:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError(f"PGM needs HxW, got {gray.shape}")
    Path(path).write_bytes(_encode("P5", gray, maxval))


def write_pam(path, img, maxval: int | None = None) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 2, 3, 4):
        raise ValueError(f"PAM needs HxWxD with D in 1..4, got {img.shape}")
    tupl = {1: "GRAYSCALE", 2: "GRAYSCALE_ALPHA", 3: "RGB", 4: "RGB_ALPHA"}[img.shape[2]]
    Path(path).write_bytes(_encode("P7", img, maxval, f"TUPLTYPE {tupl}\n"))


def _tokens(data: bytes, start: int, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out, i = [], start
    while len(out) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated Netpbm header")
        out.append(data[i:j].decode("ascii"))
        i = j
    return out, i + 1  # exactly one whitespace byte ends the header


def read_netpbm(path) -> np.ndarray:
    """Read P5/P6/P7; returns uint8 or uint16 HxW or HxWxD."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic in (b"P5", b"P6"):
        (w, h, maxval), off = _tokens(data, 2, 3)
        w, h, maxval = int(w), int(h), int(maxval)
        depth = 3 if magic == b"P6" else 1
    elif magic == b"P7":
        end = data.find(b"ENDHDR\n")
        if end < 0:
            raise ValueError(f"{path}: PAM header lacks ENDHDR")
        fields = {}
        for line in data[3:end].decode("ascii").splitlines():
            if line and not line.startswith("#"):
                k, _, v = line.partition(" ")
                fields[k] = v.strip()
        w, h = int(fields["WIDTH"]), int(fields["HEIGHT"])
        depth, maxval = int(fields["DEPTH"]), int(fields["MAXVAL"])
        off = end + len(b"ENDHDR\n")
    else:
        raise ValueError(f"{path}: not a binary PGM/PPM/PAM file")
    dt = _dtype_for(maxval)
    n = w * h * depth
    if len(data) - off < n * dt.itemsize:
        raise ValueError(f"{path}: truncated pixel data")
    arr = np.frombuffer(data, dtype=dt, count=n, offset=off)
    arr = arr.astype(np.uint16 if dt.itemsize == 2 else np.uint8)
    return arr.reshape(h, w) if magic == b"P5" else arr.reshape(h, w, depth)


def read_image(path) -> np.ndarray:
    """An 8-bit RGB or RGBA image for the attack pipeline."""
    img = read_netpbm(path)
    if img.dtype != np.uint8:
        raise ValueError(f"{path}: attack images must be 8-bit")
    return img


# -- configs --------------------------------------------------------------------

def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return {"array_shape": list(obj.shape)}
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _check_keys(cls, data: dict, what: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {what} field(s): {', '.join(sorted(unknown))}")


def susceptibility_from_dict(data: dict) -> SusceptibilityProfile:
    _check_keys(SusceptibilityProfile, data, "susceptibility")
    return SusceptibilityProfile(**data)


def sensor_from_dict(data: dict, base: SensorConfig | None = None) -> SensorConfig:
    """Overlay ``data`` onto ``base`` (or a named ``profile``) to build a sensor."""
    data = dict(data)
    profile = data.pop("profile", None)
    if profile is not None:
        from .profiles import SENSOR_PROFILES
        if profile not in SENSOR_PROFILES:
            raise ValueError(f"unknown sensor profile {profile!r}; known: {sorted(SENSOR_PROFILES)}")
        base = SENSOR_PROFILES[profile]()
    base = base or SensorConfig()
    _check_keys(SensorConfig, data, "sensor")
    if "susceptibility" in data:
        sus = dict(to_jsonable(base.susceptibility))
        sus.update(data["susceptibility"])
        data["susceptibility"] = susceptibility_from_dict(sus)
    return base.replace(**data)


def channel_from_dict(data: dict, base: ChannelConfig | None = None) -> ChannelConfig:
    _check_keys(ChannelConfig, data, "channel")
    return dataclasses.replace(base or ChannelConfig(), **data)


def load_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be an object")
    return data


def write_text_atomic(path, text: str) -> None:
    """Replace ``path`` in one step so readers never see a half-written file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
