"""Reading and writing images, disparity maps and network checkpoints.

Conventions
-----------
* Images are float32 ``(H, W)`` arrays with intensities in [0, 1].
* Disparity maps are float32 ``(H, W)`` arrays; invalid pixels hold
  :data:`INVALID` (any negative value read from disk is mapped to it).
* Confidence maps are float32 ``(H, W)`` arrays in [0, 1].

KITTI 16-bit PNG stores ``round(d * 256)`` with 0 meaning "no measurement".
PFM (``Pf``) stores little- or big-endian float32 rows bottom-to-top; the sign
of the scale line selects the byte order (negative = little-endian).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, ImageIOError, RangeError

INVALID = np.float32(-1.0)
KITTI_SCALE = 256.0
MAX_DISPARITY = 2.0 ** 15

CHECKPOINT_MAGIC = b"CADPCKPT"
CHECKPOINT_VERSION = 1


def is_valid(disp):
    return disp >= 0


def _open_pil(path):
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError as e:
        raise ImageIOError(f"{path}: no such file") from e
    except UnidentifiedImageError as e:
        raise FormatError(f"{path}: unsupported or unrecognised image encoding") from e
    except (OSError, SyntaxError, ValueError) as e:
        raise ImageIOError(f"{path}: unreadable image ({e})") from e
    return img


def read_image(path):
    """Load an 8-bit grayscale PGM/PNG (color is averaged) as floats in [0, 1]."""
    img = _open_pil(path)
    if img.mode in ("L", "1"):
        data = np.asarray(img.convert("L"), dtype=np.float32)
    elif img.mode == "LA":
        data = np.asarray(img.getchannel("L"), dtype=np.float32)
    elif img.mode in ("RGB", "RGBA", "P", "PA", "CMYK", "YCbCr"):
        rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
        data = rgb.mean(axis=2)
    else:
        raise FormatError(f"{path}: unsupported image mode {img.mode!r} (8-bit expected)")
    return np.clip(data / 255.0, 0.0, 1.0).astype(np.float32)


def write_image(img, path):
    """Store an image in [0, 1] as 8-bit grayscale; PGM or PNG by suffix."""
    path = Path(path)
    arr = np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    fmt = "PPM" if path.suffix.lower() in (".pgm", ".pnm") else "PNG"
    try:
        Image.fromarray(arr, mode="L").save(path, format=fmt)
    except OSError as e:
        raise ImageIOError(f"{path}: write failed ({e})") from e


def write_mask(mask, path):
    write_image(np.asarray(mask, dtype=np.float32), path)


def read_mask(path):
    return read_image(path) > 0.5


# ------------------------------------------------------------------ disparity

def _format_from(path, format):
    if format is not None:
        return format
    return "pfm" if Path(path).suffix.lower() == ".pfm" else "kitti-png16"


def read_disparity(path, format=None):
    """Read a disparity map stored as ``kitti-png16`` or ``pfm``."""
    format = _format_from(path, format)
    if format == "kitti-png16":
        img = _open_pil(path)
        if img.mode not in ("I;16", "I;16B", "I;16L", "I"):
            raise FormatError(f"{path}: expected a 16-bit grayscale PNG, got mode {img.mode!r}")
        raw = np.asarray(img).astype(np.int64)
        if raw.min() < 0 or raw.max() > 65535:
            raise FormatError(f"{path}: values outside the 16-bit range")
        disp = (raw / KITTI_SCALE).astype(np.float32)
        disp[raw == 0] = INVALID
    elif format == "pfm":
        disp = _read_pfm(path)
        bad = ~np.isfinite(disp) | (disp < 0)
        disp = np.where(bad, INVALID, disp).astype(np.float32)
    else:
        raise FormatError(f"unknown disparity format {format!r}")
    if np.any(disp > MAX_DISPARITY):
        raise RangeError(f"{path}: disparity above {MAX_DISPARITY:g}")
    return disp


def write_disparity(disp, path, format=None):
    """Inverse of :func:`read_disparity` on its encodable range."""
    format = _format_from(path, format)
    disp = np.asarray(disp, dtype=np.float32)
    valid = is_valid(disp)
    if format == "kitti-png16":
        stored = np.round(disp.astype(np.float64) * KITTI_SCALE)
        if np.any(stored[valid] > 65535):
            raise RangeError("disparity above 255.996 cannot be stored as kitti-png16")
        if np.any(stored[valid] < 1):
            raise RangeError("disparity below 1/512 would read back as invalid in kitti-png16")
        stored = np.where(valid, stored, 0).astype(np.uint16)
        try:
            Image.fromarray(stored).save(Path(path), format="PNG")
        except OSError as e:
            raise ImageIOError(f"{path}: write failed ({e})") from e
    elif format == "pfm":
        _write_pfm(np.where(valid, disp, np.inf).astype(np.float32), path)
    else:
        raise FormatError(f"unknown disparity format {format!r}")


def _read_pfm(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as e:
        raise ImageIOError(f"{path}: no such file") from e
    except OSError as e:
        raise ImageIOError(f"{path}: unreadable ({e})") from e
    # header: identifier, width, height, scale, then a single whitespace byte
    parts, pos = [], 0
    while len(parts) < 4 and pos < len(raw):
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if pos > start:
            parts.append(raw[start:pos])
    if len(parts) < 4 or parts[0] not in (b"Pf", b"PF"):
        raise FormatError(f"{path}: not a PFM file")
    if parts[0] == b"PF":
        raise FormatError(f"{path}: 3-channel PFM is not supported")
    try:
        width, height, scale = int(parts[1]), int(parts[2]), float(parts[3])
    except ValueError as e:
        raise FormatError(f"{path}: malformed PFM header") from e
    if width <= 0 or height <= 0 or scale == 0:
        raise FormatError(f"{path}: malformed PFM header")
    payload = raw[pos + 1:]
    n = width * height
    if len(payload) < 4 * n:
        raise ImageIOError(f"{path}: truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload[: 4 * n], dtype=dtype).reshape(height, width)
    return np.flipud(data).astype(np.float32)


def _write_pfm(data, path):
    h, w = data.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.flipud(data).astype("<f4").tobytes())
    except OSError as e:
        raise ImageIOError(f"{path}: write failed ({e})") from e


def write_confidence(conf, path):
    """Confidence maps are kept as PFM floats (no quantisation)."""
    _write_pfm(np.asarray(conf, dtype=np.float32), path)


def read_confidence(path):
    return np.clip(_read_pfm(path), 0.0, 1.0)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, descriptor, params):
    """Write ``magic | version | descriptor | float32 params`` (little-endian).

    ``descriptor`` is a JSON-serialisable dict describing the architecture;
    parameter names and shapes are appended to it so the file is
    self-describing.
    """
    desc = dict(descriptor)
    desc["params"] = [[name, list(arr.shape)] for name, arr in params]
    blob = json.dumps(desc, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
            fh.write(blob)
            for _, arr in params:
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    except OSError as e:
        raise ImageIOError(f"{path}: write failed ({e})") from e


def load_checkpoint(path):
    """Return ``(descriptor, [(name, array), ...])`` from :func:`save_checkpoint` output."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ImageIOError(f"{path}: unreadable ({e})") from e
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{path}: bad checkpoint magic")
    off = len(CHECKPOINT_MAGIC)
    if len(raw) < off + 8:
        raise ImageIOError(f"{path}: truncated checkpoint")
    version, n = struct.unpack_from("<II", raw, off)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    try:
        desc = json.loads(raw[off:off + n].decode("utf-8"))
    except ValueError as e:
        raise FormatError(f"{path}: corrupt checkpoint descriptor") from e
    off += n
    params = []
    for name, shape in desc.pop("params"):
        count = int(np.prod(shape)) if shape else 1
        if len(raw) < off + 4 * count:
            raise ImageIOError(f"{path}: truncated checkpoint payload")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        params.append((name, arr.astype(np.float32)))
        off += 4 * count
    return desc, params
