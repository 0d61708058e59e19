"""Bit-exact binary file formats and PNG export.

Three container formats, all little-endian:

GSCT (image)
    magic "GSCT", u32 version=1, u32 width, u32 height, f64 spacing,
    f64 origin_x, f64 origin_y, then width*height float32 row-major.

GSSG (sinogram)
    magic "GSSG", u32 version=1, u32 num_angles, u32 detector_pixels,
    u8 kind (0 = line integral, 1 = intensity), geometry block of five f64
    (source_to_isocenter, source_to_detector, detector_pixels,
    detector_spacing, num_angles; the two counts are redundant copies of the
    u32 header fields and are validated on read), f64 angle table of
    num_angles entries, then num_angles*detector_pixels float32 row-major
    (angle-major).

GSWT (network weights)
    magic "GSWT", u32 version=1, f64 sigma, u32 spec_len + canonical JSON
    describing the architecture, u32 num_tensors, per tensor a manifest
    entry (u16 name_len + utf8 name, u8 ndim, ndim*u32 dims, u64 element
    offset), u64 total payload elements, then the float32 payload.

Writers are deterministic (identical inputs give identical bytes) and
atomic: content goes to a temp file in the destination directory which is
then renamed over the target, so failed runs leave no partial outputs.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from typing import BinaryIO

import numpy as np

from .core import FanBeamGeometry, ImageGrid, Sinogram, SinogramKind
from .errors import ArgumentError, FormatError, IoError

_IMAGE_MAGIC = b"GSCT"
_SINO_MAGIC = b"GSSG"
_WEIGHTS_MAGIC = b"GSWT"
_VERSION = 1


# ---------------------------------------------------------------------------
# low-level helpers


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write `data` to `path` via a temp file + rename in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise IoError(f"output directory does not exist: {directory}", tag="IO_NOT_FOUND")
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoError(f"cannot write {path}: {exc}", tag="IO_UNWRITABLE") from exc


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _open_read(path: str | os.PathLike) -> BinaryIO:
    try:
        return open(path, "rb")
    except FileNotFoundError as exc:
        raise IoError(f"file not found: {path}", tag="IO_NOT_FOUND") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise IoError(f"truncated file while reading {what}", tag="IO_TRUNCATED")
    return data


def _unpack(f: BinaryIO, fmt: str, what: str):
    size = struct.calcsize(fmt)
    return struct.unpack(fmt, _read_exact(f, size, what))


# ---------------------------------------------------------------------------
# GSCT images


def image_to_bytes(grid: ImageGrid) -> bytes:
    header = _IMAGE_MAGIC + struct.pack(
        "<IIIddd",
        _VERSION,
        grid.width,
        grid.height,
        grid.spacing,
        grid.origin[0],
        grid.origin[1],
    )
    payload = np.ascontiguousarray(grid.values, dtype="<f4").tobytes()
    return header + payload


def write_image(grid: ImageGrid, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, image_to_bytes(grid))


def read_image(path: str | os.PathLike) -> ImageGrid:
    with _open_read(path) as f:
        magic = _read_exact(f, 4, "magic")
        if magic != _IMAGE_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {_IMAGE_MAGIC!r}")
        (version,) = _unpack(f, "<I", "version")
        if version != _VERSION:
            raise FormatError(f"unsupported image version {version}")
        width, height = _unpack(f, "<II", "dimensions")
        if width < 1 or height < 1:
            raise FormatError(f"invalid dimensions {width}x{height}")
        spacing, ox, oy = _unpack(f, "<ddd", "spacing/origin")
        if not spacing > 0:
            raise FormatError(f"invalid spacing {spacing}")
        payload = _read_exact(f, 4 * width * height, "pixel payload")
        extra = f.read(1)
    if extra:
        raise FormatError("trailing bytes after image payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    return ImageGrid(width=width, height=height, spacing=spacing, origin=(ox, oy), values=values)


# ---------------------------------------------------------------------------
# GSSG sinograms


def sinogram_to_bytes(sino: Sinogram) -> bytes:
    geo = sino.geometry
    header = _SINO_MAGIC + struct.pack(
        "<IIIB",
        _VERSION,
        geo.num_angles,
        geo.detector_pixels,
        int(sino.kind),
    )
    geo_block = struct.pack(
        "<5d",
        geo.source_to_isocenter,
        geo.source_to_detector,
        float(geo.detector_pixels),
        geo.detector_spacing,
        float(geo.num_angles),
    )
    angles = np.ascontiguousarray(geo.angles, dtype="<f8").tobytes()
    payload = np.ascontiguousarray(sino.values, dtype="<f4").tobytes()
    return header + geo_block + angles + payload


def write_sinogram(sino: Sinogram, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, sinogram_to_bytes(sino))


def read_sinogram(path: str | os.PathLike) -> Sinogram:
    with _open_read(path) as f:
        magic = _read_exact(f, 4, "magic")
        if magic != _SINO_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {_SINO_MAGIC!r}")
        (version,) = _unpack(f, "<I", "version")
        if version != _VERSION:
            raise FormatError(f"unsupported sinogram version {version}")
        num_angles, detector_pixels, kind_code = _unpack(f, "<IIB", "counts/kind")
        if num_angles < 1 or detector_pixels < 1:
            raise FormatError(f"invalid counts {num_angles}x{detector_pixels}")
        if kind_code not in (0, 1):
            raise FormatError(f"invalid sinogram kind {kind_code}")
        sid, sdd, det_f, det_spacing, ang_f = _unpack(f, "<5d", "geometry block")
        if det_f != float(detector_pixels):
            raise FormatError("geometry block detector_pixels disagrees with header")
        if ang_f != float(num_angles):
            raise FormatError("geometry block num_angles disagrees with header")
        ang_bytes = _read_exact(f, 8 * num_angles, "angle table")
        payload = _read_exact(f, 4 * num_angles * detector_pixels, "sinogram payload")
        extra = f.read(1)
    if extra:
        raise FormatError("trailing bytes after sinogram payload")
    angles = np.frombuffer(ang_bytes, dtype="<f8")
    try:
        geometry = FanBeamGeometry(
            source_to_isocenter=sid,
            source_to_detector=sdd,
            detector_pixels=detector_pixels,
            detector_spacing=det_spacing,
            angles=angles,
        )
    except ArgumentError as exc:
        raise FormatError(f"invalid geometry in sinogram header: {exc}") from exc
    values = np.frombuffer(payload, dtype="<f4").reshape(num_angles, detector_pixels)
    return Sinogram(geometry=geometry, kind=SinogramKind(kind_code), values=values)


# ---------------------------------------------------------------------------
# GSWT weight containers


def weights_to_bytes(sigma: float, spec: dict, tensors: dict[str, np.ndarray]) -> bytes:
    spec_json = json.dumps(spec, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [
        _WEIGHTS_MAGIC,
        struct.pack("<Id", _VERSION, float(sigma)),
        struct.pack("<I", len(spec_json)),
        spec_json,
        struct.pack("<I", len(tensors)),
    ]
    offset = 0
    chunks = []
    for name, arr in tensors.items():
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise ArgumentError(f"tensor name too long: {name!r}")
        out.append(struct.pack("<H", len(name_b)))
        out.append(name_b)
        out.append(struct.pack("<B", arr32.ndim))
        out.append(struct.pack(f"<{arr32.ndim}I", *arr32.shape))
        out.append(struct.pack("<Q", offset))
        chunks.append(arr32.tobytes())
        offset += arr32.size
    out.append(struct.pack("<Q", offset))
    out.extend(chunks)
    return b"".join(out)


def write_weights(path: str | os.PathLike, sigma: float, spec: dict, tensors: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, weights_to_bytes(sigma, spec, tensors))


def read_weights(path: str | os.PathLike) -> tuple[float, dict, dict[str, np.ndarray]]:
    with _open_read(path) as f:
        magic = _read_exact(f, 4, "magic")
        if magic != _WEIGHTS_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {_WEIGHTS_MAGIC!r}")
        version, sigma = _unpack(f, "<Id", "version/sigma")
        if version != _VERSION:
            raise FormatError(f"unsupported weights version {version}")
        (spec_len,) = _unpack(f, "<I", "spec length")
        spec_json = _read_exact(f, spec_len, "spec json")
        try:
            spec = json.loads(spec_json.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"invalid spec json: {exc}") from exc
        (num_tensors,) = _unpack(f, "<I", "tensor count")
        manifest = []
        for i in range(num_tensors):
            (name_len,) = _unpack(f, "<H", f"tensor {i} name length")
            name = _read_exact(f, name_len, f"tensor {i} name").decode("utf-8")
            (ndim,) = _unpack(f, "<B", f"tensor {i} ndim")
            shape = _unpack(f, f"<{ndim}I", f"tensor {i} shape") if ndim else ()
            (offset,) = _unpack(f, "<Q", f"tensor {i} offset")
            manifest.append((name, tuple(shape), offset))
        (total,) = _unpack(f, "<Q", "payload length")
        payload = _read_exact(f, 4 * total, "weight payload")
        extra = f.read(1)
    if extra:
        raise FormatError("trailing bytes after weight payload")
    flat = np.frombuffer(payload, dtype="<f4")
    tensors: dict[str, np.ndarray] = {}
    for name, shape, offset in manifest:
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if offset + size > total:
            raise FormatError(f"tensor {name!r} extends past payload end")
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        arr = flat[offset : offset + size].reshape(shape).copy()
        arr.flags.writeable = False
        tensors[name] = arr
    if not np.isfinite(flat).all():
        raise FormatError("weight payload contains non-finite values")
    return float(sigma), spec, tensors


# ---------------------------------------------------------------------------
# PNG export


def export_png(grid: ImageGrid, window_low: float, window_high: float, path: str | os.PathLike) -> None:
    """8-bit grayscale export: v -> round(255 * clamp((v-low)/(high-low), 0, 1)).

    Rounding is half-up, so the midpoint of the window lands on gray 128.
    """
    from PIL import Image
    import io

    if not window_low < window_high:
        raise ArgumentError(f"degenerate window [{window_low}, {window_high}]")
    v = grid.values.astype(np.float64)
    t = np.clip((v - window_low) / (window_high - window_low), 0.0, 1.0)
    gray = np.floor(255.0 * t + 0.5).astype(np.uint8)
    img = Image.fromarray(gray, mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())
