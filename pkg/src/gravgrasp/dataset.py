"""On-disk dataset layout: ``tsdf.bin``, ``labels.bin`` and ``meta.json`` per scene.

Binary volumes (all little-endian)::

    magic      4 bytes  b"GGRD"
    version    u16
    dims       u32 x 3
    voxel_size f64
    origin     f64 x 3
    n_channels u16
    per channel: name_len u16, name utf-8, dtype code u8, byte count u64
    channel data, in table order, C-contiguous
    crc32      u32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .annotation import VoxelAnnotation
from .geometry.volume import VoxelVolume
from .io import atomic_write_bytes, atomic_write_json

MAGIC = b"GGRD"
FORMAT_VERSION = 1

_DTYPES = {0: np.dtype("<u1"), 1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i4")}
_CODES = {v: k for k, v in _DTYPES.items()}
_HEADER = struct.Struct("<4sH3Id3dH")


class DatasetError(ValueError):
    pass


class BadMagicError(DatasetError):
    pass


class VersionMismatchError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


def encode_volume(volume: VoxelVolume) -> bytes:
    names = list(volume.channels)
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, *volume.dims, float(volume.voxel_size),
                          *map(float, volume.origin), len(names))]
    blobs = []
    for name in names:
        arr = np.asarray(volume.channels[name])
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise DatasetError(f"unsupported dtype {arr.dtype} for channel {name!r}")
        blob = np.ascontiguousarray(arr.reshape(volume.dims), dtype=dt).tobytes()
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BQ", _CODES[dt], len(blob)))
        blobs.append(blob)
    body = b"".join(parts + blobs)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_volume(data: bytes) -> VoxelVolume:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a GGRD volume (bad magic)")
    if len(data) < _HEADER.size + 4:
        raise TruncatedFileError("file truncated inside the header")
    magic, version, nx, ny, nz, vs, ox, oy, oz, n_ch = _HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, expected {FORMAT_VERSION}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    off = _HEADER.size
    table = []
    try:
        for _ in range(n_ch):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + ln].decode("utf-8")
            off += ln
            code, nbytes = struct.unpack_from("<BQ", data, off)
            off += 9
            table.append((name, code, nbytes))
    except struct.error as exc:
        raise TruncatedFileError("file truncated inside the channel table") from exc
    expected = off + sum(t[2] for t in table) + 4
    if len(data) < expected:
        raise TruncatedFileError(f"file has {len(data)} bytes, expected {expected}")
    if len(data) > expected:
        raise DatasetError("trailing bytes after checksum")
    if zlib.crc32(body) != crc:
        raise ChecksumError("checksum mismatch")
    dims = (nx, ny, nz)
    channels = {}
    for name, code, nbytes in table:
        if code not in _DTYPES:
            raise DatasetError(f"unknown dtype code {code}")
        dt = _DTYPES[code]
        if nbytes != dt.itemsize * nx * ny * nz:
            raise DatasetError(f"channel {name!r} size does not match dims")
        channels[name] = np.frombuffer(data, dtype=dt, count=nx * ny * nz, offset=off).reshape(dims).copy()
        off += nbytes
    return VoxelVolume(np.array([ox, oy, oz]), vs, dims, channels)


def write_volume(path, volume: VoxelVolume) -> None:
    atomic_write_bytes(path, encode_volume(volume))


def read_volume(path) -> VoxelVolume:
    return decode_volume(Path(path).read_bytes())


def write_dataset(directory, scene, tsdf: VoxelVolume, annotation: VoxelAnnotation, meta_extra=None) -> None:
    """Write one scene directory. ``meta_extra`` is merged into ``meta.json``."""
    directory = Path(directory)
    write_volume(directory / "tsdf.bin", tsdf)
    write_volume(directory / "labels.bin", annotation.volume)
    meta = {
        "format_version": FORMAT_VERSION,
        "scene": scene.to_dict(),
        "grid": annotation.volume.spec.to_dict(),
        "skipped_grasps": int(annotation.skipped),
        "valid_voxels": int(np.count_nonzero(annotation.validness)),
    }
    meta.update(meta_extra or {})
    atomic_write_json(directory / "meta.json", meta)


def read_dataset(directory):
    """Return ``(scene, tsdf volume, VoxelAnnotation, meta dict)``."""
    from .scene import Scene

    directory = Path(directory)
    for name in ("meta.json", "tsdf.bin", "labels.bin"):
        if not (directory / name).is_file():
            raise DatasetError(f"{directory} is missing {name}")
    meta = json.loads((directory / "meta.json").read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(f"meta.json format version {meta.get('format_version')}")
    tsdf = read_volume(directory / "tsdf.bin")
    labels = read_volume(directory / "labels.bin")
    return Scene.from_dict(meta["scene"]), tsdf, VoxelAnnotation(labels, int(meta.get("skipped_grasps", 0))), meta
