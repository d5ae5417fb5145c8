"""Volume, field and landmark file I/O.

Two on-disk layouts are supported:

- NIfTI-1 single file (``.nii``, optionally gzip-compressed). The header is
  decoded with nibabel; only datatype codes 2 (uint8), 4 (int16) and 16
  (float32) are accepted. Orientation matrices are passed through but never
  applied.
- Raw + JSON sidecar: ``<name>.json`` holding ``dims``, ``spacing``, ``dtype``
  (``"u8" | "i16" | "f32"``), optional ``channels`` (slowest-varying) and, for
  displacement fields, ``stride``; ``<name>.raw`` holding the little-endian
  payload with x fastest.

Displacement fields are stored as 4D ``(gx, gy, gz, 3)`` volumes. In NIfTI the
intent code is set to 1006 (displacement vector) and the grid stride is kept
in ``intent_p1``.
"""

from __future__ import annotations

import gzip
import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, overload

import nibabel as nib
import numpy as np
import numpy.typing as npt

from .exceptions import ConfigError, RegxError, VolumeFormatError, VolumeIOError
from .logging import logger
from .types import Dims3, DoubleArray, Spacing3
from .volume import (
    DisplacementField,
    FeatureVolume,
    LabelVolume,
    LandmarkSet,
    Volume3D,
)

__all__ = [
    "load_volume",
    "load_features",
    "load_displacement",
    "save_volume",
    "load_landmarks",
    "save_landmarks",
]

NIFTI_MAGIC = b"n+1\x00"
GZIP_MAGIC = b"\x1f\x8b"
INTENT_DISPVECT = 1006

# NIfTI datatype code <-> raw sidecar dtype tag <-> numpy dtype
_NIFTI_CODES = {2: "u8", 4: "i16", 16: "f32"}
_RAW_DTYPES: dict[str, np.dtype[Any]] = {
    "u8": np.dtype("<u1"),
    "i16": np.dtype("<i2"),
    "f32": np.dtype("<f4"),
}

type Savable = Volume3D | LabelVolume | FeatureVolume | DisplacementField


@dataclass(frozen=True, slots=True)
class _Payload:
    """Decoded file contents before they become a domain object.

    ``array`` is ``(nx, ny, nz, channels)`` in the file's native dtype.
    """

    array: npt.NDArray[Any]
    spacing: Spacing3
    affine: DoubleArray | None
    stride: int


def _sidecar_paths(path: Path) -> tuple[Path, Path]:
    base = path.with_suffix("") if path.suffix in (".json", ".raw") else path
    return base.parent / f"{base.name}.json", base.parent / f"{base.name}.raw"


def _is_nifti_name(path: Path) -> bool:
    return path.name.endswith(".nii") or path.name.endswith(".nii.gz")


def _spacing(values: Any, path: Path) -> Spacing3:
    try:
        sx, sy, sz = (float(v) for v in values)
    except (TypeError, ValueError) as e:
        raise VolumeFormatError(path, f"spacing must hold three numbers ({e})") from e
    if not all(np.isfinite(s) and s > 0 for s in (sx, sy, sz)):
        raise VolumeFormatError(path, f"spacing must be positive, got {(sx, sy, sz)}")
    return (sx, sy, sz)


def _read(path: str | Path) -> _Payload:
    path = Path(path)
    json_path, raw_path = _sidecar_paths(path)
    if json_path.exists() and not _is_nifti_name(path):
        return _read_raw(json_path, raw_path)
    if not path.exists():
        raise VolumeIOError(path, "no such file")
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise VolumeIOError(path, e.strerror or str(e)) from e
    if blob[:2] == GZIP_MAGIC:
        try:
            blob = gzip.decompress(blob)
        except (OSError, EOFError, zlib.error) as e:
            raise VolumeFormatError(path, f"corrupt gzip stream ({e})") from e
    if len(blob) < 348 or blob[344:348] != NIFTI_MAGIC:
        raise VolumeFormatError(path, "unrecognised format")
    return _read_nifti(path, blob)


def _read_nifti(path: Path, blob: bytes) -> _Payload:
    try:
        image = nib.Nifti1Image.from_bytes(blob)
    except Exception as e:  # nibabel raises a zoo of header errors
        raise VolumeFormatError(path, f"malformed NIfTI-1 header ({e})") from e
    header = image.header
    code = int(header["datatype"])
    if code not in _NIFTI_CODES:
        raise VolumeFormatError(path, f"unsupported datatype code {code}")
    shape = tuple(int(d) for d in header.get_data_shape())
    if len(shape) not in (3, 4):
        raise VolumeFormatError(path, f"expected a 3D or 4D volume, got shape {shape}")
    itemsize = _RAW_DTYPES[_NIFTI_CODES[code]].itemsize
    expected = int(header["vox_offset"]) + int(np.prod(shape)) * itemsize
    if len(blob) != expected:
        raise VolumeFormatError(
            path,
            f"payload holds {len(blob)} bytes but header dims {shape} need {expected}",
        )
    array = np.asanyarray(image.dataobj)
    if array.ndim == 3:
        array = array[..., np.newaxis]
    stride = 1
    if int(header["intent_code"]) == INTENT_DISPVECT:
        stride = max(1, int(round(float(header["intent_p1"]))))
    return _Payload(
        array=array,
        spacing=_spacing(header.get_zooms()[:3], path),
        affine=np.asarray(image.affine, dtype=np.float64),
        stride=stride,
    )


def _read_raw(json_path: Path, raw_path: Path) -> _Payload:
    try:
        meta = json.loads(json_path.read_text())
        payload = raw_path.read_bytes()
    except OSError as e:
        raise VolumeIOError(raw_path, e.strerror or str(e)) from e
    except json.JSONDecodeError as e:
        raise VolumeFormatError(json_path, f"malformed sidecar ({e})") from e
    try:
        nx, ny, nz = (int(d) for d in meta["dims"])
        tag = str(meta["dtype"])
        channels = int(meta.get("channels", 1))
        stride = int(meta.get("stride", 1))
        spacing = meta["spacing"]
    except (KeyError, TypeError, ValueError) as e:
        raise VolumeFormatError(json_path, f"sidecar is missing or mistypes {e}") from e
    if tag not in _RAW_DTYPES:
        raise VolumeFormatError(json_path, f"unsupported dtype '{tag}'")
    if min(nx, ny, nz, channels, stride) < 1:
        raise VolumeFormatError(json_path, "dims, channels and stride must be positive")
    dtype = _RAW_DTYPES[tag]
    expected = nx * ny * nz * channels * dtype.itemsize
    if len(payload) != expected:
        raise VolumeFormatError(
            raw_path,
            f"payload holds {len(payload)} bytes but dims {(nx, ny, nz)} x "
            f"{channels} channel(s) need {expected}",
        )
    array = np.frombuffer(payload, dtype=dtype).reshape((nx, ny, nz, channels), order="F")
    return _Payload(
        array=array.astype(dtype.newbyteorder("="), copy=True),
        spacing=_spacing(spacing, json_path),
        affine=None,
        stride=stride,
    )


@overload
def load_volume(
    path: str | Path, *, labels: Literal[False] = ..., num_classes: None = ...
) -> Volume3D: ...


@overload
def load_volume(
    path: str | Path, *, labels: Literal[True], num_classes: int | None = ...
) -> LabelVolume: ...


def load_volume(
    path: str | Path, *, labels: bool = False, num_classes: int | None = None
) -> Volume3D | LabelVolume:
    """Load a scalar volume from NIfTI-1 or raw+JSON.

    Args:
        path: The file (for raw+JSON, either file of the pair or their stem).
        labels: Load integer data as a :class:`LabelVolume`.
        num_classes: Class count K for label volumes (default ``max + 1``).

    Raises:
        VolumeFormatError: Bad magic, unsupported datatype, or a payload whose
            size disagrees with the header dimensions.
        VolumeIOError: The file cannot be read.
    """
    payload = _read(path)
    if payload.array.shape[3] != 1:
        raise VolumeFormatError(
            path, f"expected one channel, found {payload.array.shape[3]}"
        )
    data = payload.array[..., 0]
    logger.info(f"Loaded {path}: dims={data.shape}, spacing={payload.spacing}")
    try:
        if labels:
            if data.dtype.kind not in "iu":
                raise VolumeFormatError(path, f"label volumes need integer data, got {data.dtype}")
            return LabelVolume(data, payload.spacing, num_classes, payload.affine)
        return Volume3D(data, payload.spacing, payload.affine)
    except VolumeFormatError:
        raise
    except RegxError as e:
        raise VolumeFormatError(path, str(e)) from e


def load_features(path: str | Path) -> FeatureVolume:
    """Load a multi-channel feature volume (channel slowest on disk)."""
    payload = _read(path)
    data = np.moveaxis(payload.array, 3, 0)
    return FeatureVolume(data, payload.spacing)


def load_displacement(path: str | Path) -> DisplacementField:
    """Load a displacement field saved by :func:`save_volume`."""
    payload = _read(path)
    if payload.array.shape[3] != 3:
        raise VolumeFormatError(
            path, f"displacement fields need 3 components, found {payload.array.shape[3]}"
        )
    vectors = np.moveaxis(payload.array, 3, 0)
    return DisplacementField(vectors, payload.stride, payload.spacing)


def _label_storage(data: npt.NDArray[Any]) -> npt.NDArray[Any]:
    if data.dtype in (np.uint8, np.int16):
        return data
    top = int(data.max()) if data.size else 0
    if top <= np.iinfo(np.uint8).max:
        return data.astype(np.uint8)
    if top <= np.iinfo(np.int16).max:
        return data.astype(np.int16)
    raise ConfigError("labels", f"label {top} does not fit the int16 storage type")


def _as_payload(obj: Savable) -> _Payload:
    match obj:
        case Volume3D():
            return _Payload(obj.data[..., np.newaxis], obj.spacing, obj.affine, 1)
        case LabelVolume():
            return _Payload(_label_storage(obj.data)[..., np.newaxis], obj.spacing, obj.affine, 1)
        case FeatureVolume():
            return _Payload(np.moveaxis(obj.data, 0, 3), obj.spacing, None, 1)
        case DisplacementField():
            return _Payload(np.moveaxis(obj.vectors, 0, 3), obj.spacing, None, obj.stride)


def save_volume(obj: Savable, path: str | Path) -> None:
    """Write a volume, label map, feature volume or displacement field.

    Names ending in ``.nii`` or ``.nii.gz`` are written as NIfTI-1, anything
    else as a raw+JSON pair next to ``path``.

    Raises:
        VolumeIOError: The destination cannot be written.
    """
    path = Path(path)
    payload = _as_payload(obj)
    try:
        if _is_nifti_name(path):
            _write_nifti(payload, path, is_field=isinstance(obj, DisplacementField))
        else:
            _write_raw(payload, path, is_field=isinstance(obj, DisplacementField))
    except OSError as e:
        raise VolumeIOError(getattr(e, "filename", None) or path, e.strerror or str(e)) from e
    logger.info(f"Saved {type(obj).__name__} to {path}")


def _write_nifti(payload: _Payload, path: Path, *, is_field: bool) -> None:
    array = payload.array
    if array.shape[3] == 1:
        array = array[..., 0]
    affine = payload.affine
    if affine is None:
        affine = np.diag([*payload.spacing, 1.0])
    image = nib.Nifti1Image(np.asarray(array), affine)
    header = image.header
    zooms = payload.spacing if array.ndim == 3 else (*payload.spacing, 1.0)
    header.set_zooms(zooms)
    header.set_xyzt_units("mm")
    if is_field:
        header["intent_code"] = INTENT_DISPVECT
        header["intent_p1"] = float(payload.stride)
    nib.save(image, str(path))


def _write_raw(payload: _Payload, path: Path, *, is_field: bool) -> None:
    json_path, raw_path = _sidecar_paths(path)
    tag = {np.dtype(np.uint8): "u8", np.dtype(np.int16): "i16"}.get(
        payload.array.dtype, "f32"
    )
    dtype = _RAW_DTYPES[tag]
    nx, ny, nz, channels = payload.array.shape
    meta: dict[str, Any] = {
        "dims": [nx, ny, nz],
        "spacing": list(payload.spacing),
        "dtype": tag,
        "channels": channels,
    }
    if is_field:
        meta["stride"] = payload.stride
    raw_path.write_bytes(payload.array.astype(dtype).tobytes(order="F"))
    json_path.write_text(json.dumps(meta, indent=2) + "\n")


def load_landmarks(path: str | Path, dims: Dims3 | None = None) -> LandmarkSet:
    """Read ``x,y,z`` rows of continuous voxel coordinates.

    Lines starting with ``#`` are comments. When ``dims`` is given every point
    must lie within ``[0, dim-1]`` on each axis.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise VolumeIOError(path, e.strerror or str(e)) from e
    rows = [
        line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")
    ]
    if not rows:
        return LandmarkSet(np.empty((0, 3)))
    try:
        points = np.loadtxt(rows, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as e:
        raise VolumeFormatError(path, f"landmark rows must be 'x,y,z' ({e})") from e
    if points.shape[1] != 3:
        raise VolumeFormatError(path, f"expected 3 columns, found {points.shape[1]}")
    landmarks = LandmarkSet(points)
    if dims is not None and (bad := landmarks.outside(dims)):
        raise VolumeFormatError(path, f"landmarks {bad} lie outside dims {dims}")
    return landmarks


def save_landmarks(landmarks: LandmarkSet, path: str | Path) -> None:
    """Write landmarks in the CSV layout read by :func:`load_landmarks`."""
    try:
        np.savetxt(Path(path), landmarks.points, delimiter=",", fmt="%.17g", header="x,y,z")
    except OSError as e:
        raise VolumeIOError(path, e.strerror or str(e)) from e
