"""Volume container plus NIfTI-1 and vvol readers/writers.

Arrays are stored depth x height x width in C order. In a NIfTI file the
first array axis maps to ``dim[1]`` (the fastest-varying axis on disk).
"""

from __future__ import annotations

import json
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import IoError, MalformedHeader, NumericalError, ShapeError

NIFTI_HEADER_SIZE = 348
NIFTI_VOX_OFFSET = 352
NIFTI_MAGIC = b"n+1\x00"

# datatype code -> (numpy dtype char, bitpix)
NIFTI_DTYPES = {
    2: ("u1", 8),
    4: ("i2", 16),
    16: ("f4", 32),
}

VVOL_HEADER = "header.json"
VVOL_DATA = "data.raw"


@dataclass(eq=False)
class Volume:
    data: np.ndarray
    voxel_size_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if not data.flags.writeable:  # e.g. a view over file bytes
            data = data.copy()
        if data.ndim != 3:
            raise ShapeError(f"volume must be 3D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ShapeError(f"volume has an empty axis: {data.shape}")
        if not np.isfinite(data).all():
            raise NumericalError("volume contains NaN or Inf")
        # float32 precision, as stored in NIfTI pixdim, so both formats round-trip exactly
        vs = tuple(float(np.float32(s)) for s in self.voxel_size_mm)
        if len(vs) != 3 or not all(s > 0 and np.isfinite(s) for s in vs):
            raise ShapeError(f"voxel_size_mm must be 3 positive reals, got {self.voxel_size_mm}")
        self.data = data
        self.voxel_size_mm = vs

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.data.shape)

    @cached_property
    def intensity_range(self) -> tuple[float, float]:
        return float(self.data.min()), float(self.data.max())


# ---------------------------------------------------------------------------
# NIfTI-1
# ---------------------------------------------------------------------------

def _nifti_endianness(raw: bytes) -> str:
    if struct.unpack_from("<i", raw, 0)[0] == NIFTI_HEADER_SIZE:
        return "<"
    if struct.unpack_from(">i", raw, 0)[0] == NIFTI_HEADER_SIZE:
        return ">"
    raise MalformedHeader("sizeof_hdr is not 348")


def parse_nifti_header(raw: bytes) -> dict:
    """Decode the fields of a NIfTI-1 header this package relies on."""
    if len(raw) < NIFTI_HEADER_SIZE:
        raise MalformedHeader(f"file is {len(raw)} bytes, shorter than a NIfTI-1 header")
    end = _nifti_endianness(raw)
    magic = raw[344:348]
    if magic != NIFTI_MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}, expected single-file 'n+1'")
    dim = struct.unpack_from(end + "8h", raw, 40)
    datatype, bitpix = struct.unpack_from(end + "2h", raw, 70)
    pixdim = struct.unpack_from(end + "8f", raw, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from(end + "3f", raw, 108)
    return {
        "endian": end,
        "dim": dim,
        "datatype": datatype,
        "bitpix": bitpix,
        "pixdim": pixdim,
        "vox_offset": vox_offset,
        "scl_slope": scl_slope,
        "scl_inter": scl_inter,
    }


def _read_nifti(path: Path) -> Volume:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    hdr = parse_nifti_header(raw)

    if hdr["datatype"] not in NIFTI_DTYPES:
        raise MalformedHeader(f"unsupported NIfTI datatype code {hdr['datatype']}")
    code, bitpix = NIFTI_DTYPES[hdr["datatype"]]
    if hdr["bitpix"] != bitpix:
        raise MalformedHeader(f"bitpix {hdr['bitpix']} does not match datatype {hdr['datatype']}")

    dim = hdr["dim"]
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise MalformedHeader(f"dim[0]={ndim} out of range")
    if ndim < 3 or any(d != 1 for d in dim[4 : ndim + 1]):
        raise ShapeError(f"expected a 3D image, header dim={list(dim)}")
    shape = tuple(int(d) for d in dim[1:4])
    if min(shape) < 1:
        raise MalformedHeader(f"non-positive dimension in {shape}")

    offset = int(hdr["vox_offset"])
    if offset < NIFTI_HEADER_SIZE:
        raise MalformedHeader(f"vox_offset {hdr['vox_offset']} inside the header")
    count = int(np.prod(shape))
    nbytes = count * bitpix // 8
    if len(raw) < offset + nbytes:
        raise MalformedHeader("file truncated: fewer data bytes than the header declares")

    dtype = np.dtype(hdr["endian"] + code)
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = flat.reshape(shape, order="F")
    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if slope != 0 and np.isfinite(slope):
        data = data.astype(np.float64) * slope + inter
    voxel = tuple(abs(float(p)) or 1.0 for p in hdr["pixdim"][1:4])
    return Volume(np.ascontiguousarray(data, dtype=np.float32), voxel)


def build_nifti_header(shape, voxel_size_mm) -> bytes:
    """A minimal float32 NIfTI-1 header for a 3D volume."""
    buf = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", buf, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", buf, 40, 3, *shape, 1, 1, 1, 1)
    struct.pack_into("<2h", buf, 70, 16, 32)
    struct.pack_into("<8f", buf, 76, 1.0, *voxel_size_mm, 0.0, 0.0, 0.0, 0.0)
    # slope 0 means "no scaling"; keeps float32 payloads bit-exact
    struct.pack_into("<3f", buf, 108, float(NIFTI_VOX_OFFSET), 0.0, 0.0)
    struct.pack_into("<b", buf, 123, 2)  # xyzt_units: millimetres
    buf[344:348] = NIFTI_MAGIC
    return bytes(buf)


def _write_nifti(v: Volume, path: Path) -> None:
    header = build_nifti_header(v.shape, v.voxel_size_mm)
    payload = v.data.astype("<f4").ravel(order="F").tobytes()
    _atomic_write(path, header + b"\x00" * (NIFTI_VOX_OFFSET - NIFTI_HEADER_SIZE) + payload)


# ---------------------------------------------------------------------------
# vvol: directory holding header.json + data.raw (little-endian float32)
# ---------------------------------------------------------------------------

def _read_vvol(path: Path) -> Volume:
    try:
        header = json.loads((path / VVOL_HEADER).read_text())
        raw = (path / VVOL_DATA).read_bytes()
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"{path / VVOL_HEADER} is not valid JSON") from exc
    except OSError as exc:
        raise IoError(f"cannot read vvol at {path}: {exc}") from exc

    if header.get("dtype") != "f32le" or header.get("order", "C") != "C":
        raise MalformedHeader(f"unsupported vvol dtype/order: {header.get('dtype')}/{header.get('order')}")
    shape = header.get("shape")
    if not isinstance(shape, list) or len(shape) != 3:
        raise ShapeError(f"vvol shape must have 3 entries, got {shape}")
    if not all(isinstance(s, int) and s >= 1 for s in shape):
        raise MalformedHeader(f"invalid vvol shape {shape}")
    if len(raw) != 4 * int(np.prod(shape)):
        raise MalformedHeader(f"data.raw holds {len(raw)} bytes, header implies {4 * int(np.prod(shape))}")
    data = np.frombuffer(raw, dtype="<f4").reshape(shape)
    return Volume(data, tuple(header.get("voxel_size_mm", (1.0, 1.0, 1.0))))


def _write_vvol(v: Volume, path: Path) -> None:
    """Stage both files in a sibling temp directory, then swap it into place."""
    header = {
        "shape": list(v.shape),
        "voxel_size_mm": list(v.voxel_size_mm),
        "dtype": "f32le",
        "order": "C",
    }
    stage = old = None
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        stage = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp"))
        os.chmod(stage, 0o777 & ~_umask())
        (stage / VVOL_DATA).write_bytes(v.data.astype("<f4").tobytes())
        (stage / VVOL_HEADER).write_text(json.dumps(header, indent=2))
        if path.exists():
            old = path.with_name(f".{path.name}.{os.getpid()}.old")
            os.replace(path, old)
        os.replace(stage, path)
        stage = None
    except OSError as exc:
        raise IoError(f"cannot write vvol at {path}: {exc}") from exc
    finally:
        if stage is not None:
            shutil.rmtree(stage, ignore_errors=True)
        if old is not None:
            shutil.rmtree(old, ignore_errors=True)


# ---------------------------------------------------------------------------

def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def _atomic_write(path: Path, payload: bytes) -> None:
    """Write to a sibling temp file and rename it into place."""
    path = Path(path)
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        # mkstemp creates 0600; give the result ordinary file permissions
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except OSError as exc:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
        raise IoError(f"cannot write {path}: {exc}") from exc


def infer_format(path) -> str:
    name = str(path).lower()
    return "nifti1" if name.endswith(".nii") else "vvol"


def read_volume(path, format: str | None = None) -> Volume:
    path = Path(path)
    fmt = format or infer_format(path)
    if fmt == "nifti1":
        return _read_nifti(path)
    if fmt == "vvol":
        return _read_vvol(path)
    raise ValueError(f"unknown volume format {fmt!r}")


def write_volume(v: Volume, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or infer_format(path)
    if fmt == "nifti1":
        _write_nifti(v, path)
    elif fmt == "vvol":
        _write_vvol(v, path)
    else:
        raise ValueError(f"unknown volume format {fmt!r}")


def normalize_intensity(v: Volume) -> Volume:
    """Min-max rescale to [0, 1]; a constant volume maps to zeros."""
    lo, hi = v.intensity_range
    if hi == lo:
        return Volume(np.zeros_like(v.data), v.voxel_size_mm)
    data = (v.data.astype(np.float64) - lo) / (hi - lo)
    return Volume(data, v.voxel_size_mm)


def crop_pad(v: Volume, target_shape) -> Volume:
    """Center-crop or zero-pad every axis to ``target_shape``.

    Odd differences put the extra voxel on the high side.
    """
    target = tuple(int(t) for t in target_shape)
    if len(target) != 3 or min(target) < 1:
        raise ShapeError(f"invalid target shape {target_shape}")
    src_slices, dst_slices = [], []
    for cur, tgt in zip(v.shape, target):
        if cur >= tgt:
            start = (cur - tgt) // 2
            src_slices.append(slice(start, start + tgt))
            dst_slices.append(slice(0, tgt))
        else:
            low = (tgt - cur) // 2
            src_slices.append(slice(0, cur))
            dst_slices.append(slice(low, low + cur))
    out = np.zeros(target, dtype=np.float32)
    out[tuple(dst_slices)] = v.data[tuple(src_slices)]
    return Volume(out, v.voxel_size_mm)
