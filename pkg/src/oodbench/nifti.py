"""Minimal NIfTI-1 single-file reader/writer.

Covers exactly what the toolkit needs to interoperate with standard
medical-imaging pipelines: .nii / .nii.gz single-file volumes, three
datatypes on read (uint8 masks, int16 clinical scans, float32
probabilities/intensities), float32 on write, and scl_slope/scl_inter
intensity scaling. Orientation matrices are carried through verbatim but
never interpreted. NIfTI-2, ANALYZE 7.5 and DICOM are out of scope.

4D convention: the class/channel index is the 4th dimension of the file,
mapped to the first axis of in-memory ProbVolume / feature arrays.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import LabelVolume, ProbVolume, ScalarVolume, validate
from .errors import (
    FormatError,
    InvalidProbabilityError,
    ShapeError,
    UnsupportedDatatypeError,
)

HEADER_SIZE = 348
VOX_OFFSET = 352.0  # header + 4-byte extender, single-file layout
MAGIC_SINGLE = b"n+1\x00"

# Field layout of the 348-byte NIfTI-1 header (no padding).
_HEADER_FMT = (
    "i"  # sizeof_hdr
    "10s"  # data_type (unused)
    "18s"  # db_name (unused)
    "i"  # extents (unused)
    "h"  # session_error (unused)
    "1s"  # regular (unused)
    "B"  # dim_info
    "8h"  # dim
    "3f"  # intent_p1..p3
    "h"  # intent_code
    "h"  # datatype
    "h"  # bitpix
    "h"  # slice_start
    "8f"  # pixdim
    "f"  # vox_offset
    "f"  # scl_slope
    "f"  # scl_inter
    "h"  # slice_end
    "b"  # slice_code
    "B"  # xyzt_units
    "f"  # cal_max
    "f"  # cal_min
    "f"  # slice_duration
    "f"  # toffset
    "i"  # glmax (unused)
    "i"  # glmin (unused)
    "80s"  # descrip
    "24s"  # aux_file
    "h"  # qform_code
    "h"  # sform_code
    "6f"  # quatern_b..d, qoffset_x..z
    "4f"  # srow_x
    "4f"  # srow_y
    "4f"  # srow_z
    "16s"  # intent_name
    "4s"  # magic
)
assert struct.calcsize("<" + _HEADER_FMT) == HEADER_SIZE

_DTYPE_BY_CODE = {2: np.uint8, 4: np.int16, 16: np.float32}
_CODE_FLOAT32 = 16
_CODE_UINT8 = 2

_UNITS_MM = 2  # NIFTI_UNITS_MM
_XFORM_ALIGNED = 1

_DESCRIP = b"oodbench"

PathLike = Union[str, Path]


@dataclass(frozen=True)
class NiftiHeader:
    """Decoded subset of the NIfTI-1 header used by this toolkit."""

    sizeof_hdr: int
    dim: tuple[int, ...]
    datatype: int
    bitpix: int
    pixdim: tuple[float, ...]
    vox_offset: float
    scl_slope: float
    scl_inter: float
    qform_code: int
    sform_code: int
    srow: tuple[tuple[float, float, float, float], ...]
    magic: bytes
    byteorder: str  # "<" or ">"

    @property
    def ndim(self) -> int:
        return self.dim[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.dim[1 : 1 + self.dim[0]]


def _read_file_bytes(path: PathLike) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _parse_header(buf: bytes, path: PathLike) -> NiftiHeader:
    if len(buf) < HEADER_SIZE:
        raise OSError(f"{path}: truncated header ({len(buf)} bytes)")
    byteorder = None
    for order in ("<", ">"):
        if struct.unpack_from(order + "i", buf, 0)[0] == HEADER_SIZE:
            byteorder = order
            break
    if byteorder is None:
        raise FormatError(f"{path}: not a NIfTI-1 file (header size field != {HEADER_SIZE})")
    fields = struct.unpack_from(byteorder + _HEADER_FMT, buf, 0)
    magic = fields[65]
    if magic != MAGIC_SINGLE:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC_SINGLE!r}")
    # Flat-tuple indices follow _HEADER_FMT: dim starts at 7, pixdim at 22,
    # srow_x/y/z at 52/56/60.
    return NiftiHeader(
        sizeof_hdr=int(fields[0]),
        dim=tuple(int(d) for d in fields[7:15]),
        datatype=int(fields[19]),
        bitpix=int(fields[20]),
        pixdim=tuple(float(p) for p in fields[22:30]),
        vox_offset=float(fields[30]),
        scl_slope=float(fields[31]),
        scl_inter=float(fields[32]),
        qform_code=int(fields[44]),
        sform_code=int(fields[45]),
        srow=(
            tuple(float(x) for x in fields[52:56]),
            tuple(float(x) for x in fields[56:60]),
            tuple(float(x) for x in fields[60:64]),
        ),
        magic=magic,
        byteorder=byteorder,
    )


def read_header(path: PathLike) -> NiftiHeader:
    """Decode the header of a .nii or .nii.gz file without loading voxels."""
    return _parse_header(_read_file_bytes(path), path)


def _decode_payload(buf: bytes, header: NiftiHeader, path: PathLike) -> np.ndarray:
    """Decode the voxel payload to float64 with intensity scaling applied."""
    code = header.datatype
    if code not in _DTYPE_BY_CODE:
        raise UnsupportedDatatypeError(
            f"{path}: unsupported datatype code {code} (supported: 2, 4, 16)"
        )
    if header.ndim not in (3, 4):
        raise FormatError(f"{path}: unsupported dimensionality dim[0]={header.ndim}")
    shape = header.shape
    if any(n <= 0 for n in shape):
        raise FormatError(f"{path}: non-positive dimension in {shape}")
    dtype = np.dtype(_DTYPE_BY_CODE[code]).newbyteorder(header.byteorder)
    count = int(np.prod(shape))
    offset = int(round(header.vox_offset))
    end = offset + count * dtype.itemsize
    if len(buf) < end:
        raise OSError(f"{path}: truncated payload ({len(buf)} bytes, need {end})")
    flat = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    data = flat.reshape(shape, order="F").astype(np.float64)
    # NIfTI intensity scaling; a zero slope is treated as 1.
    slope = header.scl_slope if header.scl_slope != 0.0 else 1.0
    if slope != 1.0 or header.scl_inter != 0.0:
        data = data * np.float64(slope) + np.float64(header.scl_inter)
    return data


def _spacing_from(header: NiftiHeader) -> tuple[float, float, float]:
    out = []
    for p in header.pixdim[1:4]:
        out.append(float(p) if np.isfinite(p) and p > 0 else 1.0)
    return tuple(out)


def _affine_from(header: NiftiHeader) -> Optional[np.ndarray]:
    if header.sform_code <= 0:
        return None
    affine = np.vstack([header.srow, [0.0, 0.0, 0.0, 1.0]])
    return affine


def read_scalar(path: PathLike) -> ScalarVolume:
    """Read one 3D volume; values are decoded to float64."""
    buf = _read_file_bytes(path)
    header = _parse_header(buf, path)
    data = _decode_payload(buf, header, path)
    if data.ndim == 4:
        if data.shape[3] != 1:
            raise FormatError(f"{path}: expected a 3D volume, got 4D with {data.shape[3]} frames")
        data = data[..., 0]
    return ScalarVolume(data, spacing=_spacing_from(header), affine=_affine_from(header))


def _pack_header(
    shape: Sequence[int],
    spacing: Sequence[float],
    datatype: int,
    bitpix: int,
    affine: Optional[np.ndarray],
) -> bytes:
    dim = [len(shape)] + [int(n) for n in shape] + [1] * (7 - len(shape))
    pixdim = [1.0] + [float(s) for s in spacing] + [0.0] * (7 - len(spacing))
    if affine is None:
        affine = np.diag(list(spacing[:3]) + [1.0])
    srow = np.asarray(affine, dtype=np.float64)[:3, :]
    return struct.pack(
        "<" + _HEADER_FMT,
        HEADER_SIZE,
        b"",  # data_type
        b"",  # db_name
        0,  # extents
        0,  # session_error
        b"r",  # regular
        0,  # dim_info
        *dim,
        0.0, 0.0, 0.0,  # intent_p1..p3
        0,  # intent_code
        datatype,
        bitpix,
        0,  # slice_start
        *pixdim,
        VOX_OFFSET,
        1.0,  # scl_slope
        0.0,  # scl_inter
        0,  # slice_end
        0,  # slice_code
        _UNITS_MM,
        0.0,  # cal_max
        0.0,  # cal_min
        0.0,  # slice_duration
        0.0,  # toffset
        0,  # glmax
        0,  # glmin
        _DESCRIP,
        b"",  # aux_file
        0,  # qform_code
        _XFORM_ALIGNED,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,  # quaternion fields (qform unused)
        *srow[0].tolist(),
        *srow[1].tolist(),
        *srow[2].tolist(),
        b"",  # intent_name
        MAGIC_SINGLE,
    )


def _write_file(path: PathLike, header: bytes, payload: bytes, compress: Optional[bool]) -> None:
    blob = header + b"\x00\x00\x00\x00" + payload
    path = Path(path)
    if compress is None:
        compress = path.suffix == ".gz"
    if compress:
        # mtime pinned to 0, no embedded filename, fixed level: identical
        # volumes produce identical bytes wherever they are written.
        with open(path, "wb") as f:
            with gzip.GzipFile(filename="", fileobj=f, mode="wb", mtime=0,
                               compresslevel=6) as gz:
                gz.write(blob)
    else:
        path.write_bytes(blob)


def write_scalar(v: ScalarVolume, path: PathLike, compress: Optional[bool] = None) -> None:
    """Write a single-file NIfTI-1 volume, float32 payload, slope 1 / inter 0.

    Compression defaults to the path suffix (.gz); pass compress=True/False
    to force. Written headers are bit-deterministic for identical inputs.
    """
    header = _pack_header(v.shape, v.spacing, _CODE_FLOAT32, 32, v.affine)
    payload = np.asarray(v.data, dtype="<f4").tobytes(order="F")
    _write_file(path, header, payload, compress)


def write_labels(lv: LabelVolume, path: PathLike, compress: Optional[bool] = None) -> None:
    """Write a label map as uint8 (num_classes must fit in a byte)."""
    if lv.num_classes > 256:
        raise ValueError(f"cannot store {lv.num_classes} classes as uint8")
    header = _pack_header(lv.shape, lv.spacing, _CODE_UINT8, 8, lv.affine)
    payload = np.asarray(lv.labels, dtype=np.uint8).tobytes(order="F")
    _write_file(path, header, payload, compress)


def read_labels(path: PathLike, num_classes: Optional[int] = None) -> LabelVolume:
    """Read a label map stored as uint8 or int16.

    num_classes defaults to max(label) + 1 (at least 2).
    """
    buf = _read_file_bytes(path)
    header = _parse_header(buf, path)
    if header.datatype == _CODE_FLOAT32:
        raise UnsupportedDatatypeError(f"{path}: label volumes must be uint8 or int16")
    data = _decode_payload(buf, header, path)
    if data.ndim == 4:
        if data.shape[3] != 1:
            raise FormatError(f"{path}: expected a 3D label map")
        data = data[..., 0]
    labels = data.astype(np.int64)
    if num_classes is None:
        num_classes = max(int(labels.max()) + 1, 2) if labels.size else 2
    return LabelVolume(labels, num_classes=num_classes, spacing=_spacing_from(header),
                       affine=_affine_from(header))


# Per-voxel probability sums may drift during storage; sums within this
# bound are renormalized on read, anything worse is rejected.
PROB_RENORM_TOL = 1e-3


def read_prob(path_or_paths: Union[PathLike, Sequence[PathLike]]) -> ProbVolume:
    """Read class probabilities from one 4D file or C separate 3D files.

    The 4D convention puts the class index in the file's 4th dimension.
    Voxels whose class sum deviates from 1 by more than PROB_RENORM_TOL are
    rejected; smaller deviations are renormalized.
    """
    if isinstance(path_or_paths, (str, Path)):
        buf = _read_file_bytes(path_or_paths)
        header = _parse_header(buf, path_or_paths)
        data = _decode_payload(buf, header, path_or_paths)
        if data.ndim != 4 or data.shape[3] < 2:
            raise FormatError(f"{path_or_paths}: expected a 4D file with >= 2 classes")
        probs = np.moveaxis(data, 3, 0)
        spacing = _spacing_from(header)
        affine = _affine_from(header)
        source = str(path_or_paths)
    else:
        paths = list(path_or_paths)
        if len(paths) < 2:
            raise ShapeError("need at least 2 class files for a probability volume")
        vols = [read_scalar(p) for p in paths]
        shape = vols[0].shape
        for p, v in zip(paths, vols):
            if v.shape != shape:
                raise ShapeError(f"class file {p}: shape {v.shape} differs from {shape}")
        probs = np.stack([v.data for v in vols])
        spacing = vols[0].spacing
        affine = vols[0].affine
        source = str(paths[0])

    sums = probs.sum(axis=0)
    dev = np.abs(sums - 1.0)
    if not np.isfinite(probs).all():
        raise InvalidProbabilityError(f"{source}: non-finite probability values")
    if dev.max() > PROB_RENORM_TOL:
        worst = np.unravel_index(int(np.argmax(dev)), sums.shape)
        raise InvalidProbabilityError(
            f"{source}: per-voxel sum {sums[worst]:g} at voxel {worst} "
            f"deviates from 1 by more than {PROB_RENORM_TOL:g}"
        )
    probs = probs / sums
    volume = ProbVolume(probs, spacing=spacing, affine=affine)
    violation = validate(volume)
    if violation is not None:
        raise InvalidProbabilityError(f"{source}: {violation}")
    return volume


def write_prob(p: ProbVolume, path: PathLike, compress: Optional[bool] = None) -> None:
    """Write class probabilities as one 4D float32 file (class = 4th dim)."""
    data = np.moveaxis(p.probs, 0, 3)
    header = _pack_header(data.shape, p.spacing, _CODE_FLOAT32, 32, p.affine)
    payload = np.asarray(data, dtype="<f4").tobytes(order="F")
    _write_file(path, header, payload, compress)


def read_feature_maps(path: PathLike) -> list[np.ndarray]:
    """Read penultimate-layer feature maps from a 4D file (channel = 4th dim)."""
    buf = _read_file_bytes(path)
    header = _parse_header(buf, path)
    data = _decode_payload(buf, header, path)
    if data.ndim != 4:
        raise FormatError(f"{path}: expected a 4D feature file")
    return [np.ascontiguousarray(data[..., c]) for c in range(data.shape[3])]


def write_feature_maps(
    maps: Sequence[np.ndarray],
    path: PathLike,
    spacing: Sequence[float] = (1.0, 1.0, 1.0),
    compress: Optional[bool] = None,
) -> None:
    """Write a channel list of 3D feature maps as one 4D float32 file."""
    if not maps:
        raise ShapeError("need at least one feature channel")
    data = np.stack([np.asarray(m, dtype=np.float64) for m in maps], axis=3)
    header = _pack_header(data.shape, spacing, _CODE_FLOAT32, 32, None)
    payload = np.asarray(data, dtype="<f4").tobytes(order="F")
    _write_file(path, header, payload, compress)
