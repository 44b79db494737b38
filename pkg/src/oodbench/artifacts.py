"""Synthetic MRI corruption transforms.

Eight corruption kinds turn a clean volume into a realistic out-of-
distribution sample: downsample, bias, motion, spikes, noise, ghost,
truncation, scale. Every transform is a pure function of (input,
parameters, seed): same spec on the same volume reproduces the output
bit for bit. Outputs always keep the input's shape, spacing and affine,
and are always finite.

k-space convention: unnormalized forward FFT, 1/N inverse (numpy
default), so forward/inverse round-trips are identities up to float
round-off. Spatial interpolation is linear with edge-value clamping.

Each transform draws from its own generator seeded by (seed, kind tag),
so one master seed reproduces a whole benchmark and the kinds stay
decorrelated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import ScalarVolume
from .errors import DataError, ParameterError

ARTIFACT_KINDS = (
    "downsample",
    "bias",
    "motion",
    "spikes",
    "noise",
    "ghost",
    "truncation",
    "scale",
)

_KIND_TAGS = {kind: i + 1 for i, kind in enumerate(ARTIFACT_KINDS)}
_AXES = {"x": 0, "y": 1, "z": 2}
_SEED_MASK = (1 << 64) - 1


def _rng(seed: int, kind: str) -> np.random.Generator:
    return np.random.default_rng((int(seed) & _SEED_MASK, _KIND_TAGS[kind]))


def _axis_index(axis: str) -> int:
    if axis not in _AXES:
        raise ParameterError(f"axis must be one of x, y, z, got {axis!r}")
    return _AXES[axis]


def _finite_output(data: np.ndarray, kind: str) -> None:
    if not np.isfinite(data).all():
        raise DataError(f"{kind} produced non-finite values")


def _result(v: ScalarVolume, data: np.ndarray, kind: str) -> ScalarVolume:
    _finite_output(data, kind)
    return ScalarVolume(data, spacing=v.spacing, affine=v.affine)


# ---------------------------------------------------------------------------
# downsample
# ---------------------------------------------------------------------------

def _upsample_matrix(n_fine: int, n_coarse: int) -> np.ndarray:
    """Linear interpolation from a coarse cell-centered grid to the fine grid.

    Both grids span the same physical extent; fine positions outside the
    coarse sample range clamp to the nearest coarse sample. Rows sum to 1.
    """
    h = n_fine / n_coarse
    u = np.zeros((n_fine, n_coarse))
    for i in range(n_fine):
        t = (i + 0.5) / h - 0.5  # fine center in coarse index coordinates
        t = min(max(t, 0.0), float(n_coarse - 1))
        j = min(int(np.floor(t)), n_coarse - 2) if n_coarse > 1 else 0
        w = t - j
        u[i, j] += 1.0 - w
        if n_coarse > 1:
            u[i, j + 1] += w
    return u


def _resample_axis(data: np.ndarray, axis: int, n_coarse: int) -> np.ndarray:
    """Round-trip one axis through a coarser grid.

    Restriction is the column-normalized adjoint of the linear upsampling
    operator (full weighting), so the round trip preserves both constants
    and the total sum of the signal.
    """
    n = data.shape[axis]
    up = _upsample_matrix(n, n_coarse)
    down = up.T / up.sum(axis=0)[:, None]
    coarse = np.moveaxis(np.tensordot(data, down, axes=([axis], [1])), -1, axis)
    return np.moveaxis(np.tensordot(coarse, up, axes=([axis], [1])), -1, axis)


def downsample(v: ScalarVolume, factor: float, axis: str = "z", seed: int = 0) -> ScalarVolume:
    """Simulate anisotropic acquisition: lose resolution along one axis.

    The axis is resampled to 1/factor resolution and back onto the
    original grid. factor=1 is the identity. The seed is accepted for
    interface uniformity; this transform draws no random numbers.
    """
    del seed
    if not np.isfinite(factor) or factor < 1.0:
        raise ParameterError(f"downsample factor must be >= 1, got {factor}")
    ax = _axis_index(axis)
    n = v.shape[ax]
    n_coarse = max(1, int(round(n / factor)))
    if n_coarse == n:
        return _result(v, v.data.copy(), "downsample")
    return _result(v, _resample_axis(v.data, ax, n_coarse), "downsample")


# ---------------------------------------------------------------------------
# bias
# ---------------------------------------------------------------------------

def _bias_exponents(order: int) -> list[tuple[int, int, int]]:
    return [
        (i, j, k)
        for i in range(order + 1)
        for j in range(order + 1 - i)
        for k in range(order + 1 - i - j)
    ]


def polynomial_bias_field(
    shape: Sequence[int], order: int, coefficients: Sequence[float]
) -> np.ndarray:
    """Multiplicative field exp(P) for a polynomial P of total degree <= order.

    Coordinates are normalized to [-1, 1] per axis (a size-1 axis maps to
    0). Coefficient order is lexicographic in the exponents (i, j, k) with
    i + j + k <= order, i outermost.
    """
    exponents = _bias_exponents(order)
    if len(coefficients) != len(exponents):
        raise ParameterError(
            f"order {order} needs {len(exponents)} coefficients, got {len(coefficients)}"
        )
    coords = [
        np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1) for n in shape
    ]
    log_field = np.zeros(tuple(shape))
    for c, (i, j, k) in zip(coefficients, exponents):
        if c == 0.0:
            continue
        term = np.einsum(
            "i,j,k->ijk", coords[0] ** i, coords[1] ** j, coords[2] ** k
        )
        log_field += c * term
    return np.exp(log_field)


def bias(v: ScalarVolume, order: int = 3, coeff_magnitude: float = 0.5, seed: int = 0) -> ScalarVolume:
    """Smooth multiplicative intensity inhomogeneity (bias field).

    The field is exp of a random polynomial over [-1, 1]-normalized
    coordinates, coefficients drawn uniformly from
    [-coeff_magnitude, +coeff_magnitude]. coeff_magnitude=0 is the identity.
    """
    if order < 0 or int(order) != order:
        raise ParameterError(f"bias order must be a non-negative integer, got {order}")
    if not np.isfinite(coeff_magnitude) or coeff_magnitude < 0:
        raise ParameterError(f"coeff_magnitude must be >= 0, got {coeff_magnitude}")
    if coeff_magnitude == 0.0:
        return _result(v, v.data.copy(), "bias")
    order = int(order)
    n_coeff = len(_bias_exponents(order))
    coeffs = _rng(seed, "bias").uniform(-coeff_magnitude, coeff_magnitude, size=n_coeff)
    field_arr = polynomial_bias_field(v.shape, order, coeffs)
    return _result(v, v.data * field_arr, "bias")


# ---------------------------------------------------------------------------
# motion
# ---------------------------------------------------------------------------

def rigid_transform(
    data: np.ndarray,
    spacing: Sequence[float],
    rotation_deg: Sequence[float],
    translation_mm: Sequence[float],
) -> np.ndarray:
    """Resample a volume under a rigid motion about the volume center.

    Rotation angles are about the x, y, z axes (composed Rx @ Ry @ Rz) in
    physical millimeter coordinates; translation is in millimeters. Linear
    interpolation, edge values clamped at the boundary.
    """
    rx, ry, rz = np.deg2rad(np.asarray(rotation_deg, dtype=np.float64))
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    rot_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rot_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    rot = rot_x @ rot_y @ rot_z

    s = np.asarray(spacing, dtype=np.float64)
    t = np.asarray(translation_mm, dtype=np.float64)
    center = (np.asarray(data.shape, dtype=np.float64) - 1.0) / 2.0
    # Output voxel y maps to input voxel A @ y + b in index space, where the
    # rigid motion acts in millimeter coordinates about the center.
    rot_inv = rot.T
    a = (rot_inv * s[None, :]) / s[:, None]
    b = center - a @ center - (rot_inv @ t) / s
    return ndimage.affine_transform(data, a, offset=b, order=1, mode="nearest")


def kspace_bands(n: int, num_segments: int) -> list[np.ndarray]:
    """Contiguous index bands partitioning a shifted spectrum axis of length n."""
    return list(np.array_split(np.arange(n), num_segments))


def stitch_kspace(volumes: Sequence[np.ndarray]) -> np.ndarray:
    """Stitch the spectra of temporally ordered volumes into one image.

    The fftshifted 3D spectra are partitioned along axis 0 (the slowest
    axis) into len(volumes) contiguous bands; band i is taken from volume
    i. Returns the real part of the inverse transform.
    """
    spectra = [np.fft.fftshift(np.fft.fftn(vol)) for vol in volumes]
    stitched = np.empty_like(spectra[0])
    for band, spectrum in zip(kspace_bands(volumes[0].shape[0], len(volumes)), spectra):
        stitched[band] = spectrum[band]
    return np.fft.ifftn(np.fft.ifftshift(stitched)).real


def motion(
    v: ScalarVolume,
    num_transforms: int = 2,
    max_rotation_deg: float = 10.0,
    max_translation_mm: float = 10.0,
    seed: int = 0,
) -> ScalarVolume:
    """Simulate subject motion by stitching k-space across rigid poses.

    num_transforms perturbed copies are generated (rotations and
    translations drawn uniformly within the bounds, per copy: angles then
    translations); the spectra of the original plus the copies are
    partitioned along the slowest axis into num_transforms + 1 contiguous
    bands assigned in temporal order.
    """
    if num_transforms < 1 or int(num_transforms) != num_transforms:
        raise ParameterError(f"num_transforms must be a positive integer, got {num_transforms}")
    if max_rotation_deg < 0 or max_translation_mm < 0:
        raise ParameterError("motion bounds must be >= 0")
    rng = _rng(seed, "motion")
    volumes = [v.data]
    for _ in range(int(num_transforms)):
        angles = rng.uniform(-max_rotation_deg, max_rotation_deg, size=3)
        shifts = rng.uniform(-max_translation_mm, max_translation_mm, size=3)
        volumes.append(rigid_transform(v.data, v.spacing, angles, shifts))
    return _result(v, stitch_kspace(volumes), "motion")


# ---------------------------------------------------------------------------
# spikes
# ---------------------------------------------------------------------------

def inject_spikes(
    data: np.ndarray,
    flat_indices: Sequence[int],
    amplitude: float,
    phases: Sequence[float],
) -> np.ndarray:
    """Add complex points of a fixed magnitude to given k-space bins."""
    kspace = np.fft.fftn(data)
    flat = kspace.reshape(-1)
    np.add.at(flat, np.asarray(flat_indices, dtype=np.intp),
              amplitude * np.exp(1j * np.asarray(phases, dtype=np.float64)))
    return np.fft.ifftn(flat.reshape(kspace.shape)).real


def spikes(v: ScalarVolume, num_spikes: int = 1, intensity: float = 1.0, seed: int = 0) -> ScalarVolume:
    """Add RF spike artifacts: strong isolated points in k-space.

    num_spikes points are added at uniformly drawn non-DC bins with
    magnitude intensity * max|k-space| of the input and uniformly drawn
    phases (locations drawn first, then phases). The relative magnitude
    keeps severity comparable across volumes of different intensity range.
    intensity=0 is permitted as the identity boundary.
    """
    if num_spikes < 1 or int(num_spikes) != num_spikes:
        raise ParameterError(f"num_spikes must be a positive integer, got {num_spikes}")
    if not np.isfinite(intensity) or intensity < 0:
        raise ParameterError(f"spike intensity must be >= 0, got {intensity}")
    rng = _rng(seed, "spikes")
    size = v.data.size
    # Flat index 0 is the DC bin of the unshifted spectrum.
    indices = rng.integers(1, size, size=int(num_spikes))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=int(num_spikes))
    kmax = np.abs(np.fft.fftn(v.data)).max()
    return _result(v, inject_spikes(v.data, indices, intensity * kmax, phases), "spikes")


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

def noise(v: ScalarVolume, std: float = 0.1, seed: int = 0) -> ScalarVolume:
    """Add i.i.d. zero-mean Gaussian noise of the given standard deviation."""
    if not np.isfinite(std) or std < 0:
        raise ParameterError(f"noise std must be >= 0, got {std}")
    if std == 0.0:
        return _result(v, v.data.copy(), "noise")
    rng = _rng(seed, "noise")
    return _result(v, v.data + rng.normal(0.0, std, size=v.shape), "noise")


# ---------------------------------------------------------------------------
# ghost
# ---------------------------------------------------------------------------

def ghost(
    v: ScalarVolume,
    num_ghosts: int = 4,
    axis: str = "y",
    intensity: float = 0.5,
    seed: int = 0,
) -> ScalarVolume:
    """Periodic ghost replicas along one axis.

    Every num_ghosts-th k-space plane perpendicular to the axis (excluding
    the DC plane) is scaled by (1 - intensity). The DC plane is untouched,
    so the volume mean is preserved. The seed is accepted for interface
    uniformity; this transform draws no random numbers.
    """
    del seed
    if num_ghosts < 1 or int(num_ghosts) != num_ghosts:
        raise ParameterError(f"num_ghosts must be a positive integer, got {num_ghosts}")
    if not (0.0 <= intensity <= 1.0):
        raise ParameterError(f"ghost intensity must be in [0, 1], got {intensity}")
    ax = _axis_index(axis)
    kspace = np.fft.fftn(v.data)
    planes = np.arange(0, v.shape[ax], int(num_ghosts))[1:]
    sl = [slice(None)] * 3
    sl[ax] = planes
    kspace[tuple(sl)] *= 1.0 - intensity
    return _result(v, np.fft.ifftn(kspace).real, "ghost")


# ---------------------------------------------------------------------------
# truncation
# ---------------------------------------------------------------------------

def truncation(v: ScalarVolume, max_fraction: float = 0.25, seed: int = 0) -> ScalarVolume:
    """Blank the top and bottom z-slices, mimicking file-transfer loss.

    n_top and n_bottom are drawn uniformly from [1, floor(max_fraction *
    nz)] (top drawn first). Slices are zero-filled rather than removed so
    every volume in a dataset keeps the same shape.
    """
    if not (0.0 < max_fraction < 0.5):
        raise ParameterError(f"max_fraction must be in (0, 0.5), got {max_fraction}")
    nz = v.shape[2]
    hi = int(np.floor(max_fraction * nz))
    if hi < 1:
        raise ParameterError(
            f"max_fraction {max_fraction} removes no whole slice for nz={nz}"
        )
    rng = _rng(seed, "truncation")
    n_top = int(rng.integers(1, hi + 1))
    n_bottom = int(rng.integers(1, hi + 1))
    data = v.data.copy()
    data[:, :, :n_bottom] = 0.0
    data[:, :, nz - n_top:] = 0.0
    return _result(v, data, "truncation")


# ---------------------------------------------------------------------------
# scale
# ---------------------------------------------------------------------------

def scale(v: ScalarVolume, factor: float = 1.2, seed: int = 0) -> ScalarVolume:
    """Isotropic spatial zoom about the volume center.

    factor > 1 magnifies (the field of view is effectively cropped);
    factor < 1 shrinks (the border is zero-padded). Linear interpolation;
    the volume center is a fixed point. The seed is accepted for interface
    uniformity; this transform draws no random numbers.
    """
    del seed
    if not np.isfinite(factor) or factor <= 0:
        raise ParameterError(f"scale factor must be > 0, got {factor}")
    if factor == 1.0:
        return _result(v, v.data.copy(), "scale")
    center = (np.asarray(v.shape, dtype=np.float64) - 1.0) / 2.0
    matrix = np.eye(3) / factor
    offset = center - center / factor
    data = ndimage.affine_transform(
        v.data, matrix, offset=offset, order=1, mode="constant", cval=0.0
    )
    return _result(v, data, "scale")


# ---------------------------------------------------------------------------
# spec + dispatch
# ---------------------------------------------------------------------------

_TRANSFORMS = {
    "downsample": downsample,
    "bias": bias,
    "motion": motion,
    "spikes": spikes,
    "noise": noise,
    "ghost": ghost,
    "truncation": truncation,
    "scale": scale,
}

_PARAM_NAMES = {
    "downsample": {"factor", "axis"},
    "bias": {"order", "coeff_magnitude"},
    "motion": {"num_transforms", "max_rotation_deg", "max_translation_mm"},
    "spikes": {"num_spikes", "intensity"},
    "noise": {"std"},
    "ghost": {"num_ghosts", "axis", "intensity"},
    "truncation": {"max_fraction"},
    "scale": {"factor"},
}


@dataclass(frozen=True)
class ArtifactSpec:
    """One corruption: kind, severity parameters, and a 64-bit seed."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _TRANSFORMS:
            raise ParameterError(f"unknown artifact kind {self.kind!r}")
        unknown = set(self.params) - _PARAM_NAMES[self.kind]
        if unknown:
            raise ParameterError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "seed", int(self.seed) & _SEED_MASK)


def apply_artifact(v: ScalarVolume, spec: ArtifactSpec) -> ScalarVolume:
    """Apply one corruption; bit-identical for identical (input, spec)."""
    return _TRANSFORMS[spec.kind](v, seed=spec.seed, **spec.params)
