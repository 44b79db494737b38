"""Volumetric data model shared by every other module.

All containers are immutable after construction: their arrays are exposed
as read-only views and the dataclasses are frozen, so instances can be
shared freely across worker threads. Internal computation is float64;
file storage is float32 (see :mod:`oodbench.nifti`).

Class 0 is background by convention. The lesion class index is declared
in dataset/model configuration, never hard-coded, so binary (C=2) and
multiclass (C=8) settings share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ShapeError

# Tolerance on per-voxel probability sums; accommodates float32 round-off
# introduced by external producers.
PROB_SUM_TOL = 1e-5

Spacing = tuple[float, float, float]


def _readonly(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.setflags(write=False)
    return view


def _check_spacing(spacing) -> Spacing:
    if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise ValueError(f"spacing must be three positive reals, got {spacing!r}")
    return (float(spacing[0]), float(spacing[1]), float(spacing[2]))


def _check_affine(affine) -> Optional[np.ndarray]:
    if affine is None:
        return None
    affine = np.asarray(affine, dtype=np.float64)
    if affine.shape != (4, 4):
        raise ShapeError(f"affine must be 4x4, got {affine.shape}")
    return _readonly(affine)


@dataclass(frozen=True)
class ScalarVolume:
    """A 3D grid of real intensities with voxel spacing in millimeters.

    The orientation affine, when present, is carried through reads and
    writes verbatim but never interpreted (inputs are assumed
    pre-registered to a common template).
    """

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)
    affine: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ShapeError(f"scalar volume must be 3D, got ndim={data.ndim}")
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        object.__setattr__(self, "affine", _check_affine(self.affine))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class LabelVolume:
    """A 3D grid of class indices in {0, ..., num_classes - 1}."""

    labels: np.ndarray
    num_classes: int
    spacing: Spacing = (1.0, 1.0, 1.0)
    affine: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ShapeError(f"label volume must be 3D, got ndim={labels.ndim}")
        if not np.issubdtype(labels.dtype, np.integer):
            labels = labels.astype(np.int64)
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(
                f"labels must lie in [0, {self.num_classes - 1}], "
                f"got range [{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        object.__setattr__(self, "affine", _check_affine(self.affine))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class ProbVolume:
    """Per-voxel class probabilities, indexed (class, x, y, z).

    Construction only checks structure (4D array, >= 2 classes); value
    constraints are checked by :func:`validate` so that violating
    instances can be represented and reported.

    Payloads may be stored as float32 (the storage precision) or float64;
    float64 payloads always get exact 64-bit statistics downstream.
    """

    probs: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)
    affine: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        probs = np.asarray(self.probs)
        if probs.dtype not in (np.float32, np.float64):
            probs = probs.astype(np.float64)
        if probs.ndim != 4:
            raise ShapeError(f"probability volume must be 4D (class first), got ndim={probs.ndim}")
        if probs.shape[0] < 2:
            raise ShapeError(f"need >= 2 classes, got {probs.shape[0]}")
        object.__setattr__(self, "probs", _readonly(probs))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        object.__setattr__(self, "affine", _check_affine(self.affine))

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.probs.shape[1:]


@dataclass(frozen=True)
class PredictionStack:
    """An ordered set of T >= 2 probability volumes for one input image.

    Members may come from stochastic forward passes of one model or from
    independent ensemble members; the variance computation downstream is
    identical either way.
    """

    members: tuple[ProbVolume, ...]

    def __post_init__(self):
        members = tuple(self.members)
        if len(members) < 2:
            raise ValueError(f"a prediction stack needs T >= 2 members, got {len(members)}")
        first = members[0]
        for m in members[1:]:
            if m.num_classes != first.num_classes or m.shape != first.shape:
                raise ShapeError("stack members must share num_classes and shape")
            if m.spacing != first.spacing:
                raise ShapeError("stack members must share spacing")
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.members)

    @property
    def num_classes(self) -> int:
        return self.members[0].num_classes

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.members[0].shape

    @property
    def spacing(self) -> Spacing:
        return self.members[0].spacing

    def as_array(self) -> np.ndarray:
        """Stack members into a (T, C, nx, ny, nz) array."""
        return np.stack([m.probs for m in self.members])


@dataclass(frozen=True)
class Signature:
    """Fixed-length feature vector summarizing one volume's activations."""

    features: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 1 or feats.size == 0:
            raise ShapeError(f"signature must be a non-empty vector, got shape {feats.shape}")
        if not np.isfinite(feats).all():
            raise ValueError("signature components must be finite")
        object.__setattr__(self, "features", _readonly(feats))

    @property
    def dimension(self) -> int:
        return self.features.size


def argmax_labels(p: ProbVolume) -> LabelVolume:
    """Hard segmentation: per-voxel class of maximum probability.

    Ties break toward the smallest class index, so outputs are
    deterministic and reports are reproducible.
    """
    labels = np.argmax(p.probs, axis=0)
    return LabelVolume(labels, num_classes=p.num_classes, spacing=p.spacing, affine=p.affine)


def validate(p: ProbVolume) -> Optional[str]:
    """Check ProbVolume value invariants; return the first violation or None.

    Checks run in a fixed order: array layout, finiteness, [0, 1] range,
    then per-voxel sums against PROB_SUM_TOL.
    """
    probs = p.probs
    if probs.ndim != 4:
        return f"shape mismatch: expected 4D (class, x, y, z), got ndim={probs.ndim}"
    if not np.isfinite(probs).all():
        return "non-finite value in probabilities"
    if probs.min() < 0.0 or probs.max() > 1.0:
        return f"probability out of [0, 1]: range [{probs.min():g}, {probs.max():g}]"
    sums = probs.sum(axis=0)
    dev = np.abs(sums - 1.0)
    if dev.max() > PROB_SUM_TOL:
        worst = np.unravel_index(int(np.argmax(dev)), sums.shape)
        return f"per-voxel sum {sums[worst]:g} at voxel {worst} (tolerance {PROB_SUM_TOL:g})"
    return None
