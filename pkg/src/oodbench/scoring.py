"""Image-level uncertainty scores for OOD detection.

Four scoring methods map predictions or features to one scalar per image,
oriented so that higher always means more out-of-distribution:

* msp: 1 - maximum softmax probability, averaged over voxels;
* mc_variance / ensemble_variance: predictive variance across a stack of
  T predictions, averaged over classes and voxels (the two differ only in
  how the stack was produced upstream);
* dum: distance between the image's pooled feature signature and a bank
  of reference signatures.

Variance is the population variance (divide by T): the stack is the full
prediction set, not a sample. Either convention only rescales scores and
leaves the rank-based AUROC unchanged, but it is fixed for reproducibility.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import LabelVolume, PredictionStack, ProbVolume, Signature, Spacing
from .errors import (
    DimensionMismatchError,
    EmptyMaskError,
    ParameterError,
    ShapeError,
    UsageError,
)

METHODS = ("msp", "mc_variance", "ensemble_variance", "dum")
REDUCERS = ("mean", "min", "knn")


def _readonly(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.setflags(write=False)
    return view


@dataclass(frozen=True)
class VoxelUncertaintyMap:
    """Per-voxel uncertainty values with the method that produced them.

    msp values lie in [0, 1 - 1/C]; variance values lie in [0, 0.25].
    """

    values: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)
    method: str = "msp"

    _CAPS = {"msp": 1.0, "variance": 0.25}

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ShapeError(f"uncertainty map must be 3D, got ndim={values.ndim}")
        if self.method not in self._CAPS:
            raise ValueError(f"unknown uncertainty method {self.method!r}")
        if values.size:
            if not np.isfinite(values).all():
                raise ValueError("uncertainty values must be finite")
            cap = self._CAPS[self.method]
            if values.min() < 0.0 or values.max() > cap + 1e-12:
                raise ValueError(
                    f"{self.method} uncertainties must lie in [0, {cap}], "
                    f"got [{values.min():g}, {values.max():g}]"
                )
        object.__setattr__(self, "values", _readonly(values))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class ReferenceSignatureSet:
    """Bank of signatures from in-distribution reference images."""

    signatures: tuple[Signature, ...]
    source_dataset: str = ""

    def __post_init__(self):
        sigs = tuple(self.signatures)
        if not sigs:
            raise ValueError("reference signature set must be non-empty")
        dim = sigs[0].dimension
        for s in sigs:
            if s.dimension != dim:
                raise DimensionMismatchError(
                    f"reference dimensions differ: {s.dimension} vs {dim}"
                )
        object.__setattr__(self, "signatures", sigs)

    @property
    def dimension(self) -> int:
        return self.signatures[0].dimension

    @property
    def count(self) -> int:
        return len(self.signatures)

    def matrix(self) -> np.ndarray:
        return np.stack([s.features for s in self.signatures])


def msp_uncertainty(p: ProbVolume) -> VoxelUncertaintyMap:
    """Per-voxel uncertainty 1 - max class probability."""
    values = 1.0 - p.probs.max(axis=0)
    # Guard against float round-off pushing confident voxels below 0.
    np.clip(values, 0.0, 1.0, out=values)
    return VoxelUncertaintyMap(values, spacing=p.spacing, method="msp")


def _stack_dtype(s: PredictionStack) -> np.dtype:
    return np.result_type(*(m.probs.dtype for m in s.members))


def stack_mean(s: PredictionStack) -> ProbVolume:
    """Member-wise mean prediction (the consensus segmentation input).

    Accumulates in the members' precision: float64 members get exact
    64-bit statistics, float32-backed stacks stay in storage precision.
    """
    acc = np.zeros(s.members[0].probs.shape, dtype=_stack_dtype(s))
    for m in s.members:
        acc += m.probs
    acc /= len(s)
    return ProbVolume(acc, spacing=s.spacing, affine=s.members[0].affine)


def variance_uncertainty(s: PredictionStack) -> VoxelUncertaintyMap:
    """Per-voxel predictive variance across stack members, averaged over classes.

    Two-pass streaming computation (mean first, then squared deviations)
    in the members' precision; no (T, C, ...) array is materialized and
    float64 members yield exact 64-bit moments.
    """
    t = len(s)
    dtype = _stack_dtype(s)
    shape = s.members[0].probs.shape
    mean = np.zeros(shape, dtype=dtype)
    for m in s.members:
        mean += m.probs
    mean /= t
    acc = np.zeros(shape, dtype=dtype)
    tmp = np.empty(shape, dtype=dtype)
    for m in s.members:
        np.subtract(m.probs, mean, out=tmp)
        np.multiply(tmp, tmp, out=tmp)
        acc += tmp
    values = (acc / t).mean(axis=0, dtype=np.float64)
    np.clip(values, 0.0, 0.25, out=values)
    return VoxelUncertaintyMap(values, spacing=s.spacing, method="variance")


def image_score(u: VoxelUncertaintyMap, mask: Optional[LabelVolume] = None) -> float:
    """Reduce a voxel uncertainty map to one score: the mean uncertainty.

    By default all voxels contribute (skull-stripped backgrounds carry
    near-zero uncertainty anyway); pass a mask to average over mask > 0
    voxels only.
    """
    if mask is None:
        return float(u.values.mean())
    if mask.shape != u.shape:
        raise ShapeError(f"mask shape {mask.shape} differs from map shape {u.shape}")
    sel = mask.labels > 0
    if not sel.any():
        raise EmptyMaskError("mask selects no voxels")
    return float(u.values[sel].mean())


def dum_signature(feature_maps: Sequence[np.ndarray], source_id: str = "") -> Signature:
    """Pool feature maps into a signature: one spatial mean per channel."""
    if len(feature_maps) == 0:
        raise ShapeError("need at least one feature channel")
    shape = np.asarray(feature_maps[0]).shape
    means = []
    for i, fmap in enumerate(feature_maps):
        arr = np.asarray(fmap, dtype=np.float64)
        if arr.shape != shape:
            raise ShapeError(f"feature channel {i}: shape {arr.shape} differs from {shape}")
        means.append(arr.mean())
    return Signature(np.array(means), source_id=source_id)


def dum_score(
    s: Signature,
    refs: ReferenceSignatureSet,
    reducer: str = "mean",
    k: Optional[int] = None,
) -> float:
    """Distance from a test signature to the reference bank.

    Euclidean distances to every reference, reduced by `mean` (default),
    `min`, or `knn` (mean of the k smallest; knn with k=1 equals min).
    """
    if s.dimension != refs.dimension:
        raise DimensionMismatchError(
            f"signature dimension {s.dimension} != reference dimension {refs.dimension}"
        )
    if reducer not in REDUCERS:
        raise ParameterError(f"reducer must be one of {REDUCERS}, got {reducer!r}")
    dists = np.linalg.norm(refs.matrix() - s.features[None, :], axis=1)
    if reducer == "mean":
        return float(dists.mean())
    if reducer == "min":
        return float(dists.min())
    if k is None or k < 1 or k > refs.count:
        raise ParameterError(f"knn reducer needs 1 <= k <= {refs.count}, got {k}")
    return float(np.sort(dists)[: int(k)].mean())


def score_method(
    method: str,
    *,
    prob: Optional[ProbVolume] = None,
    stack: Optional[PredictionStack] = None,
    features: Optional[Sequence[np.ndarray]] = None,
    refs: Optional[ReferenceSignatureSet] = None,
    mask: Optional[LabelVolume] = None,
    reducer: str = "mean",
    knn_k: Optional[int] = None,
) -> float:
    """Dispatch to one of the four scoring methods.

    msp consumes a ProbVolume; mc_variance and ensemble_variance consume a
    PredictionStack (they share the variance path); dum consumes feature
    maps plus a reference signature set. Supplying the wrong inputs for
    the method is a usage error.
    """
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}, expected one of {METHODS}")
    if method == "msp":
        if prob is None or stack is not None or features is not None:
            raise UsageError("msp takes exactly a probability volume")
        return image_score(msp_uncertainty(prob), mask=mask)
    if method in ("mc_variance", "ensemble_variance"):
        if stack is None or prob is not None or features is not None:
            raise UsageError(f"{method} takes exactly a prediction stack")
        return image_score(variance_uncertainty(stack), mask=mask)
    if features is None or refs is None or prob is not None or stack is not None:
        raise UsageError("dum takes feature maps and a reference signature set")
    return dum_score(dum_signature(features), refs, reducer=reducer, k=knn_k)


# ---------------------------------------------------------------------------
# signature bank persistence
# ---------------------------------------------------------------------------

def save_signatures(refs: ReferenceSignatureSet, path) -> None:
    """Persist a signature bank as CSV: source_id plus D feature columns."""
    dim = refs.dimension
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["source_id"] + [f"f{i}" for i in range(dim)])
        for sig in refs.signatures:
            writer.writerow([sig.source_id] + [repr(float(x)) for x in sig.features])


def load_signatures(path, source_dataset: str = "") -> ReferenceSignatureSet:
    """Load a signature bank written by save_signatures."""
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "source_id":
            raise ShapeError(f"{path}: not a signature CSV (missing source_id header)")
        sigs = []
        for row in reader:
            if not row:
                continue
            sigs.append(Signature(np.array([float(x) for x in row[1:]]), source_id=row[0]))
    if not sigs:
        raise ShapeError(f"{path}: signature CSV has no rows")
    return ReferenceSignatureSet(tuple(sigs), source_dataset=source_dataset or path.stem)
