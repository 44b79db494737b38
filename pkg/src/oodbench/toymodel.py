"""Training-free stand-in model and synthetic phantoms.

The phantom generator builds an ellipsoidal "head" with nested tissue
shells, spherical lesions and Gaussian texture, returning the image and
its ground-truth labels. The segmenter assigns per-voxel class scores
from the squared distance between the (smoothed) intensity and a set of
class prototype intensities, softmaxed with a temperature. Jittering the
prototypes with a seeded draw emulates the run-to-run diversity of
stochastic inference, which gives predictive-variance methods something
real to measure. A fixed filter bank stands in for penultimate-layer
features.

Everything here is deterministic given the seeds, needs no training and
is analytically checkable, while still exhibiting the phenomena the
pipeline must exercise: confidence, prediction diversity and feature
shifts under corruption.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .core import LabelVolume, PredictionStack, ProbVolume, ScalarVolume
from .errors import ParameterError

_SEED_MASK = (1 << 64) - 1

# Fraction of the volume occupied by the head ellipsoid, and the inner
# shell's share of the head's semi-axes.
_HEAD_SEMI_FRACTION = 0.44
_INNER_FRACTION = 0.62

PHANTOM_LESION_CLASS = 3  # background=0, outer tissue=1, inner tissue=2


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry and intensity recipe for one synthetic head phantom."""

    shape: tuple[int, int, int] = (32, 32, 32)
    class_means: tuple[float, ...] = (0.05, 0.35, 0.55, 0.95)
    class_stds: tuple[float, ...] = (0.05, 0.06, 0.06, 0.06)
    lesion_count: tuple[int, int] = (1, 3)
    lesion_radius: tuple[int, int] = (2, 3)
    seed: int = 0

    def __post_init__(self):
        if len(self.class_means) != 4 or len(self.class_stds) != 4:
            raise ParameterError("phantoms use 4 classes: background, 2 tissues, lesion")
        if len(set(self.class_means)) != len(self.class_means):
            raise ParameterError("class means must be pairwise distinct")
        if any(s < 0 for s in self.class_stds):
            raise ParameterError("class stds must be >= 0")
        lo, hi = self.lesion_count
        if lo < 0 or hi < lo:
            raise ParameterError(f"bad lesion count range {self.lesion_count}")
        rlo, rhi = self.lesion_radius
        if rlo < 1 or rhi < rlo:
            raise ParameterError(f"lesion radii must be >= 1, got {self.lesion_radius}")
        object.__setattr__(self, "seed", int(self.seed) & _SEED_MASK)


def _ellipsoid_coordinate(shape: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Normalized ellipsoid radius u(x) of every voxel plus the semi-axes."""
    shape_arr = np.asarray(shape, dtype=np.float64)
    center = (shape_arr - 1.0) / 2.0
    semi = _HEAD_SEMI_FRACTION * shape_arr
    grids = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij")
    u = np.sqrt(sum(((g - c) / a) ** 2 for g, c, a in zip(grids, center, semi)))
    return u, semi


def make_phantom(spec: PhantomSpec) -> tuple[ScalarVolume, LabelVolume]:
    """Generate one phantom image and its ground-truth label map.

    Draw order (one generator from spec.seed): lesion count, then per
    lesion its radius and center, then one Gaussian texture field.
    Lesions are placed uniformly among the voxels where the whole sphere
    fits inside the head.
    """
    rng = np.random.default_rng(spec.seed)
    u, semi = _ellipsoid_coordinate(spec.shape)
    labels = np.zeros(spec.shape, dtype=np.int64)
    labels[u <= 1.0] = 1
    labels[u <= _INNER_FRACTION] = 2

    grids = np.indices(spec.shape)
    lo, hi = spec.lesion_count
    n_lesions = int(rng.integers(lo, hi + 1))
    for _ in range(n_lesions):
        rlo, rhi = spec.lesion_radius
        radius = int(rng.integers(rlo, rhi + 1))
        # Conservative fit test: the sphere stays inside the head ellipsoid
        # whenever u(center) + r / min(semi-axis) <= 1.
        fits = u <= 1.0 - radius / semi.min()
        candidates = np.argwhere(fits)
        if candidates.size == 0:
            raise ParameterError(
                f"lesion radius {radius} does not fit inside the head for shape {spec.shape}"
            )
        center = candidates[int(rng.integers(0, len(candidates)))]
        dist2 = sum((g - c) ** 2 for g, c in zip(grids, center))
        labels[dist2 <= radius * radius] = PHANTOM_LESION_CLASS

    means = np.asarray(spec.class_means)[labels]
    stds = np.asarray(spec.class_stds)[labels]
    image = means + stds * rng.standard_normal(spec.shape)
    return (
        ScalarVolume(image),
        LabelVolume(labels, num_classes=4),
    )


@dataclass(frozen=True)
class ToyModelConfig:
    """Prototype-softmax segmenter configuration.

    One prototype intensity per class (class 0 = background); lesion_class
    names the prototype that plays the lesion role, defaulting to the last
    one. temperature controls softmax sharpness, smoothing_sigma the
    Gaussian pre-smoothing, perturb_scale the prototype jitter used for
    stochastic ensembling, feature_scales the two scales of the fixed
    filter bank (identity, Gaussian blur, gradient magnitude, Laplacian).
    """

    prototypes: tuple[float, ...] = (0.45, 0.95)
    temperature: float = 0.02
    smoothing_sigma: float = 0.5
    perturb_scale: float = 0.05
    feature_scales: tuple[float, float] = (0.5, 1.5)
    lesion_class: int = -1

    def __post_init__(self):
        if len(self.prototypes) < 2:
            raise ParameterError("need at least 2 class prototypes")
        if self.temperature <= 0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        if self.smoothing_sigma < 0 or self.perturb_scale < 0:
            raise ParameterError("smoothing_sigma and perturb_scale must be >= 0")
        lesion = self.lesion_class if self.lesion_class >= 0 else len(self.prototypes) - 1
        if lesion >= len(self.prototypes):
            raise ParameterError(f"lesion_class {lesion} out of range")
        object.__setattr__(self, "lesion_class", lesion)

    @property
    def num_classes(self) -> int:
        return len(self.prototypes)


def _smoothed(v: ScalarVolume, cfg: ToyModelConfig) -> np.ndarray:
    if cfg.smoothing_sigma == 0:
        return v.data
    return ndimage.gaussian_filter(v.data, cfg.smoothing_sigma)


def _perturbed_prototypes(cfg: ToyModelConfig, perturb_seed: Optional[int]) -> np.ndarray:
    protos = np.asarray(cfg.prototypes, dtype=np.float64)
    if perturb_seed is None or cfg.perturb_scale == 0:
        return protos
    rng = np.random.default_rng(int(perturb_seed) & _SEED_MASK)
    return protos + cfg.perturb_scale * rng.standard_normal(protos.size)


def _stack_probs(smoothed: np.ndarray, protos: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax of -(intensity - prototype)^2 / temperature per member.

    protos has shape (T, C); the result has shape (T, C, nx, ny, nz) in
    float32 (the probability storage precision; per-voxel class sums stay
    within ~1e-7 of 1). The class-independent intensity-squared term
    cancels in the softmax and is dropped. The per-member maximum class
    always scores exp(0)=1 after the shift, so the normalization never
    degenerates, even for wildly corrupted intensities.
    """
    sm32 = smoothed.astype(np.float32)
    coef = (2.0 * protos / temperature).astype(np.float32)
    const = ((protos * protos) / temperature).astype(np.float32)
    scores = np.multiply.outer(coef, sm32)
    scores -= const[:, :, None, None, None]
    mx = scores.max(axis=1, keepdims=True)
    np.subtract(scores, mx, out=scores)
    np.exp(scores, out=scores)
    denom = scores.sum(axis=1, keepdims=True)
    scores /= denom
    return scores


def segment(v: ScalarVolume, cfg: ToyModelConfig, perturb_seed: Optional[int] = None) -> ProbVolume:
    """Segment one volume into class probabilities.

    With a perturb_seed (and perturb_scale > 0) the prototypes are
    jittered by one seeded Gaussian draw per class before scoring, giving
    diverse but reproducible predictions for the same input.
    """
    protos = _perturbed_prototypes(cfg, perturb_seed)[None, :]
    probs = _stack_probs(_smoothed(v, cfg), protos, cfg.temperature)[0]
    return ProbVolume(probs, spacing=v.spacing, affine=v.affine)


def segment_stack(
    v: ScalarVolume, cfg: ToyModelConfig, perturb_seeds: Sequence[Optional[int]]
) -> PredictionStack:
    """Segment one volume under several prototype jitters at once.

    Member t equals segment(v, cfg, perturb_seeds[t]) exactly; the
    smoothing and the softmax evaluation are shared across members.
    """
    smoothed = _smoothed(v, cfg)
    protos = np.stack([_perturbed_prototypes(cfg, s) for s in perturb_seeds])
    probs = _stack_probs(smoothed, protos, cfg.temperature)
    members = tuple(
        ProbVolume(probs[t], spacing=v.spacing, affine=v.affine)
        for t in range(len(perturb_seeds))
    )
    return PredictionStack(members)


def _laplace_dc_response(sigma: float) -> float:
    """Response of the discrete Gaussian Laplacian to a constant 1.

    The truncated second-derivative kernel is not exactly zero-sum for
    small sigma; this constant is subtracted out so derivative channels
    vanish on constant volumes.
    """
    radius = int(4.0 * float(sigma) + 0.5)
    size = 2 * radius + 1
    return float(ndimage.gaussian_laplace(np.ones((size, size, size)), sigma)[radius, radius, radius])


def features(v: ScalarVolume, cfg: ToyModelConfig) -> list[np.ndarray]:
    """Fixed filter bank standing in for penultimate-layer feature maps.

    At each of the two configured scales: the identity, a Gaussian blur,
    the Gaussian gradient magnitude and the (zero-DC) Gaussian Laplacian,
    for 8 channels total. Deterministic; the gradient and Laplacian
    channels are identically zero on constant volumes.
    """
    channels = []
    for sigma in cfg.feature_scales:
        blur = ndimage.gaussian_filter(v.data, sigma)
        lap = ndimage.gaussian_laplace(v.data, sigma) - _laplace_dc_response(sigma) * blur
        channels.append(v.data.copy())
        channels.append(blur)
        channels.append(ndimage.gaussian_gradient_magnitude(v.data, sigma))
        channels.append(lap)
    return channels
