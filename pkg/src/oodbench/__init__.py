"""Uncertainty-based out-of-distribution detection benchmark for volumetric segmentation."""

from .core import (
    LabelVolume,
    PredictionStack,
    ProbVolume,
    ScalarVolume,
    Signature,
    argmax_labels,
    validate,
)
from .artifacts import ARTIFACT_KINDS, ArtifactSpec, apply_artifact
from .metrics import auroc, dice, mean_std
from .scoring import (
    ReferenceSignatureSet,
    VoxelUncertaintyMap,
    dum_score,
    dum_signature,
    image_score,
    msp_uncertainty,
    score_method,
    variance_uncertainty,
)
from .toymodel import PhantomSpec, ToyModelConfig, features, make_phantom, segment
from .harness import EvalReport, emit_report, gate, run_demo, run_eval, synth_benchmark

__version__ = "0.1.0"

__all__ = [
    "ARTIFACT_KINDS",
    "ArtifactSpec",
    "EvalReport",
    "LabelVolume",
    "PhantomSpec",
    "PredictionStack",
    "ProbVolume",
    "ReferenceSignatureSet",
    "ScalarVolume",
    "Signature",
    "ToyModelConfig",
    "VoxelUncertaintyMap",
    "apply_artifact",
    "argmax_labels",
    "auroc",
    "dice",
    "dum_score",
    "dum_signature",
    "emit_report",
    "features",
    "gate",
    "image_score",
    "make_phantom",
    "mean_std",
    "msp_uncertainty",
    "run_demo",
    "run_eval",
    "score_method",
    "segment",
    "synth_benchmark",
    "validate",
    "variance_uncertainty",
    "__version__",
]
