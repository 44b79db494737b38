"""Dataset manifests and benchmark configuration files.

Manifests and configs are YAML. A manifest lists one dataset: its id, its
role in the protocol (id_reference, id_test, or ood), and its cases.
Paths inside a manifest are resolved relative to the manifest file's
directory so dataset trees stay relocatable.

Manifest schema::

    dataset_id: id_test
    role: id_test              # id_reference | id_test | ood
    provenance: free text      # e.g. which corruption produced it
    truth_lesion_class: 3      # class index of the lesion in truth maps
    cases:
      - case_id: case_000
        image: images/case_000.nii.gz
        truth: truths/case_000.nii.gz        # optional
        predictions: [p0.nii.gz, p1.nii.gz]  # optional, 4D prob files
        features: feats/case_000.nii.gz      # optional, 4D feature file
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigurationError
from .toymodel import ToyModelConfig

ROLES = ("id_reference", "id_test", "ood")


@dataclass(frozen=True)
class CaseEntry:
    """One evaluation case: an image plus optional companion files."""

    case_id: str
    image: Path
    truth: Optional[Path] = None
    predictions: tuple[Path, ...] = ()
    features: Optional[Path] = None


@dataclass(frozen=True)
class DatasetManifest:
    dataset_id: str
    role: str
    cases: tuple[CaseEntry, ...]
    provenance: str = ""
    truth_lesion_class: int = 1

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigurationError(f"role must be one of {ROLES}, got {self.role!r}")
        object.__setattr__(self, "cases", tuple(self.cases))

    def case_ids(self) -> list[str]:
        return [c.case_id for c in self.cases]


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def load_manifest(path) -> DatasetManifest:
    """Load and validate a dataset manifest; every referenced path must exist."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigurationError(f"{path}: invalid YAML ({e})") from e
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: manifest must be a mapping")
    base = path.parent
    try:
        cases = []
        for entry in raw.get("cases", []):
            case = CaseEntry(
                case_id=str(entry["case_id"]),
                image=_resolve(base, entry["image"]),
                truth=_resolve(base, entry["truth"]) if entry.get("truth") else None,
                predictions=tuple(
                    _resolve(base, p) for p in entry.get("predictions", [])
                ),
                features=_resolve(base, entry["features"]) if entry.get("features") else None,
            )
            cases.append(case)
        manifest = DatasetManifest(
            dataset_id=str(raw["dataset_id"]),
            role=str(raw["role"]),
            cases=tuple(cases),
            provenance=str(raw.get("provenance", "")),
            truth_lesion_class=int(raw.get("truth_lesion_class", 1)),
        )
    except KeyError as e:
        raise ConfigurationError(f"{path}: missing manifest field {e}") from e

    for case in manifest.cases:
        for p in [case.image, case.truth, case.features, *case.predictions]:
            if p is not None and not p.exists():
                raise ConfigurationError(
                    f"{path}: case {case.case_id}: referenced file does not exist: {p}"
                )
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest with paths stored relative to the manifest directory."""
    path = Path(path)
    base = path.parent

    def rel(p: Optional[Path]):
        return None if p is None else os.path.relpath(p, base)

    doc = {
        "dataset_id": manifest.dataset_id,
        "role": manifest.role,
        "provenance": manifest.provenance,
        "truth_lesion_class": manifest.truth_lesion_class,
        "cases": [
            {
                "case_id": c.case_id,
                "image": rel(c.image),
                **({"truth": rel(c.truth)} if c.truth else {}),
                **({"predictions": [rel(p) for p in c.predictions]} if c.predictions else {}),
                **({"features": rel(c.features)} if c.features else {}),
            }
            for c in manifest.cases
        ],
    }
    path.write_text(yaml.safe_dump(doc, sort_keys=False))


def check_disjoint(reference: DatasetManifest, test: DatasetManifest) -> None:
    """id_reference and id_test must not share cases."""
    ref_images = {c.image.resolve() for c in reference.cases}
    shared = [c.case_id for c in test.cases if c.image.resolve() in ref_images]
    if shared:
        raise ConfigurationError(
            f"id_reference and id_test share cases: {shared[:5]}"
        )


# ---------------------------------------------------------------------------
# benchmark configuration
# ---------------------------------------------------------------------------

DEFAULT_RUNS = 5
DEFAULT_ENSEMBLE_SIZE = 20  # T inferences per image


@dataclass(frozen=True)
class EvalConfig:
    """Full protocol configuration for the `eval` command."""

    id_test: DatasetManifest
    ood: tuple[DatasetManifest, ...]
    models: dict  # flavor name -> ToyModelConfig
    id_reference: Optional[DatasetManifest] = None
    methods: tuple[str, ...] = ("msp", "mc_variance", "ensemble_variance", "dum")
    runs: int = DEFAULT_RUNS
    ensemble_size: int = DEFAULT_ENSEMBLE_SIZE
    seed: int = 0
    dum_reducer: str = "mean"
    dum_knn_k: Optional[int] = None
    use_mask: bool = False


def _model_from_dict(d: dict) -> ToyModelConfig:
    kwargs = {}
    for key in ("prototypes", "feature_scales"):
        if key in d:
            kwargs[key] = tuple(d[key])
    for key in ("temperature", "smoothing_sigma", "perturb_scale"):
        if key in d:
            kwargs[key] = float(d[key])
    if "lesion_class" in d:
        kwargs["lesion_class"] = int(d["lesion_class"])
    return ToyModelConfig(**kwargs)


def model_to_dict(cfg: ToyModelConfig) -> dict:
    return {
        "prototypes": list(cfg.prototypes),
        "temperature": cfg.temperature,
        "smoothing_sigma": cfg.smoothing_sigma,
        "perturb_scale": cfg.perturb_scale,
        "feature_scales": list(cfg.feature_scales),
        "lesion_class": cfg.lesion_class,
    }


def load_eval_config(path) -> EvalConfig:
    """Load the eval protocol config.

    Schema::

        seed: 7
        runs: 5
        ensemble_size: 20
        methods: [msp, mc_variance, ensemble_variance, dum]
        dum: {reducer: mean, knn_k: 5}
        use_mask: false
        manifests:
          id_reference: ref/manifest.yaml   # required for dum
          id_test: test/manifest.yaml
          ood: [synthetic/noise/manifest.yaml, ...]
        models:
          binary: {prototypes: [0.45, 0.95], temperature: 0.02, ...}
          multiclass: {prototypes: [...], ...}
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigurationError(f"{path}: invalid YAML ({e})") from e
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: config must be a mapping")
    base = path.parent
    manifests = raw.get("manifests", {})
    if "id_test" not in manifests:
        raise ConfigurationError(f"{path}: manifests.id_test is required")
    id_test = load_manifest(_resolve(base, manifests["id_test"]))
    id_reference = (
        load_manifest(_resolve(base, manifests["id_reference"]))
        if manifests.get("id_reference")
        else None
    )
    ood = tuple(load_manifest(_resolve(base, p)) for p in manifests.get("ood", []))
    models_raw = raw.get("models", {})
    if not models_raw:
        raise ConfigurationError(f"{path}: at least one model flavor is required")
    models = {name: _model_from_dict(d or {}) for name, d in models_raw.items()}
    dum_opts = raw.get("dum", {}) or {}
    cfg = EvalConfig(
        id_test=id_test,
        ood=ood,
        models=models,
        id_reference=id_reference,
        methods=tuple(raw.get("methods", ("msp", "mc_variance", "ensemble_variance", "dum"))),
        runs=int(raw.get("runs", DEFAULT_RUNS)),
        ensemble_size=int(raw.get("ensemble_size", DEFAULT_ENSEMBLE_SIZE)),
        seed=int(raw.get("seed", 0)),
        dum_reducer=str(dum_opts.get("reducer", "mean")),
        dum_knn_k=int(dum_opts["knn_k"]) if "knn_k" in dum_opts else None,
        use_mask=bool(raw.get("use_mask", False)),
    )
    if cfg.runs < 1:
        raise ConfigurationError("runs must be >= 1")
    if cfg.ensemble_size < 2:
        raise ConfigurationError("ensemble_size must be >= 2")
    if id_reference is not None:
        check_disjoint(id_reference, id_test)
    return cfg
