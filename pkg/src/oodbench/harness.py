"""End-to-end evaluation protocol: benchmark synthesis, scoring, reports.

The protocol treats OOD detection as binary classification: image-level
uncertainty scores of each OOD dataset (positives) are compared against
the scores of the ID test set (negatives) with AUROC. Where ground truth
exists, lesion Dice is reported alongside. Cells carry mean and
population std across R runs; runs differ only by the seed driving the
stochastic prediction diversity, so deterministic methods show a 0.00
spread.

Per-case scores are always persisted as CSV before aggregation, so every
report cell can be recomputed from the score files. ID test scores are
computed once per run and reused as negatives for every OOD dataset.

Seeding: each run, case and stack member gets its own derived seed;
per-case seeds depend on the case's index within its dataset and never on
the dataset id, so scoring a byte-identical copy of the ID test set
reproduces the ID scores exactly (the AUROC 0.5 self-control). Corruption
seeds in synth_benchmark are master_seed XOR case index, so adding images
to a dataset never changes existing images' corruption.
"""

from __future__ import annotations

import csv
import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics, nifti, scoring, toymodel
from .artifacts import ARTIFACT_KINDS, ArtifactSpec, apply_artifact
from .core import LabelVolume, PredictionStack, ProbVolume, ScalarVolume, argmax_labels
from .errors import ConfigurationError, InsufficientDataError, ParameterError
from .manifests import (
    CaseEntry,
    DatasetManifest,
    EvalConfig,
    check_disjoint,
    model_to_dict,
    save_manifest,
)
from .scoring import ReferenceSignatureSet, save_signatures
from .toymodel import PhantomSpec, ToyModelConfig

log = logging.getLogger("oodbench")

_SEED_MASK = (1 << 64) - 1

# Seed-stream tags so the different random consumers never collide.
_TAG_PHANTOM_REF = 1
_TAG_PHANTOM_TEST = 2
_TAG_MC = 21
_TAG_ENS = 22

THREADS_ENV = "OODBENCH_THREADS"


def derive_seed(*parts: int) -> int:
    """Fold integer parts into one reproducible 64-bit seed."""
    seq = np.random.SeedSequence([int(p) & _SEED_MASK for p in parts])
    return int(seq.generate_state(1, np.uint64)[0])


def _worker_count() -> int:
    env = os.environ.get(THREADS_ENV)
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {env!r}")
    return min(4, os.cpu_count() or 1)


def _map_cases(fn, cases):
    """Apply fn over cases, optionally in parallel; order is preserved."""
    workers = _worker_count()
    if workers <= 1 or len(cases) <= 1:
        return [fn(c) for c in cases]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cases))


# ---------------------------------------------------------------------------
# phantom dataset generation
# ---------------------------------------------------------------------------

def generate_phantom_dataset(
    out_dir,
    dataset_id: str,
    role: str,
    count: int,
    phantom: PhantomSpec,
    master_seed: int,
) -> DatasetManifest:
    """Write `count` phantom image/truth pairs plus a manifest.

    Case i gets its own phantom seed derived from (master_seed, role,
    case index), so reference and test sets never share a phantom.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "truths").mkdir(parents=True, exist_ok=True)
    role_tag = _TAG_PHANTOM_REF if role == "id_reference" else _TAG_PHANTOM_TEST
    entries = []
    for i in range(count):
        spec = replace(phantom, seed=derive_seed(master_seed, role_tag, i))
        image, truth = toymodel.make_phantom(spec)
        case_id = f"{dataset_id}_{i:03d}"
        image_path = out_dir / "images" / f"{case_id}.nii.gz"
        truth_path = out_dir / "truths" / f"{case_id}.nii.gz"
        nifti.write_scalar(image, image_path)
        nifti.write_labels(truth, truth_path)
        entries.append(CaseEntry(case_id=case_id, image=image_path, truth=truth_path))
    manifest = DatasetManifest(
        dataset_id=dataset_id,
        role=role,
        cases=tuple(entries),
        provenance=f"phantoms seed={master_seed} count={count}",
        truth_lesion_class=toymodel.PHANTOM_LESION_CLASS,
    )
    save_manifest(manifest, out_dir / "manifest.yaml")
    return manifest


# ---------------------------------------------------------------------------
# synthetic benchmark generation
# ---------------------------------------------------------------------------

def synth_benchmark(
    id_manifest: DatasetManifest,
    artifact_params: dict,
    out_dir,
    master_seed: int = 0,
) -> list[DatasetManifest]:
    """Corrupt every ID test image once per artifact kind.

    One dataset (and manifest) per kind; each corrupted case records the
    producing spec in the dataset provenance and derives its seed as
    master_seed XOR case index. Truth maps are carried over from the
    source cases (the anatomy is unchanged by acquisition artifacts).
    """
    if id_manifest.role != "id_test":
        raise ConfigurationError(
            f"synth_benchmark expects an id_test manifest, got role {id_manifest.role!r}"
        )
    unknown = set(artifact_params) - set(ARTIFACT_KINDS)
    if unknown:
        raise ParameterError(f"unknown artifact kinds in config: {sorted(unknown)}")
    out_dir = Path(out_dir)
    if not id_manifest.cases:
        log.warning("synth_benchmark: empty ID manifest; emitting empty OOD datasets")
    volumes = [nifti.read_scalar(c.image) for c in id_manifest.cases]

    manifests = []
    for kind in (k for k in ARTIFACT_KINDS if k in artifact_params):
        params = artifact_params[kind]
        ds_dir = out_dir / kind
        (ds_dir / "images").mkdir(parents=True, exist_ok=True)
        entries = []
        for i, (case, volume) in enumerate(zip(id_manifest.cases, volumes)):
            spec = ArtifactSpec(kind, params, seed=(master_seed ^ i) & _SEED_MASK)
            corrupted = apply_artifact(volume, spec)
            image_path = ds_dir / "images" / f"{case.case_id}.nii.gz"
            nifti.write_scalar(corrupted, image_path)
            entries.append(CaseEntry(case_id=case.case_id, image=image_path, truth=case.truth))
        manifest = DatasetManifest(
            dataset_id=kind,
            role="ood",
            cases=tuple(entries),
            provenance=(
                f"synthetic {kind} params={params} master_seed={master_seed} "
                f"(case seed = master_seed XOR case index) from {id_manifest.dataset_id}"
            ),
            truth_lesion_class=id_manifest.truth_lesion_class,
        )
        save_manifest(manifest, ds_dir / "manifest.yaml")
        manifests.append(manifest)
    return manifests


# ---------------------------------------------------------------------------
# scoring engine
# ---------------------------------------------------------------------------

@dataclass
class _CaseResult:
    case_id: str
    # method -> score, per run: scores[method][run]
    scores: dict
    # method -> dice or None, per run
    dices: dict


def read_case_predictions(case: CaseEntry) -> list[ProbVolume]:
    """Decode a case's prediction files.

    A list of 4D files is one prediction per file (a stack); a list of 3D
    files is the per-class split of a single prediction.
    """
    paths = list(case.predictions)
    if not paths:
        return []
    if len(paths) > 1 and nifti.read_header(paths[0]).ndim == 3:
        return [nifti.read_prob(paths)]
    return [nifti.read_prob(p) for p in paths]


def _lesion_dice(pred: LabelVolume, pred_lesion: int, truth: LabelVolume, truth_lesion: int) -> float:
    """Dice on the lesion class after binarizing both sides.

    Prediction and truth may use different class schemes (C=2 model vs
    multiclass truth), so each is reduced to lesion / non-lesion with its
    own declared lesion index first.
    """
    pred_bin = LabelVolume((pred.labels == pred_lesion).astype(np.int64), num_classes=2,
                           spacing=pred.spacing)
    truth_bin = LabelVolume((truth.labels == truth_lesion).astype(np.int64), num_classes=2,
                            spacing=truth.spacing)
    return metrics.dice(pred_bin, truth_bin, 1)


def _case_signature(case: CaseEntry, cfg: Optional[ToyModelConfig], sig_cache: Optional[dict],
                    volume: Optional[ScalarVolume]):
    """Signature of one case, cached across model flavors that share scales."""
    key = None
    if sig_cache is not None and cfg is not None and not case.features:
        key = (str(case.image), cfg.feature_scales)
        if key in sig_cache:
            return sig_cache[key]
    if case.features:
        fmaps = nifti.read_feature_maps(case.features)
    else:
        if volume is None:
            volume = nifti.read_scalar(case.image)
        fmaps = toymodel.features(volume, cfg)
    sig = scoring.dum_signature(fmaps, source_id=case.case_id)
    if key is not None:
        sig_cache[key] = sig
    return sig


def _score_case(
    case: CaseEntry,
    case_index: int,
    manifest: DatasetManifest,
    flavor_index: int,
    cfg: Optional[ToyModelConfig],
    methods: Sequence[str],
    runs: int,
    ensemble_size: int,
    master_seed: int,
    refs: Optional[ReferenceSignatureSet],
    dum_reducer: str,
    dum_knn_k: Optional[int],
    use_mask: bool,
    sig_cache: Optional[dict] = None,
) -> _CaseResult:
    """Compute every requested method's score for one case, for all runs.

    Deterministic methods (msp, dum) are computed once and replicated
    across runs; stochastic stacks are rebuilt per run with derived seeds.
    """
    volume = None
    if cfg is not None or not (case.predictions or case.features):
        volume = nifti.read_scalar(case.image)
    truth = nifti.read_labels(case.truth) if case.truth else None
    mask = truth if (use_mask and truth is not None) else None
    file_predictions = read_case_predictions(case) if case.predictions else []

    def need_files(method: str, what: str):
        raise ConfigurationError(
            f"dataset {manifest.dataset_id}, case {case.case_id}: "
            f"method {method} needs {what} (no model configured for this flavor)"
        )

    scores = {}
    dices = {}

    if "msp" in methods:
        if file_predictions:
            prob = file_predictions[0]
            pred_lesion = prob.num_classes - 1 if cfg is None else cfg.lesion_class
        elif cfg is not None:
            prob = toymodel.segment(volume, cfg)
            pred_lesion = cfg.lesion_class
        else:
            need_files("msp", "a prediction file")
        score = scoring.image_score(scoring.msp_uncertainty(prob), mask=mask)
        scores["msp"] = [score] * runs
        d = None
        if truth is not None:
            d = _lesion_dice(argmax_labels(prob), pred_lesion, truth, manifest.truth_lesion_class)
        dices["msp"] = [d] * runs

    for method, tag in (("mc_variance", _TAG_MC), ("ensemble_variance", _TAG_ENS)):
        if method not in methods:
            continue
        per_run_scores = []
        per_run_dices = []
        if len(file_predictions) >= 2:
            # File route: the stack is fixed, so every run sees the same
            # ingested predictions.
            stack = PredictionStack(tuple(file_predictions))
            score = scoring.image_score(scoring.variance_uncertainty(stack), mask=mask)
            d = None
            if truth is not None:
                mean_prob = scoring.stack_mean(stack)
                pred_lesion = mean_prob.num_classes - 1 if cfg is None else cfg.lesion_class
                d = _lesion_dice(argmax_labels(mean_prob), pred_lesion,
                                 truth, manifest.truth_lesion_class)
            per_run_scores = [score] * runs
            per_run_dices = [d] * runs
        elif cfg is None:
            need_files(method, "at least 2 prediction files")
        else:
            for r in range(runs):
                if method == "mc_variance":
                    # Fresh stochastic passes per image.
                    seeds = [derive_seed(master_seed, r, flavor_index, case_index, t, tag)
                             for t in range(ensemble_size)]
                else:
                    # Fixed ensemble members, shared by every image of the run.
                    seeds = [derive_seed(master_seed, r, flavor_index, t, tag)
                             for t in range(ensemble_size)]
                stack = toymodel.segment_stack(volume, cfg, seeds)
                per_run_scores.append(
                    scoring.image_score(scoring.variance_uncertainty(stack), mask=mask)
                )
                d = None
                if truth is not None:
                    d = _lesion_dice(argmax_labels(scoring.stack_mean(stack)), cfg.lesion_class,
                                     truth, manifest.truth_lesion_class)
                per_run_dices.append(d)
        scores[method] = per_run_scores
        dices[method] = per_run_dices

    if "dum" in methods:
        if refs is None:
            raise ConfigurationError("dum scoring needs an id_reference signature bank")
        if not case.features and cfg is None:
            need_files("dum", "a feature-map file")
        sig = _case_signature(case, cfg, sig_cache, volume)
        score = scoring.dum_score(sig, refs, reducer=dum_reducer, k=dum_knn_k)
        scores["dum"] = [score] * runs
        dices["dum"] = [None] * runs  # image-wise method, no segmentation to grade

    return _CaseResult(case.case_id, scores, dices)


def _build_reference_signatures(
    manifest: DatasetManifest, cfg: Optional[ToyModelConfig], sig_cache: Optional[dict] = None
) -> ReferenceSignatureSet:
    def one(case: CaseEntry):
        if not case.features and cfg is None:
            raise ConfigurationError(
                f"dataset {manifest.dataset_id}, case {case.case_id}: "
                "dum reference needs a feature-map file (no model configured)"
            )
        return _case_signature(case, cfg, sig_cache, None)

    sigs = _map_cases(one, list(manifest.cases))
    return ReferenceSignatureSet(tuple(sigs), source_dataset=manifest.dataset_id)


# ---------------------------------------------------------------------------
# report model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellStat:
    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("std must be >= 0")


@dataclass(frozen=True)
class ReportRow:
    dataset: str
    method: str
    flavor: str
    auroc: Optional[CellStat]
    dsc: Optional[CellStat]

    def __post_init__(self):
        if self.auroc is not None and not (0.0 <= self.auroc.mean <= 1.0):
            raise ValueError(f"AUROC mean {self.auroc.mean} outside [0, 1]")


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[ReportRow, ...]
    datasets: tuple[str, ...]
    methods: tuple[str, ...]
    flavors: tuple[str, ...]

    def cell(self, dataset: str, method: str, flavor: str) -> Optional[ReportRow]:
        for row in self.rows:
            if (row.dataset, row.method, row.flavor) == (dataset, method, flavor):
                return row
        return None


# ---------------------------------------------------------------------------
# evaluation protocol
# ---------------------------------------------------------------------------

def _persist_scores(scores_dir, dataset, method, flavor, run, case_results):
    path = Path(scores_dir) / f"{dataset}__{method}__{flavor}__run{run}.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["case_id", "score", "dice"])
        for cr in case_results:
            d = cr.dices[method][run]
            writer.writerow([
                cr.case_id,
                repr(float(cr.scores[method][run])),
                "" if d is None else repr(float(d)),
            ])


def run_eval(
    id_test: DatasetManifest,
    ood: Sequence[DatasetManifest],
    models: dict,
    methods: Sequence[str] = scoring.METHODS,
    runs: int = 5,
    *,
    id_reference: Optional[DatasetManifest] = None,
    ensemble_size: int = 20,
    master_seed: int = 0,
    dum_reducer: str = "mean",
    dum_knn_k: Optional[int] = None,
    use_mask: bool = False,
    scores_dir=None,
) -> EvalReport:
    """Run the full ID-vs-OOD protocol and build the report table.

    models maps flavor name (e.g. binary / multiclass) to a ToyModelConfig
    or to None for datasets that carry externally produced prediction /
    feature files. Runs R >= 1 differ by derived run seeds standing in for
    independent trainings; deterministic methods repeat identically.
    """
    if runs < 1:
        raise ConfigurationError("runs must be >= 1")
    if not models:
        raise ConfigurationError("at least one model flavor is required")
    bad = set(methods) - set(scoring.METHODS)
    if bad:
        raise ConfigurationError(f"unknown methods: {sorted(bad)}")
    if id_test.role != "id_test":
        raise ConfigurationError(f"negatives manifest must have role id_test, got {id_test.role!r}")
    if "dum" in methods:
        if id_reference is None:
            raise ConfigurationError("dum requires an id_reference manifest")
        check_disjoint(id_reference, id_test)

    if scores_dir is not None:
        Path(scores_dir).mkdir(parents=True, exist_ok=True)

    datasets = [id_test] + list(ood)
    ids = [m.dataset_id for m in datasets]
    if len(set(ids)) != len(ids):
        raise ConfigurationError(f"dataset ids must be unique, got {ids}")
    flavors = tuple(models.keys())
    method_list = tuple(methods)
    rows = []
    sig_cache: dict = {}

    for flavor_index, (flavor, cfg) in enumerate(models.items()):
        refs = None
        if "dum" in method_list:
            refs = _build_reference_signatures(id_reference, cfg, sig_cache)
            if scores_dir is not None:
                save_signatures(refs, Path(scores_dir) / f"signatures__{flavor}.csv")

        results_by_dataset = {}
        for manifest in datasets:
            def score_one(icase, _manifest=manifest):
                i, case = icase
                return _score_case(
                    case, i, _manifest, flavor_index, cfg, method_list, runs,
                    ensemble_size, master_seed, refs, dum_reducer, dum_knn_k, use_mask,
                    sig_cache=sig_cache,
                )

            results = _map_cases(score_one, list(enumerate(manifest.cases)))
            results_by_dataset[manifest.dataset_id] = results
            if scores_dir is not None:
                for method in method_list:
                    for r in range(runs):
                        _persist_scores(scores_dir, manifest.dataset_id, method, flavor, r, results)

        id_results = results_by_dataset[id_test.dataset_id]
        for manifest in datasets:
            results = results_by_dataset[manifest.dataset_id]
            for method in method_list:
                auroc_stat = None
                if manifest.dataset_id != id_test.dataset_id:
                    per_run = []
                    for r in range(runs):
                        negatives = [cr.scores[method][r] for cr in id_results]
                        positives = [cr.scores[method][r] for cr in results]
                        per_run.append(metrics.auroc(negatives, positives))
                    auroc_stat = CellStat(*metrics.mean_std(per_run))
                dsc_stat = None
                per_run_dsc = []
                for r in range(runs):
                    vals = [cr.dices[method][r] for cr in results if cr.dices[method][r] is not None]
                    if vals:
                        per_run_dsc.append(float(np.mean(vals)))
                if per_run_dsc:
                    dsc_stat = CellStat(*metrics.mean_std(per_run_dsc))
                rows.append(ReportRow(manifest.dataset_id, method, flavor, auroc_stat, dsc_stat))

    return EvalReport(
        rows=tuple(rows),
        datasets=tuple(m.dataset_id for m in datasets),
        methods=method_list,
        flavors=flavors,
    )


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def emit_report(report: EvalReport, fmt: str = "markdown") -> str:
    """Render the report: datasets as rows, method x flavor column groups.

    Markdown bolds the best AUROC of each dataset row (exact ties all
    bolded); CSV carries raw values at 4 decimal places.
    """
    if fmt not in ("csv", "markdown"):
        raise ParameterError(f"format must be csv or markdown, got {fmt!r}")
    groups = [(m, f) for m in report.methods for f in report.flavors]

    if fmt == "csv":
        lines = []
        header = ["dataset"]
        for m, f in groups:
            header += [
                f"{m}_{f}_auroc_mean", f"{m}_{f}_auroc_std",
                f"{m}_{f}_dsc_mean", f"{m}_{f}_dsc_std",
            ]
        lines.append(",".join(header))
        for ds in report.datasets:
            cells = [ds]
            for m, f in groups:
                row = report.cell(ds, m, f)
                for stat in (row.auroc if row else None, row.dsc if row else None):
                    if stat is None:
                        cells += ["", ""]
                    else:
                        cells += [f"{stat.mean:.4f}", f"{stat.std:.4f}"]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    header = ["Dataset"]
    for m, f in groups:
        header += [f"{m} {f} AUROC", f"{m} {f} DSC"]
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join(["---"] * len(header)) + "|"]
    for ds in report.datasets:
        best = None
        stats = {}
        for m, f in groups:
            row = report.cell(ds, m, f)
            stats[(m, f)] = row
            if row and row.auroc is not None:
                best = row.auroc.mean if best is None else max(best, row.auroc.mean)
        cells = [ds]
        for m, f in groups:
            row = stats[(m, f)]
            if row is None or row.auroc is None:
                cells.append("-")
            else:
                text = f"{row.auroc.mean:.2f} ± {row.auroc.std:.2f}"
                cells.append(f"**{text}**" if row.auroc.mean == best else text)
            if row is None or row.dsc is None:
                cells.append("-")
            else:
                cells.append(f"{row.dsc.mean:.2f} ± {row.dsc.std:.2f}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# gate
# ---------------------------------------------------------------------------

def gate(score: float, id_reference_scores, percentile: float = 95.0) -> str:
    """Flag a score above the given percentile of the ID reference scores.

    The threshold is the linear-interpolation quantile. Returns "pass" or
    "flag".
    """
    refs = np.asarray(id_reference_scores, dtype=np.float64).ravel()
    if refs.size == 0:
        raise InsufficientDataError("gate needs at least one reference score")
    if not (50.0 < percentile < 100.0):
        raise ParameterError(f"percentile must be in (50, 100), got {percentile}")
    threshold = float(np.percentile(refs, percentile))
    return "flag" if score > threshold else "pass"


# ---------------------------------------------------------------------------
# demo pipeline
# ---------------------------------------------------------------------------

DEFAULT_SEED = 7
DEMO_RUNS = 2
DEMO_COUNT = 20

DEFAULT_PHANTOM = PhantomSpec()

# Artifact severities are toolkit defaults chosen to be clearly visible at
# phantom scale; they are benchmark configuration, not measured constants.
DEFAULT_ARTIFACTS = {
    "downsample": {"factor": 4.0, "axis": "z"},
    "bias": {"order": 3, "coeff_magnitude": 0.6},
    "motion": {"num_transforms": 2, "max_rotation_deg": 10.0, "max_translation_mm": 10.0},
    "spikes": {"num_spikes": 3, "intensity": 1.0},
    "noise": {"std": 0.1},
    "ghost": {"num_ghosts": 2, "axis": "y", "intensity": 1.0},
    "truncation": {"max_fraction": 0.25},
    "scale": {"factor": 1.3},
}

DEFAULT_MODELS = {
    "binary": ToyModelConfig(
        prototypes=(0.45, 0.95), temperature=0.02, smoothing_sigma=0.5,
        perturb_scale=0.05, feature_scales=(0.5, 1.5), lesion_class=1,
    ),
    "multiclass": ToyModelConfig(
        prototypes=(0.05, 0.2, 0.35, 0.45, 0.55, 0.65, 0.75, 0.95),
        temperature=0.02, smoothing_sigma=0.5, perturb_scale=0.05,
        feature_scales=(0.5, 1.5), lesion_class=7,
    ),
}

CONTROL_DATASET_ID = "control"


def make_control_dataset(id_test: DatasetManifest, out_dir) -> DatasetManifest:
    """Byte-identical copy of the ID test set posing as an OOD dataset.

    Any method must score it exactly like the ID set, which pins the
    all-ties AUROC of 0.5.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for case in id_test.cases:
        image_path = out_dir / "images" / case.image.name
        shutil.copyfile(case.image, image_path)
        entries.append(CaseEntry(case_id=case.case_id, image=image_path, truth=case.truth))
    manifest = DatasetManifest(
        dataset_id=CONTROL_DATASET_ID,
        role="ood",
        cases=tuple(entries),
        provenance=f"byte-identical copy of {id_test.dataset_id}",
        truth_lesion_class=id_test.truth_lesion_class,
    )
    save_manifest(manifest, out_dir / "manifest.yaml")
    return manifest


def run_demo(out_dir, seed: int = DEFAULT_SEED, runs: int = DEMO_RUNS) -> dict:
    """Hermetic end-to-end run: phantoms -> corruption -> scoring -> report.

    Bit-reproducible from the seed: repeated runs write byte-identical
    report files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    ref_manifest = generate_phantom_dataset(
        out_dir / "phantoms" / "id_reference", "id_reference", "id_reference",
        DEMO_COUNT, DEFAULT_PHANTOM, seed,
    )
    test_manifest = generate_phantom_dataset(
        out_dir / "phantoms" / "id_test", "id_test", "id_test",
        DEMO_COUNT, DEFAULT_PHANTOM, seed,
    )
    ood_manifests = synth_benchmark(test_manifest, DEFAULT_ARTIFACTS,
                                    out_dir / "synthetic", master_seed=seed)
    control = make_control_dataset(test_manifest, out_dir / CONTROL_DATASET_ID)

    scores_dir = out_dir / "scores"
    report = run_eval(
        test_manifest,
        list(ood_manifests) + [control],
        DEFAULT_MODELS,
        runs=runs,
        id_reference=ref_manifest,
        master_seed=seed,
        scores_dir=scores_dir,
    )
    report_csv = out_dir / "report.csv"
    report_md = out_dir / "report.md"
    report_csv.write_text(emit_report(report, "csv"))
    report_md.write_text(emit_report(report, "markdown"))
    _write_demo_config(out_dir, seed, runs, ref_manifest, test_manifest,
                       list(ood_manifests) + [control])
    return {
        "report": report,
        "report_csv": report_csv,
        "report_md": report_md,
        "scores_dir": scores_dir,
        "manifests": {
            "id_reference": ref_manifest,
            "id_test": test_manifest,
            "ood": list(ood_manifests) + [control],
        },
    }


def _write_demo_config(out_dir: Path, seed, runs, ref, test, ood) -> None:
    import yaml

    doc = {
        "seed": seed,
        "runs": runs,
        "ensemble_size": 20,
        "methods": list(scoring.METHODS),
        "dum": {"reducer": "mean"},
        "manifests": {
            "id_reference": "phantoms/id_reference/manifest.yaml",
            "id_test": "phantoms/id_test/manifest.yaml",
            "ood": [f"synthetic/{m.dataset_id}/manifest.yaml" for m in ood
                    if m.dataset_id != CONTROL_DATASET_ID]
            + [f"{CONTROL_DATASET_ID}/manifest.yaml"],
        },
        "models": {name: model_to_dict(cfg) for name, cfg in DEFAULT_MODELS.items()},
        "artifacts": DEFAULT_ARTIFACTS,
        "phantom": {
            "shape": list(DEFAULT_PHANTOM.shape),
            "class_means": list(DEFAULT_PHANTOM.class_means),
            "class_stds": list(DEFAULT_PHANTOM.class_stds),
            "lesion_count": list(DEFAULT_PHANTOM.lesion_count),
            "lesion_radius": list(DEFAULT_PHANTOM.lesion_radius),
        },
        "datasets": {"id_reference": {"count": DEMO_COUNT}, "id_test": {"count": DEMO_COUNT}},
    }
    (out_dir / "config.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))


def run_eval_from_config(cfg: EvalConfig, scores_dir=None) -> EvalReport:
    """run_eval driven by a loaded EvalConfig."""
    return run_eval(
        cfg.id_test,
        cfg.ood,
        cfg.models,
        methods=cfg.methods,
        runs=cfg.runs,
        id_reference=cfg.id_reference,
        ensemble_size=cfg.ensemble_size,
        master_seed=cfg.seed,
        dum_reducer=cfg.dum_reducer,
        dum_knn_k=cfg.dum_knn_k,
        use_mask=cfg.use_mask,
        scores_dir=scores_dir,
    )
