"""Command-line interface.

Subcommands:
  phantom  generate ID phantom datasets (image + truth NIfTI pairs)
  synth    produce the 8 corrupted OOD datasets from an ID test manifest
  score    per-case image scores from ingested prediction/feature files
  eval     full ID-vs-OOD protocol, table-style report
  gate     threshold one score against reference scores (exit 2 = flag)
  demo     hermetic end-to-end run

Set OODBENCH_THREADS to cap worker parallelism (default: min(4, cpus)).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import yaml

from . import harness, nifti, scoring
from .core import PredictionStack
from .errors import OodbenchError
from .manifests import load_eval_config, load_manifest
from .toymodel import PhantomSpec

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FLAG = 2


def _cmd_phantom(args) -> int:
    raw = yaml.safe_load(Path(args.config).read_text()) or {}
    pconf = raw.get("phantom", {})
    kwargs = {}
    for key in ("shape", "class_means", "class_stds", "lesion_count", "lesion_radius"):
        if key in pconf:
            kwargs[key] = tuple(pconf[key])
    phantom = PhantomSpec(**kwargs)
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    datasets = raw.get("datasets", {"id_test": {"count": 20}})
    out = Path(args.out)
    for dataset_id, opts in datasets.items():
        role = opts.get("role", dataset_id if dataset_id in ("id_reference", "id_test") else "id_test")
        manifest = harness.generate_phantom_dataset(
            out / dataset_id, dataset_id, role, int(opts.get("count", 20)), phantom, seed,
        )
        print(f"wrote {len(manifest.cases)} phantoms to {out / dataset_id}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    manifest = load_manifest(args.manifest)
    raw = yaml.safe_load(Path(args.config).read_text()) or {}
    artifact_params = raw.get("artifacts", harness.DEFAULT_ARTIFACTS)
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    manifests = harness.synth_benchmark(manifest, artifact_params, args.out, master_seed=seed)
    total = sum(len(m.cases) for m in manifests)
    print(f"wrote {total} corrupted cases across {len(manifests)} datasets to {args.out}")
    return EXIT_OK


def _cmd_score(args) -> int:
    manifest = load_manifest(args.manifest)
    method = args.method.replace("-", "_")
    refs = scoring.load_signatures(args.refs) if args.refs else None
    rows = []
    for case in manifest.cases:
        mask = nifti.read_labels(case.truth) if (args.mask and case.truth) else None
        predictions = harness.read_case_predictions(case) if case.predictions else []
        if method == "msp":
            if not predictions:
                raise OodbenchError(f"case {case.case_id}: no prediction file in manifest")
            score = scoring.score_method("msp", prob=predictions[0], mask=mask)
        elif method in ("mc_variance", "ensemble_variance"):
            if len(predictions) < 2:
                raise OodbenchError(f"case {case.case_id}: need >= 2 prediction files")
            stack = PredictionStack(tuple(predictions))
            score = scoring.score_method(method, stack=stack, mask=mask)
        elif method == "dum":
            if refs is None:
                raise OodbenchError("dum scoring needs --refs SIGNATURES.csv")
            if not case.features:
                raise OodbenchError(f"case {case.case_id}: no feature file in manifest")
            fmaps = nifti.read_feature_maps(case.features)
            score = scoring.score_method(
                "dum", features=fmaps, refs=refs,
                reducer=args.reducer, knn_k=args.knn_k,
            )
        else:
            raise OodbenchError(f"unknown method {args.method!r}")
        rows.append((case.case_id, score))
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["case_id", "score"])
        for case_id, score in rows:
            writer.writerow([case_id, repr(float(score))])
    print(f"wrote {len(rows)} scores to {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = load_eval_config(args.config)
    if args.runs is not None:
        from dataclasses import replace

        cfg = replace(cfg, runs=args.runs)
    out = Path(args.out)
    scores_dir = out.parent / "scores"
    report = harness.run_eval_from_config(cfg, scores_dir=scores_dir)
    fmt = "markdown" if out.suffix in (".md", ".markdown") else "csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(harness.emit_report(report, fmt))
    print(f"wrote report to {out} (per-case scores in {scores_dir})")
    return EXIT_OK


def _cmd_gate(args) -> int:
    with open(args.refs, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "score" not in reader.fieldnames:
            raise OodbenchError(f"{args.refs}: expected a CSV with a 'score' column")
        refs = [float(row["score"]) for row in reader]
    verdict = harness.gate(args.score, refs, percentile=args.percentile)
    print(verdict)
    return EXIT_OK if verdict == "pass" else EXIT_FLAG


def _cmd_demo(args) -> int:
    result = harness.run_demo(args.out, seed=args.seed, runs=args.runs)
    print(f"report: {result['report_csv']}")
    print(f"report: {result['report_md']}")
    print(Path(result["report_md"]).read_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodbench",
        description="Uncertainty-based OOD detection benchmark for volumetric segmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate ID phantom datasets")
    p.add_argument("--config", required=True, help="YAML config with phantom/datasets sections")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(fn=_cmd_phantom)

    p = sub.add_parser("synth", help="generate the synthetic OOD benchmark")
    p.add_argument("--manifest", required=True, help="id_test manifest YAML")
    p.add_argument("--config", required=True, help="YAML config with an artifacts section")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="master seed (case seed = seed XOR index)")
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser(
        "score", help="score ingested predictions/features per case",
        epilog="Prediction and feature files are 4D NIfTI volumes with the "
               "class/channel index in the 4th dimension; a prediction may "
               "alternatively be split into one 3D file per class.",
    )
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", required=True,
                   choices=["msp", "mc-variance", "ensemble-variance", "dum"])
    p.add_argument("--refs", default=None, help="signature bank CSV (dum only)")
    p.add_argument("--reducer", default="mean", choices=["mean", "min", "knn"])
    p.add_argument("--knn-k", type=int, default=None)
    p.add_argument("--mask", action="store_true",
                   help="average uncertainty over truth>0 voxels only")
    p.add_argument("--out", required=True, help="output scores CSV")
    p.set_defaults(fn=_cmd_score)

    p = sub.add_parser("eval", help="run the full evaluation protocol")
    p.add_argument("--config", required=True, help="eval config YAML")
    p.add_argument("--out", required=True, help="report path (.csv or .md)")
    p.add_argument("--runs", type=int, default=None, help="override the config run count")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("gate", help="flag a score against reference scores (exit 2 = flag)")
    p.add_argument("--score", type=float, required=True)
    p.add_argument("--refs", required=True, help="reference scores CSV (score column)")
    p.add_argument("--percentile", type=float, default=95.0)
    p.set_defaults(fn=_cmd_gate)

    p = sub.add_parser("demo", help="hermetic end-to-end run")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=harness.DEFAULT_SEED)
    p.add_argument("--runs", type=int, default=harness.DEMO_RUNS)
    p.set_defaults(fn=_cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except OodbenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
