import csv
import logging
from dataclasses import replace

import numpy as np
import pytest

from oodbench import harness, metrics, nifti, scoring, toymodel
from oodbench.core import ProbVolume, ScalarVolume
from oodbench.errors import (
    ConfigurationError,
    InsufficientDataError,
    ParameterError,
)
from oodbench.harness import (
    CellStat,
    EvalReport,
    ReportRow,
    derive_seed,
    emit_report,
    gate,
    generate_phantom_dataset,
    make_control_dataset,
    run_eval,
    synth_benchmark,
)
from oodbench.manifests import (
    CaseEntry,
    DatasetManifest,
    check_disjoint,
    load_eval_config,
    load_manifest,
    save_manifest,
)
from oodbench.toymodel import PhantomSpec, ToyModelConfig

SMALL_PHANTOM = PhantomSpec(shape=(14, 14, 14), lesion_count=(1, 1), lesion_radius=(2, 2))

FAST_MODEL = ToyModelConfig(prototypes=(0.45, 0.95), temperature=0.02,
                            smoothing_sigma=0.5, perturb_scale=0.05,
                            feature_scales=(0.5, 1.5), lesion_class=1)

TINY_ARTIFACTS = {
    "downsample": {"factor": 2.0, "axis": "z"},
    "bias": {"order": 1, "coeff_magnitude": 0.5},
    "motion": {"num_transforms": 1, "max_rotation_deg": 5.0, "max_translation_mm": 3.0},
    "spikes": {"num_spikes": 1, "intensity": 1.0},
    "noise": {"std": 0.15},
    "ghost": {"num_ghosts": 2, "axis": "y", "intensity": 1.0},
    "truncation": {"max_fraction": 0.2},
    "scale": {"factor": 1.3},
}


@pytest.fixture(scope="module")
def phantom_sets(tmp_path_factory):
    root = tmp_path_factory.mktemp("datasets")
    ref = generate_phantom_dataset(root / "ref", "id_reference", "id_reference",
                                   4, SMALL_PHANTOM, master_seed=5)
    test = generate_phantom_dataset(root / "test", "id_test", "id_test",
                                    4, SMALL_PHANTOM, master_seed=5)
    return root, ref, test


class TestManifests:
    def test_save_load_round_trip(self, phantom_sets):
        root, _, test = phantom_sets
        reloaded = load_manifest(root / "test" / "manifest.yaml")
        assert reloaded.dataset_id == "id_test"
        assert reloaded.role == "id_test"
        assert reloaded.truth_lesion_class == toymodel.PHANTOM_LESION_CLASS
        assert reloaded.case_ids() == test.case_ids()
        for a, b in zip(reloaded.cases, test.cases):
            assert a.image.resolve() == b.image.resolve()
            assert a.truth.resolve() == b.truth.resolve()

    def test_relative_paths_in_file(self, phantom_sets):
        root, _, _ = phantom_sets
        text = (root / "test" / "manifest.yaml").read_text()
        assert str(root) not in text  # paths are relative to the manifest

    def test_missing_file_rejected(self, tmp_path):
        (tmp_path / "m.yaml").write_text(
            "dataset_id: d\nrole: ood\ncases:\n  - case_id: a\n    image: missing.nii\n"
        )
        with pytest.raises(ConfigurationError):
            load_manifest(tmp_path / "m.yaml")

    def test_bad_role_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            DatasetManifest("d", "training", ())

    def test_disjointness_check(self, phantom_sets):
        _, ref, test = phantom_sets
        check_disjoint(ref, test)
        with pytest.raises(ConfigurationError):
            check_disjoint(ref, replace(test, cases=ref.cases))


class TestSynthBenchmark:
    def test_counts_and_determinism(self, phantom_sets, tmp_path):
        _, _, test = phantom_sets
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        manifests = synth_benchmark(test, TINY_ARTIFACTS, out_a, master_seed=9)
        again = synth_benchmark(test, TINY_ARTIFACTS, out_b, master_seed=9)
        assert len(manifests) == 8
        assert sum(len(m.cases) for m in manifests) == 8 * len(test.cases)
        assert [m.dataset_id for m in manifests] == list(TINY_ARTIFACTS)
        for m1, m2 in zip(manifests, again):
            for c1, c2 in zip(m1.cases, m2.cases):
                assert c1.image.read_bytes() == c2.image.read_bytes()

    def test_truths_carried_over(self, phantom_sets, tmp_path):
        _, _, test = phantom_sets
        manifests = synth_benchmark(test, {"noise": {"std": 0.1}}, tmp_path / "s", 3)
        assert all(c.truth == orig.truth
                   for c, orig in zip(manifests[0].cases, test.cases))

    def test_empty_manifest_warns(self, tmp_path, caplog):
        empty = DatasetManifest("id_test", "id_test", ())
        with caplog.at_level(logging.WARNING, logger="oodbench"):
            manifests = synth_benchmark(empty, TINY_ARTIFACTS, tmp_path / "e", 1)
        assert len(manifests) == 8
        assert all(len(m.cases) == 0 for m in manifests)
        assert any("empty" in r.message for r in caplog.records)

    def test_wrong_role_rejected(self, phantom_sets, tmp_path):
        _, ref, _ = phantom_sets
        with pytest.raises(ConfigurationError):
            synth_benchmark(ref, TINY_ARTIFACTS, tmp_path / "x", 0)

    def test_unknown_kind_rejected(self, phantom_sets, tmp_path):
        _, _, test = phantom_sets
        with pytest.raises(ParameterError):
            synth_benchmark(test, {"blur": {}}, tmp_path / "y", 0)


@pytest.fixture(scope="module")
def eval_setup(phantom_sets, tmp_path_factory):
    root, ref, test = phantom_sets
    out = tmp_path_factory.mktemp("eval")
    ood = synth_benchmark(test, {"noise": {"std": 0.2}}, out / "synth", master_seed=5)
    control = make_control_dataset(test, out / "control")
    scores_dir = out / "scores"
    report = run_eval(
        test, list(ood) + [control], {"binary": FAST_MODEL},
        runs=2, id_reference=ref, ensemble_size=4, master_seed=5,
        scores_dir=scores_dir,
    )
    return report, scores_dir, test


class TestRunEval:
    def test_report_structure(self, eval_setup):
        report, _, _ = eval_setup
        assert report.datasets == ("id_test", "noise", "control")
        assert report.flavors == ("binary",)
        id_row = report.cell("id_test", "msp", "binary")
        assert id_row.auroc is None and id_row.dsc is not None
        dum_row = report.cell("noise", "dum", "binary")
        assert dum_row.dsc is None and dum_row.auroc is not None

    def test_control_copy_ties_exactly(self, eval_setup):
        report, _, _ = eval_setup
        for method in report.methods:
            cell = report.cell("control", method, "binary")
            assert cell.auroc.mean == 0.5 and cell.auroc.std == 0.0

    def test_deterministic_methods_have_zero_std(self, eval_setup):
        report, _, _ = eval_setup
        for method in ("msp", "dum"):
            for ds in ("noise", "control"):
                assert report.cell(ds, method, "binary").auroc.std == 0.0

    def test_noise_detected(self, eval_setup):
        report, _, _ = eval_setup
        assert report.cell("noise", "dum", "binary").auroc.mean > 0.9

    def test_cells_match_persisted_scores(self, eval_setup):
        # Every AUROC cell must be recomputable from the score CSVs alone.
        report, scores_dir, test = eval_setup
        for ds in ("noise", "control"):
            for method in report.methods:
                per_run = []
                for r in range(2):
                    neg = _read_scores(scores_dir / f"id_test__{method}__binary__run{r}.csv")
                    pos = _read_scores(scores_dir / f"{ds}__{method}__binary__run{r}.csv")
                    per_run.append(metrics.auroc(neg, pos))
                mean, std = metrics.mean_std(per_run)
                cell = report.cell(ds, method, "binary").auroc
                assert cell.mean == mean and cell.std == std

    def test_signature_bank_persisted(self, eval_setup):
        _, scores_dir, _ = eval_setup
        refs = scoring.load_signatures(scores_dir / "signatures__binary.csv")
        assert refs.count == 4 and refs.dimension == 8

    def test_dum_requires_reference(self, eval_setup):
        _, _, test = eval_setup
        with pytest.raises(ConfigurationError):
            run_eval(test, [], {"binary": FAST_MODEL}, methods=("dum",), runs=1)

    def test_mask_route(self, phantom_sets):
        _, ref, test = phantom_sets
        report = run_eval(test, [], {"binary": FAST_MODEL}, methods=("msp",),
                          runs=1, master_seed=1, use_mask=True)
        assert report.cell("id_test", "msp", "binary").dsc is not None


def _read_scores(path):
    with open(path, newline="") as f:
        return [float(row["score"]) for row in csv.DictReader(f)]


@pytest.fixture(scope="module")
def file_datasets(tmp_path_factory):
    # Prediction stacks and feature maps written to disk; no model.
    rng = np.random.default_rng(17)
    out = tmp_path_factory.mktemp("ingest")

    def build(ds_dir, ds_id, role, offset):
        ds_dir.mkdir(parents=True)
        cases = []
        for i in range(3):
            img = ScalarVolume(rng.random((6, 6, 6)) + offset)
            image_path = ds_dir / f"img{i}.nii"
            nifti.write_scalar(img, image_path)
            preds = []
            for t in range(3):
                p = np.empty((2, 6, 6, 6))
                p[1] = np.clip(rng.random((6, 6, 6)) * (0.4 + offset), 0, 1)
                p[0] = 1 - p[1]
                pred_path = ds_dir / f"img{i}_pred{t}.nii"
                nifti.write_prob(ProbVolume(p), pred_path)
                preds.append(pred_path)
            feats = [rng.random((6, 6, 6)) + offset for _ in range(4)]
            feat_path = ds_dir / f"img{i}_feat.nii"
            nifti.write_feature_maps(feats, feat_path)
            cases.append(CaseEntry(f"{ds_id}_{i}", image_path,
                                   predictions=tuple(preds), features=feat_path))
        return DatasetManifest(ds_id, role, tuple(cases))

    ref = build(out / "ref", "id_reference", "id_reference", 0.0)
    test = build(out / "test", "id_test", "id_test", 0.0)
    ood = build(out / "ood", "shifted", "ood", 0.5)
    return ref, test, ood


class TestFileIngestionRoute:
    def test_eval_without_model(self, file_datasets):
        ref, test, ood = file_datasets
        report = run_eval(test, [ood], {"external": None}, runs=2,
                          id_reference=ref, master_seed=0)
        cell = report.cell("shifted", "dum", "external")
        assert cell.auroc is not None
        assert report.cell("shifted", "msp", "external").auroc is not None
        # File-route scores are run-independent.
        assert report.cell("shifted", "mc_variance", "external").auroc.std == 0.0

    def test_missing_inputs_name_the_case(self, file_datasets, tmp_path):
        ref, test, _ = file_datasets
        bare_case = CaseEntry("bare", test.cases[0].image)
        bare = DatasetManifest("bare_ds", "ood", (bare_case,))
        with pytest.raises(ConfigurationError, match="bare"):
            run_eval(test, [bare], {"external": None}, methods=("msp",), runs=1)

    def test_perfect_separation_row(self, tmp_path):
        # ID predictions one-hot (msp score 0), OOD uniform (score 0.5):
        # the report row must read exactly 1.00 +/- 0.00.
        out = tmp_path / "sep"
        rng = np.random.default_rng(5)

        def build(ds_id, role, lesion_prob):
            ds_dir = out / ds_id
            ds_dir.mkdir(parents=True)
            cases = []
            for i in range(3):
                img_path = ds_dir / f"i{i}.nii"
                nifti.write_scalar(ScalarVolume(rng.random((4, 4, 4))), img_path)
                probs = np.empty((2, 4, 4, 4))
                probs[1] = lesion_prob
                probs[0] = 1.0 - lesion_prob
                pred = ds_dir / f"p{i}.nii"
                nifti.write_prob(ProbVolume(probs), pred)
                cases.append(CaseEntry(f"{ds_id}_{i}", img_path, predictions=(pred,)))
            return DatasetManifest(ds_id, role, tuple(cases))

        id_test = build("id_test", "id_test", 1.0)
        ood = build("uniform", "ood", 0.5)
        report = run_eval(id_test, [ood], {"external": None}, methods=("msp",), runs=3)
        cell = report.cell("uniform", "msp", "external").auroc
        assert cell.mean == 1.0 and cell.std == 0.0


class TestGate:
    def test_below_minimum_passes(self):
        assert gate(0.0, [1.0, 2.0, 3.0]) == "pass"

    def test_above_maximum_flags(self):
        assert gate(4.0, [1.0, 2.0, 3.0]) == "flag"

    def test_interpolated_quantile_worked_example(self):
        refs = list(range(1, 101))
        # Linear-interpolation 95th percentile of 1..100: index h = 99*0.95
        # = 94.05 -> 95 + 0.05 * (96 - 95) = 95.05.
        assert gate(96.0, refs, 95.0) == "flag"
        assert gate(95.0, refs, 95.0) == "pass"
        assert np.percentile(refs, 95.0) == pytest.approx(95.05)

    def test_empty_reference_rejected(self):
        with pytest.raises(InsufficientDataError):
            gate(1.0, [])

    def test_percentile_range_enforced(self):
        for bad in (50.0, 100.0, 0.0):
            with pytest.raises(ParameterError):
                gate(1.0, [1.0, 2.0], bad)


class TestEmitReport:
    def single(self):
        return EvalReport(
            rows=(ReportRow("ds", "msp", "binary", CellStat(0.9, 0.01), CellStat(0.5, 0.0)),),
            datasets=("ds",), methods=("msp",), flavors=("binary",),
        )

    def test_single_cell_csv(self):
        text = emit_report(self.single(), "csv")
        lines = text.strip().split("\n")
        assert lines[0] == ("dataset,msp_binary_auroc_mean,msp_binary_auroc_std,"
                            "msp_binary_dsc_mean,msp_binary_dsc_std")
        assert lines[1] == "ds,0.9000,0.0100,0.5000,0.0000"

    def test_markdown_bolds_best(self):
        report = EvalReport(
            rows=(
                ReportRow("ds", "msp", "binary", CellStat(0.90, 0.0), None),
                ReportRow("ds", "dum", "binary", CellStat(0.95, 0.0), None),
            ),
            datasets=("ds",), methods=("msp", "dum"), flavors=("binary",),
        )
        text = emit_report(report, "markdown")
        assert "**0.95 ± 0.00**" in text
        assert "**0.90" not in text

    def test_markdown_bolds_ties(self):
        report = EvalReport(
            rows=(
                ReportRow("ds", "msp", "binary", CellStat(0.95, 0.0), None),
                ReportRow("ds", "dum", "binary", CellStat(0.95, 0.0), None),
            ),
            datasets=("ds",), methods=("msp", "dum"), flavors=("binary",),
        )
        assert emit_report(report, "markdown").count("**0.95 ± 0.00**") == 2

    def test_blank_cells(self):
        report = EvalReport(
            rows=(ReportRow("ds", "dum", "binary", None, None),),
            datasets=("ds",), methods=("dum",), flavors=("binary",),
        )
        md = emit_report(report, "markdown")
        assert "| - | - |" in md
        csv_text = emit_report(report, "csv")
        assert csv_text.strip().split("\n")[1] == "ds,,,,"

    def test_bad_format_rejected(self):
        with pytest.raises(ParameterError):
            emit_report(self.single(), "html")

    def test_report_invariants(self):
        with pytest.raises(ValueError):
            ReportRow("d", "msp", "binary", CellStat(1.2, 0.0), None)
        with pytest.raises(ValueError):
            CellStat(0.5, -0.1)


class TestSeedDerivation:
    def test_deterministic_and_distinct(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)
        assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)

    def test_thread_count_env(self, monkeypatch):
        monkeypatch.setenv("OODBENCH_THREADS", "3")
        assert harness._worker_count() == 3
        monkeypatch.setenv("OODBENCH_THREADS", "bogus")
        with pytest.raises(ConfigurationError):
            harness._worker_count()

    def test_worker_count_does_not_change_results(self, phantom_sets, monkeypatch):
        _, ref, test = phantom_sets

        def run():
            return run_eval(test, [], {"binary": FAST_MODEL}, methods=("msp", "dum"),
                            runs=1, id_reference=ref, master_seed=3)

        monkeypatch.setenv("OODBENCH_THREADS", "1")
        serial = run()
        monkeypatch.setenv("OODBENCH_THREADS", "4")
        threaded = run()
        for row_a, row_b in zip(serial.rows, threaded.rows):
            assert row_a == row_b


class TestEvalConfigFile:
    def test_load_full_config(self, phantom_sets, tmp_path):
        root, ref, test = phantom_sets
        ood = synth_benchmark(test, {"noise": {"std": 0.2}}, tmp_path / "synth", 5)
        cfg_path = tmp_path / "eval.yaml"
        cfg_path.write_text(f"""
seed: 5
runs: 2
ensemble_size: 4
methods: [msp, dum]
dum: {{reducer: knn, knn_k: 2}}
manifests:
  id_reference: {root / 'ref' / 'manifest.yaml'}
  id_test: {root / 'test' / 'manifest.yaml'}
  ood: [{tmp_path / 'synth' / 'noise' / 'manifest.yaml'}]
models:
  binary: {{prototypes: [0.45, 0.95], temperature: 0.02, smoothing_sigma: 0.5,
            perturb_scale: 0.05, feature_scales: [0.5, 1.5], lesion_class: 1}}
""")
        cfg = load_eval_config(cfg_path)
        assert cfg.runs == 2 and cfg.dum_reducer == "knn" and cfg.dum_knn_k == 2
        report = harness.run_eval_from_config(cfg, scores_dir=tmp_path / "scores")
        assert report.cell("noise", "dum", "binary").auroc.mean > 0.8

    def test_overlapping_reference_rejected(self, phantom_sets, tmp_path):
        root, _, _ = phantom_sets
        cfg_path = tmp_path / "bad.yaml"
        cfg_path.write_text(f"""
manifests:
  id_reference: {root / 'test' / 'manifest.yaml'}
  id_test: {root / 'test' / 'manifest.yaml'}
models:
  binary: {{}}
""")
        with pytest.raises(ConfigurationError):
            load_eval_config(cfg_path)
