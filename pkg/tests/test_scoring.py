import numpy as np
import pytest

from oodbench.core import LabelVolume, PredictionStack, ProbVolume, Signature
from oodbench.errors import (
    DimensionMismatchError,
    EmptyMaskError,
    ParameterError,
    ShapeError,
    UsageError,
)
from oodbench.scoring import (
    ReferenceSignatureSet,
    VoxelUncertaintyMap,
    dum_score,
    dum_signature,
    image_score,
    load_signatures,
    msp_uncertainty,
    save_signatures,
    score_method,
    stack_mean,
    variance_uncertainty,
)


def prob(arr):
    return ProbVolume(np.asarray(arr, dtype=np.float64))


def binary_stack(lesion_probs, shape=(1, 1, 1)):
    members = []
    for p in lesion_probs:
        probs = np.empty((2,) + shape)
        probs[1] = p
        probs[0] = 1.0 - p
        members.append(ProbVolume(probs))
    return PredictionStack(tuple(members))


class TestMsp:
    def test_one_hot_gives_zero(self):
        p = prob([[[[1.0]]], [[[0.0]]]])
        assert msp_uncertainty(p).values[0, 0, 0] == 0.0

    def test_maximal_binary_uncertainty(self):
        p = prob([[[[0.5]]], [[[0.5]]]])
        assert msp_uncertainty(p).values[0, 0, 0] == 0.5

    def test_three_class_example(self):
        p = prob([[[[0.2]]], [[[0.3]]], [[[0.5]]]])
        assert abs(msp_uncertainty(p).values[0, 0, 0] - 0.5) <= 1e-12

    def test_uniform_attains_upper_bound(self, rng):
        for c in (2, 3, 8):
            p = prob(np.full((c, 2, 2, 2), 1.0 / c))
            np.testing.assert_allclose(msp_uncertainty(p).values, 1 - 1 / c, atol=1e-12)

    def test_bounded_and_zero_only_on_one_hot(self, rng):
        probs = rng.random((4, 5, 5, 5))
        probs /= probs.sum(axis=0)
        values = msp_uncertainty(prob(probs)).values
        assert values.min() >= 0.0
        assert values.max() <= 1 - 1 / 4 + 1e-12
        assert (values > 0).all()  # random simplex points are never one-hot


class TestVariance:
    def test_identical_members_zero(self, rng):
        probs = rng.random((3, 4, 4, 4))
        probs /= probs.sum(axis=0)
        stack = PredictionStack(tuple(ProbVolume(probs) for _ in range(5)))
        u = variance_uncertainty(stack)
        assert np.abs(u.values).max() <= 1e-12
        assert image_score(u) <= 1e-12

    def test_binary_zero_one_pair(self):
        stack = binary_stack([0.0, 1.0])
        assert abs(variance_uncertainty(stack).values[0, 0, 0] - 0.25) <= 1e-12

    def test_four_member_example(self):
        # Population variance of {0.2, 0.4, 0.6, 0.8} is 0.05; the
        # background class mirrors it, so the class mean is 0.05 too.
        stack = binary_stack([0.2, 0.4, 0.6, 0.8])
        assert abs(variance_uncertainty(stack).values[0, 0, 0] - 0.05) <= 1e-12

    def test_member_permutation_invariance(self, rng):
        probs = [rng.random((2, 3, 3, 3)) for _ in range(6)]
        probs = [p / p.sum(axis=0) for p in probs]
        stack = PredictionStack(tuple(ProbVolume(p) for p in probs))
        perm = PredictionStack(tuple(ProbVolume(probs[i]) for i in (3, 0, 5, 1, 4, 2)))
        np.testing.assert_allclose(
            variance_uncertainty(stack).values, variance_uncertainty(perm).values,
            atol=1e-12,
        )

    def test_stack_mean(self):
        stack = binary_stack([0.2, 0.4, 0.6])
        mean = stack_mean(stack)
        assert abs(mean.probs[1, 0, 0, 0] - 0.4) <= 1e-12
        assert abs(mean.probs[0, 0, 0, 0] - 0.6) <= 1e-12


class TestImageScore:
    def test_uniform_map(self):
        u = VoxelUncertaintyMap(np.full((4, 4, 4), 0.3))
        assert abs(image_score(u) - 0.3) <= 1e-12

    def test_half_map(self):
        values = np.zeros((4, 4, 4))
        values[:2] = 0.5
        u = VoxelUncertaintyMap(values)
        assert abs(image_score(u) - 0.25) <= 1e-12

    def test_masked_mean(self):
        values = np.zeros((4, 4, 4))
        values[:2] = 0.5
        mask = LabelVolume((values > 0).astype(np.int64), num_classes=2)
        assert abs(image_score(VoxelUncertaintyMap(values), mask) - 0.5) <= 1e-12

    def test_empty_mask_rejected(self):
        u = VoxelUncertaintyMap(np.zeros((2, 2, 2)))
        mask = LabelVolume(np.zeros((2, 2, 2), dtype=np.int64), num_classes=2)
        with pytest.raises(EmptyMaskError):
            image_score(u, mask)

    def test_mask_shape_mismatch(self):
        u = VoxelUncertaintyMap(np.zeros((2, 2, 2)))
        mask = LabelVolume(np.ones((3, 2, 2), dtype=np.int64), num_classes=2)
        with pytest.raises(ShapeError):
            image_score(u, mask)

    def test_linear_in_scaling(self, rng):
        values = rng.random((5, 5, 5)) * 0.2
        for a in (0.0, 0.25, 1.0):
            scaled = image_score(VoxelUncertaintyMap(values * a))
            assert abs(scaled - a * image_score(VoxelUncertaintyMap(values))) <= 1e-12

    def test_map_value_caps_enforced(self):
        with pytest.raises(ValueError):
            VoxelUncertaintyMap(np.full((2, 2, 2), 0.3), method="variance")
        with pytest.raises(ValueError):
            VoxelUncertaintyMap(np.full((2, 2, 2), -0.1))


class TestDumSignature:
    def test_constant_channel(self):
        sig = dum_signature([np.full((3, 3, 3), 2.0)])
        np.testing.assert_allclose(sig.features, [2.0], atol=1e-12)

    def test_two_channel_means(self, rng):
        # Oracle: accumulate by plain summation.
        ch1 = rng.random((4, 4, 4)) + 0.5
        ch2 = rng.random((4, 4, 4)) - 3.5
        sig = dum_signature([ch1, ch2], source_id="case7")
        for d, ch in enumerate((ch1, ch2)):
            total = 0.0
            for val in ch.ravel():
                total += val
            assert abs(sig.features[d] - total / ch.size) <= 1e-9
        assert sig.source_id == "case7"

    def test_permutation_invariance(self, rng):
        ch = rng.random((4, 4, 4))
        shuffled = rng.permutation(ch.ravel()).reshape(ch.shape)
        a = dum_signature([ch]).features
        b = dum_signature([shuffled]).features
        assert abs(a[0] - b[0]) <= 1e-12

    def test_channel_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            dum_signature([rng.random((2, 2, 2)), rng.random((3, 2, 2))])


class TestDumScore:
    def refs(self):
        return ReferenceSignatureSet((
            Signature(np.array([0.0, 0.0]), "r0"),
            Signature(np.array([0.0, 4.0]), "r1"),
        ))

    def test_equal_to_single_reference_is_zero(self):
        refs = ReferenceSignatureSet((Signature(np.array([1.0, 2.0])),))
        s = Signature(np.array([1.0, 2.0]))
        for reducer, k in (("mean", None), ("min", None), ("knn", 1)):
            assert dum_score(s, refs, reducer, k) == 0.0

    def test_worked_mean_and_min(self):
        s = Signature(np.array([3.0, 0.0]))
        assert abs(dum_score(s, self.refs(), "mean") - 4.0) <= 1e-12
        assert abs(dum_score(s, self.refs(), "min") - 3.0) <= 1e-12

    def test_knn_one_equals_min(self):
        s = Signature(np.array([3.0, 0.0]))
        assert dum_score(s, self.refs(), "knn", 1) == dum_score(s, self.refs(), "min")

    def test_knn_k_validation(self):
        s = Signature(np.array([3.0, 0.0]))
        for bad in (None, 0, 3):
            with pytest.raises(ParameterError):
                dum_score(s, self.refs(), "knn", bad)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            dum_score(Signature(np.array([1.0])), self.refs())

    def test_lipschitz_in_test_signature(self, rng):
        refs = ReferenceSignatureSet(tuple(
            Signature(rng.standard_normal(5)) for _ in range(10)
        ))
        for _ in range(50):
            s1 = Signature(rng.standard_normal(5))
            s2 = Signature(rng.standard_normal(5))
            gap = abs(dum_score(s1, refs) - dum_score(s2, refs))
            assert gap <= np.linalg.norm(s1.features - s2.features) + 1e-12


class TestScoreMethod:
    def test_msp_one_hot(self):
        probs = np.zeros((2, 2, 2, 2))
        probs[0] = 1.0
        assert score_method("msp", prob=prob(probs)) == 0.0

    def test_variance_identical_stack(self):
        stack = binary_stack([0.4, 0.4, 0.4])
        assert score_method("ensemble_variance", stack=stack) <= 1e-12
        assert score_method("mc_variance", stack=stack) <= 1e-12

    def test_dum_reference_match(self):
        ch = np.full((2, 2, 2), 1.5)
        refs = ReferenceSignatureSet((dum_signature([ch]),))
        assert score_method("dum", features=[ch], refs=refs, reducer="min") == 0.0

    def test_mismatched_inputs_rejected(self):
        stack = binary_stack([0.2, 0.8])
        p = prob(np.full((2, 1, 1, 1), 0.5))
        with pytest.raises(UsageError):
            score_method("msp", stack=stack)
        with pytest.raises(UsageError):
            score_method("mc_variance", prob=p)
        with pytest.raises(UsageError):
            score_method("dum", prob=p)
        with pytest.raises(UsageError):
            score_method("entropy", prob=p)
        with pytest.raises(UsageError):
            score_method("msp", prob=p, stack=stack)


class TestSignatureCsv:
    def test_round_trip_exact(self, rng, tmp_path):
        refs = ReferenceSignatureSet(
            tuple(Signature(rng.standard_normal(6), source_id=f"case_{i}") for i in range(4)),
            source_dataset="bank",
        )
        path = tmp_path / "sigs.csv"
        save_signatures(refs, path)
        back = load_signatures(path)
        assert back.count == 4 and back.dimension == 6
        for a, b in zip(refs.signatures, back.signatures):
            assert a.source_id == b.source_id
            assert np.array_equal(a.features, b.features)  # repr round-trip is exact

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "sigs.csv"
        path.write_text("foo,bar\n1,2\n")
        with pytest.raises(ShapeError):
            load_signatures(path)

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "sigs.csv"
        path.write_text("source_id,f0\n")
        with pytest.raises(ShapeError):
            load_signatures(path)

    def test_uniform_dimension_enforced(self):
        with pytest.raises(DimensionMismatchError):
            ReferenceSignatureSet((
                Signature(np.array([1.0])),
                Signature(np.array([1.0, 2.0])),
            ))
