import itertools

import numpy as np
import pytest

from icpexplain.features import (
    FEATURE_NAMES,
    Embedding,
    EmbeddingParseError,
    Standardizer,
    as_matrix,
    export_embeddings,
    extract_features,
    fit_standardizer,
    import_embeddings,
)
from icpexplain.geometry import PointCloud, RigidTransform, apply_transform, random_rigid_transform
from icpexplain.icp import RegistrationResult
from icpexplain.perturb import PerturbSpec, Vocabulary, perturb_noise, perturb_overlap, synth_dataset
from icpexplain.pipeline import embed_pairs, register_and_embed
from icpexplain.shapes import box, bunny, sphere


def perfect_result():
    return RegistrationResult(RigidTransform.identity(), 0.0, 2, True, 0.0)


def feature(emb, name):
    return emb.values[FEATURE_NAMES.index(name)]


class TestExtractFeatures:
    def test_sixteen_named_values(self):
        e = extract_features(bunny(300), bunny(300), perfect_result())
        assert len(e) == 16 and e.feature_names == FEATURE_NAMES and e.source == "analytical"

    def test_identical_clouds(self):
        c = bunny(500)
        e = extract_features(c, c, perfect_result())
        np.testing.assert_array_equal(e.values[:6], [0, 0, 0, 0, 1, 1])
        assert feature(e, "point_count_ratio") == 1.0
        assert feature(e, "centroid_offset") == 0.0

    def test_overlap_signature(self):
        target = bunny(2000)
        source = perturb_overlap(target, 0.5, np.random.default_rng(0))
        e, _ = register_and_embed(source, target)
        assert feature(e, "point_count_ratio") == pytest.approx(0.5, abs=1e-3)
        assert feature(e, "overlap_fraction") > 0.95
        assert feature(e, "rmse") < 1e-3

    def test_noise_signature(self):
        target = bunny(2000)
        sigma = 0.01 * target.diameter()
        source = perturb_noise(target, sigma, np.random.default_rng(0))
        e, r = register_and_embed(source, target)
        clean, _ = register_and_embed(target, target)
        # nearest-neighbour residual of isotropic jitter scales like sigma * sqrt(3)
        assert feature(e, "rmse") == pytest.approx(0.01 * np.sqrt(3), rel=0.10)
        assert feature(e, "normal_consistency") < feature(clean, "normal_consistency") - 0.02

    def test_rmse_feature_matches_linear_scan(self):
        target = box(400)
        source = perturb_noise(target, 0.01, np.random.default_rng(1))
        e, r = register_and_embed(source, target)
        moved = r.transform.apply(source.points)
        d = np.linalg.norm(moved[:, None] - target.points[None], axis=-1).min(axis=1)
        diam = target.diameter()
        assert feature(e, "median_residual") == pytest.approx(np.median(d) / diam, rel=1e-9)
        assert feature(e, "q90_residual") == pytest.approx(np.quantile(d, 0.9) / diam, rel=1e-9)

    def test_degenerate_covariance(self):
        pts = np.zeros((12, 3))
        e = extract_features(PointCloud(pts), bunny(100), perfect_result())
        assert e.degenerate
        np.testing.assert_array_equal(e.values[8:11], [0, 0, 0])

    @pytest.mark.parametrize("seed", range(3))
    def test_invariant_to_common_rigid_motion(self, seed):
        rng = np.random.default_rng(seed)
        target = bunny(800)
        source = perturb_noise(perturb_overlap(target, 0.6, rng), 0.01, rng)
        result = RegistrationResult(RigidTransform.identity(), 0.02, 7, True, 0.3)
        g = random_rigid_transform(np.pi, 5.0, rng)
        a = extract_features(source, target, result)
        b = extract_features(apply_transform(source, g), apply_transform(target, g), result)
        assert np.abs(a.values - b.values).max() < 1e-6

    def test_deterministic(self):
        target = sphere(400)
        source = perturb_noise(target, 0.02, np.random.default_rng(3))
        a = extract_features(source, target, perfect_result())
        b = extract_features(source, target, perfect_result())
        np.testing.assert_array_equal(a.values, b.values)

    def test_classes_separate_on_default_dataset(self):
        pairs = synth_dataset([bunny(1000), box(1000), sphere(1000)], 15, PerturbSpec(seed=0))
        emb, labels, _ = embed_pairs(pairs)
        X, y = as_matrix(emb), np.array(labels)
        for a, b in itertools.combinations(Vocabulary().names, 2):
            Xa, Xb = X[y == a], X[y == b]
            pooled = np.sqrt((Xa.var(axis=0) + Xb.var(axis=0)) / 2.0)
            gap = np.abs(Xa.mean(axis=0) - Xb.mean(axis=0))
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(pooled > 0, gap / pooled, np.where(gap > 0, np.inf, 0.0))
            assert ratio.max() >= 2.0, (a, b)


class TestStandardizer:
    def test_constant_column_flagged(self):
        s = fit_standardizer(np.array([[1.0, 5.0], [3.0, 5.0]]))
        np.testing.assert_array_equal(s.std, [1.0, 1.0])
        np.testing.assert_array_equal(s.degenerate, [False, True])

    def test_population_convention(self):
        s = fit_standardizer(np.array([[0.0], [2.0]]))
        assert s.mean[0] == 1.0 and s.std[0] == 1.0

    def test_standardized_moments(self):
        X = np.random.default_rng(0).normal(3.0, 7.0, size=(50, 4))
        Z = fit_standardizer(X).transform(X)
        np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-9)

    def test_inverse_and_dict(self):
        X = np.random.default_rng(1).normal(size=(10, 3))
        s = fit_standardizer(X)
        np.testing.assert_allclose(s.inverse_transform(s.transform(X)), X, atol=1e-12)
        back = Standardizer.from_dict(s.to_dict())
        np.testing.assert_array_equal(back.mean, s.mean)
        np.testing.assert_array_equal(back.std, s.std)

    def test_mixed_dimensionality(self):
        with pytest.raises(ValueError, match="mixed"):
            fit_standardizer([Embedding([1.0, 2.0]), Embedding([1.0])])

    def test_needs_two(self):
        with pytest.raises(ValueError):
            fit_standardizer(np.ones((1, 3)))


class TestEmbeddingCsv:
    def write(self, path, text):
        path.write_text(text)
        return path

    def test_three_rows_with_labels(self, tmp_path):
        p = self.write(tmp_path / "e.csv", "f0,f1,f2,f3,label\n1,2,3,4,noise\n5,6,7,8,pose\n0,0,0,1,overlap\n")
        rows, vocab = import_embeddings(p)
        assert len(rows) == 3 and rows[1][1].name == "pose"
        assert rows[0][0].source == "imported"
        np.testing.assert_array_equal(rows[0][0].values, [1, 2, 3, 4])

    def test_unknown_label(self, tmp_path):
        p = self.write(tmp_path / "e.csv", "f0,label\n1,glare\n")
        with pytest.raises(EmbeddingParseError, match="row 2.*glare.*noise"):
            import_embeddings(p)
        rows, vocab = import_embeddings(p, extend_vocab=True)
        assert vocab.names[-1] == "glare" and rows[0][1].index == 3

    def test_ragged_row(self, tmp_path):
        p = self.write(tmp_path / "e.csv", "f0,f1\n1,2\n3\n")
        with pytest.raises(EmbeddingParseError, match="row 3"):
            import_embeddings(p)

    def test_non_numeric(self, tmp_path):
        p = self.write(tmp_path / "e.csv", "f0,f1\n1,x\n")
        with pytest.raises(EmbeddingParseError, match="row 2"):
            import_embeddings(p)

    def test_unlabeled(self, tmp_path):
        p = self.write(tmp_path / "e.csv", "f0,f1\n1,2\n")
        rows, _ = import_embeddings(p)
        assert rows[0][1] is None

    def test_round_trip_lossless(self, tmp_path):
        X = np.random.default_rng(0).normal(size=(20, 16)) * 10.0 ** np.arange(-8, 8)
        labels = ["noise", "pose", "overlap", "noise"] * 5
        export_embeddings(tmp_path / "e.csv", X, labels)
        header = (tmp_path / "e.csv").read_text().splitlines()[0]
        assert header == ",".join(f"f{i}" for i in range(16)) + ",label"
        rows, _ = import_embeddings(tmp_path / "e.csv")
        np.testing.assert_array_equal(as_matrix([e for e, _ in rows]), X)
        assert [lab.name for _, lab in rows] == labels
