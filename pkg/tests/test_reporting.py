import math

import numpy as np
import pytest

from voicedat.datasets import build_desk_dataset, corrupt_test_fold
from voicedat.models import Model, build_sepconv, predict
from voicedat.reporting import (FeatureDump, _conditional_affinities,
                                _pairwise_sq, domain_probe_uar, emit_plot_data,
                                export_features, paired_embedding_distance,
                                pca2d, read_feature_csv, sign_test, tsne2d)
from voicedat.training import EpochStats


# ---------------------------------------------------------------------------
# feature export


@pytest.fixture(scope="module")
def export_setup(tmp_path_factory):
    desk = build_desk_dataset(seed=5, per_class_source=3, per_class_target=1,
                              duration=2.0)
    fold = desk.source.subset([0, 1, 3, 4, 6, 7])  # two per class
    corrupted = corrupt_test_fold(fold, desk.bank, seed=3)
    model = Model(build_sepconv(domain_head=False), seed=1)
    # one training-mode pass seeds the batchnorm running statistics
    model.features(fold.segments(mode="head"), train=True)
    path = tmp_path_factory.mktemp("dump") / "features.csv"
    dump = export_features(model, (fold, corrupted), path=path)
    return desk, fold, corrupted, model, path, dump


class TestExportFeatures:
    def test_paired_rows_and_ordering(self, export_setup):
        _, fold, _, _, _, dump = export_setup
        assert len(dump) == 2 * len(fold)
        assert dump.features.shape == (2 * len(fold), 256)
        assert list(dump.ids) == sorted(dump.ids)
        # each id appears exactly twice: its clean row then its noisy row
        for i in range(0, len(dump), 2):
            assert dump.ids[i] == dump.ids[i + 1]
            assert dump.domains[i] == "clean"
            assert dump.domains[i + 1] in ("ac", "street")
            assert dump.diseases[i] == dump.diseases[i + 1]
        assert set(dump.diseases) == {"health", "neoplasm", "structural"}

    def test_matches_prediction_features_bitwise(self, export_setup):
        _, fold, corrupted, model, _, dump = export_setup
        for sample_set in (fold, corrupted):
            x = sample_set.segments(mode="head")
            _, _, feats = predict(model, x)
            for sample, vec in zip(sample_set, feats):
                name = ("clean", "ac", "street")[sample.domain]
                row = next(i for i in range(len(dump))
                           if dump.ids[i] == sample.sample_id
                           and dump.domains[i] == name)
                np.testing.assert_array_equal(dump.features[row], vec)

    def test_csv_round_trip_is_lossless(self, export_setup):
        _, _, _, _, path, dump = export_setup
        header = path.read_text().splitlines()[0].split(",")
        assert header[:3] == ["id", "domain", "disease"]
        assert header[3] == "f000" and header[-1] == "f255"
        back = read_feature_csv(path)
        assert back.ids == dump.ids
        assert back.domains == dump.domains
        assert back.diseases == dump.diseases
        np.testing.assert_array_equal(back.features,
                                      dump.features.astype(np.float64))

    def test_single_set_export(self, export_setup):
        _, fold, _, model, _, _ = export_setup
        dump = export_features(model, fold)
        assert len(dump) == len(fold)
        assert set(dump.domains) == {"clean"}

    def test_rejects_non_feature_csv(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("epoch,label_loss\n1,0.5\n")
        with pytest.raises(ValueError, match="not a feature CSV"):
            read_feature_csv(path)


# ---------------------------------------------------------------------------
# PCA


class TestPca2d:
    def _data(self, seed=0, n=40, d=6):
        rng = np.random.default_rng(seed)
        scales = np.linspace(3.0, 0.3, d)
        return rng.normal(size=(n, d)) * scales + rng.normal(size=d)

    def test_matches_eigendecomposition_oracle(self):
        x = self._data()
        coords = pca2d(x)
        xc = x - x.mean(axis=0)
        w, v = np.linalg.eigh(xc.T @ xc / (x.shape[0] - 1))
        oracle = xc @ v[:, ::-1][:, :2]
        for k in range(2):
            sign = np.sign(coords[:, k] @ oracle[:, k])
            np.testing.assert_allclose(coords[:, k], sign * oracle[:, k],
                                       atol=1e-8)

    def test_component_variances_non_increasing(self):
        coords = pca2d(self._data(seed=3))
        assert coords[:, 0].var() >= coords[:, 1].var()

    def test_components_uncorrelated(self):
        coords = pca2d(self._data(seed=4))
        cov = float(coords[:, 0] @ coords[:, 1]) / coords.shape[0]
        scale = coords[:, 0].std() * coords[:, 1].std()
        assert abs(cov) < 1e-8 * scale

    def test_translation_invariance(self):
        x = self._data(seed=5)
        np.testing.assert_allclose(pca2d(x + 123.456), pca2d(x), atol=1e-8)

    def test_collinear_data_has_negligible_second_variance(self):
        t = np.linspace(-1.0, 1.0, 25)
        x = np.outer(t, np.array([2.0, -1.0, 0.5])) + 4.0
        coords = pca2d(x)
        assert coords[:, 1].var() < 1e-10 * coords[:, 0].var()

    def test_rejects_degenerate_input(self):
        with pytest.raises(ValueError, match="zero variance"):
            pca2d(np.full((5, 4), 3.0))
        with pytest.raises(ValueError, match="at least 3"):
            pca2d(np.ones((2, 4)))
        with pytest.raises(ValueError):
            pca2d(np.ones(7))


# ---------------------------------------------------------------------------
# t-SNE


def _silhouette(coords, labels):
    d = np.sqrt(_pairwise_sq(np.asarray(coords, float)))
    labels = np.asarray(labels)
    scores = []
    for i in range(len(labels)):
        same = labels == labels[i]
        same[i] = False
        a = d[i][same].mean()
        b = min(d[i][labels == c].mean()
                for c in np.unique(labels) if c != labels[i])
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))


def _blobs(seed=3, n_per=50, dim=8, gap=8.0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_per, dim)) * 0.5
    b = rng.normal(size=(n_per, dim)) * 0.5 + gap
    return np.vstack([a, b]), np.array([0] * n_per + [1] * n_per)


class TestTsne2d:
    def test_separates_two_blobs(self):
        x, labels = _blobs()
        coords, trace = tsne2d(x, seed=0)
        assert coords.shape == (100, 2)
        assert np.all(np.isfinite(coords))
        assert _silhouette(coords, labels) > 0.5
        assert trace[-1] < trace[0]

    def test_affinity_perplexity_hits_target(self):
        x, _ = _blobs(seed=6)
        p = _conditional_affinities(_pairwise_sq(x), 30.0)
        for row in p:
            nz = row > 0
            perp = math.exp(-float(np.sum(row[nz] * np.log(row[nz]))))
            assert abs(perp - 30.0) < 1e-3
        # row-stochastic with an empty diagonal
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.diag(p) == 0.0)

    def test_seed_determinism(self):
        x, _ = _blobs(seed=9, n_per=20, dim=4)
        first, trace_a = tsne2d(x, perplexity=10.0, seed=4)
        again, trace_b = tsne2d(x, perplexity=10.0, seed=4)
        np.testing.assert_array_equal(first, again)
        np.testing.assert_array_equal(trace_a, trace_b)
        other, _ = tsne2d(x, perplexity=10.0, seed=5)
        assert not np.array_equal(first, other)

    def test_duplicate_points_are_jittered(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(12, 3))
        x[7] = x[2]  # exact duplicate
        coords, trace = tsne2d(x, perplexity=3.0, seed=1)
        assert np.all(np.isfinite(coords))
        assert np.all(np.isfinite(trace))

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError, match="more than"):
            tsne2d(np.random.default_rng(0).normal(size=(60, 4)),
                   perplexity=30.0)
        with pytest.raises(ValueError, match="2000"):
            tsne2d(np.zeros((2001, 2)))
        with pytest.raises(ValueError, match="iterations"):
            tsne2d(np.random.default_rng(0).normal(size=(40, 3)),
                   perplexity=5.0, iterations=0)
        with pytest.raises(ValueError, match="2-D"):
            tsne2d(np.ones(10))


# ---------------------------------------------------------------------------
# plot-data emission


class TestEmitPlotData:
    def _dump(self):
        return FeatureDump(
            ids=("a", "a", "b", "b"),
            domains=("clean", "ac", "clean", "street"),
            diseases=("health", "health", "neoplasm", "neoplasm"),
            features=np.zeros((4, 256)))

    def test_tsne_csv(self, tmp_path):
        dump = self._dump()
        coords = np.array([[0.5, -1.25], [1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        path = emit_plot_data("tsne", {"dump": dump, "coords": coords},
                              tmp_path / "tsne.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "id,x,y,domain,disease"
        assert len(lines) == 5
        assert lines[1] == "a,0.5,-1.25,clean,health"
        assert lines[4].split(",")[3:] == ["street", "neoplasm"]

    def test_tsne_rejects_mismatched_coords(self, tmp_path):
        with pytest.raises(ValueError, match="match the feature dump"):
            emit_plot_data("tsne", {"dump": self._dump(),
                                    "coords": np.zeros((3, 2))},
                           tmp_path / "x.csv")

    def test_lambda_box_csv(self, tmp_path):
        sweep = {0.5: {"source": np.array([0.7, 0.8, 0.9]),
                       "target": np.array([0.4, 0.5, 0.6])}}
        path = emit_plot_data("lambda_box", {"sweep": sweep},
                              tmp_path / "box.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "lambda,domain,min,q1,median,q3,max"
        assert len(lines) == 3
        assert lines[1].startswith("0.5,source,0.700000")

    def test_training_curves_csv(self, tmp_path):
        history = [EpochStats(1, 0.9, 0.3, 0.5, 0.4),
                   EpochStats(2, 0.7, 0.2, 0.6, 0.5)]
        path = emit_plot_data("training_curves", {"history": history},
                              tmp_path / "curves.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,label_loss,domain_loss,source_uar,target_uar"
        assert len(lines) == 3
        assert lines[1].split(",")[0] == "1"

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ValueError, match="unknown plot-data kind"):
            emit_plot_data("scatter3d", {}, tmp_path / "x.csv")


# ---------------------------------------------------------------------------
# domain-invariance analyses


class TestDomainProbe:
    def test_domain_encoding_features_probe_high(self):
        rng = np.random.default_rng(0)
        domains = np.array([0, 1, 2] * 20)
        x = rng.normal(size=(60, 8)) * 0.05
        x[np.arange(60), domains] += 3.0  # one cluster axis per domain
        assert domain_probe_uar(x, domains) > 0.9

    def test_domain_free_features_probe_near_chance(self):
        rng = np.random.default_rng(1)
        domains = np.array([0, 1, 2] * 20)
        x = rng.normal(size=(60, 8))
        assert abs(domain_probe_uar(x, domains) - 1.0 / 3.0) < 0.25

    def test_probe_is_deterministic(self):
        rng = np.random.default_rng(2)
        domains = np.array([0, 1, 2] * 10)
        x = rng.normal(size=(30, 5))
        assert domain_probe_uar(x, domains) == domain_probe_uar(x, domains)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError, match="align"):
            domain_probe_uar(np.ones((4, 2)), [0, 1, 2])
        with pytest.raises(ValueError, match="two domains"):
            domain_probe_uar(np.ones((4, 2)), [0, 0, 0, 0])
        with pytest.raises(ValueError, match="at least 2 rows"):
            domain_probe_uar(np.ones((3, 2)), [0, 0, 1])


class TestPairedEmbeddingDistance:
    def test_hand_case(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]])
        got = paired_embedding_distance(coords, ["a", "a", "b", "b"])
        # pairs average 1; mean all-pairs distance is (1+10+11+9+10+1)/6 = 7
        np.testing.assert_allclose(got, 1.0 / 7.0, rtol=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(5)
        coords = rng.normal(size=(10, 2))
        ids = [f"s{i // 2}" for i in range(10)]
        a = paired_embedding_distance(coords, ids)
        b = paired_embedding_distance(coords * 37.5, ids)
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_rejects_unpaired_or_degenerate(self):
        with pytest.raises(ValueError, match="exactly two rows"):
            paired_embedding_distance(np.zeros((3, 2)), ["a", "a", "b"])
        with pytest.raises(ValueError, match="coincide"):
            paired_embedding_distance(np.zeros((4, 2)), ["a", "a", "b", "b"])
        with pytest.raises(ValueError, match=r"\(n, 2\)"):
            paired_embedding_distance(np.zeros((4, 3)), ["a", "a", "b", "b"])


class TestSignTest:
    def test_five_of_five(self):
        assert sign_test([1, 2, 3, 4, 5], [2, 3, 4, 5, 6]) == 0.03125

    def test_four_of_five(self):
        p = sign_test([1, 2, 3, 4, 9], [2, 3, 4, 5, 6])
        np.testing.assert_allclose(p, 6.0 / 32.0)

    def test_ties_are_dropped(self):
        # three untied pairs, all wins: p = 1/8
        p = sign_test([1.0, 5.0, 2.0, 2.0, 3.0], [2.0, 5.0, 3.0, 2.0, 4.0])
        np.testing.assert_allclose(p, 0.125)

    def test_all_tied_and_no_wins(self):
        assert sign_test([1.0, 2.0], [1.0, 2.0]) == 1.0
        assert sign_test([5, 6, 7], [1, 2, 3]) == 1.0

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError, match="align"):
            sign_test([1, 2], [1, 2, 3])
        with pytest.raises(ValueError, match="no pairs"):
            sign_test([], [])
