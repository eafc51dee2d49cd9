"""Dataset assembly: splits, label guard, corruption pairing, determinism."""

import numpy as np
import pytest

from voicedat import audio
from voicedat.datasets import (
    CLASS_NAMES, VOICE_RATE, DatasetSpec, LabelAccessError, NoiseBank,
    SampleSet, build_desk_dataset, corrupt_test_fold, prepare_sample,
    synth_dataset,
)
from voicedat.synth import NOISE_KINDS, synth_voice


@pytest.fixture(scope="module")
def desk():
    return build_desk_dataset(seed=5, per_class_source=3, per_class_target=2,
                              duration=2.0)


class TestSampleSet:
    def test_prepare_normalizes(self):
        wave = synth_voice(np.random.default_rng(0), "health")
        s = prepare_sample("x0", 0, 0, wave)
        assert abs(s.spec.values.mean()) < 1e-12
        assert abs(s.spec.values.std() - 1.0) < 1e-9

    def test_prepare_resamples_studio_rate(self):
        wave = synth_voice(np.random.default_rng(1), "health", 2.0, VOICE_RATE)
        s = prepare_sample("x1", 0, 0, wave, rate=VOICE_RATE)
        assert s.rate == audio.PIPELINE_RATE
        assert s.wave.size == round(2.0 * audio.PIPELINE_RATE)
        assert s.spec.values.shape == (127, 251)  # frames x bins for 2 s

    def test_array_views(self, desk):
        assert len(desk.source) == 9
        assert list(desk.source.labels) == [0, 0, 0, 1, 1, 1, 2, 2, 2]
        assert set(desk.source.domains) == {0}
        assert len(set(desk.source.ids)) == 9

    def test_subset_preserves_order(self, desk):
        sub = desk.source.subset([4, 2, 7])
        assert sub.ids == (desk.source[4].sample_id, desk.source[2].sample_id,
                           desk.source[7].sample_id)

    def test_by_ids(self, desk):
        want = (desk.source[5].sample_id, desk.source[0].sample_id)
        assert desk.source.by_ids(want).ids == want

    def test_segments_shape(self, desk):
        x = desk.source.segments([0, 1])
        assert x.shape == (2, 127, 251)

    def test_random_segments_reproducible(self, desk):
        rng1 = np.random.default_rng(3)
        rng2 = np.random.default_rng(3)
        a = desk.source.segments([0, 1, 2], mode="random", rng=rng1)
        b = desk.source.segments([0, 1, 2], mode="random", rng=rng2)
        np.testing.assert_array_equal(a, b)


class TestUnlabeledView:
    def test_label_access_raises(self, desk):
        view = desk.target_unlabeled()
        with pytest.raises(LabelAccessError):
            view.labels

    def test_non_label_access_allowed(self, desk):
        view = desk.target_unlabeled()
        assert len(view) == 6
        assert set(view.domains) <= {1, 2}
        assert view.segments([0]).shape == (1, 127, 251)


class TestDatasetSpec:
    def test_defaults_valid(self):
        DatasetSpec().validate()

    @pytest.mark.parametrize("bad", [
        dict(per_class=9), dict(duration=2.0), dict(rate=8000),
        dict(noise_clips=0),
    ])
    def test_out_of_range_rejected(self, bad):
        with pytest.raises(ValueError):
            DatasetSpec(**bad).validate()


class TestNoiseBank:
    def test_pick_is_seeded_and_tagged(self):
        clips = {"ac": [np.ones(8), 2 * np.ones(8)], "street": [3 * np.ones(8)]}
        bank = NoiseBank(clips)
        a = bank.pick("ac", np.random.default_rng(4))
        b = bank.pick("ac", np.random.default_rng(4))
        np.testing.assert_array_equal(a.samples, b.samples)
        assert bank.pick("street", np.random.default_rng(0)).samples[0] == 3.0
        assert bank.kinds == ("ac", "street")

    def test_unknown_kind_rejected(self):
        bank = NoiseBank({"ac": [np.ones(8)]})
        with pytest.raises(ValueError):
            bank.pick("river", np.random.default_rng(0))

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError):
            NoiseBank({"ac": []})


class TestSynthDataset:
    @pytest.fixture(scope="class")
    @staticmethod
    def corpus():
        return synth_dataset(DatasetSpec(per_class=30, noise_clips=2), seed=9)

    def test_composition(self, corpus):
        samples, bank = corpus
        assert len(samples) == 90
        assert list(np.bincount(samples.labels)) == [30, 30, 30]
        assert set(samples.domains) == {0}
        assert bank.kinds == NOISE_KINDS
        assert all(bank.count(k) == 2 for k in NOISE_KINDS)

    def test_bank_clips_cover_double_duration(self, corpus):
        _, bank = corpus
        clip = bank.pick("ac", np.random.default_rng(0))
        assert clip.samples.size == round(2 * 2.5 * audio.PIPELINE_RATE)
        assert clip.rate == audio.PIPELINE_RATE

    def test_deterministic(self):
        spec = DatasetSpec(per_class=10, noise_clips=1)
        (a, ba), (b, bb) = synth_dataset(spec, 3), synth_dataset(spec, 3)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.spec.values, sb.spec.values)
        np.testing.assert_array_equal(
            ba.pick("street", np.random.default_rng(0)).samples,
            bb.pick("street", np.random.default_rng(0)).samples)

    def test_spec_floor_enforced(self):
        with pytest.raises(ValueError, match=">= 10"):
            synth_dataset(DatasetSpec(per_class=3), seed=0)

    def test_linear_separability_health_vs_neoplasm(self, corpus):
        # leave-one-out ridge probe on mean-LPS features of the two classes
        samples, _ = corpus
        keep = [i for i, s in enumerate(samples) if s.disease in (0, 1)]
        feats = np.stack([samples[i].spec.values.mean(axis=0) for i in keep])
        y = np.where(samples.labels[keep] == 0, -1.0, 1.0)
        hits = 0
        for i in range(len(keep)):
            train = np.arange(len(keep)) != i
            x = feats[train]
            mu, sd = x.mean(axis=0), x.std(axis=0) + 1e-8
            xb = np.c_[(x - mu) / sd, np.ones(train.sum())]
            w = np.linalg.solve(xb.T @ xb + np.eye(xb.shape[1]), xb.T @ y[train])
            score = np.r_[(feats[i] - mu) / sd, 1.0] @ w
            hits += np.sign(score) == y[i]
        assert hits / len(keep) > 0.9


class TestDeskDataset:
    def test_split_sizes_and_domains(self, desk):
        assert len(desk.source) == 3 * 3 and len(desk.target) == 3 * 2
        assert set(desk.source.domains) == {0}
        assert set(desk.target.domains) == {1, 2}

    def test_target_snrs_from_train_levels(self, desk):
        assert all(s.snr_db in (0.0, 5.0, 10.0) for s in desk.target)

    def test_disjoint_identities(self, desk):
        assert not set(desk.source.ids) & set(desk.target.ids)

    def test_samples_live_at_pipeline_rate(self, desk):
        assert all(s.rate == audio.PIPELINE_RATE
                   for s in list(desk.source) + list(desk.target))

    def test_deterministic(self):
        a = build_desk_dataset(seed=7, per_class_source=2, per_class_target=1)
        b = build_desk_dataset(seed=7, per_class_source=2, per_class_target=1)
        for sa, sb in zip(list(a.source) + list(a.target),
                          list(b.source) + list(b.target)):
            np.testing.assert_array_equal(sa.spec.values, sb.spec.values)
            assert sa.sample_id == sb.sample_id

    def test_seed_changes_data(self):
        a = build_desk_dataset(seed=7, per_class_source=2, per_class_target=1)
        b = build_desk_dataset(seed=8, per_class_source=2, per_class_target=1)
        assert np.abs(a.source[0].spec.values - b.source[0].spec.values).max() > 0


class TestCorruptTestFold:
    def test_pairing_and_domains(self, desk):
        fold = desk.source.subset(range(6))
        noisy = corrupt_test_fold(fold, desk.bank, seed=11)
        assert noisy.ids == fold.ids
        assert list(noisy.labels) == list(fold.labels)
        assert sorted(noisy.domains) == [1, 1, 1, 2, 2, 2]
        assert all(s.snr_db in (3.0, 6.0, 9.0) for s in noisy)

    def test_measured_snr(self, desk):
        fold = desk.source.subset(range(4))
        noisy = corrupt_test_fold(fold, desk.bank, seed=11)
        for clean, mixed in zip(fold, noisy):
            added = mixed.wave - clean.wave
            got = 10.0 * np.log10(np.mean(clean.wave**2) / np.mean(added**2))
            assert abs(got - mixed.snr_db) < 0.01

    def test_spectra_actually_change(self, desk):
        fold = desk.source.subset(range(2))
        noisy = corrupt_test_fold(fold, desk.bank, seed=11)
        for clean, mixed in zip(fold, noisy):
            assert np.abs(clean.spec.values - mixed.spec.values).mean() > 0.05

    def test_deterministic(self, desk):
        fold = desk.source.subset(range(4))
        a = corrupt_test_fold(fold, desk.bank, seed=11)
        b = corrupt_test_fold(fold, desk.bank, seed=11)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.spec.values, sb.spec.values)

    def test_odd_sized_fold(self, desk):
        noisy = corrupt_test_fold(desk.source.subset(range(5)), desk.bank, seed=2)
        assert sorted(noisy.domains) in ([1, 1, 1, 2, 2], [1, 1, 2, 2, 2])
        counts = np.bincount(noisy.domains, minlength=3)
        assert counts[1] == 3  # extra one goes to the first kind

    def test_empty_fold_rejected(self, desk):
        with pytest.raises(ValueError, match="empty"):
            corrupt_test_fold(desk.source.subset([]), desk.bank, seed=0)

    def test_waveless_sample_rejected(self, desk):
        s = desk.source[0]
        bare = SampleSet([type(s)(s.sample_id, s.disease, s.domain, s.spec,
                                  wave=None)])
        with pytest.raises(ValueError):
            corrupt_test_fold(bare, desk.bank, seed=0)
