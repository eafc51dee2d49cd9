"""Sample containers, the unlabeled view, synthetic corpus assembly.

A sample couples one utterance's normalized log power spectrogram with its
disease label, acoustic domain and identity. Identity is what pairs a clean
test sample with its noise-corrupted copy, so corruption keeps sample_id
and changes only the domain (and the stored audio).

Voices are synthesized at a studio rate (44.1 kHz) and resampled to the
16 kHz pipeline rate on ingestion. Noise lives at the pipeline rate, because
corruption is applied to the resampled signal.

UnlabeledView is the safety rail for adaptation training: the target-domain
split enters those code paths wrapped in a view whose label access raises,
so a regression that starts consuming target labels fails loudly instead of
silently inflating scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import audio
from .audio import AudioClip, Spectrogram
from .synth import NOISE_KINDS, synth_noise, synth_voice

__all__ = [
    "CLASS_NAMES", "DOMAIN_NAMES", "VOICE_RATE", "LabelAccessError",
    "SpectroSample", "SampleSet", "UnlabeledView", "prepare_sample",
    "DatasetSpec", "NoiseBank", "synth_dataset",
    "DeskData", "build_desk_dataset", "corrupt_test_fold",
]

CLASS_NAMES = ("health", "neoplasm", "structural")
DOMAIN_NAMES = ("clean", "ac", "street")
VOICE_RATE = 44100


class LabelAccessError(RuntimeError):
    """Raised when code reads disease labels from an unlabeled split."""


@dataclass
class SpectroSample:
    """One utterance: id, labels, normalized LPS, and optionally the audio."""

    sample_id: str
    disease: int
    domain: int
    spec: Spectrogram
    wave: np.ndarray | None = None
    rate: int = audio.PIPELINE_RATE
    snr_db: float | None = None


def prepare_sample(sample_id: str, disease: int, domain: int, wave: np.ndarray,
                   rate: int = audio.PIPELINE_RATE, snr_db: float | None = None,
                   keep_wave: bool = True) -> SpectroSample:
    """Waveform to stored sample: resample, spectrogram, z-normalization.

    The stored wave is the pipeline-rate version, so later corruption mixes
    at the rate the spectrogram sees.
    """
    clip = AudioClip(np.asarray(wave, dtype=np.float64), rate)
    if clip.rate != audio.PIPELINE_RATE:
        clip = audio.resample(clip, audio.PIPELINE_RATE)
    spec = audio.normalize(audio.stft_lps(clip))
    return SpectroSample(sample_id, disease, domain, spec,
                         wave=clip.samples if keep_wave else None,
                         rate=clip.rate, snr_db=snr_db)


class SampleSet:
    """Ordered collection of samples with array views and crop extraction."""

    def __init__(self, samples) -> None:
        self._samples = list(samples)

    def __len__(self) -> int:
        return len(self._samples)

    def __getitem__(self, i: int) -> SpectroSample:
        return self._samples[i]

    def __iter__(self):
        return iter(self._samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.disease for s in self._samples], dtype=np.int64)

    @property
    def domains(self) -> np.ndarray:
        return np.array([s.domain for s in self._samples], dtype=np.int64)

    @property
    def ids(self) -> tuple:
        return tuple(s.sample_id for s in self._samples)

    def subset(self, indices) -> "SampleSet":
        return SampleSet([self._samples[int(i)] for i in indices])

    def by_ids(self, ids) -> "SampleSet":
        index = {s.sample_id: s for s in self._samples}
        return SampleSet([index[i] for i in ids])

    def segments(self, indices=None, mode: str = "head",
                 rng: np.random.Generator | None = None) -> np.ndarray:
        """(B, 127, 251) crops for the given sample indices (all by default)."""
        if indices is None:
            indices = range(len(self._samples))
        return np.stack([audio.segment(self._samples[int(i)].spec, mode=mode, rng=rng)
                         for i in indices])


class UnlabeledView:
    """A SampleSet whose disease labels are inaccessible by construction."""

    def __init__(self, samples: SampleSet) -> None:
        self._set = samples

    def __len__(self) -> int:
        return len(self._set)

    @property
    def labels(self) -> np.ndarray:
        raise LabelAccessError("this split is unlabeled by contract")

    @property
    def domains(self) -> np.ndarray:
        return self._set.domains

    @property
    def ids(self) -> tuple:
        return self._set.ids

    def segments(self, indices=None, mode: str = "head",
                 rng: np.random.Generator | None = None) -> np.ndarray:
        return self._set.segments(indices, mode=mode, rng=rng)


# ---------------------------------------------------------------------------
# synthetic corpus

# rng stream ids within a dataset seed; disjoint so adding samples to one
# split never perturbs another
_STREAM_SOURCE_VOICE = 10
_STREAM_TARGET_VOICE = 11
_STREAM_NOISE_BANK = 12
_STREAM_TARGET_ASSIGN = 13
_STREAM_CORRUPT_ASSIGN = 20
_STREAM_CORRUPT_NOISE = 21

TRAIN_SNRS = (0.0, 5.0, 10.0)
TEST_SNRS = (3.0, 6.0, 9.0)


@dataclass(frozen=True)
class DatasetSpec:
    """Generator parameters for one synthetic corpus.

    The corpus floor (ten samples per class, 2.5 seconds per clip) keeps the
    generated task statistically meaningful; smoke-scale fixtures that need
    less go through build_desk_dataset, which does not re-impose it.
    """

    per_class: int = 20
    duration: float = 2.5
    rate: int = VOICE_RATE
    noise_clips: int = 3

    def validate(self) -> None:
        if self.per_class < 10:
            raise ValueError(f"per_class must be >= 10, got {self.per_class}")
        if self.duration < 2.5:
            raise ValueError(f"duration must be >= 2.5 s, got {self.duration}")
        if self.rate < audio.PIPELINE_RATE:
            raise ValueError(
                f"rate must be >= the {audio.PIPELINE_RATE} Hz pipeline rate")
        if self.noise_clips < 1:
            raise ValueError("noise_clips must be >= 1")


class NoiseBank:
    """Environment-noise clips at the pipeline rate, tagged by kind.

    Clips are generated at twice the voice duration so the mixer can crop a
    window at a random offset instead of tiling.
    """

    def __init__(self, clips: dict[str, list[np.ndarray]],
                 rate: int = audio.PIPELINE_RATE) -> None:
        if not clips or any(not v for v in clips.values()):
            raise ValueError("noise bank needs at least one clip per kind")
        self._clips = {k: [np.asarray(c, dtype=np.float64) for c in v]
                       for k, v in clips.items()}
        self.rate = int(rate)

    @property
    def kinds(self) -> tuple:
        return tuple(self._clips)

    def count(self, kind: str) -> int:
        return len(self._clips[kind])

    def pick(self, kind: str, rng: np.random.Generator) -> AudioClip:
        """One clip of the given kind, chosen uniformly by rng."""
        pool = self._clips.get(kind)
        if pool is None:
            raise ValueError(f"unknown noise kind {kind!r}")
        return AudioClip(pool[int(rng.integers(len(pool)))], self.rate)


def _labeled_clips(spec: DatasetSpec, seed: int) -> SampleSet:
    rng = np.random.default_rng([seed, _STREAM_SOURCE_VOICE])
    samples = []
    for c, name in enumerate(CLASS_NAMES):
        for _ in range(spec.per_class):
            wave = synth_voice(rng, name, spec.duration, spec.rate)
            samples.append(prepare_sample(f"s{len(samples):03d}", c, 0, wave,
                                          rate=spec.rate))
    return SampleSet(samples)


def _noise_bank(spec: DatasetSpec, seed: int) -> NoiseBank:
    rng = np.random.default_rng([seed, _STREAM_NOISE_BANK])
    return NoiseBank({kind: [synth_noise(rng, kind, 2.0 * spec.duration,
                                         audio.PIPELINE_RATE)
                             for _ in range(spec.noise_clips)]
                      for kind in NOISE_KINDS})


def synth_dataset(spec: DatasetSpec, seed: int) -> tuple[SampleSet, NoiseBank]:
    """The labeled clean corpus plus its environment-noise bank.

    Same seed, same spec: bitwise-identical output. The corpus floor in
    DatasetSpec is enforced here.
    """
    spec.validate()
    return _labeled_clips(spec, seed), _noise_bank(spec, seed)


@dataclass
class DeskData:
    """Source split (clean, labeled), target split (noisy), and the bank."""

    source: SampleSet
    target: SampleSet
    bank: NoiseBank
    seed: int

    def target_unlabeled(self) -> UnlabeledView:
        return UnlabeledView(self.target)


def build_desk_dataset(seed: int, per_class_source: int = 20,
                       per_class_target: int = 4,
                       duration: float = 2.5) -> DeskData:
    """Synthesize the two-domain corpus for one experiment seed.

    Source samples are clean; target samples carry bank noise at a training
    SNR, alternating between the two noise kinds within each class.
    Identities are disjoint across splits. Corpus-floor validation is not
    re-imposed, so smoke-scale fixtures can shrink below DatasetSpec minima.
    """
    spec = DatasetSpec(per_class=per_class_source, duration=duration)
    source = _labeled_clips(spec, seed)
    bank = _noise_bank(spec, seed)

    rng_tv = np.random.default_rng([seed, _STREAM_TARGET_VOICE])
    rng_ta = np.random.default_rng([seed, _STREAM_TARGET_ASSIGN])
    target = []
    for c, name in enumerate(CLASS_NAMES):
        for j in range(per_class_target):
            voice = synth_voice(rng_tv, name, duration, spec.rate)
            clip = audio.resample(AudioClip(voice, spec.rate),
                                  audio.PIPELINE_RATE)
            kind = NOISE_KINDS[j % len(NOISE_KINDS)]
            snr = float(rng_ta.choice(TRAIN_SNRS))
            mixed = audio.mix_noise(clip, bank.pick(kind, rng_ta), snr,
                                    rng=rng_ta)
            target.append(prepare_sample(f"t{len(target):03d}", c,
                                         1 + NOISE_KINDS.index(kind),
                                         mixed.samples, snr_db=snr))
    return DeskData(source, SampleSet(target), bank, seed)


def corrupt_test_fold(fold: SampleSet, bank: NoiseBank, seed: int,
                      snrs=TEST_SNRS) -> SampleSet:
    """Noise-corrupted copy of a clean test fold, paired by sample_id.

    Half the samples get machinery noise and half street noise (the split is
    a seeded permutation; odd sizes give the extra one to the first kind),
    each at an SNR drawn from the given levels. Identities and labels are
    preserved so the corrupted fold is a bijective image of the clean one.
    """
    n = len(fold)
    if n == 0:
        raise ValueError("cannot corrupt an empty test fold")
    rng_a = np.random.default_rng([seed, _STREAM_CORRUPT_ASSIGN])
    rng_n = np.random.default_rng([seed, _STREAM_CORRUPT_NOISE])
    order = rng_a.permutation(n)
    kinds = [""] * n
    for pos, idx in enumerate(order):
        kinds[idx] = NOISE_KINDS[0] if pos < (n + 1) // 2 else NOISE_KINDS[1]
    out = []
    for i, s in enumerate(fold):
        if s.wave is None:
            raise ValueError(f"sample {s.sample_id} has no stored audio")
        snr = float(rng_a.choice(snrs))
        mixed = audio.mix_noise(AudioClip(s.wave, s.rate),
                                bank.pick(kinds[i], rng_n), snr, rng=rng_n)
        out.append(prepare_sample(s.sample_id, s.disease,
                                  1 + NOISE_KINDS.index(kinds[i]),
                                  mixed.samples, snr_db=snr))
    return SampleSet(out)
