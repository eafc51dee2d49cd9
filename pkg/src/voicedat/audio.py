"""Audio front end: loading, resampling, noise mixing, log power spectra.

The feature pipeline is fixed by the classifier's input contract: 16 kHz
waveforms, Hamming-windowed STFT with a 31.25 ms window (500 samples) and
50 percent hop (250 samples), 500-point FFT giving 251 bins, log power with
a 1e-10 floor, per-utterance z-score normalization, and 127-frame segments.
"""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import firwin, kaiser_beta, upfirdn

__all__ = [
    "AudioClip", "Spectrogram",
    "load_wav", "save_wav", "resample", "mix_noise",
    "stft_lps", "normalize", "segment",
    "save_lps", "load_lps", "save_lps_csv",
    "WINDOW_SAMPLES", "HOP_SAMPLES", "PIPELINE_RATE", "SEGMENT_FRAMES",
]

PIPELINE_RATE = 16000
WINDOW_SAMPLES = 500  # 31.25 ms at 16 kHz
HOP_SAMPLES = 250
N_BINS = WINDOW_SAMPLES // 2 + 1  # 251
SEGMENT_FRAMES = 127
LPS_FLOOR = 1e-10


@dataclass
class AudioClip:
    """Mono waveform in [-1, 1] (float64) with its sample rate."""

    samples: np.ndarray
    rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioClip holds a 1-D waveform")
        if self.rate <= 0:
            raise ValueError("sample rate must be positive")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate


@dataclass
class Spectrogram:
    """(frames, bins) float64 matrix of log power values."""

    values: np.ndarray
    rate: int = PIPELINE_RATE
    window: int = WINDOW_SAMPLES
    hop: int = HOP_SAMPLES

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("Spectrogram holds a 2-D (frames, bins) matrix")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# loading


def load_wav(path) -> AudioClip:
    """Read a 16-bit PCM WAV file; channel 0 of multi-channel material.

    Integer samples are scaled by 1/32768 so the result lies in [-1, 1).
    """
    with wave.open(str(path), "rb") as w:
        if w.getcomptype() != "NONE":
            raise ValueError(f"unsupported WAV encoding {w.getcomptype()!r}")
        if w.getsampwidth() != 2:
            raise ValueError("only 16-bit PCM WAV is supported")
        n = w.getnframes()
        if n == 0:
            raise ValueError("WAV file holds no samples")
        raw = w.readframes(n)
        nch = w.getnchannels()
        rate = w.getframerate()
    data = np.frombuffer(raw, dtype="<i2")
    if nch > 1:
        data = data[::nch]
    return AudioClip(data.astype(np.float64) / 32768.0, rate)


def save_wav(path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM (values clipped to [-1, 1))."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.rate)
        w.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# resampling: windowed-sinc polyphase with a Kaiser window, 64 taps per
# phase, cutoff at 0.45 x target rate (100 dB stopband)


@lru_cache(maxsize=8)
def _resample_filter(up: int, down: int, rate_in: int) -> np.ndarray:
    beta = kaiser_beta(100.0)
    rate_out = rate_in * up // down
    cutoff = 0.45 * min(rate_out, rate_in)  # Hz; anti-alias (down) or anti-image (up)
    taps = 64 * up + 1  # 64 per phase; odd length keeps the filter symmetric
    h = firwin(taps, cutoff, window=("kaiser", beta), fs=rate_in * up)
    return h * up  # restore unit passband gain after zero stuffing


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase resample to target_rate; output length round(n*ratio)."""
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    if clip.rate == target_rate:
        return AudioClip(clip.samples.copy(), target_rate)
    if len(clip.samples) == 0:
        raise ValueError("cannot resample an empty clip")
    g = math.gcd(clip.rate, target_rate)
    up, down = target_rate // g, clip.rate // g
    h = _resample_filter(up, down, clip.rate)
    n_out = int(round(len(clip.samples) * target_rate / clip.rate))

    # center the filter delay on the output grid, then trim to n_out
    half = (len(h) - 1) // 2
    pre = -half % down  # shift so the group delay lands on an output sample
    hp = np.concatenate([np.zeros(pre), h])
    y = upfirdn(hp, clip.samples, up, down)
    skip = (half + pre) // down
    y = y[skip:skip + n_out]
    if len(y) < n_out:
        y = np.pad(y, (0, n_out - len(y)))
    return AudioClip(y, target_rate)


# ---------------------------------------------------------------------------
# additive noise at a prescribed SNR


def mix_noise(clean: AudioClip, noise: AudioClip, snr_db: float,
              rng: np.random.Generator) -> AudioClip:
    """Add noise scaled so 10*log10(P_signal/P_noise) equals snr_db.

    Short noise is tiled seamlessly; long noise is cropped at a random
    offset drawn from rng. Powers are mean squares over the mixed extent.
    """
    if clean.rate != noise.rate:
        raise ValueError("clean and noise sample rates differ")
    n = len(clean.samples)
    if n == 0:
        raise ValueError("clean clip is empty")
    ns = noise.samples
    if len(ns) == 0:
        raise ValueError("noise clip is empty")
    if len(ns) < n:
        reps = int(np.ceil(n / len(ns)))
        ns = np.tile(ns, reps)[:n]
    elif len(ns) > n:
        start = int(rng.integers(0, len(ns) - n + 1))
        ns = ns[start:start + n]

    p_clean = float(np.mean(clean.samples ** 2))
    p_noise = float(np.mean(ns ** 2))
    if p_noise == 0.0:
        raise ValueError("noise clip is silent")
    if p_clean == 0.0:
        raise ValueError("clean clip is silent, SNR undefined")
    scale = math.sqrt(p_clean / p_noise) * 10.0 ** (-snr_db / 20.0)
    return AudioClip(clean.samples + scale * ns, clean.rate)


# ---------------------------------------------------------------------------
# log power spectrogram


def stft_lps(clip: AudioClip) -> Spectrogram:
    """Hamming-windowed 500/250 STFT log power spectrogram at 16 kHz.

    frames = floor((n - 500)/250) + 1; 251 bins; LPS = ln(max(|X|^2, 1e-10)).
    """
    if clip.rate != PIPELINE_RATE:
        raise ValueError(f"spectrogram pipeline runs at {PIPELINE_RATE} Hz, got {clip.rate}")
    x = clip.samples
    if len(x) < WINDOW_SAMPLES:
        raise ValueError("clip shorter than one analysis window")
    n_frames = (len(x) - WINDOW_SAMPLES) // HOP_SAMPLES + 1
    from numpy.lib.stride_tricks import sliding_window_view

    frames = sliding_window_view(x, WINDOW_SAMPLES)[::HOP_SAMPLES][:n_frames]
    win = np.hamming(WINDOW_SAMPLES)
    spec = np.fft.rfft(frames * win, n=WINDOW_SAMPLES, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    return Spectrogram(np.log(np.maximum(power, LPS_FLOOR)))


def normalize(spec: Spectrogram) -> Spectrogram:
    """Per-utterance z-score over the whole matrix; std floored at 1e-8."""
    v = spec.values
    std = max(float(v.std()), 1e-8)
    return Spectrogram((v - v.mean()) / std, spec.rate, spec.window, spec.hop)


def segment(spec: Spectrogram, frames: int = SEGMENT_FRAMES, mode: str = "head",
            rng: np.random.Generator | None = None,
            seed: int | None = None, epoch: int = 0) -> np.ndarray:
    """Cut a (frames, bins) window from the spectrogram.

    head mode takes the first window (evaluation); random mode draws a
    uniform start offset, reproducibly from either the given rng or a
    generator derived from (seed, epoch).
    """
    t = spec.frames
    if t < frames:
        raise ValueError(f"spectrogram has {t} frames, need at least {frames}")
    if mode == "head":
        start = 0
    elif mode == "random":
        if rng is None:
            if seed is None:
                raise ValueError("random mode needs an rng or a seed")
            rng = np.random.default_rng([seed, epoch])
        start = int(rng.integers(0, t - frames + 1))
    else:
        raise ValueError(f"unknown segment mode {mode!r}")
    return spec.values[start:start + frames]


# ---------------------------------------------------------------------------
# flat binary interchange format for LPS matrices
#
#   magic "VDLPS" | version u8 = 1 | rows u32 LE | cols u32 LE
#   | rows*cols float64 LE, row-major

_LPS_MAGIC = b"VDLPS"
_LPS_VERSION = 1


def save_lps(path, values: np.ndarray) -> None:
    """Write an LPS matrix in the flat binary interchange format."""
    v = np.ascontiguousarray(values, dtype="<f8")
    if v.ndim != 2:
        raise ValueError("LPS matrix must be 2-D")
    with open(path, "wb") as f:
        f.write(_LPS_MAGIC)
        f.write(struct.pack("<BII", _LPS_VERSION, v.shape[0], v.shape[1]))
        f.write(v.tobytes())


def load_lps(path) -> np.ndarray:
    """Read a matrix written by save_lps."""
    with open(path, "rb") as f:
        magic = f.read(len(_LPS_MAGIC))
        if magic != _LPS_MAGIC:
            raise ValueError("not an LPS file (bad magic)")
        version, rows, cols = struct.unpack("<BII", f.read(9))
        if version != _LPS_VERSION:
            raise ValueError(f"unsupported LPS format version {version}")
        data = f.read(rows * cols * 8)
        if len(data) != rows * cols * 8:
            raise ValueError("LPS file truncated")
        return np.frombuffer(data, dtype="<f8").reshape(rows, cols).copy()


def save_lps_csv(path, values: np.ndarray) -> None:
    """CSV export of an LPS matrix, one frame per row, 17 significant digits."""
    v = np.asarray(values, dtype=np.float64)
    with open(path, "w") as f:
        for row in v:
            f.write(",".join(f"{x:.17g}" for x in row))
            f.write("\n")
