"""Synthetic sustained-vowel and environment-noise generators.

The desk-scale experiments need recordings whose class structure is known by
construction. Each disease class is a profile over glottal-source traits:

* health: stable phonation. Tiny cycle-to-cycle frequency perturbation
  (jitter) and amplitude perturbation (shimmer), faint aspiration noise.
* neoplasm: rough phonation. Large jitter and shimmer, a subharmonic series
  at half-integer multiples of f0 (period doubling), strong aspiration.
* structural: breathy phonation. Moderate jitter and shimmer, steep spectral
  tilt, pronounced aspiration between the two extremes, and a resonance
  pattern shifted down in frequency with a spectral notch near 2 kHz.

The fundamental frequency ranges overlap heavily across classes, so pitch
alone cannot separate them; the discriminative structure lives in harmonic
shape, resonance placement, line width and noise floor, mostly between 300
and 4500 Hz, where it survives the low-frequency environment noise.

Environment noise comes in two kinds: "ac" is stationary machinery rumble
(energy concentrated below 400 Hz plus mains hum lines), "street" is
pink-like broadband noise with slow amplitude modulation and passing-event
bursts, hence strongly nonstationary.
"""

from __future__ import annotations

import numpy as np

__all__ = ["PROFILES", "NOISE_KINDS", "synth_voice", "synth_noise"]

NOISE_KINDS = ("ac", "street")

# trait ranges per class: fractions for jitter/shimmer, harmonic rolloff
# exponent for tilt, relative amplitude for the subharmonic series, dB
# relative to the voiced part for aspiration noise, resonance peaks as
# (center Hz, bandwidth Hz, gain) and an optional (center, bandwidth, depth)
# notch
# tilt ranges overlap across classes on purpose: overall spectral slope is the
# one trait additive environment noise corrupts most, so class identity rides
# on traits that survive mixing — harmonic line texture (jitter/shimmer
# smear), subharmonic lines, aspiration floor and formant placement
PROFILES = {
    "health": dict(f0=(120.0, 220.0), jitter=(0.001, 0.003), shimmer=(0.005, 0.02),
                   tilt=(1.0, 1.5), sub=(0.0, 0.0), noise_db=(-26.0, -20.0),
                   resonances=((700.0, 150.0, 3.0), (1600.0, 200.0, 2.0),
                               (3000.0, 250.0, 1.5)), notch=None),
    "neoplasm": dict(f0=(110.0, 200.0), jitter=(0.025, 0.04), shimmer=(0.06, 0.10),
                     tilt=(1.0, 1.5), sub=(0.4, 0.7), noise_db=(-11.0, -7.0),
                     resonances=((700.0, 150.0, 3.0), (1600.0, 200.0, 2.0),
                                 (3000.0, 250.0, 1.5)), notch=None),
    "structural": dict(f0=(100.0, 180.0), jitter=(0.008, 0.015), shimmer=(0.03, 0.05),
                       tilt=(1.1, 1.6), sub=(0.0, 0.1), noise_db=(-17.0, -13.0),
                       resonances=((520.0, 120.0, 4.0), (1250.0, 180.0, 2.4),
                                   (2600.0, 250.0, 1.0)),
                       notch=(2000.0, 220.0, 0.92)),
}

_TOP_HZ = 4500.0  # highest synthesized partial
_RMS = 0.1


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def _slow_noise(rng: np.random.Generator, n: int, rate: int, cutoff_hz: float) -> np.ndarray:
    """Unit-variance noise varying on the 1/cutoff_hz timescale."""
    width = max(2, int(round(rate / cutoff_hz)))
    x = rng.standard_normal(n + width)
    kernel = np.hanning(width)
    kernel /= kernel.sum()
    y = np.convolve(x, kernel, mode="same")[:n]
    sd = y.std()
    return y / sd if sd > 0 else y


def _band_noise(rng: np.random.Generator, n: int, rate: int, lo: float, hi: float,
                shape=None) -> np.ndarray:
    """Unit-RMS white noise restricted to [lo, hi] Hz, optionally spectrally
    shaped by a frequency-domain amplitude curve."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[(f < lo) | (f > hi)] = 0.0
    if shape is not None:
        spec *= shape(f)
    y = np.fft.irfft(spec, n)
    return y / max(_rms(y), 1e-12)


def _resonance_curve(resonances, notch):
    """Linear-amplitude multiplier over frequency: vocal-tract-like peaks
    plus an optional anti-resonance dip."""

    def curve(f):
        f = np.asarray(f, dtype=float)
        r = np.ones_like(f)
        for center, width, gain in resonances:
            r = r + gain * np.exp(-0.5 * ((f - center) / width) ** 2)
        if notch is not None:
            center, width, depth = notch
            r = r * (1.0 - depth * np.exp(-0.5 * ((f - center) / width) ** 2))
        return r

    return curve


def _edge_ramp(x: np.ndarray, rate: int, ms: float = 50.0) -> np.ndarray:
    w = int(rate * ms / 1000.0)
    if w * 2 >= x.size:
        return x
    ramp = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, w))
    x[:w] *= ramp
    x[-w:] *= ramp[::-1]
    return x


def synth_voice(rng: np.random.Generator, disease: str,
                duration: float = 2.0, rate: int = 16000) -> np.ndarray:
    """One sustained-vowel recording for the given class, RMS 0.1."""
    if disease not in PROFILES:
        raise ValueError(f"unknown disease class {disease!r}")
    p = PROFILES[disease]
    f0 = rng.uniform(*p["f0"])
    jitter = rng.uniform(*p["jitter"])
    shimmer = rng.uniform(*p["shimmer"])
    tilt = rng.uniform(*p["tilt"])
    sub = rng.uniform(*p["sub"])
    noise_db = rng.uniform(*p["noise_db"])
    # per-speaker scatter of the resonance centers
    resonances = tuple((c + rng.uniform(-40.0, 40.0), w, g)
                       for c, w, g in p["resonances"])
    notch = p["notch"]
    if notch is not None:
        notch = (notch[0] + rng.uniform(-40.0, 40.0), notch[1], notch[2])
    curve = _resonance_curve(resonances, notch)

    n = int(round(duration * rate))
    # instantaneous frequency with slowly varying jitter, integrated to phase
    inst = f0 * (1.0 + jitter * _slow_noise(rng, n, rate, 40.0))
    phase = 2.0 * np.pi * np.cumsum(inst) / rate

    k = np.arange(1, int(_TOP_HZ // f0) + 1)
    amps = k.astype(float) ** (-tilt) * curve(k * f0)
    offs = rng.uniform(0.0, 2.0 * np.pi, size=k.size)
    voiced = amps @ np.sin(k[:, None] * phase[None, :] + offs[:, None])

    if sub > 0.0:
        m = np.arange(1, int(2.0 * _TOP_HZ // f0) + 1, 2)  # odd half-multiples
        samps = sub * (m / 2.0) ** (-tilt) * curve(m * f0 / 2.0)
        soffs = rng.uniform(0.0, 2.0 * np.pi, size=m.size)
        voiced = voiced + samps @ np.sin(m[:, None] * phase[None, :] / 2.0 + soffs[:, None])

    envelope = 1.0 + shimmer * _slow_noise(rng, n, rate, 25.0)
    voiced *= np.maximum(envelope, 0.1)

    # breath noise passes through the same resonant tract as the harmonics
    aspiration = _band_noise(rng, n, rate, 300.0, _TOP_HZ, shape=curve)
    x = voiced + aspiration * (_rms(voiced) * 10.0 ** (noise_db / 20.0))

    x = _edge_ramp(x, rate)
    return x * (_RMS / max(_rms(x), 1e-12))


def synth_noise(rng: np.random.Generator, kind: str,
                duration: float = 2.0, rate: int = 16000) -> np.ndarray:
    """One environment-noise recording of the given kind, RMS 0.1."""
    n = int(round(duration * rate))
    if kind == "ac":
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1.0 / rate)
        spec *= 1.0 / (1.0 + (f / 180.0) ** 2)  # machinery rumble rolloff
        rumble = np.fft.irfft(spec, n)
        rumble /= max(_rms(rumble), 1e-12)
        t = np.arange(n) / rate
        hum = (0.5 * np.sin(2.0 * np.pi * 120.0 * t + rng.uniform(0, 2 * np.pi))
               + 0.25 * np.sin(2.0 * np.pi * 240.0 * t + rng.uniform(0, 2 * np.pi)))
        y = rumble + hum
    elif kind == "street":
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1.0 / rate)
        spec *= 1.0 / np.sqrt(1.0 + f / 120.0)  # pink-like power rolloff
        base = np.fft.irfft(spec, n)
        base /= max(_rms(base), 1e-12)
        envelope = 0.35 + 0.65 * np.abs(_slow_noise(rng, n, rate, 1.5))
        for _ in range(int(rng.integers(2, 5))):  # passing events
            center = int(rng.uniform(0.1, 0.9) * n)
            half = int(rng.uniform(0.05, 0.2) * rate)
            gain = rng.uniform(1.5, 3.0)
            lo, hi = max(0, center - half), min(n, center + half)
            bump = np.hanning(2 * half + 1)[half - (center - lo):half + (hi - center)]
            envelope[lo:hi] += gain * bump
        y = base * envelope
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return y * (_RMS / max(_rms(y), 1e-12))
