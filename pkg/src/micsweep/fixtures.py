"""Synthetic stand-ins for the stimulus, car impulse responses and driving noises.

Every generator is a pure function of its parameters and an integer seed.
Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence([seed, *stream])``, which is stable across platforms and
numpy releases, so fixture WAVs are reproducible byte for byte.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .audio_io import CANONICAL_RATE, AudioBuffer, ImpulseResponse

STIMULUS_PEAK_DBFS = -12.0
MALE_F0_HZ = 120.0
FEMALE_F0_HZ = 220.0
SYLLABIC_RATE_HZ = 4.0
# Harmonics stop below this so the stimulus has no energy above 3.5 kHz.
STIMULUS_MAX_HARMONIC_HZ = 3400.0
PINK_FLOOR_HZ = 20.0
ROAD_TILT_HZ = 500.0


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True)
class StimulusLayout:
    sentence_count: int = 20
    sentence_seconds: float = 4.0
    lead_silence_s: float = 1.0
    trail_silence_s: float = 1.0

    def __post_init__(self):
        if self.sentence_count < 1:
            raise ValueError("sentence_count must be >= 1")
        if self.lead_silence_s <= 0 or self.trail_silence_s <= 0:
            raise ValueError("lead and trail silences must be positive")
        if self.lead_silence_s + self.trail_silence_s >= self.sentence_seconds:
            raise ValueError("lead + trail silence must be shorter than the sentence")

    @property
    def total_seconds(self) -> float:
        return self.sentence_count * self.sentence_seconds

    def samples(self, sample_rate: int) -> tuple[int, int, int]:
        """(sentence, lead, trail) lengths in samples; each must be a whole number."""
        out = []
        for sec in (self.sentence_seconds, self.lead_silence_s, self.trail_silence_s):
            n = sec * sample_rate
            if abs(n - round(n)) > 1e-6:
                raise ValueError(f"{sec} s is not a whole number of samples at {sample_rate} Hz")
            out.append(int(round(n)))
        return out[0], out[1], out[2]

    def total_samples(self, sample_rate: int) -> int:
        return self.sentence_count * self.samples(sample_rate)[0]


class NoiseClass(enum.Enum):
    IDLE = "idle"
    CITY = "city"
    HIGHWAY = "highway"

    @property
    def default_level_dbfs(self) -> float:
        return DEFAULT_NOISE_LEVELS[self]

    @property
    def index(self) -> int:
        return list(NoiseClass).index(self)


DEFAULT_NOISE_LEVELS = {
    NoiseClass.IDLE: -50.0,
    NoiseClass.CITY: -35.0,
    NoiseClass.HIGHWAY: -25.0,
}


@dataclass(frozen=True)
class CarModel:
    id: str
    rt60: float
    direct_to_reverb_db: float

    def __post_init__(self):
        if not self.rt60 > 0:
            raise ValueError(f"car {self.id}: rt60 must be positive")


# Synthetic analogs of a mid-size sedan, a compact SUV and a subcompact SUV.
DEFAULT_CARS = (
    CarModel("sedan", rt60=0.07, direct_to_reverb_db=6.0),
    CarModel("compact_suv", rt60=0.09, direct_to_reverb_db=4.0),
    CarModel("subcompact_suv", rt60=0.06, direct_to_reverb_db=2.0),
)
DEFAULT_IR_SECONDS = 0.25
DEFAULT_NOISE_SECONDS = 30.0


def synth_stimulus(layout: StimulusLayout = StimulusLayout(), seed: int = 0,
                   sample_rate: int = CANONICAL_RATE) -> AudioBuffer:
    """Speech-like stimulus: one harmonic complex per sentence between silences.

    Sentence f0 alternates 120/220 Hz, harmonics have 1/k amplitudes and
    seeded random phases, and a raised-cosine envelope at the syllabic
    rate modulates the active region. Each sentence peaks at -12 dBFS.
    """
    n_sent, n_lead, n_trail = layout.samples(sample_rate)
    n_active = n_sent - n_lead - n_trail
    t = np.arange(n_active) / sample_rate
    envelope = 0.5 * (1.0 - np.cos(2.0 * math.pi * SYLLABIC_RATE_HZ * t))
    peak = 10.0 ** (STIMULUS_PEAK_DBFS / 20.0)
    out = np.zeros(layout.sentence_count * n_sent)
    for i in range(layout.sentence_count):
        rng = rng_for(seed, 1, i)
        f0 = MALE_F0_HZ if i % 2 == 0 else FEMALE_F0_HZ
        n_harm = int(STIMULUS_MAX_HARMONIC_HZ // f0)
        phases = rng.uniform(0.0, 2.0 * math.pi, n_harm)
        voiced = np.zeros(n_active)
        for k in range(1, n_harm + 1):
            voiced += np.sin(2.0 * math.pi * k * f0 * t + phases[k - 1]) / k
        voiced *= envelope
        voiced *= peak / np.max(np.abs(voiced))
        start = i * n_sent + n_lead
        out[start:start + n_active] = voiced
    return AudioBuffer(out, sample_rate)


def synth_impulse_response(car: CarModel, length_s: float = DEFAULT_IR_SECONDS, seed: int = 0,
                           sample_rate: int = CANONICAL_RATE) -> ImpulseResponse:
    """Unit direct path at t=0 plus an exponentially decaying white-noise tail.

    The tail amplitude falls 60 dB over ``car.rt60`` and its energy sits
    ``car.direct_to_reverb_db`` below the direct path (``inf`` gives a
    pure delta).
    """
    if length_s < car.rt60:
        raise ValueError(f"IR length {length_s} s is shorter than rt60 {car.rt60} s")
    n = int(round(length_s * sample_rate))
    h = np.zeros(n)
    h[0] = 1.0
    if math.isinf(car.direct_to_reverb_db) and car.direct_to_reverb_db > 0:
        return ImpulseResponse(h, sample_rate, label=car.id)
    rng = rng_for(seed, 2, *car.id.encode())
    t = np.arange(1, n) / sample_rate
    tail = rng.standard_normal(n - 1) * np.exp(-3.0 * math.log(10.0) * t / car.rt60)
    target_energy = 10.0 ** (-car.direct_to_reverb_db / 10.0)
    h[1:] = tail * math.sqrt(target_energy / np.sum(tail * tail))
    return ImpulseResponse(h, sample_rate, label=car.id)


def synth_noise(noise: NoiseClass, duration_s: float = DEFAULT_NOISE_SECONDS, seed: int = 0,
                sample_rate: int = CANONICAL_RATE, level_dbfs: float | None = None,
                stream: int = 0) -> AudioBuffer:
    """Road-like noise: pink spectrum with an extra first-order low-pass tilt.

    The result is RMS-normalised to ``level_dbfs`` (class default if None).
    It is generated in the frequency domain, so it loops without a seam.
    ``stream`` separates otherwise identical requests, e.g. one per car.
    """
    if not duration_s > 0:
        raise ValueError("noise duration must be positive")
    level = noise.default_level_dbfs if level_dbfs is None else level_dbfs
    n = int(round(duration_s * sample_rate))
    if n < 2:
        raise ValueError("noise duration too short")
    rng = rng_for(seed, 3, noise.index, stream)
    spectrum = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    shape = 1.0 / np.sqrt(np.maximum(f, PINK_FLOOR_HZ))
    shape /= np.sqrt(1.0 + (f / ROAD_TILT_HZ) ** 2)
    shape[0] = 0.0
    x = np.fft.irfft(spectrum * shape, n)
    x *= 10.0 ** (level / 20.0) / np.sqrt(np.mean(x * x))
    return AudioBuffer(x, sample_rate)


def rms_dbfs(x) -> float:
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    return 10.0 * math.log10(np.mean(x * x))
