"""Synthetic labelled corpora and a brute-force i-vector oracle.

Utterances mimic a shared phonetic space with class-specific colouring. A
corpus has an inventory of "phones" (two strong resonances each) common to
all classes; an utterance is a random sequence of 80-250 ms phone segments,
each segment white Gaussian noise shaped by its phone's resonances. Every
class adds its own signature on top: two weaker resonances in 300-3000 Hz
and a spectral tilt in -6..+6 dB/octave. White noise at ``noise_level``
times the signal RMS is mixed in and the result is written as PCM16.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frontend import AudioBuffer, write_wav
from .tvm import BaumWelchStats, TotalVariabilityModel

L1_CODES = ("ARA", "CHI", "FRE", "GER", "HIN", "ITA", "JAP", "KOR", "SPA", "TEL", "TUR")
SPLITS = ("train", "dev", "test")
SPLIT_FRACTIONS = (0.64, 0.19, 0.17)


@dataclass(frozen=True)
class ClassSignature:
    resonances: tuple[float, float]
    tilt_db_per_octave: float


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 11
    n_train: int = 10
    n_dev: int = 3
    n_test: int = 0
    duration_s: float = 3.0
    sample_rate: int = 16000
    noise_level: float = 0.1
    seed: int = 0
    signatures: tuple[ClassSignature, ...] | None = field(default=None)
    n_phones: int = 6
    phone_gain_db: float = 20.0
    resonance_gain_db: float = 10.0
    resonance_bandwidth: float = 150.0
    segment_ms: tuple[float, float] = (80.0, 250.0)
    jitter: float = 0.02

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if min(self.n_train, self.n_dev, self.n_test) < 0:
            raise ValueError("utterance counts must be non-negative")
        if self.duration_s <= 0.06:
            raise ValueError("duration must exceed one 60 ms analysis window")
        if self.noise_level < 0:
            raise ValueError("noise_level must be non-negative")
        if self.n_phones < 1:
            raise ValueError("need at least one phone")
        if self.signatures is not None and len(self.signatures) != self.n_classes:
            raise ValueError("one signature per class required")

    @classmethod
    def from_total(cls, per_class: int, **kwargs) -> "SynthSpec":
        """Split ``per_class`` utterances 64/19/17 into train/dev/test."""
        n_dev = round(per_class * SPLIT_FRACTIONS[1])
        n_test = round(per_class * SPLIT_FRACTIONS[2])
        return cls(n_train=per_class - n_dev - n_test, n_dev=n_dev, n_test=n_test, **kwargs)

    def counts(self) -> dict[str, int]:
        return {"train": self.n_train, "dev": self.n_dev, "test": self.n_test}

    def labels(self) -> list[str]:
        if self.n_classes <= len(L1_CODES):
            return list(L1_CODES[: self.n_classes])
        return [f"C{i:02d}" for i in range(self.n_classes)]

    def class_signatures(self) -> tuple[ClassSignature, ...]:
        if self.signatures is not None:
            return self.signatures
        rng = np.random.default_rng([self.seed, 0x5167])
        out = []
        for _ in range(self.n_classes):
            lo, hi = np.sort(rng.uniform(300.0, 3000.0, size=2))
            out.append(ClassSignature((float(lo), float(hi)), float(rng.uniform(-6.0, 6.0))))
        return tuple(out)

    def phones(self) -> np.ndarray:
        """(n_phones, 2) resonance frequencies shared by every class."""
        rng = np.random.default_rng([self.seed, 0x9F0])
        return np.sort(rng.uniform(250.0, 3500.0, size=(self.n_phones, 2)), axis=1)


def _resonance_gain(freqs, centers, bandwidth, gain_db):
    peak = 10.0 ** (gain_db / 20.0) - 1.0
    out = np.ones_like(freqs)
    for fc in centers:
        out = out * (1.0 + peak / (1.0 + ((freqs - fc) / bandwidth) ** 2))
    return out


def shaping_response(freqs: np.ndarray, sig: ClassSignature, bandwidth: float, gain_db: float) -> np.ndarray:
    """Magnitude response of a class signature: tilt times two resonances."""
    f = np.maximum(freqs, 50.0)
    tilt = (f / 1000.0) ** (sig.tilt_db_per_octave / (20.0 * math.log10(2.0)))
    return tilt * _resonance_gain(freqs, sig.resonances, bandwidth, gain_db)


def _segment_gates(n: int, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """(n_phones, n) soft indicators of which phone is active at each sample."""
    gates = np.zeros((spec.n_phones, n))
    lo, hi = (int(ms * spec.sample_rate / 1000.0) for ms in spec.segment_ms)
    start = 0
    while start < n:
        stop = min(n, start + int(rng.integers(lo, hi + 1)))
        gates[int(rng.integers(spec.n_phones)), start:stop] = 1.0
        start = stop
    ramp = max(1, int(0.01 * spec.sample_rate))
    kernel = np.hanning(2 * ramp + 1)
    kernel /= kernel.sum()
    return np.stack([np.convolve(g, kernel, mode="same") for g in gates])


def synthesize_utterance(spec: SynthSpec, sig: ClassSignature, rng: np.random.Generator) -> AudioBuffer:
    n = int(round(spec.duration_s * spec.sample_rate))
    freqs = np.fft.rfftfreq(n, d=1.0 / spec.sample_rate)
    jittered = ClassSignature(
        tuple(fc * (1.0 + spec.jitter * rng.standard_normal()) for fc in sig.resonances),
        sig.tilt_db_per_octave,
    )
    colour = shaping_response(freqs, jittered, spec.resonance_bandwidth, spec.resonance_gain_db)
    gates = _segment_gates(n, spec, rng)
    signal = np.zeros(n)
    for phone, gate in zip(spec.phones(), gates):
        if not gate.any():
            continue
        response = colour * _resonance_gain(freqs, phone, spec.resonance_bandwidth, spec.phone_gain_db)
        shaped = np.fft.irfft(np.fft.rfft(rng.standard_normal(n)) * response, n)
        signal += gate * shaped / np.sqrt(np.mean(shaped**2))
    signal /= np.sqrt(np.mean(signal**2))
    signal = signal + spec.noise_level * rng.standard_normal(n)
    signal = 0.5 * signal / np.max(np.abs(signal)) * 10.0 ** (rng.uniform(-6.0, 0.0) / 20.0)
    return AudioBuffer(signal, spec.sample_rate)


def generate_corpus(spec: SynthSpec, out_dir: str | Path):
    """Write WAVs under ``out_dir/<label>/`` plus ``out_dir/manifest.csv``.

    Returns the manifest. Paths in the CSV are relative to ``out_dir``.
    """
    from .pipeline import Manifest, ManifestEntry

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {out_dir}: {exc}") from exc
    entries = []
    sigs = spec.class_signatures()
    for ci, (label, sig) in enumerate(zip(spec.labels(), sigs)):
        (out_dir / label).mkdir(exist_ok=True)
        for si, (split, count) in enumerate(spec.counts().items()):
            for idx in range(count):
                rng = np.random.default_rng([spec.seed, ci, si, idx])
                rel = f"{label}/{split}_{idx:03d}.wav"
                write_wav(out_dir / rel, synthesize_utterance(spec, sig, rng))
                entries.append(ManifestEntry(out_dir / rel, label, split))
    manifest = Manifest(entries)
    manifest.write(out_dir / "manifest.csv")
    return manifest


# --- brute-force posterior maximization ------------------------------------

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def ivector_log_posterior(tv: TotalVariabilityModel, stats: BaumWelchStats, w) -> float:
    """Unnormalized ``log p(w | stats)`` evaluated directly from the supervector offset ``T w``."""
    w = np.asarray(w, dtype=np.float64)
    offset = (tv.t_matrix @ w).reshape(tv.ubm.means.shape)
    inv_var = 1.0 / tv.ubm.variances
    return float(
        -0.5 * w @ w
        + np.sum(offset * stats.f * inv_var)
        - 0.5 * np.sum(stats.n[:, None] * offset * offset * inv_var)
    )


def _golden_max(fn, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    return (a + b) / 2.0


def _bracket_max(fn, x0: float, step: float) -> tuple[float, float]:
    """Expand ``[x0 - step, x0 + step]`` until both ends are below ``fn(x0)``."""
    f0 = fn(x0)
    lo, hi = x0 - step, x0 + step
    while fn(lo) > f0:
        lo -= 2.0 * (x0 - lo)
    while fn(hi) > f0:
        hi += 2.0 * (hi - x0)
    return lo, hi


def ivector_posterior_oracle(
    tv: TotalVariabilityModel,
    stats: BaumWelchStats,
    tol: float = 1e-10,
    max_sweeps: int = 2000,
) -> np.ndarray:
    """Maximize the i-vector log-posterior by derivative-free search.

    Cyclic coordinate golden-section searches, each followed by a
    golden-section search along the net displacement of the sweep (a
    pattern move). Only objective values are used, and only for small
    problems (K*D <= 32, R <= 4).
    """
    kd, rank = tv.t_matrix.shape
    if kd > 32 or rank > 4:
        raise ValueError(f"oracle limited to K*D <= 32 and R <= 4, got K*D={kd}, R={rank}")

    def objective(v):
        return ivector_log_posterior(tv, stats, v)

    w = np.zeros(rank)
    steps = np.ones(rank)
    for _ in range(max_sweeps):
        start = w.copy()
        for i in range(rank):
            def along(v, i=i):
                trial = w.copy()
                trial[i] = v
                return objective(trial)

            scale = max(1.0, abs(w[i]))
            lo, hi = _bracket_max(along, w[i], max(steps[i], tol * scale))
            new = _golden_max(along, lo, hi, tol * scale)
            steps[i] = 4.0 * abs(new - w[i])
            w[i] = new
        move = w - start
        if np.any(move):
            base = w.copy()

            def pattern(s):
                return objective(base + s * move)

            lo, hi = _bracket_max(pattern, 0.0, 1.0)
            s_best = _golden_max(pattern, lo, hi, tol)
            w = base + s_best * move
            move = w - start
        if np.max(np.abs(move)) <= tol * max(1.0, np.max(np.abs(w))):
            break
    return w
