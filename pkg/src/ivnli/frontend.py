"""Cepstral front-end: PCM16 WAV in, 60-column MFCC or GFCC feature matrices out.

The chain is framing + windowing, one-sided power spectrum, filterbank
energies, natural log, orthonormal DCT, then regression deltas and
delta-deltas. MFCC and GFCC share every stage except the filterbank rows,
which are either mel-spaced triangles or ERB-spaced gammatone magnitude
responses sampled on the FFT grid.

Defaults follow the published parameter table: 26 bands, 20-8000 Hz,
20 cepstra, 60 ms window, 10 ms hop, DCT type 3, delta width 9. Note that the
textbook cepstral transform is DCT-II; ``dct_type=2`` selects it.
"""

from __future__ import annotations

import dataclasses
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft

from .kvconfig import ConfigError, format_kv, read_kv

FAMILIES = ("mel", "gammatone")
WINDOWS = ("hamming", "rectangular")


class FrontendError(ValueError):
    """Input audio cannot be turned into features."""


class WavError(FrontendError):
    """WAV file is missing, malformed or outside the supported subset."""


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise FrontendError("audio must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise FrontendError("audio contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise FrontendError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrontendConfig:
    """Front-end parameters.

    ``fft_size=None`` picks the smallest power of two that holds one window.
    ``window`` may be set to ``"rectangular"`` to disable tapering.
    """

    n_bands: int = 26
    fmin: float = 20.0
    fmax: float = 8000.0
    n_ceps: int = 20
    window_ms: float = 60.0
    hop_ms: float = 10.0
    dct_type: int = 3
    delta_width: int = 9
    filterbank_family: str = "mel"
    fft_size: int | None = None
    log_floor: float = 1e-10
    window: str = "hamming"

    def __post_init__(self):
        if self.n_bands < 1:
            raise ConfigError("n_bands must be >= 1")
        if not 0 <= self.fmin < self.fmax:
            raise ConfigError(f"need 0 <= fmin < fmax, got fmin={self.fmin}, fmax={self.fmax}")
        if not 1 <= self.n_ceps <= self.n_bands:
            raise ConfigError(f"need 1 <= n_ceps <= n_bands, got {self.n_ceps} > {self.n_bands}")
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise ConfigError("window_ms and hop_ms must be positive")
        if self.dct_type not in (2, 3):
            raise ConfigError(f"dct_type must be 2 or 3, got {self.dct_type}")
        if self.delta_width < 3 or self.delta_width % 2 == 0:
            raise ConfigError(f"delta_width must be odd and >= 3, got {self.delta_width}")
        if self.filterbank_family not in FAMILIES:
            raise ConfigError(f"filterbank_family must be one of {FAMILIES}")
        if self.fft_size is not None and (self.fft_size < 1 or self.fft_size & (self.fft_size - 1)):
            raise ConfigError(f"fft_size must be a power of two, got {self.fft_size}")
        if not self.log_floor > 0:
            raise ConfigError("log_floor must be positive")
        if self.window not in WINDOWS:
            raise ConfigError(f"window must be one of {WINDOWS}")

    @property
    def n_features(self) -> int:
        return 3 * self.n_ceps

    def window_length(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_length(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def fft_length(self, sample_rate: int) -> int:
        win = self.window_length(sample_rate)
        if self.fft_size is None:
            return 1 << max(0, int(win - 1).bit_length())
        if self.fft_size < win:
            raise ConfigError(f"fft_size {self.fft_size} shorter than window ({win} samples)")
        return self.fft_size

    def check_sample_rate(self, sample_rate: int) -> None:
        if self.fmax > sample_rate / 2:
            raise ConfigError(
                f"fmax={self.fmax} Hz exceeds the Nyquist frequency of {sample_rate} Hz audio"
            )

    def to_dict(self) -> dict[str, object]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict[str, str]) -> "FrontendConfig":
        kwargs: dict[str, object] = {}
        for key, raw in values.items():
            if key not in _FIELD_PARSERS:
                raise ConfigError(f"unknown front-end key {key!r}")
            try:
                kwargs[key] = _FIELD_PARSERS[key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "FrontendConfig":
        return cls.from_dict(read_kv(path))

    def to_text(self) -> str:
        return format_kv({k: ("auto" if v is None else v) for k, v in self.to_dict().items()})


def _optional_int(raw: str) -> int | None:
    return None if raw.strip().lower() in ("", "auto", "none") else int(raw)


_FIELD_PARSERS = {
    "n_bands": int,
    "fmin": float,
    "fmax": float,
    "n_ceps": int,
    "window_ms": float,
    "hop_ms": float,
    "dct_type": int,
    "delta_width": int,
    "filterbank_family": str,
    "fft_size": _optional_int,
    "log_floor": float,
    "window": str,
}


@dataclass(frozen=True)
class FilterbankMatrix:
    weights: np.ndarray
    center_freqs: np.ndarray


@dataclass(frozen=True)
class FeatureMatrix:
    frames: np.ndarray
    frame_rate: float

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] % 3:
            raise FrontendError(f"feature matrix must be T x 3n, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise FrontendError("feature matrix contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


# --- WAV I/O ---------------------------------------------------------------


def load_wav(path: str | Path) -> AudioBuffer:
    """Read a mono 16-bit PCM RIFF/WAVE file, scaled so that -32768 maps to -1.0."""
    path = Path(path)
    if not path.is_file():
        raise WavError(f"{path}: no such file")
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise WavError(f"{path}: unsupported or malformed WAV ({exc}); need PCM") from exc
    except EOFError as exc:
        raise WavError(f"{path}: truncated WAV header") from exc
    if channels != 1:
        raise WavError(f"{path}: unsupported channel count {channels} (mono only)")
    if width != 2:
        raise WavError(f"{path}: unsupported bit depth {8 * width} (16-bit only)")
    data = np.frombuffer(raw, dtype="<i2")
    if data.size == 0:
        raise WavError(f"{path}: no samples")
    return AudioBuffer(data.astype(np.float64) / 32768.0, rate)


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    """Write ``audio`` as mono PCM16, clipping to the int16 range."""
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(audio.sample_rate)
        fh.writeframes(pcm.tobytes())


# --- spectral stages -------------------------------------------------------


def frame_and_window(audio: AudioBuffer, cfg: FrontendConfig) -> np.ndarray:
    win = cfg.window_length(audio.sample_rate)
    hop = cfg.hop_length(audio.sample_rate)
    n = audio.samples.size
    if n < win:
        raise FrontendError(f"utterance too short: {n} samples < one window of {win}")
    n_frames = 1 + (n - win) // hop
    frames = np.lib.stride_tricks.sliding_window_view(audio.samples, win)[::hop][:n_frames]
    if cfg.window == "hamming":
        return frames * np.hamming(win)
    return frames.copy()


def power_spectrum(frames: np.ndarray, fft_size: int | None = None) -> np.ndarray:
    """|rFFT|^2 of each frame after zero-padding to ``fft_size``."""
    frames = np.asarray(frames, dtype=np.float64)
    if not np.all(np.isfinite(frames)):
        raise FrontendError("frames contain non-finite values")
    if fft_size is None:
        fft_size = 1 << max(0, int(frames.shape[-1] - 1).bit_length())
    spec = np.fft.rfft(frames, n=fft_size, axis=-1)
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def erb(f):
    """Equivalent rectangular bandwidth in Hz (Glasberg and Moore)."""
    return 24.7 * (4.37 * np.asarray(f, dtype=np.float64) / 1000.0 + 1.0)


def hz_to_erb_rate(f):
    return 21.4 * np.log10(4.37 * np.asarray(f, dtype=np.float64) / 1000.0 + 1.0)


def erb_rate_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) * 1000.0 / 4.37


def build_filterbank(cfg: FrontendConfig, sample_rate: int) -> FilterbankMatrix:
    """Filterbank rows over the ``fft_size // 2 + 1`` one-sided bins.

    Mel rows are unit-peak triangles between neighbouring mel-spaced points.
    Gammatone rows are the squared magnitude response of a 4th-order
    gammatone, ``(1 + ((f - fc) / (1.019 ERB(fc)))**2) ** -4``, restricted to
    ``[fmin, fmax]`` and normalized to unit sum. In both families the band
    centres are the interior points of an equal partition of the warped axis.
    """
    cfg.check_sample_rate(sample_rate)
    n_fft = cfg.fft_length(sample_rate)
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    in_band = (freqs >= cfg.fmin) & (freqs <= cfg.fmax)

    if cfg.filterbank_family == "mel":
        edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_bands + 2))
        lo, centers, hi = edges[:-2], edges[1:-1], edges[2:]
        rising = (freqs[None, :] - lo[:, None]) / (centers - lo)[:, None]
        falling = (hi[:, None] - freqs[None, :]) / (hi - centers)[:, None]
        weights = np.maximum(0.0, np.minimum(rising, falling))
    else:
        points = erb_rate_to_hz(
            np.linspace(hz_to_erb_rate(cfg.fmin), hz_to_erb_rate(cfg.fmax), cfg.n_bands + 2)
        )
        centers = points[1:-1]
        bw = 1.019 * erb(centers)
        weights = (1.0 + ((freqs[None, :] - centers[:, None]) / bw[:, None]) ** 2) ** -4.0
        weights = weights * in_band[None, :]

    empty = np.flatnonzero(weights.sum(axis=1) <= 0)
    if empty.size:
        raise ConfigError(
            f"filterbank bands {empty.tolist()} cover no FFT bin; increase fft_size or band spacing"
        )
    if cfg.filterbank_family == "gammatone":
        weights = weights / weights.sum(axis=1, keepdims=True)
    return FilterbankMatrix(weights=weights, center_freqs=centers)


def apply_filterbank_log(spectrum: np.ndarray, fb: FilterbankMatrix, log_floor: float) -> np.ndarray:
    spectrum = np.atleast_2d(spectrum)
    if spectrum.shape[1] != fb.weights.shape[1]:
        raise FrontendError(
            f"spectrum has {spectrum.shape[1]} bins, filterbank expects {fb.weights.shape[1]}"
        )
    return np.log(np.maximum(spectrum @ fb.weights.T, log_floor))


def cepstral_transform(log_energies: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    if log_energies.shape[-1] < cfg.n_ceps:
        raise FrontendError("fewer bands than requested cepstra")
    ceps = scipy.fft.dct(log_energies, type=cfg.dct_type, norm="ortho", axis=-1)
    return ceps[..., : cfg.n_ceps]


def compute_deltas(ceps: np.ndarray, width: int) -> np.ndarray:
    """Regression deltas over ``width`` frames with edge replication."""
    if width < 3 or width % 2 == 0:
        raise FrontendError(f"delta width must be odd and >= 3, got {width}")
    ceps = np.asarray(ceps, dtype=np.float64)
    half = (width - 1) // 2
    n_frames = ceps.shape[0]
    padded = np.pad(ceps, ((half, half), (0, 0)), mode="edge")
    out = np.zeros_like(ceps)
    for n in range(1, half + 1):
        out += n * (padded[half + n : half + n + n_frames] - padded[half - n : half - n + n_frames])
    return out / (2.0 * sum(n * n for n in range(1, half + 1)))


def extract_features(audio: AudioBuffer, cfg: FrontendConfig) -> FeatureMatrix:
    cfg.check_sample_rate(audio.sample_rate)
    frames = frame_and_window(audio, cfg)
    spec = power_spectrum(frames, cfg.fft_length(audio.sample_rate))
    fb = build_filterbank(cfg, audio.sample_rate)
    ceps = cepstral_transform(apply_filterbank_log(spec, fb, cfg.log_floor), cfg)
    d1 = compute_deltas(ceps, cfg.delta_width)
    d2 = compute_deltas(d1, cfg.delta_width)
    return FeatureMatrix(np.hstack([ceps, d1, d2]), frame_rate=1000.0 / cfg.hop_ms)
