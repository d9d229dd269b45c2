"""Audio front end: framing, STFT magnitude, mel filterbank, AWGN augmentation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
FRAME_LENGTH = 400
HOP_LENGTH = 160
FFT_SIZE = 512
N_MELS = 128


class AudioError(ValueError):
    pass


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64).reshape(-1))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # frames x n_mels
    frame_length: int = FRAME_LENGTH
    hop_length: int = HOP_LENGTH
    n_mels: int = N_MELS

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def num_frames(n_samples: int, frame_length: int = FRAME_LENGTH, hop: int = HOP_LENGTH) -> int:
    if n_samples < frame_length:
        return 0
    return 1 + (n_samples - frame_length) // hop


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even variant)."""
    return 0.5 - 0.5 * np.cos(2.0 * math.pi * np.arange(n) / n)


def frame_signal(samples: np.ndarray, frame_length: int = FRAME_LENGTH, hop: int = HOP_LENGTH) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    count = num_frames(len(samples), frame_length, hop)
    if count == 0:
        raise AudioError(f"clip of {len(samples)} samples is shorter than one {frame_length}-sample frame")
    starts = np.arange(count) * hop
    return samples[starts[:, None] + np.arange(frame_length)[None, :]]


def stft_magnitude(clip: AudioClip, frame_length: int = FRAME_LENGTH, hop: int = HOP_LENGTH,
                   fft_size: int = FFT_SIZE) -> np.ndarray:
    """|DFT| of Hann-windowed frames zero-padded to ``fft_size``; frames x (fft_size//2 + 1)."""
    if fft_size < frame_length:
        raise AudioError(f"fft_size {fft_size} smaller than frame_length {frame_length}")
    frames = frame_signal(clip.samples, frame_length, hop) * hann_window(frame_length)
    return np.abs(np.fft.rfft(frames, n=fft_size, axis=1))


def mel_filterbank(n_mels: int = N_MELS, fft_size: int = FFT_SIZE, sample_rate: int = SAMPLE_RATE,
                   f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    """Triangular filters with centres evenly spaced on the mel scale.

    Returns an ``n_mels x (fft_size//2 + 1)`` matrix. Filter ``i`` rises
    linearly from edge ``i`` to centre ``i+1`` and falls to edge ``i+2``,
    where the ``n_mels + 2`` edges are uniform in mel between ``f_min``
    and ``f_max``. Weights are unnormalised (peak 1 at the centre).
    """
    nyquist = sample_rate / 2.0
    f_max = nyquist if f_max is None else f_max
    if n_mels < 1:
        raise AudioError("n_mels must be >= 1")
    if not (0.0 <= f_min < f_max <= nyquist):
        raise AudioError(f"invalid frequency range [{f_min}, {f_max}] for Nyquist {nyquist}")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bins = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lower) / (centre - lower)
    falling = (upper - bins[None, :]) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def filter_centres(n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE,
                   f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    f_max = sample_rate / 2.0 if f_max is None else f_max
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))[1:-1]


def mel_spectrogram(clip: AudioClip, n_mels: int = N_MELS, frame_length: int = FRAME_LENGTH,
                    hop: int = HOP_LENGTH, fft_size: int = FFT_SIZE) -> MelSpectrogram:
    power = stft_magnitude(clip, frame_length, hop, fft_size) ** 2
    fb = mel_filterbank(n_mels, fft_size, clip.sample_rate)
    return MelSpectrogram(values=power @ fb.T, frame_length=frame_length, hop_length=hop, n_mels=n_mels)


def awgn_augment(clip: AudioClip, snr_db: float, seed: int) -> AudioClip:
    """Add white gaussian noise at the requested signal-to-noise ratio.

    ``snr_db = inf`` returns an unchanged copy.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    power = float(np.mean(clip.samples ** 2))
    if power <= 0.0:
        raise AudioError("cannot set a finite SNR on a silent clip")
    noise_power = power / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, math.sqrt(noise_power), size=clip.samples.shape)
    return AudioClip(clip.samples + noise, clip.sample_rate)


def fit_frames(spec: np.ndarray, n_frames: int) -> np.ndarray:
    """Crop or zero-pad a frames x bands matrix to exactly ``n_frames`` rows."""
    if spec.shape[0] >= n_frames:
        return spec[:n_frames]
    pad = np.zeros((n_frames - spec.shape[0], spec.shape[1]))
    return np.vstack([spec, pad])


# -- file IO -----------------------------------------------------------
def read_wav(path) -> AudioClip:
    """Read single-channel PCM (8/16/32-bit int) or float WAV into [-1, 1] floats."""
    from scipy.io import wavfile

    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise AudioError(f"{path}: expected a single-channel WAV, got {data.shape[1]} channels")
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        samples = data.astype(np.float64) / float(-np.iinfo(data.dtype).min)
    else:
        samples = data.astype(np.float64)
    return AudioClip(samples, int(rate))


def write_wav(path, clip: AudioClip, pcm16: bool = True) -> None:
    from scipy.io import wavfile

    if pcm16:
        data = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = clip.samples.astype(np.float32)
    wavfile.write(str(path), clip.sample_rate, data)


def save_spectrogram_csv(spec: MelSpectrogram, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"mel_{i}" for i in range(spec.n_mels)])
        for row in spec.values:
            writer.writerow([repr(float(v)) for v in row])


def load_spectrogram_csv(path, frame_length: int = FRAME_LENGTH, hop: int = HOP_LENGTH) -> MelSpectrogram:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    values = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(-1, len(rows[0]))
    return MelSpectrogram(values, frame_length, hop, len(rows[0]))
