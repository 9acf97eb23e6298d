"""Log-mel front end.

Converts mono PCM audio into the audio encoder's input representation:
64 log mel-band energies per 40 ms Hanning-windowed frame with a 20 ms hop.
Defaults: 44100 Hz working rate, 2048-point FFT (window zero-padded), HTK mel
scale, peak-normalized triangular filters, power ("energy") spectra, and an
energy floor of 1e-10 before the log.
"""

from dataclasses import dataclass
from functools import lru_cache
import struct

import numpy as np
from scipy.io import wavfile

from .errors import DecodeError

DEFAULT_SAMPLE_RATE = 44100
FRAME_MS = 40
HOP_MS = 20
N_MELS = 64
NFFT = 2048
ENERGY_FLOOR = 1e-10

FEATURE_MAGIC = b"LMEL"


@dataclass(frozen=True)
class Waveform:
    """Mono signal with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError("samples must be a non-empty 1-D array")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class MelSpectrogram:
    """T x n_mels matrix of log mel-band energies."""

    frames: np.ndarray
    frame_length_ms: int = FRAME_MS
    hop_ms: int = HOP_MS

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


def load_wav(path) -> Waveform:
    """Decode a RIFF WAV file (mono, PCM16 or float) to a float64 Waveform.

    Multi-channel audio is rejected rather than silently downmixed.
    """
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise DecodeError(f"{path}: cannot decode WAV: {exc}") from exc
    if data.ndim != 1:
        raise DecodeError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.size == 0:
        raise DecodeError(f"{path}: empty audio stream")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DecodeError(f"{path}: unsupported sample format {data.dtype} (need PCM16 or float)")
    return Waveform(samples=samples, sample_rate_hz=int(rate))


def wav_duration_s(path) -> float:
    """Read a WAV file's duration from its RIFF header without decoding samples."""
    with open(path, "rb") as fh:
        riff = fh.read(12)
        if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise DecodeError(f"{path}: not a RIFF/WAVE file")
        byte_rate = None
        while True:
            header = fh.read(8)
            if len(header) < 8:
                break
            chunk_id, size = header[:4], struct.unpack("<I", header[4:])[0]
            if chunk_id == b"fmt ":
                fmt = fh.read(size)
                if len(fmt) < 16:
                    raise DecodeError(f"{path}: truncated fmt chunk")
                _, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
                byte_rate = rate * channels * (bits // 8)
            elif chunk_id == b"data":
                if byte_rate is None or byte_rate == 0:
                    raise DecodeError(f"{path}: data chunk before fmt chunk")
                return size / byte_rate
            else:
                fh.seek(size + (size & 1), 1)
    raise DecodeError(f"{path}: no data chunk found")


def resample(w: Waveform, target_hz: int) -> Waveform:
    """Linear-interpolation resampling; identity when the rates already match."""
    if target_hz <= 0:
        raise ValueError(f"target_hz must be positive, got {target_hz}")
    if target_hz == w.sample_rate_hz:
        return w
    n_in = len(w.samples)
    n_out = max(1, round(n_in * target_hz / w.sample_rate_hz))
    positions = np.arange(n_out) * (w.sample_rate_hz / target_hz)
    out = np.interp(positions, np.arange(n_in), w.samples)
    return Waveform(samples=out, sample_rate_hz=target_hz)


def hann_periodic(n: int) -> np.ndarray:
    """Periodic Hann window (DFT-even), not the symmetric variant."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def frame_sizes(sample_rate_hz: int) -> tuple[int, int]:
    """(window, hop) in samples for the 40 ms / 20 ms framing at a given rate."""
    return round(FRAME_MS * sample_rate_hz / 1000), round(HOP_MS * sample_rate_hz / 1000)


def n_frames_for(n_samples: int, win: int, hop: int) -> int:
    """Frame count: floor((len - win) / hop) + 1 for len >= win, else 1 (padded)."""
    if n_samples < win:
        return 1
    return (n_samples - win) // hop + 1


def frame_and_window(w: Waveform) -> np.ndarray:
    """Slice the signal into Hann-windowed frames, shape (T, win).

    Signals shorter than one window are zero-padded to a single frame.
    """
    win, hop = frame_sizes(w.sample_rate_hz)
    x = w.samples
    if len(x) < win:
        x = np.concatenate([x, np.zeros(win - len(x))])
    n = n_frames_for(len(x), win, hop)
    idx = hop * np.arange(n)[:, None] + np.arange(win)[None, :]
    return x[idx] * hann_periodic(win)[None, :]


def power_spectrum(frame: np.ndarray, nfft: int = NFFT) -> np.ndarray:
    """Squared-magnitude rFFT of a single frame, zero-padded to nfft bins."""
    if frame.shape[-1] > nfft:
        raise ValueError(f"frame length {frame.shape[-1]} exceeds nfft {nfft}")
    spec = np.fft.rfft(frame, n=nfft, axis=-1)
    return (spec.real**2 + spec.imag**2).astype(np.float64)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(sr_hz: int, nfft: int = NFFT, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, nfft//2 + 1).

    Peaks are equally spaced on the mel scale between 0 Hz and sr/2 and have
    amplitude 1 (no area normalization). The matrix is cached and read-only.
    """
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if nfft < 2 or nfft & (nfft - 1):
        raise ValueError(f"nfft must be a power of two, got {nfft}")
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(sr_hz / 2.0), n_mels + 2))
    bin_hz = np.arange(nfft // 2 + 1) * (sr_hz / nfft)
    fb = np.zeros((n_mels, nfft // 2 + 1))
    for i in range(n_mels):
        left, center, right = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bin_hz - left) / (center - left)
        falling = (right - bin_hz) / (right - center)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    fb.flags.writeable = False
    return fb


def filter_centers_hz(sr_hz: int, n_mels: int = N_MELS) -> np.ndarray:
    """Center frequencies of the triangular filters, in Hz."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sr_hz / 2.0), n_mels + 2))[1:-1]


def log_mel(
    w: Waveform,
    nfft: int = NFFT,
    n_mels: int = N_MELS,
    energy_floor: float = ENERGY_FLOOR,
) -> MelSpectrogram:
    """Full front end: frame, window, power spectrum, mel projection, floored log."""
    frames = frame_and_window(w)
    spectra = power_spectrum(frames, nfft=nfft)
    fb = mel_filterbank(w.sample_rate_hz, nfft, n_mels)
    energies = spectra @ fb.T
    return MelSpectrogram(frames=np.log(np.maximum(energies, energy_floor)))


def write_feature_record(path, mel: MelSpectrogram) -> None:
    """Write one feature-cache record: magic, u32 T, u32 n_mels, f32 LE row-major."""
    frames = np.ascontiguousarray(mel.frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", mel.n_frames, mel.n_mels))
        fh.write(frames.tobytes())


def read_feature_record(path) -> np.ndarray:
    """Read a feature-cache record back as a float64 (T, n_mels) array."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise DecodeError(f"{path}: bad feature-record magic {magic!r}")
        t, n_mels = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(4 * t * n_mels), dtype="<f4")
        if data.size != t * n_mels:
            raise DecodeError(f"{path}: truncated feature record")
    return data.reshape(t, n_mels).astype(np.float64)
