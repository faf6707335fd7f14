"""Audio front-end: radix-2 FFT, band-limited resampling and STFT spectrograms.

The front-end resamples pouring audio to 16 kHz and cuts it into 32 ms Hann
windows with a 16 ms hop, giving 257 magnitude descriptors per frame.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
FFT_SIZE = 512
HOP = 256
N_BINS = FFT_SIZE // 2 + 1

# taps of the sinc kernel, counted at the lower of the two rates
RESAMPLE_TAPS = 32
RESAMPLE_ROLLOFF = 0.94
RESAMPLE_BETA = 8.0

_SPEC_MAGIC = b"PNSG"
_SPEC_VERSION = 1
_SPEC_HEADER = struct.Struct("<4sHIIdd")


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@functools.lru_cache(maxsize=None)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft(x) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis.

    Leading axes are treated as a batch, so a (frames, 512) array transforms
    every frame at once.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not _is_pow2(n):
        raise ValueError(f"fft length must be a power of two, got {n}")
    lead = x.shape[:-1]
    out = x[..., _bit_reverse(n)]
    half = 1
    while half < n:
        twiddle = _twiddle(half)
        blocks = out.reshape(*lead, n // (2 * half), 2, half)
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * twiddle
        out = np.stack((even + odd, even - odd), axis=-2).reshape(*lead, n)
        half *= 2
    return out


@functools.lru_cache(maxsize=None)
def _twiddle(half: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(half) / (2 * half))


def rfft(x) -> np.ndarray:
    """Non-negative-frequency half of the FFT of real input (n/2 + 1 bins).

    Packs even and odd samples into one complex sequence of half the length,
    transforms that, then separates the two spectra.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if not _is_pow2(n) or n < 2:
        raise ValueError(f"rfft length must be a power of two >= 2, got {n}")
    m = n // 2
    z = fft(x[..., 0::2] + 1j * x[..., 1::2])
    k = np.arange(m + 1)
    zk = z[..., k % m]
    zc = np.conj(z[..., (m - k) % m])
    even = 0.5 * (zk + zc)
    odd = -0.5j * (zk - zc)
    return even + np.exp(-2j * np.pi * k / n) * odd


def _kernel(tau: np.ndarray, cutoff: float, half_width: float) -> np.ndarray:
    """Kaiser-windowed sinc; `cutoff` in cycles per input sample."""
    inside = np.abs(tau) < half_width
    ratio = np.where(inside, tau / half_width, 0.0)
    window = np.i0(RESAMPLE_BETA * np.sqrt(1.0 - ratio**2)) / np.i0(RESAMPLE_BETA)
    return np.where(inside, 2.0 * cutoff * np.sinc(2.0 * cutoff * tau) * window, 0.0)


def resample_length(n_in: int, from_rate: float, to_rate: float) -> int:
    return int(round(n_in * to_rate / from_rate))


def _phase_positions(n: np.ndarray, from_rate: float, to_rate: float):
    """Integer base index and fractional offset of output samples ``n``."""
    if float(from_rate).is_integer() and float(to_rate).is_integer():
        num = n.astype(np.int64) * int(from_rate)
        base, rem = np.divmod(num, int(to_rate))
        return base, rem / int(to_rate), rem
    pos = n * (from_rate / to_rate)
    base = np.floor(pos).astype(np.int64)
    return base, pos - base, None


def resample_segment(x: np.ndarray, from_rate: float, to_rate: float,
                     start: int, stop: int, chunk: int = 8192) -> np.ndarray:
    """Output samples ``start:stop`` of the resampled signal.

    Input beyond the ends of ``x`` is treated as zero, which lets a streaming
    caller request only the outputs whose kernel support it has received.
    """
    x = np.asarray(x, dtype=np.float64)
    ratio = to_rate / from_rate
    scale = min(1.0, ratio)
    cutoff = 0.5 * scale * RESAMPLE_ROLLOFF
    half_width = RESAMPLE_TAPS / 2 / scale
    reach = int(np.ceil(half_width))
    offsets = np.arange(-reach + 1, reach + 1)
    padded = np.concatenate([np.zeros(reach), x, np.zeros(reach + 1)])
    out = np.empty(max(stop - start, 0))
    table = {}
    for lo in range(start, stop, chunk):
        n = np.arange(lo, min(lo + chunk, stop))
        base, frac, phase = _phase_positions(n, from_rate, to_rate)
        if phase is None:
            weights = _kernel(frac[:, None] - offsets[None, :], cutoff, half_width)
        else:
            # integer rates: weights repeat with the phase, compute each once
            keys, inverse = np.unique(phase, return_inverse=True)
            missing = [k for k in keys if k not in table]
            if missing:
                rows = _kernel(np.asarray(missing)[:, None] / int(to_rate) - offsets[None, :],
                               cutoff, half_width)
                table.update(zip(missing, rows))
            weights = np.stack([table[k] for k in keys])[inverse]
        idx = np.clip(base[:, None] + offsets[None, :] + reach, 0, len(padded) - 1)
        out[lo - start:lo - start + len(n)] = np.einsum("ij,ij->i", padded[idx], weights)
    return out


def resample_support(from_rate: float, to_rate: float) -> int:
    """Input samples the kernel reaches past an output position."""
    return int(np.ceil(RESAMPLE_TAPS / 2 / min(1.0, to_rate / from_rate))) + 1


def resample(waveform, from_rate: float, to_rate: float) -> np.ndarray:
    """Band-limited windowed-sinc resampling.

    The anti-aliasing low-pass sits just below half the lower of the two rates.
    Output length is ``round(len * to_rate / from_rate)``.
    """
    if from_rate <= 0 or to_rate <= 0:
        raise ValueError("sample rates must be positive")
    x = np.asarray(waveform, dtype=np.float64)
    if from_rate == to_rate:
        return x.copy()
    n_out = resample_length(len(x), from_rate, to_rate)
    if len(x) == 0:
        return np.zeros(0)
    return resample_segment(x, from_rate, to_rate, 0, n_out)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass
class Spectrogram:
    values: np.ndarray  # (bins, frames)
    sample_rate: float = SAMPLE_RATE
    frame_hop: float = HOP / SAMPLE_RATE
    window_len: float = FFT_SIZE / SAMPLE_RATE

    @property
    def bins(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]

    def frame_times(self) -> np.ndarray:
        """Centre time of every frame relative to the first input sample."""
        return np.arange(self.frames) * self.frame_hop


def frame_count(n_samples: int) -> int:
    return n_samples // HOP + 1


def stft_spectrogram(waveform, sample_rate: float = SAMPLE_RATE) -> Spectrogram:
    """Centred STFT magnitude with a 512-sample Hann window and 256 hop."""
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1 or len(x) < 1:
        raise ValueError("waveform must be a non-empty 1-D array")
    pad = FFT_SIZE // 2
    padded = np.pad(x, pad, mode="reflect") if len(x) > 1 else np.full(len(x) + 2 * pad, x[0])
    n_frames = frame_count(len(x))
    idx = np.arange(n_frames)[:, None] * HOP + np.arange(FFT_SIZE)[None, :]
    frames = padded[idx] * hann(FFT_SIZE)
    mags = np.abs(rfft(frames))
    return Spectrogram(values=mags.T.copy(), sample_rate=sample_rate,
                       frame_hop=HOP / sample_rate, window_len=FFT_SIZE / sample_rate)


def save_spectrogram(spec: Spectrogram, path) -> None:
    rows, cols = spec.values.shape
    header = _SPEC_HEADER.pack(_SPEC_MAGIC, _SPEC_VERSION, rows, cols,
                               float(spec.sample_rate), float(spec.frame_hop))
    Path(path).write_bytes(header + np.ascontiguousarray(spec.values, dtype="<f4").tobytes())


def load_spectrogram(path) -> Spectrogram:
    raw = Path(path).read_bytes()
    magic, version, rows, cols, rate, hop = _SPEC_HEADER.unpack_from(raw)
    if magic != _SPEC_MAGIC:
        raise ValueError(f"{path}: not a spectrogram file")
    if version != _SPEC_VERSION:
        raise ValueError(f"{path}: unsupported spectrogram version {version}")
    body = np.frombuffer(raw, dtype="<f4", offset=_SPEC_HEADER.size)
    if body.size != rows * cols:
        raise ValueError(f"{path}: truncated payload")
    return Spectrogram(values=body.reshape(rows, cols).astype(np.float32),
                       sample_rate=rate, frame_hop=hop, window_len=FFT_SIZE / rate)
