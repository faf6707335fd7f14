"""Mono 16-bit PCM WAV reading and writing."""

from __future__ import annotations

import wave

import numpy as np


def write_wav(path, samples, sample_rate: int) -> None:
    """Write float samples in [-1, 1] as little-endian 16-bit PCM.

    Values outside the range are clipped.
    """
    pcm = np.round(np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0) * 32767.0)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(sample_rate))
        f.writeframes(pcm.astype("<i2").tobytes())


def read_wav(path) -> tuple[np.ndarray, int]:
    """Return (float samples in [-1, 1], sample rate); multichannel input is averaged."""
    with wave.open(str(path), "rb") as f:
        if f.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM is supported")
        channels = f.getnchannels()
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return data, rate
