"""Closed-loop pouring: stop the flow once the predicted air column reaches a target.

The simulator and the controller advance in lockstep, one 16 ms hop at a
time. Each hop the controller resamples the newly received audio, rebuilds
the spectrogram of the latest 4 s, runs the network on it and reads the
prediction of the last frame. Stopping takes effect after an actuator delay.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import acoustics, dsp
from .model import ModelParams, predict_sequence
from .training import CLIP_SAMPLES

HOP_SECONDS = dsp.HOP / dsp.SAMPLE_RATE
ACTUATOR_DELAY = 0.1  # s
WARMUP = 1.0  # s without decisions after the pour starts


@dataclass
class PourEpisodeResult:
    target_air_column: float
    achieved_air_column: float
    stop_time: float
    overshoot: float  # target - achieved; positive means filled past the target
    decision_time: float | None
    timeout: bool
    per_frame_predictions: list = field(default_factory=list)
    loop_latencies: list = field(default_factory=list)  # ms per loop iteration
    spectrogram_latencies: list = field(default_factory=list)  # ms spent on audio->spectrogram
    container: str = ""
    seed: int = 0

    def to_json(self, timing: bool = True) -> str:
        d = asdict(self)
        if not timing:
            d.pop("loop_latencies")
            d.pop("spectrogram_latencies")
        return json.dumps(d, sort_keys=True)


class NetworkEstimator:
    """Air-column estimate from the last frame of a spectrogram."""

    def __init__(self, params: ModelParams):
        self.params = params

    def __call__(self, spec: dsp.Spectrogram, now: float) -> float:
        return float(predict_sequence(self.params, spec).values[-1])


class OracleEstimator:
    """Ground-truth air column at the current time; bypasses the network.

    It re-simulates the episode's pour from its own copy of the inputs, so the
    controller loop never handles a trace.
    """

    def __init__(self, container, profile, seed, sample_rate=acoustics.DEFAULT_SAMPLE_RATE):
        _, self.trace = acoustics.simulate_pour(container, profile, sample_rate, seed)

    def __call__(self, spec, now: float) -> float:
        return float(self.trace.air_column_at(now))


def closed_loop_profile(container: acoustics.ContainerSpec, start_air: float = 115.0,
                        descent_rate: float = 6.0, end_air: float = 20.0,
                        noise_floor_db: float = -20.0, snr_db: float = 20.0) -> acoustics.PourProfile:
    """Constant-flow pour lowering the air column at ``descent_rate`` mm/s.

    Starts with an air column of ``min(start_air, height)`` and would end at
    ``end_air`` if never stopped.
    """
    start = min(start_air, container.total_height)
    rate = descent_rate * container.area / 1000.0
    return acoustics.PourProfile(acoustics.ConstantFlow(rate), (start - end_air) / descent_rate,
                                 container.total_height - start, noise_floor_db, snr_db)


def run_closed_loop(model: ModelParams | None, container: acoustics.ContainerSpec,
                    profile: acoustics.PourProfile, target: float, seed: int = 0,
                    estimator=None, actuator_delay: float = ACTUATOR_DELAY,
                    warmup: float = WARMUP,
                    sample_rate: int = acoustics.DEFAULT_SAMPLE_RATE) -> PourEpisodeResult:
    """Pour until the estimate first drops to ``target`` mm, then stop.

    ``estimator(spectrogram, now)`` defaults to the network; only the audio
    derived spectrogram and the controller clock reach it.
    """
    if not 0 < target < container.total_height:
        raise ValueError(f"target must lie in (0, {container.total_height}) mm")
    if estimator is None:
        if model is None:
            raise ValueError("need a model or an estimator")
        estimator = NetworkEstimator(model)
    waveform, trace = acoustics.simulate_pour(container, profile, sample_rate, seed)
    duration = len(waveform) / sample_rate
    support = dsp.resample_support(sample_rate, dsp.SAMPLE_RATE)
    total_out = dsp.resample_length(len(waveform), sample_rate, dsp.SAMPLE_RATE)
    stream = np.zeros(total_out)
    done = 0

    result = PourEpisodeResult(target, float("nan"), duration, float("nan"), None, True,
                               container=container.name, seed=seed)
    n_hops = int(np.floor(duration / HOP_SECONDS + 1e-9))
    for k in range(1, n_hops + 1):
        now = k * HOP_SECONDS
        t0 = time.perf_counter()
        received = min(len(waveform), int(round(now * sample_rate)))
        ready = int(np.floor((received - support) * dsp.SAMPLE_RATE / sample_rate))
        ready = min(max(ready, done), total_out)
        if ready > done:
            stream[done:ready] = dsp.resample_segment(waveform[:received], sample_rate,
                                                      dsp.SAMPLE_RATE, done, ready)
            done = ready
        if now < warmup:
            continue
        buffer = np.zeros(CLIP_SAMPLES)
        tail = stream[max(0, done - CLIP_SAMPLES):done]
        buffer[CLIP_SAMPLES - len(tail):] = tail
        spec = dsp.stft_spectrogram(buffer)
        t1 = time.perf_counter()
        estimate = estimator(spec, now)
        t2 = time.perf_counter()
        result.per_frame_predictions.append(estimate)
        result.loop_latencies.append((t2 - t0) * 1e3)
        result.spectrogram_latencies.append((t1 - t0) * 1e3)
        if estimate <= target:
            result.decision_time = now
            result.timeout = False
            result.stop_time = min(now + actuator_delay, duration)
            break
    result.achieved_air_column = float(trace.air_column_at(result.stop_time))
    result.overshoot = target - result.achieved_air_column
    return result


@dataclass
class LatencySummary:
    mean_ms: float
    p95_ms: float
    max_ms: float
    spectrogram_share: float


def measure_loop_latency(result_or_latencies, spectrogram_latencies=None) -> LatencySummary:
    """Mean, 95th percentile and max loop time, plus the spectrogram-stage share."""
    if isinstance(result_or_latencies, PourEpisodeResult):
        loop = np.asarray(result_or_latencies.loop_latencies, dtype=np.float64)
        spec = np.asarray(result_or_latencies.spectrogram_latencies, dtype=np.float64)
    else:
        loop = np.asarray(result_or_latencies, dtype=np.float64)
        spec = np.asarray(spectrogram_latencies if spectrogram_latencies is not None else [],
                          dtype=np.float64)
    if loop.size == 0:
        raise ValueError("no loop latencies recorded")
    share = float(spec.sum() / loop.sum()) if spec.size and loop.sum() > 0 else float("nan")
    return LatencySummary(float(loop.mean()), float(np.percentile(loop, 95)), float(loop.max()),
                          share)


def write_episodes(path, results, timing: bool = True) -> None:
    with open(path, "w") as f:
        for r in results:
            f.write(r.to_json(timing) + "\n")
