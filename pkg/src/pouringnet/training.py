"""Clip sampling, the height/monotonicity losses and the training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import acoustics, dsp
from .model import ModelParams, backward, compress, forward, init_params, normalize_input

log = logging.getLogger(__name__)

CLIP_SECONDS = 4.0
CLIP_SAMPLES = int(CLIP_SECONDS * dsp.SAMPLE_RATE)
CLIP_FRAMES = dsp.frame_count(CLIP_SAMPLES)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 0.01
    clip_seconds: float = CLIP_SECONDS
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    encoder_kind: str = "lstm"
    hidden_size: int = 256
    head_size: int = 64
    val_fraction: float = 0.1
    split_seed: int = 0
    label_scale: float = 100.0
    log_compress: bool = False
    lr_schedule: str = "constant"  # or "cosine"
    min_lr_fraction: float = 0.05
    # filled in by train() from the training split unless set explicitly
    spec_mean: float | None = None
    spec_std: float | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if dsp.frame_count(int(round(self.clip_seconds * dsp.SAMPLE_RATE))) != CLIP_FRAMES:
            raise ValueError(f"clip_seconds must map to {CLIP_FRAMES} frames")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during ``epoch`` (1-based)."""
        if self.lr_schedule == "constant" or self.epochs <= 1:
            return self.learning_rate
        frac = (epoch - 1) / (self.epochs - 1)
        lo = self.learning_rate * self.min_lr_fraction
        return lo + 0.5 * (self.learning_rate - lo) * (1.0 + math.cos(math.pi * frac))


@dataclass
class ClipSample:
    spectrogram: dsp.Spectrogram  # raw magnitudes, (257, 251)
    labels: np.ndarray  # air column (mm) at every frame centre
    source_trace_id: str
    clip_start: float
    container: str = ""


# ----------------------------------------------------------------------------
# clip sampling


def draw_clip_starts(duration: float, count: int, rng: np.random.Generator,
                     clip_seconds: float = CLIP_SECONDS) -> np.ndarray:
    if duration < clip_seconds:
        raise ValueError(f"recording of {duration:.3f} s is shorter than a {clip_seconds} s clip")
    return rng.uniform(0.0, duration - clip_seconds, count)


def sample_clips(trace: acoustics.PourTrace, waveform, count_per_second: float,
                 rng_seed: int = 0, trace_id: str = "", audio_16k: np.ndarray | None = None
                 ) -> list[ClipSample]:
    """Cut ``round(duration * count_per_second)`` random 4 s clips from one pour.

    The pour is resampled to 16 kHz once, clip starts are snapped to the
    16 kHz grid, and each frame is labelled with the air column at its centre.
    """
    waveform = np.asarray(waveform)
    duration = len(waveform) / trace.sample_rate
    if duration < CLIP_SECONDS:
        raise ValueError(f"{trace_id or 'recording'}: {duration:.3f} s is shorter than "
                         f"{CLIP_SECONDS} s; short recordings are not padded")
    if audio_16k is None:
        audio_16k = dsp.resample(waveform, trace.sample_rate, dsp.SAMPLE_RATE)
    rng = np.random.default_rng(rng_seed)
    count = int(round(duration * count_per_second))
    last = len(audio_16k) - CLIP_SAMPLES
    starts = draw_clip_starts(duration, count, rng)
    offsets = np.arange(CLIP_FRAMES) * dsp.HOP / dsp.SAMPLE_RATE
    clips = []
    for start in starts:
        first = min(int(round(start * dsp.SAMPLE_RATE)), last)
        clip_start = first / dsp.SAMPLE_RATE
        spec = dsp.stft_spectrogram(audio_16k[first:first + CLIP_SAMPLES])
        spec.values = spec.values.astype(np.float32)
        labels = trace.air_column_at(clip_start + offsets)
        clips.append(ClipSample(spec, labels, trace_id, clip_start, trace.container))
    return clips


# ----------------------------------------------------------------------------
# losses (all in mm)


def _check_lengths(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != label shape {truth.shape}")
    return pred, truth


def loss_height(pred, truth) -> float:
    """Mean over frames of the squared air-column error (mm^2)."""
    pred, truth = _check_lengths(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def loss_mono(pred) -> float:
    """Sum of frame-to-frame increases of the predicted air column.

    Sequences shorter than two frames have no increase and score 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if pred.size < 2:
        return 0.0
    return float(np.sum(np.maximum(0.0, np.diff(pred))))


def loss_total(pred, truth, alpha: float) -> float:
    return loss_height(pred, truth) + alpha * loss_mono(pred)


def loss_total_grad(pred, truth, alpha: float) -> np.ndarray:
    """d loss_total / d pred; the hinge subgradient is 0 at ties.

    Works on a single sequence or along the last axis of a batch.
    """
    pred, truth = _check_lengths(pred, truth)
    T = pred.shape[-1]
    grad = 2.0 * (pred - truth) / T
    if T >= 2 and alpha:
        rising = (np.diff(pred, axis=-1) > 0).astype(np.float64) * alpha
        grad[..., 1:] += rising
        grad[..., :-1] -= rising
    return grad


def batch_losses(pred, truth, alpha):
    """Per-sequence (height, mono) losses for (batch, frames) arrays."""
    height = np.mean((pred - truth) ** 2, axis=-1)
    mono = np.sum(np.maximum(0.0, np.diff(pred, axis=-1)), axis=-1)
    return height, mono


# ----------------------------------------------------------------------------
# optimizer


class Adam:
    """Adaptive moment estimation over a dict of named tensors."""

    def __init__(self, tensors: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}

    def step(self, tensors: dict, grads: dict) -> None:
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name in sorted(tensors):
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensors[name] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(g.dtype)


# ----------------------------------------------------------------------------
# training


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_mono_loss: float
    wall_seconds: float


@dataclass
class TrainResult:
    params: ModelParams
    log: list = field(default_factory=list)
    best_epoch: int = 0
    train_ids: list = field(default_factory=list)
    val_ids: list = field(default_factory=list)


def split_by_trace(dataset: list[ClipSample], val_fraction: float, seed: int):
    """Partition clips so that no pour contributes to both sides."""
    ids = sorted({c.source_trace_id for c in dataset})
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_val = int(round(len(ids) * val_fraction))
    if val_fraction > 0 and len(ids) > 1:
        n_val = min(max(n_val, 1), len(ids) - 1)
    else:
        n_val = 0
    val_ids = {ids[i] for i in order[:n_val]}
    train = [c for c in dataset if c.source_trace_id not in val_ids]
    val = [c for c in dataset if c.source_trace_id in val_ids]
    return train, val


def stack_clips(clips: list[ClipSample]):
    X = np.stack([c.spectrogram.values.T for c in clips]).astype(np.float32)
    Y = np.stack([c.labels for c in clips]).astype(np.float64)
    return X, Y


def spectrogram_stats(X: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(X, dtype=np.float64))
    std = float(np.std(X, dtype=np.float64))
    return mean, std if std > 0 else 1.0


def evaluate_batches(params: ModelParams, X, Y, alpha, batch_size=64, training=False):
    """Mean total, height and mono loss of normalized clips."""
    heights, monos = [], []
    for lo in range(0, len(X), batch_size):
        pred, _ = forward(params, X[lo:lo + batch_size], training=training, update_stats=False)
        h, m = batch_losses(pred.astype(np.float64), Y[lo:lo + batch_size], alpha)
        heights.append(h)
        monos.append(m)
    h = np.concatenate(heights)
    m = np.concatenate(monos)
    return float(np.mean(h + alpha * m)), float(np.mean(h)), float(np.mean(m))


def predict_clips(params: ModelParams, clips: list[ClipSample], batch_size: int = 64) -> np.ndarray:
    """Inference-mode predictions (mm) for raw clips, shape (clips, frames)."""
    norm = params.normalization
    out = []
    for lo in range(0, len(clips), batch_size):
        X, _ = stack_clips(clips[lo:lo + batch_size])
        Xn = normalize_input(norm, X, params.dtype)
        pred, _ = forward(params, Xn, training=False)
        out.append(pred.astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0, CLIP_FRAMES))


def train(dataset: list[ClipSample], config: TrainConfig, init: ModelParams | None = None,
          epoch_callback=None) -> TrainResult:
    """Mini-batch Adam on ``loss_height + alpha * loss_mono``.

    Returns the parameters with the lowest validation loss (or the final ones
    when there is no validation split). Pass ``init`` to fine-tune an existing
    model instead of starting from a fresh initialization.
    """
    if not dataset:
        raise ValueError("empty dataset")
    started = time.perf_counter()
    train_set, val_set = split_by_trace(dataset, config.val_fraction, config.split_seed)
    X, Y = stack_clips(train_set)
    norm = {"spec_mean": 0.0, "spec_std": 1.0, "label_scale": config.label_scale,
            "log_compress": float(config.log_compress)}
    if config.spec_mean is None or config.spec_std is None:
        norm["spec_mean"], norm["spec_std"] = spectrogram_stats(compress(X, norm))
    else:
        norm["spec_mean"], norm["spec_std"] = config.spec_mean, config.spec_std
    X = normalize_input(norm, X)
    if val_set:
        Xv, Yv = stack_clips(val_set)
        Xv = normalize_input(norm, Xv)

    if init is None:
        params = init_params(config.encoder_kind, config.hidden_size, config.head_size,
                             X.shape[-1], seed=config.seed)
    else:
        params = init.copy()
    params.normalization = norm
    opt = Adam(params.tensors, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)

    result = TrainResult(params, train_ids=sorted({c.source_trace_id for c in train_set}),
                         val_ids=sorted({c.source_trace_id for c in val_set}))
    untrained, _, _ = evaluate_batches(params, X, Y, config.alpha, training=True)
    result.log.append(EpochLog(0, untrained, math.nan, math.nan, time.perf_counter() - started))
    best_loss = math.inf
    best = params.copy()
    for epoch in range(1, config.epochs + 1):
        opt.lr = config.lr_at(epoch)
        order = rng.permutation(len(X))
        losses = []
        for batch_id, lo in enumerate(range(0, len(X), config.batch_size)):
            idx = np.sort(order[lo:lo + config.batch_size])
            pred, cache = forward(params, X[idx], training=True)
            pred64 = pred.astype(np.float64)
            h, m = batch_losses(pred64, Y[idx], config.alpha)
            loss = float(np.mean(h + config.alpha * m))
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch_id}")
            losses.append(loss * len(idx))
            params.zero_grad()
            backward(params, cache, loss_total_grad(pred64, Y[idx], config.alpha) / len(idx))
            opt.step(params.tensors, params.grads)
        train_loss = float(np.sum(losses) / len(X))
        if val_set:
            val_loss, _, val_mono = evaluate_batches(params, Xv, Yv, config.alpha)
        else:
            val_loss, val_mono = train_loss, math.nan
        row = EpochLog(epoch, train_loss, val_loss, val_mono, time.perf_counter() - started)
        result.log.append(row)
        log.info("epoch %d train %.4f val %.4f mono %.3f", epoch, train_loss, val_loss, val_mono)
        if val_loss < best_loss:
            best_loss = val_loss
            best = params.copy()
            result.best_epoch = epoch
        if epoch_callback is not None:
            epoch_callback(row, params)
    result.params = best
    return result


def write_log(path, rows: list[EpochLog]) -> None:
    with open(path, "w") as f:
        f.write("epoch,train_loss,val_loss,val_mono_loss,wall_seconds\n")
        for r in rows:
            f.write(f"{r.epoch},{r.train_loss:.8g},{r.val_loss:.8g},{r.val_mono_loss:.8g},"
                    f"{r.wall_seconds:.3f}\n")


# ----------------------------------------------------------------------------
# synthetic corpus


@dataclass
class PourRecord:
    trace_id: str
    container: str
    waveform: np.ndarray
    trace: acoustics.PourTrace
    seed: int


def pour_seed(seed: int, index: int) -> int:
    return seed * 1_000_003 + index


def synthesize_pours(n: int, containers=acoustics.TRAIN_CONTAINERS, seed: int = 0,
                     sample_rate: int = acoustics.DEFAULT_SAMPLE_RATE, prefix: str = "pour"):
    """Yield ``n`` randomized pours, cycling through ``containers``."""
    for i in range(n):
        spec = acoustics.CONTAINERS[containers[i % len(containers)]] \
            if isinstance(containers[i % len(containers)], str) else containers[i % len(containers)]
        s = pour_seed(seed, i)
        profile = acoustics.random_profile(spec, np.random.default_rng(s))
        waveform, trace = acoustics.simulate_pour(spec, profile, sample_rate, seed=s)
        yield PourRecord(f"{prefix}{i:05d}", spec.name, waveform, trace, s)


def clips_from_pours(pours, count_per_second: float, seed: int = 0) -> list[ClipSample]:
    clips = []
    for k, p in enumerate(pours):
        clips.extend(sample_clips(p.trace, p.waveform, count_per_second,
                                  rng_seed=pour_seed(seed, k) + 17, trace_id=p.trace_id))
    return clips


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
