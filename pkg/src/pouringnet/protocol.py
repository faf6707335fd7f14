"""The fixed synthetic train/test protocol behind the acceptance suite and experiment scripts.

Trained checkpoints are cached on disk, keyed by the training configuration
and a digest of the modules that determine the result, so repeated test runs
reuse them and any code change retrains.
"""

from __future__ import annotations

import dataclasses
import functools
import hashlib
import json
import logging
import os
from pathlib import Path

import numpy as np

from . import acoustics, model, training

log = logging.getLogger(__name__)

TRAIN_POURS = 300
TEST_POURS = 30
CORPUS_SEED = 1
TEST_SEED = 2
COUNT_PER_SECOND = 0.67
SEEDS = (0, 1, 2)

HIDDEN_SIZE = 64
HEAD_SIZE = 64
EPOCHS = 100
LEARNING_RATE = 2e-3

_RESULT_MODULES = ("acoustics.py", "dsp.py", "model.py", "training.py", "protocol.py")


def train_config(kind: str = "gru", seed: int = 0, alpha: float = 0.01, **overrides
                 ) -> training.TrainConfig:
    fields = dict(encoder_kind=kind, seed=seed, alpha=alpha, hidden_size=HIDDEN_SIZE,
                  head_size=HEAD_SIZE, epochs=EPOCHS, learning_rate=LEARNING_RATE,
                  log_compress=True, lr_schedule="cosine")
    fields.update(overrides)
    return training.TrainConfig(**fields)


@functools.lru_cache(maxsize=1)
def source_digest() -> str:
    here = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for name in _RESULT_MODULES:
        h.update((here / name).read_bytes())
    return h.hexdigest()[:16]


def config_key(config: training.TrainConfig) -> str:
    blob = json.dumps(dataclasses.asdict(config), sort_keys=True) + source_digest()
    a = f"{config.alpha:g}".replace(".", "p")
    return f"{config.encoder_kind}_s{config.seed}_a{a}_{hashlib.sha256(blob.encode()).hexdigest()[:12]}"


def default_cache_dir() -> Path:
    env = os.environ.get("POURINGNET_ARTIFACTS")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / ".artifacts"


@functools.lru_cache(maxsize=1)
def train_corpus() -> tuple:
    pours = training.synthesize_pours(TRAIN_POURS, acoustics.TRAIN_CONTAINERS, CORPUS_SEED)
    return tuple(training.clips_from_pours(pours, COUNT_PER_SECOND, CORPUS_SEED))


@functools.lru_cache(maxsize=1)
def test_corpus() -> tuple:
    """Held-out pours of the training containers, never seen in training or validation."""
    pours = training.synthesize_pours(TEST_POURS, acoustics.TRAIN_CONTAINERS, TEST_SEED,
                                      prefix="test")
    return tuple(training.clips_from_pours(pours, COUNT_PER_SECOND, TEST_SEED))


@dataclasses.dataclass
class TrainedModel:
    params: model.ModelParams
    key: str
    best_epoch: int
    val_mono: float  # mean loss_mono of the returned parameters on the validation pours
    val_height: float
    train_seconds: float
    cached: bool = False


def _validation_scores(params, config, clips) -> tuple[float, float]:
    _, val = training.split_by_trace(list(clips), config.val_fraction, config.split_seed)
    pred = training.predict_clips(params, val)
    truth = np.stack([c.labels for c in val])
    height, mono = training.batch_losses(pred, truth, config.alpha)
    return float(height.mean()), float(mono.mean())


def get_model(config: training.TrainConfig, cache_dir=None) -> TrainedModel:
    """Load the checkpoint for ``config`` from the cache, training it first if absent."""
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    key = config_key(config)
    ckpt, info_path = cache / f"{key}.pnck", cache / f"{key}.json"
    if ckpt.is_file() and info_path.is_file():
        info = json.loads(info_path.read_text())
        return TrainedModel(model.load_checkpoint(ckpt), key, info["best_epoch"],
                            info["val_mono"], info["val_height"], info["train_seconds"], True)
    log.info("training %s", key)
    result = training.train(list(train_corpus()), config)
    seconds = result.log[-1].wall_seconds
    val_height, val_mono = _validation_scores(result.params, config, train_corpus())
    cache.mkdir(parents=True, exist_ok=True)
    model.save_checkpoint(result.params, ckpt)
    training.write_log(cache / f"{key}.log.csv", result.log)
    info = {"best_epoch": result.best_epoch, "val_mono": val_mono, "val_height": val_height,
            "train_seconds": seconds, "config": dataclasses.asdict(config)}
    info_path.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return TrainedModel(model.load_checkpoint(ckpt), key, result.best_epoch, val_mono,
                        val_height, seconds, False)


def held_out_errors(params: model.ModelParams) -> np.ndarray:
    """Absolute per-frame errors (mm) on the test corpus, shape (clips, frames)."""
    clips = list(test_corpus())
    truth = np.stack([c.labels for c in clips])
    return np.abs(training.predict_clips(params, clips) - truth)
