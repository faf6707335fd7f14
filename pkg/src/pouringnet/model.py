"""PouringNet: recurrent spectrogram encoder plus an MLP height predictor.

Every spectrogram frame (257 magnitudes) is fed through a single-layer
LSTM or GRU, or through a per-frame affine+BN+ReLU layer for the AudioFC
baseline. The encoder state goes through ``W1 -> BN -> ReLU -> W2``, which
predicts the air-column length in mm for every frame. Affine layers that feed
a batch norm carry no bias of their own; the norm's shift replaces it.

Gradients are computed by hand (backpropagation through time) and
accumulated into ``ModelParams.grads``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("lstm", "gru", "fc")
N_GATES = {"lstm": 4, "gru": 3}
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
FORGET_BIAS = 1.0


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    pass


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class ModelParams:
    encoder_kind: str
    input_size: int
    hidden_size: int
    head_size: int
    tensors: dict
    grads: dict = field(default_factory=dict)
    running: dict = field(default_factory=dict)  # batch-norm population statistics
    bn_count: int = 0
    normalization: dict = field(
        default_factory=lambda: {"spec_mean": 0.0, "spec_std": 1.0, "label_scale": 100.0})
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.encoder_kind not in KINDS:
            raise ValueError(f"unknown encoder kind {self.encoder_kind!r}")
        for name, value in self.tensors.items():
            if name not in self.grads:
                self.grads[name] = np.zeros_like(value)

    @property
    def dtype(self):
        return self.tensors["head.W2"].dtype

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> ModelParams:
        return ModelParams(
            self.encoder_kind, self.input_size, self.hidden_size, self.head_size,
            {k: v.copy() for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.grads.items()},
            {k: v.copy() for k, v in self.running.items()},
            self.bn_count, dict(self.normalization), dict(self.extra))

    def astype(self, dtype) -> ModelParams:
        out = self.copy()
        for store in (out.tensors, out.grads, out.running):
            for k in store:
                store[k] = store[k].astype(dtype)
        return out

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


def bn_names(kind: str) -> list[str]:
    return (["enc.bn"] if kind == "fc" else []) + ["head.bn"]


def init_params(kind: str, hidden_size: int = 256, head_size: int = 64, input_size: int = 257,
                seed: int = 0, dtype=np.float32) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights; LSTM forget-gate bias starts at 1."""
    if kind not in KINDS:
        raise ValueError(f"unknown encoder kind {kind!r}")
    rng = np.random.default_rng(seed)
    D, H, K = input_size, hidden_size, head_size

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape)

    t = {}
    if kind == "fc":
        t["enc.W"] = uniform((D, H), D)
        t["enc.bn_gamma"] = np.ones(H)
        t["enc.bn_beta"] = np.zeros(H)
    else:
        G = N_GATES[kind]
        t["enc.W_x"] = uniform((D, G * H), D)
        t["enc.W_h"] = uniform((H, G * H), H)
        if kind == "lstm":
            t["enc.b"] = uniform((G * H,), H)
            t["enc.b"][H:2 * H] = FORGET_BIAS
        else:
            t["enc.b_x"] = uniform((G * H,), H)
            t["enc.b_h"] = uniform((G * H,), H)
    t["head.W1"] = uniform((H, K), H)
    t["head.bn_gamma"] = np.ones(K)
    t["head.bn_beta"] = np.zeros(K)
    t["head.W2"] = uniform((K, 1), K)
    t["head.b2"] = uniform((1,), K)

    running = {}
    for name in bn_names(kind):
        width = H if name == "enc.bn" else K
        running[f"{name}.mean"] = np.zeros(width)
        running[f"{name}.var"] = np.ones(width)
    params = ModelParams(kind, D, H, K, {k: v.astype(dtype) for k, v in t.items()},
                         running={k: v.astype(dtype) for k, v in running.items()})
    return params


# ----------------------------------------------------------------------------
# recurrent cells


@dataclass
class HiddenState:
    h: np.ndarray
    c: np.ndarray | None = None


def zero_state(params: ModelParams, batch: int | None = None) -> HiddenState:
    shape = (params.hidden_size,) if batch is None else (batch, params.hidden_size)
    h = np.zeros(shape, dtype=params.dtype)
    c = np.zeros(shape, dtype=params.dtype) if params.encoder_kind == "lstm" else None
    return HiddenState(h, c)


def _lstm_cell(xp, h, c, W_h):
    """One LSTM step from the precomputed input projection ``xp`` (bias included)."""
    H = h.shape[-1]
    a = xp + h @ W_h
    s = sigmoid(a)  # the g block is discarded; one call is cheaper than three
    i, f, o = s[..., :H], s[..., H:2 * H], s[..., 3 * H:]
    g = np.tanh(a[..., 2 * H:3 * H])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    return o * tc, c_new, (i, f, g, o, tc)


def _gru_cell(xp, h, W_h, b_h):
    """One GRU step; gate blocks are ordered reset, update, candidate."""
    H = h.shape[-1]
    hp = h @ W_h + b_h
    rz = sigmoid(xp[..., :2 * H] + hp[..., :2 * H])
    r, z = rz[..., :H], rz[..., H:]
    n = np.tanh(xp[..., 2 * H:] + r * hp[..., 2 * H:])
    return (1.0 - z) * n + z * h, (r, z, n, hp[..., 2 * H:])


def encoder_step(params: ModelParams, x, state: HiddenState | None = None) -> HiddenState:
    """Advance the encoder by one spectrogram frame.

    ``x`` is a normalized frame of shape (input_size,) or (batch, input_size).
    The FC baseline ignores ``state`` and normalizes with population statistics.
    """
    x = np.asarray(x, dtype=params.dtype)
    if x.shape[-1] != params.input_size:
        raise ShapeError(f"frame has {x.shape[-1]} bins, expected {params.input_size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("frame contains non-finite values")
    t = params.tensors
    kind = params.encoder_kind
    if kind == "fc":
        _require_population_stats(params)
        a = x @ t["enc.W"]
        y, _ = _bn_forward(a, t["enc.bn_gamma"], t["enc.bn_beta"], params, "enc.bn", False, False)
        return HiddenState(np.maximum(y, 0.0))
    if state is None:
        state = zero_state(params, None if x.ndim == 1 else x.shape[0])
    if state.h.shape[-1] != params.hidden_size:
        raise ShapeError(f"state has width {state.h.shape[-1]}, expected {params.hidden_size}")
    if kind == "lstm":
        if state.c is None:
            raise ShapeError("LSTM state needs a cell vector")
        h, c, _ = _lstm_cell(x @ t["enc.W_x"] + t["enc.b"], state.h, state.c, t["enc.W_h"])
        return HiddenState(h, c)
    h, _ = _gru_cell(x @ t["enc.W_x"] + t["enc.b_x"], state.h, t["enc.W_h"], t["enc.b_h"])
    return HiddenState(h)


# ----------------------------------------------------------------------------
# batch normalization


def _require_population_stats(params: ModelParams) -> None:
    if params.bn_count == 0:
        raise StateError("batch-norm running statistics are untrained; "
                         "run a training-mode forward pass first")


def _bn_forward(a, gamma, beta, params, name, training, update_stats):
    mean_key, var_key = f"{name}.mean", f"{name}.var"
    if training:
        mu = a.mean(axis=0)
        var = a.var(axis=0)
        if update_stats:
            n = a.shape[0]
            unbiased = var * n / (n - 1) if n > 1 else var
            params.running[mean_key] *= 1.0 - BN_MOMENTUM
            params.running[mean_key] += BN_MOMENTUM * mu
            params.running[var_key] *= 1.0 - BN_MOMENTUM
            params.running[var_key] += BN_MOMENTUM * unbiased
    else:
        mu = params.running[mean_key]
        var = params.running[var_key]
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (a - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std)


def _bn_backward(dy, gamma, cache):
    xhat, inv_std = cache
    n = dy.shape[0]
    dgamma = np.sum(dy * xhat, axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    da = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
    return da, dgamma, dbeta


# ----------------------------------------------------------------------------
# sequence forward / backward


@dataclass
class ForwardCache:
    kind: str
    X: np.ndarray
    state0: HiddenState
    enc: dict
    head: dict
    relu_masks: list


def forward(params: ModelParams, X, training: bool = True, state: HiddenState | None = None,
            update_stats: bool | None = None):
    """Run a batch of normalized sequences ``X`` (batch, frames, bins).

    Returns ``(pred_mm, cache)`` with ``pred_mm`` of shape (batch, frames).
    Training mode normalizes with statistics of all batch frames and, unless
    ``update_stats`` is False, updates the population estimates.
    """
    X = np.asarray(X, dtype=params.dtype)
    if X.ndim != 3 or X.shape[-1] != params.input_size:
        raise ShapeError(f"expected (batch, frames, {params.input_size}), got {X.shape}")
    if update_stats is None:
        update_stats = training
    if not training:
        _require_population_stats(params)
    t = params.tensors
    B, T, D = X.shape
    H = params.hidden_size
    kind = params.encoder_kind
    if state is None:
        state = zero_state(params, B)
    masks = []

    enc = {}
    if kind == "fc":
        a = X.reshape(B * T, D) @ t["enc.W"]
        y, enc["bn"] = _bn_forward(a, t["enc.bn_gamma"], t["enc.bn_beta"], params, "enc.bn",
                                   training, update_stats)
        enc["mask"] = y > 0
        masks.append(enc["mask"])
        hs = np.where(enc["mask"], y, 0.0).reshape(B, T, H)
    elif kind == "lstm":
        xp = X @ t["enc.W_x"] + t["enc.b"]
        W_h = t["enc.W_h"]
        h, c = state.h, state.c
        hs, cs, gates = [h], [c], []
        for step in range(T):
            h, c, g = _lstm_cell(xp[:, step], h, c, W_h)
            hs.append(h)
            cs.append(c)
            gates.append(g)
        enc.update(hs=hs, cs=cs, gates=gates)
        hs = np.stack(hs[1:], axis=1)
    else:
        xp = X @ t["enc.W_x"] + t["enc.b_x"]
        W_h, b_h = t["enc.W_h"], t["enc.b_h"]
        h = state.h
        hs, gates = [h], []
        for step in range(T):
            h, g = _gru_cell(xp[:, step], h, W_h, b_h)
            hs.append(h)
            gates.append(g)
        enc.update(hs=hs, gates=gates)
        hs = np.stack(hs[1:], axis=1)

    flat = hs.reshape(B * T, H)
    a1 = flat @ t["head.W1"]
    z1, bn_cache = _bn_forward(a1, t["head.bn_gamma"], t["head.bn_beta"], params, "head.bn",
                               training, update_stats)
    mask = z1 > 0
    r1 = np.where(mask, z1, 0.0)
    out = r1 @ t["head.W2"] + t["head.b2"]
    masks.append(mask)
    if training and update_stats:
        params.bn_count += 1
    pred = (out[:, 0] * params.normalization["label_scale"]).reshape(B, T)
    head = dict(flat=flat, bn=bn_cache, mask=mask, r1=r1)
    cache = ForwardCache(kind, X, state, enc, head, masks) if training else None
    return pred, cache


def backward(params: ModelParams, cache: ForwardCache | None, loss_grad) -> dict:
    """Accumulate dLoss/dtheta into ``params.grads``.

    ``loss_grad`` holds dLoss/dpred_mm per frame, shape (batch, frames).
    """
    if cache is None:
        raise StateError("backward needs the cache of a training-mode forward pass")
    if cache.kind != params.encoder_kind:
        raise StateError("cache was produced by a different encoder kind")
    X = cache.X
    B, T, D = X.shape
    H = params.hidden_size
    dpred = np.asarray(loss_grad, dtype=params.dtype)
    if dpred.shape != (B, T):
        raise ShapeError(f"loss_grad shape {dpred.shape} does not match predictions {(B, T)}")
    t, g = params.tensors, params.grads
    hd = cache.head

    dout = dpred.reshape(B * T, 1) * params.normalization["label_scale"]
    g["head.W2"] += hd["r1"].T @ dout
    g["head.b2"] += dout.sum(axis=0)
    dz1 = np.where(hd["mask"], dout @ t["head.W2"].T, 0.0)
    da1, dgamma, dbeta = _bn_backward(dz1, t["head.bn_gamma"], hd["bn"])
    g["head.bn_gamma"] += dgamma
    g["head.bn_beta"] += dbeta
    g["head.W1"] += hd["flat"].T @ da1
    dhs = (da1 @ t["head.W1"].T).reshape(B, T, H)

    enc = cache.enc
    kind = params.encoder_kind
    if kind == "fc":
        dy = np.where(enc["mask"], dhs.reshape(B * T, H), 0.0)
        da, dgamma, dbeta = _bn_backward(dy, t["enc.bn_gamma"], enc["bn"])
        g["enc.bn_gamma"] += dgamma
        g["enc.bn_beta"] += dbeta
        g["enc.W"] += X.reshape(B * T, D).T @ da
        return g

    W_h = t["enc.W_h"]
    W_hT = W_h.T
    hs, gates = enc["hs"], enc["gates"]
    dh_next = np.zeros((B, H), dtype=X.dtype)
    if kind == "lstm":
        cs = enc["cs"]
        dA = np.empty((B, T, 4 * H), dtype=X.dtype)
        dc_next = np.zeros((B, H), dtype=X.dtype)
        for step in range(T - 1, -1, -1):
            i, f, gg, o, tc = gates[step]
            dh = dhs[:, step] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da = dA[:, step]
            da[:, :H] = dc * gg * i * (1.0 - i)
            da[:, H:2 * H] = dc * cs[step] * f * (1.0 - f)
            da[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
            da[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = da @ W_hT
        flat_dA = dA.reshape(B * T, 4 * H)
        g["enc.W_h"] += np.stack(hs[:-1], axis=1).reshape(B * T, H).T @ flat_dA
        g["enc.W_x"] += X.reshape(B * T, D).T @ flat_dA
        g["enc.b"] += flat_dA.sum(axis=0)
        return g

    dXp = np.empty((B, T, 3 * H), dtype=X.dtype)
    dHp = np.empty((B, T, 3 * H), dtype=X.dtype)
    for step in range(T - 1, -1, -1):
        r, z, n, hpn = gates[step]
        dh = dhs[:, step] + dh_next
        dan = dh * (1.0 - z) * (1.0 - n * n)
        dar = dan * hpn * r * (1.0 - r)
        daz = dh * (hs[step] - n) * z * (1.0 - z)
        dXp[:, step, :H] = dar
        dXp[:, step, H:2 * H] = daz
        dXp[:, step, 2 * H:] = dan
        dhp = dHp[:, step]
        dhp[:, :2 * H] = dXp[:, step, :2 * H]
        dhp[:, 2 * H:] = dan * r
        dh_next = dh * z + dhp @ W_hT
    flat_x = dXp.reshape(B * T, 3 * H)
    flat_h = dHp.reshape(B * T, 3 * H)
    g["enc.W_h"] += np.stack(hs[:-1], axis=1).reshape(B * T, H).T @ flat_h
    g["enc.b_h"] += flat_h.sum(axis=0)
    g["enc.W_x"] += X.reshape(B * T, D).T @ flat_x
    g["enc.b_x"] += flat_x.sum(axis=0)
    return g


# ----------------------------------------------------------------------------
# inference


@dataclass
class SequencePrediction:
    values: np.ndarray  # mm, one per frame
    hidden: np.ndarray | None = None


def compress(values, normalization: dict) -> np.ndarray:
    """Optional log1p compression of raw magnitudes, applied before standardizing."""
    values = np.asarray(values)
    return np.log1p(values) if normalization.get("log_compress", 0.0) else values


def normalize_input(normalization: dict, values, dtype=np.float32) -> np.ndarray:
    """Raw magnitudes (any layout) -> standardized model input."""
    v = compress(values, normalization)
    return ((v - normalization["spec_mean"]) / normalization["spec_std"]).astype(dtype)


def normalize_frames(params: ModelParams, values: np.ndarray) -> np.ndarray:
    """(bins, frames) raw magnitudes -> (frames, bins) normalized model input."""
    return normalize_input(params.normalization, np.asarray(values).T, params.dtype)


def predict_sequence(params: ModelParams, spec, initial: HiddenState | None = None,
                     normalized: bool = False, keep_hidden: bool = False) -> SequencePrediction:
    """Per-frame air-column predictions (mm) for one spectrogram in inference mode.

    ``spec`` is a :class:`~pouringnet.dsp.Spectrogram` or a (bins, frames)
    array of raw magnitudes; pass ``normalized=True`` when the frames already
    carry the training normalization.
    """
    values = getattr(spec, "values", spec)
    if values.shape[0] != params.input_size:
        raise ShapeError(f"spectrogram has {values.shape[0]} rows, expected {params.input_size}")
    frames = np.asarray(values, dtype=params.dtype).T if normalized else normalize_frames(params, values)
    state = None
    if initial is not None:
        state = HiddenState(initial.h[None], None if initial.c is None else initial.c[None])
    pred, _ = forward(params, frames[None], training=False, state=state)
    hidden = None
    if keep_hidden:
        hidden = _hidden_trajectory(params, frames, state)
    return SequencePrediction(pred[0], hidden)


def _hidden_trajectory(params, frames, state):
    hs = []
    st = state if state is not None else zero_state(params, 1)
    for x in frames:
        st = encoder_step(params, x[None], st)
        hs.append(st.h[0])
    return np.stack(hs)


# ----------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"PNCK"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHBIIIQI")


def save_checkpoint(params: ModelParams, path, extra: dict | None = None) -> None:
    """Binary checkpoint: header, then named little-endian float32 tensors.

    Population statistics, the batch-norm update count and the normalization
    constants are stored as tensors too, so a checkpoint is self-contained.
    """
    named = dict(params.tensors)
    named.update({f"running.{k}": v for k, v in params.running.items()})
    named.update({f"norm.{k}": np.array([v]) for k, v in params.normalization.items()})
    for k, v in (extra or {}).items():
        named[f"extra.{k}"] = np.atleast_1d(np.asarray(v, dtype=np.float64))
    chunks = [_CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, KINDS.index(params.encoder_kind),
                                params.input_size, params.hidden_size, params.head_size,
                                params.bn_count, len(named))]
    for name in sorted(named):
        arr = np.asarray(named[name])
        key = name.encode()
        chunks.append(struct.pack("<H", len(key)) + key)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path, dtype=np.float32) -> ModelParams:
    raw = Path(path).read_bytes()
    magic, version, kind, D, H, K, count, n = _CKPT_HEADER.unpack_from(raw)
    if magic != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a PouringNet checkpoint")
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = _CKPT_HEADER.size
    tensors, running, norm, extra = {}, {}, {}, {}
    for _ in range(n):
        (klen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + klen].decode()
        off += klen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        if name.startswith("running."):
            running[name[8:]] = arr.astype(dtype)
        elif name.startswith("norm."):
            norm[name[5:]] = float(arr[0])
        elif name.startswith("extra."):
            extra[name[6:]] = arr.astype(np.float64)
        else:
            tensors[name] = arr.astype(dtype)
    return ModelParams(KINDS[kind], D, H, K, tensors, running=running, bn_count=count,
                       normalization=norm, extra=extra)


# ----------------------------------------------------------------------------
# finite-difference gradient check


@dataclass
class GradCheckResult:
    kind: str
    frames: int
    seed: int
    rel_error: dict  # tensor name -> ||analytic - numeric|| / max(||analytic||, ||numeric||)
    max_abs_error: dict  # tensor name -> worst entrywise |analytic - numeric|
    kinks_skipped: int
    checked: int

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.rel_error, key=self.rel_error.get)
        return name, self.rel_error[name]

    def passed(self, tol: float = 1e-4) -> bool:
        return self.worst[1] <= tol


def relative_error(analytic, numeric) -> float:
    """Norm-wise relative error of a whole gradient tensor."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def random_model(kind: str, hidden_size: int = 8, head_size: int = 16, input_size: int = 257,
                 seed: int = 0) -> ModelParams:
    """Float64 model with every tensor (batch-norm affine included) randomized."""
    params = init_params(kind, hidden_size, head_size, input_size, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 7919)
    for name, value in params.tensors.items():
        if name.endswith("bn_gamma"):
            value[...] = rng.uniform(0.5, 1.5, value.shape)
        elif name.endswith("bn_beta") or name.endswith("b2"):
            value[...] = rng.normal(0.0, 0.5, value.shape)
    return params


def gradient_check(kind: str, hidden_size: int = 8, frames: int = 3, seed: int = 0,
                   batch: int = 3, head_size: int = 16, input_size: int = 257,
                   eps: float = 1e-4, tensors: list[str] | None = None) -> GradCheckResult:
    """Compare BPTT gradients with central differences over every parameter entry.

    The objective is ``sum(w * pred)`` for fixed random frame weights ``w``, in
    training mode with frozen population statistics. Entries whose +-eps
    perturbation flips a ReLU are non-differentiable there and are skipped.
    """
    params = random_model(kind, hidden_size, head_size, input_size, seed)
    rng = np.random.default_rng(seed + 104729)
    X = rng.normal(0.0, 1.0, (batch, frames, input_size))
    w = rng.normal(0.0, 1.0, (batch, frames))

    def objective():
        pred, cache = forward(params, X, training=True, update_stats=False)
        return float(np.sum(w * pred)), cache.relu_masks

    params.zero_grad()
    _, cache = forward(params, X, training=True, update_stats=False)
    backward(params, cache, w)
    rel, abs_err, kinks, checked = {}, {}, 0, 0
    for name in tensors or sorted(params.tensors):
        value = params.tensors[name]
        analytic = params.grads[name]
        numeric = np.full(value.shape, np.nan)
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + eps
            lp, mp = objective()
            value[idx] = orig - eps
            lm, mm = objective()
            value[idx] = orig
            if any(np.any(a != b) for a, b in zip(mp, mm)):
                kinks += 1
                continue
            numeric[idx] = (lp - lm) / (2 * eps)
            checked += 1
        ok = np.isfinite(numeric)
        rel[name] = relative_error(analytic[ok], numeric[ok])
        abs_err[name] = float(np.max(np.abs(analytic[ok] - numeric[ok]), initial=0.0))
    return GradCheckResult(kind, frames, seed, rel, abs_err, kinks, checked)
