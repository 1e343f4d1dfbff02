"""Dilated-convolution edge scorer: topology, forward/backward, serialization.

The network maps a p x p covariance image (one channel) to a symmetric
p x p matrix of edge probabilities.  Each hidden layer applies a dilated
3x3 convolution plus two injections broadcast from the diagonal: a 3-tap
filter read vertically at (i, i) added to every entry of row i, and a
3-tap filter read horizontally at (j, j) added to every entry of column j.
Batch normalization and ReLU follow; a 1x1 sigmoid head scores edges and
the output is averaged with its transpose.

Arrays use channel-last layout internally, (batch, row, col, channel), so
the convolutions reduce to one GEMM per layer.  Parameters are kept in
float64; the compute dtype of a forward/backward pass is selectable
(float32 for training speed, float64 for gradient checks).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .errors import CorruptFile, ShapeMismatch, StaleCache

MODEL_MAGIC = b"DGNN"
MODEL_VERSION = 1

SCHEDULES = ("arithmetic", "geometric", "powers")
_SCHEDULE_TAGS = {name: i for i, name in enumerate(SCHEDULES)}

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PROB_EPS = 1e-7  # keeps sigmoid outputs strictly inside (0, 1) in float32


@dataclass(frozen=True)
class NetConfig:
    input_size: int
    depth: int
    feature_maps: int
    dilation_schedule: str = "arithmetic"

    def __post_init__(self):
        if self.dilation_schedule not in SCHEDULES:
            raise ValueError(f"unknown dilation schedule {self.dilation_schedule!r}")
        if self.depth < 1 or self.feature_maps < 1 or self.input_size < 2:
            raise ValueError("depth, feature_maps and input_size must be positive")


def dilation_sequence(cfg: NetConfig) -> List[int]:
    if cfg.dilation_schedule == "arithmetic":
        return [k + 1 for k in range(1, cfg.depth + 1)]
    if cfg.dilation_schedule == "geometric":
        return [2 ** (k + 1) for k in range(1, cfg.depth + 1)]
    return [2 ** (k - 1) for k in range(1, cfg.depth + 1)]


def receptive_field(cfg: NetConfig) -> int:
    """One-dimensional reach of the stacked dilated 3x3 kernels: 1 + 2*sum(d_k)."""
    return 1 + 2 * sum(dilation_sequence(cfg))


def covers_input(cfg: NetConfig) -> bool:
    return receptive_field(cfg) >= cfg.input_size


@dataclass
class ConvLayer:
    w_main: np.ndarray   # (3, 3, c_in, c_out)
    w_row: np.ndarray    # (3, c_in, c_out), vertical taps at (i, i)
    w_col: np.ndarray    # (3, c_in, c_out), horizontal taps at (j, j)
    bias: np.ndarray     # (c_out,)
    dilation: int


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM


@dataclass
class EdgeNet:
    p_train: int
    config: NetConfig
    layers: List[Tuple[ConvLayer, BatchNorm]]
    w_head: np.ndarray   # (c,)
    b_head: np.ndarray   # (1,)


def named_params(model: EdgeNet) -> Dict[str, np.ndarray]:
    """Trainable parameters in a fixed, deterministic order."""
    out: Dict[str, np.ndarray] = {}
    for k, (conv, bn) in enumerate(model.layers):
        out[f"layer{k}.w_main"] = conv.w_main
        out[f"layer{k}.w_row"] = conv.w_row
        out[f"layer{k}.w_col"] = conv.w_col
        out[f"layer{k}.bias"] = conv.bias
        out[f"layer{k}.gamma"] = bn.gamma
        out[f"layer{k}.beta"] = bn.beta
    out["head.w"] = model.w_head
    out["head.b"] = model.b_head
    return out


def named_buffers(model: EdgeNet) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    for k, (_, bn) in enumerate(model.layers):
        out[f"layer{k}.running_mean"] = bn.running_mean
        out[f"layer{k}.running_var"] = bn.running_var
    return out


def set_param(model: EdgeNet, name: str, value: np.ndarray) -> None:
    """In-place update preserving the canonical float64 storage."""
    target = {**named_params(model), **named_buffers(model)}[name]
    np.copyto(target, value)


def init_params(cfg: NetConfig, rng: np.random.Generator) -> EdgeNet:
    """He-initialized model: kernel variance 2/fan_in, zero biases, unit gamma."""
    if not covers_input(cfg):
        raise ValueError(
            f"receptive field {receptive_field(cfg)} < p {cfg.input_size}; "
            "increase depth or switch dilation schedule")
    layers = []
    c_in = 1
    c = cfg.feature_maps
    for d in dilation_sequence(cfg):
        conv = ConvLayer(
            w_main=rng.normal(0.0, np.sqrt(2.0 / (9 * c_in)), size=(3, 3, c_in, c)),
            w_row=rng.normal(0.0, np.sqrt(2.0 / (3 * c_in)), size=(3, c_in, c)),
            w_col=rng.normal(0.0, np.sqrt(2.0 / (3 * c_in)), size=(3, c_in, c)),
            bias=np.zeros(c),
            dilation=d,
        )
        bn = BatchNorm(gamma=np.ones(c), beta=np.zeros(c),
                       running_mean=np.zeros(c), running_var=np.ones(c))
        layers.append((conv, bn))
        c_in = c
    w_head = rng.normal(0.0, np.sqrt(2.0 / c), size=c)
    return EdgeNet(p_train=cfg.input_size, config=cfg, layers=layers,
                   w_head=w_head, b_head=np.zeros(1))


# ---------------------------------------------------------------------------
# forward / backward


def _tap_offsets(d: int):
    return [(a - 1) * d for a in range(3)]


class _Workspace:
    """Reusable scratch buffers for the conv hot path.

    Fresh multi-megabyte allocations cost more in page faults than the
    arithmetic they feed, so the large transients (padded activations and
    gathered tap matrices) live in a keyed pool that grows monotonically.
    Not thread-safe; forward/backward are single-threaded per process.
    """

    def __init__(self):
        self._bufs = {}

    def take(self, key: str, shape, dtype) -> np.ndarray:
        dtype = np.dtype(dtype)
        size = int(np.prod(shape))
        buf = self._bufs.get((key, dtype.str))
        if buf is None or buf.size < size:
            buf = np.empty(size, dtype=dtype)
            self._bufs[(key, dtype.str)] = buf
        return buf[:size].reshape(shape)


_WS = _Workspace()


def _gather_taps(h: np.ndarray, d: int, key: str) -> np.ndarray:
    """Dilated 3x3 tap matrix of (B, p, p, C) input, shape (B*p*p, 9C).

    Zero-pads into a workspace image, then lifts the nine shifted windows
    through one strided view + copy; the result backs a single GEMM.
    """
    b, p, _, c = h.shape
    pp = p + 2 * d
    hpad = _WS.take(key + ".pad", (b, pp, pp, c), h.dtype)
    hpad.fill(0)
    hpad[:, d:d + p, d:d + p, :] = h
    taps = _WS.take(key + ".taps", (b, p, p, 3, 3, c), h.dtype)
    sb, sr, sc, sch = hpad.strides
    view = np.lib.stride_tricks.as_strided(
        hpad, shape=(b, p, p, 3, 3, c),
        strides=(sb, sr, sc, d * sr, d * sc, sch))
    np.copyto(taps, view)
    return taps.reshape(b * p * p, 9 * c)


def _dilated_conv(h: np.ndarray, w_flat: np.ndarray, d: int,
                  key: str) -> np.ndarray:
    """Same-size dilated 3x3 convolution; w_flat is (9*C_in, C_out)."""
    b, p = h.shape[0], h.shape[1]
    taps = _gather_taps(h, d, key)
    return (taps @ w_flat).reshape(b, p, p, w_flat.shape[1])


def _flip_weight(w_main: np.ndarray, dtype) -> np.ndarray:
    """Spatially flipped, channel-transposed kernel: conv with it is the
    adjoint of the forward convolution (both zero-padded to same size)."""
    flipped = w_main[::-1, ::-1].transpose(0, 1, 3, 2)
    c_out, c_in = w_main.shape[3], w_main.shape[2]
    return np.ascontiguousarray(flipped, dtype=dtype).reshape(9 * c_out, c_in)


def _diag_taps(h: np.ndarray, d: int, vertical: bool) -> np.ndarray:
    """3 diagonal tap planes, shape (3, B, p, C).

    vertical=True reads h[i + (a-1)d, i] (the 3x1 filter at (i, i));
    vertical=False reads h[j, j + (a-1)d] (the 1x3 filter at (j, j)).
    """
    b, p, _, c = h.shape
    taps = np.zeros((3, b, p, c), dtype=h.dtype)
    idx = np.arange(p)
    for a, o in enumerate(_tap_offsets(d)):
        lo, hi = max(0, -o), p - max(0, o)
        sel = idx[lo:hi]
        if vertical:
            taps[a, :, lo:hi, :] = h[:, sel + o, sel, :]
        else:
            taps[a, :, lo:hi, :] = h[:, sel, sel + o, :]
    return taps


def _diag_taps_backward(g_taps: np.ndarray, d: int, vertical: bool,
                        dh: np.ndarray) -> None:
    p = dh.shape[1]
    idx = np.arange(p)
    for a, o in enumerate(_tap_offsets(d)):
        lo, hi = max(0, -o), p - max(0, o)
        sel = idx[lo:hi]
        if vertical:
            dh[:, sel + o, sel, :] += g_taps[a, :, lo:hi, :]
        else:
            dh[:, sel, sel + o, :] += g_taps[a, :, lo:hi, :]


def diag_broadcast(response: np.ndarray, axis: str) -> np.ndarray:
    """Broadcast per-index diagonal features over rows or columns.

    ``response`` is (B, p, C); the row variant copies response[b, i] to every
    (i, j), the column variant copies response[b, j] to every (i, j).
    """
    if response.ndim != 3:
        raise ShapeMismatch(f"diagonal response must be 3-D, got {response.shape}")
    if axis == "row":
        return np.broadcast_to(response[:, :, None, :],
                               response.shape[:2] + response.shape[1:]).copy()
    if axis == "col":
        return np.broadcast_to(response[:, None, :, :],
                               response.shape[:2] + response.shape[1:]).copy()
    raise ValueError(f"axis must be 'row' or 'col', got {axis!r}")


@dataclass
class ForwardCache:
    model_id: int
    mode: str
    dtype: np.dtype
    hidden: List[np.ndarray]        # h_0 (input) .. h_depth, channel-last
    xhat: List[np.ndarray]
    invstd: List[np.ndarray]
    sig: np.ndarray                 # sigmoid(logits), pre-symmetrization


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(model: EdgeNet, sigma_batch: np.ndarray, mode: str = "eval",
            dtype=np.float32) -> Tuple[np.ndarray, ForwardCache]:
    """Run the network on a batch of covariance images.

    ``sigma_batch`` has shape (B, 1, p, p) with p equal to the training
    size.  Returns (scores (B, 1, p, p), cache); scores are symmetric and
    strictly inside (0, 1).  Train mode uses batch statistics and updates
    the running ones; eval mode is a pure function of (model, input).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(sigma_batch)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeMismatch(f"expected (B, 1, p, p), got {x.shape}")
    p = model.p_train
    if x.shape[2] != p or x.shape[3] != p:
        raise ShapeMismatch(
            f"spatial dims {x.shape[2:]} do not match model size {p}")
    dtype = np.dtype(dtype)

    h = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=dtype)
    hidden = [h]
    xhats: List[np.ndarray] = []
    invstds: List[np.ndarray] = []
    batch = h.shape[0]
    for conv, bn in model.layers:
        c_in = conv.w_main.shape[2]
        c_out = conv.w_main.shape[3]
        d = conv.dilation
        w_flat = np.ascontiguousarray(
            conv.w_main.reshape(9 * c_in, c_out), dtype=dtype)
        z = _dilated_conv(h, w_flat, d, "fwd")
        vt = _diag_taps(h, d, vertical=True)
        row_resp = np.moveaxis(vt, 0, 2).reshape(-1, 3 * c_in) @ \
            conv.w_row.reshape(3 * c_in, c_out).astype(dtype)
        ht_ = _diag_taps(h, d, vertical=False)
        col_resp = np.moveaxis(ht_, 0, 2).reshape(-1, 3 * c_in) @ \
            conv.w_col.reshape(3 * c_in, c_out).astype(dtype)
        row_resp = row_resp.reshape(batch, p, c_out)
        col_resp = col_resp.reshape(batch, p, c_out)
        z += row_resp[:, :, None, :]
        z += col_resp[:, None, :, :]
        z += conv.bias.astype(dtype)

        if mode == "train":
            mean = z.mean(axis=(0, 1, 2))
            var = z.var(axis=(0, 1, 2))
            bn.running_mean *= 1.0 - bn.momentum
            bn.running_mean += bn.momentum * mean.astype(np.float64)
            bn.running_var *= 1.0 - bn.momentum
            bn.running_var += bn.momentum * var.astype(np.float64)
            invstd = 1.0 / np.sqrt(var + dtype.type(bn.eps))
            mean = mean.astype(dtype)
            invstd = invstd.astype(dtype)
        else:
            mean = bn.running_mean.astype(dtype)
            invstd = (1.0 / np.sqrt(bn.running_var + bn.eps)).astype(dtype)
        z -= mean
        z *= invstd
        xhat = z
        h = np.maximum(xhat * bn.gamma.astype(dtype) + bn.beta.astype(dtype), 0.0)
        hidden.append(h)
        xhats.append(xhat)
        invstds.append(invstd)

    logits = h.reshape(-1, h.shape[-1]) @ model.w_head.astype(dtype)
    logits = logits.reshape(h.shape[0], p, p) + dtype.type(model.b_head[0])
    sig = _stable_sigmoid(logits)
    np.clip(sig, PROB_EPS, 1.0 - PROB_EPS, out=sig)
    out = (sig + sig.transpose(0, 2, 1)) / 2.0

    cache = ForwardCache(model_id=id(model), mode=mode, dtype=dtype,
                         hidden=hidden, xhat=xhats, invstd=invstds, sig=sig)
    return out[:, None, :, :], cache


def backward(model: EdgeNet, cache: ForwardCache,
             grad_out: np.ndarray) -> Dict[str, np.ndarray]:
    """Parameter gradients for a train-mode forward pass.

    ``grad_out`` is dLoss/dOutput with the output's (B, 1, p, p) shape.
    Returns float64 gradients keyed like :func:`named_params`.
    """
    if cache.model_id != id(model):
        raise StaleCache("cache does not belong to this model instance")
    if cache.mode != "train":
        raise StaleCache("backward requires a cache from a train-mode forward")
    g = np.asarray(grad_out)
    p = model.p_train
    if g.shape != (cache.sig.shape[0], 1, p, p):
        raise ShapeMismatch(f"grad_out shape {g.shape} does not match forward")
    dtype = cache.dtype
    grads: Dict[str, np.ndarray] = {}

    g = g[:, 0].astype(dtype)
    g = (g + g.transpose(0, 2, 1)) / 2.0          # symmetrization backward
    sig = cache.sig
    dlogits = g * sig * (1.0 - sig)
    h_last = cache.hidden[-1]
    grads["head.w"] = (h_last.reshape(-1, h_last.shape[-1]).T @
                       dlogits.reshape(-1)).astype(np.float64)
    grads["head.b"] = np.array([dlogits.sum()], dtype=np.float64)
    dh = dlogits.reshape(dlogits.shape[0], p, p, 1) * \
        model.w_head.astype(dtype).reshape(1, 1, 1, -1)

    for k in range(len(model.layers) - 1, -1, -1):
        conv, bn = model.layers[k]
        c_in = conv.w_main.shape[2]
        c_out = conv.w_main.shape[3]
        d = conv.dilation
        h_in = cache.hidden[k]
        h_out = cache.hidden[k + 1]
        xhat = cache.xhat[k]
        invstd = cache.invstd[k]

        dh = dh * (h_out > 0)                     # ReLU
        grads[f"layer{k}.gamma"] = (dh * xhat).sum(axis=(0, 1, 2),
                                                   dtype=np.float64)
        grads[f"layer{k}.beta"] = dh.sum(axis=(0, 1, 2), dtype=np.float64)
        dxhat = dh * bn.gamma.astype(dtype)
        n_elem = dtype.type(xhat.shape[0] * p * p)
        sum_dxhat = dxhat.sum(axis=(0, 1, 2))
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 1, 2))
        dz = (invstd / n_elem) * (n_elem * dxhat - sum_dxhat
                                  - xhat * sum_dxhat_xhat)
        del dxhat

        grads[f"layer{k}.bias"] = dz.sum(axis=(0, 1, 2), dtype=np.float64)

        dz_flat = dz.reshape(-1, c_out)
        taps = _gather_taps(h_in, d, "bwd")
        grads[f"layer{k}.w_main"] = (
            taps.T @ dz_flat
        ).astype(np.float64).reshape(3, 3, c_in, c_out)
        # input gradient: convolve dz with the flipped, transposed kernel
        dh = _dilated_conv(dz, _flip_weight(conv.w_main, dtype), d, "bwd")

        d_row = dz.sum(axis=2).reshape(-1, c_out)   # (B*p, c_out)
        d_col = dz.sum(axis=1).reshape(-1, c_out)
        del dz
        n_b = dh.shape[0]
        vt = np.moveaxis(_diag_taps(h_in, d, vertical=True), 0, 2)
        grads[f"layer{k}.w_row"] = (
            vt.reshape(-1, 3 * c_in).T @ d_row
        ).astype(np.float64).reshape(3, c_in, c_out)
        g_vt = d_row @ conv.w_row.reshape(3 * c_in, c_out).astype(dtype).T
        _diag_taps_backward(
            np.moveaxis(g_vt.reshape(n_b, p, 3, c_in), 2, 0), d, True, dh)
        ht_ = np.moveaxis(_diag_taps(h_in, d, vertical=False), 0, 2)
        grads[f"layer{k}.w_col"] = (
            ht_.reshape(-1, 3 * c_in).T @ d_col
        ).astype(np.float64).reshape(3, c_in, c_out)
        g_ht = d_col @ conv.w_col.reshape(3 * c_in, c_out).astype(dtype).T
        _diag_taps_backward(
            np.moveaxis(g_ht.reshape(n_b, p, 3, c_in), 2, 0), d, False, dh)

    return grads


# ---------------------------------------------------------------------------
# serialization


def _state_items(model: EdgeNet):
    items = list(named_params(model).items()) + list(named_buffers(model).items())
    return items


def save_model(model: EdgeNet, path) -> None:
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<HIHHB", MODEL_VERSION, model.p_train,
                             cfg.depth, cfg.feature_maps,
                             _SCHEDULE_TAGS[cfg.dilation_schedule]))
        for _, arr in _state_items(model):
            blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)


def load_model(path) -> EdgeNet:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise CorruptFile(f"{path}: bad magic {magic!r}")
        head = fh.read(struct.calcsize("<HIHHB"))
        if len(head) != struct.calcsize("<HIHHB"):
            raise CorruptFile(f"{path}: truncated header")
        version, p_train, depth, feature_maps, sched_tag = struct.unpack("<HIHHB", head)
        if version != MODEL_VERSION:
            raise CorruptFile(
                f"{path}: unsupported model version {version} "
                f"(expected {MODEL_VERSION})")
        schedules = {v: k for k, v in _SCHEDULE_TAGS.items()}
        if sched_tag not in schedules:
            raise CorruptFile(f"{path}: unknown dilation schedule tag {sched_tag}")
        cfg = NetConfig(input_size=p_train, depth=depth, feature_maps=feature_maps,
                        dilation_schedule=schedules[sched_tag])
        model = init_params(cfg, np.random.default_rng(0))
        for name, arr in _state_items(model):
            size_raw = fh.read(8)
            if len(size_raw) != 8:
                raise CorruptFile(f"{path}: truncated before blob {name}")
            (nbytes,) = struct.unpack("<Q", size_raw)
            if nbytes != arr.size * 8:
                raise CorruptFile(
                    f"{path}: blob {name} has {nbytes} bytes, "
                    f"expected {arr.size * 8}")
            blob = fh.read(nbytes)
            if len(blob) != nbytes:
                raise CorruptFile(f"{path}: truncated blob {name}")
            np.copyto(arr, np.frombuffer(blob, dtype="<f8").reshape(arr.shape))
        if fh.read(1):
            raise CorruptFile(f"{path}: trailing bytes")
    return model
