"""Bidirectional LSTM window classifier with hand-written backpropagation.

Parameters live in one flat vector (so the optimizer, clipping and gradient
checks see a single array); named tensors are views into it. Gate blocks are
ordered (input, forget, cell, output). Sequences are processed time-major.

Architecture: ``num_layers`` stacked bidirectional layers (layer ``l > 0``
reads the concatenated forward/backward outputs of layer ``l - 1``, with
dropout in between), summary ``z = [h_fwd(L); h_bwd(1)]``, then
linear(2h -> head_hidden) -> ReLU -> dropout -> linear(head_hidden -> C).
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._backend import get_kernels, kernels
from .errors import NonFiniteActivation, NonFiniteGradient

LAYOUT_VERSION = "gazemask-bilstm-v1"
PROB_FLOOR = 1e-12
DIRECTIONS = ("fwd", "bwd")


@dataclass(frozen=True)
class ModelDims:
    input_dim: int = 12
    hidden_size: int = 64
    num_layers: int = 2
    num_classes: int = 3
    head_hidden: int | None = None
    dropout: float = 0.3

    def __post_init__(self):
        if self.head_hidden is None:
            object.__setattr__(self, "head_hidden", self.hidden_size)
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if min(self.input_dim, self.hidden_size, self.num_layers, self.num_classes) < 1:
            raise ValueError("model dimensions must be positive")

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        h = self.hidden_size
        out = []
        for layer in range(self.num_layers):
            k_in = self.input_dim if layer == 0 else 2 * h
            for d in DIRECTIONS:
                out += [
                    (f"lstm{layer}_{d}_w_x", (4 * h, k_in)),
                    (f"lstm{layer}_{d}_w_h", (4 * h, h)),
                    (f"lstm{layer}_{d}_b", (4 * h,)),
                ]
        out += [
            ("head_w1", (self.head_hidden, 2 * h)),
            ("head_b1", (self.head_hidden,)),
            ("head_w2", (self.num_classes, self.head_hidden)),
            ("head_b2", (self.num_classes,)),
        ]
        return out


class ParamVector:
    """Flat float buffer with named, shaped views (parameters or their gradients)."""

    def __init__(self, dims: ModelDims, flat: np.ndarray | None = None, dtype=np.float64):
        self.dims = dims
        shapes = dims.shapes()
        size = sum(int(np.prod(s)) for _, s in shapes)
        if flat is None:
            flat = np.zeros(size, dtype=dtype)
        if flat.shape != (size,):
            raise ValueError(f"flat buffer has shape {flat.shape}, expected ({size},)")
        self.flat = flat
        self.views: dict[str, np.ndarray] = {}
        off = 0
        for name, shape in shapes:
            n = int(np.prod(shape))
            self.views[name] = flat[off : off + n].reshape(shape)
            off += n

    def __getitem__(self, name: str) -> np.ndarray:
        return self.views[name]

    def __iter__(self):
        return iter(self.views)

    @property
    def dtype(self):
        return self.flat.dtype

    def zeros_like(self) -> "ParamVector":
        return ParamVector(self.dims, np.zeros_like(self.flat))

    def copy(self) -> "ParamVector":
        return ParamVector(self.dims, self.flat.copy())

    def astype(self, dtype) -> "ParamVector":
        return ParamVector(self.dims, self.flat.astype(dtype))


ModelParams = ParamVector
GradientTape = ParamVector


def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def init_params(seed: int, dims: ModelDims = ModelDims(), dtype=np.float64) -> ParamVector:
    """Orthogonal LSTM blocks (per gate), Xavier-uniform head, forget bias 1."""
    rng = np.random.default_rng(seed)
    p = ParamVector(dims, dtype=np.float64)
    h = dims.hidden_size
    for name in p:
        w = p[name]
        if name.startswith("lstm") and (name.endswith("_w_x") or name.endswith("_w_h")):
            for g in range(4):
                w[g * h : (g + 1) * h] = _orthogonal(rng, h, w.shape[1])
        elif name.endswith("_b") and name.startswith("lstm"):
            w[h : 2 * h] = 1.0
        elif name in ("head_w1", "head_w2"):
            fan_out, fan_in = w.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w[...] = rng.uniform(-bound, bound, size=w.shape)
    return p.astype(dtype)


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_cell(x, h_prev, c_prev, w_x, w_h, b):
    """One LSTM step for a single example or a batch; returns ``(h, c)``."""
    a = x @ w_x.T + h_prev @ w_h.T + b
    hid = w_h.shape[1]
    i = _sigmoid(a[..., :hid])
    f = _sigmoid(a[..., hid : 2 * hid])
    g = np.tanh(a[..., 2 * hid : 3 * hid])
    o = _sigmoid(a[..., 3 * hid :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    if not (np.isfinite(h).all() and np.isfinite(c).all()):
        raise NonFiniteActivation("non-finite LSTM state")
    return h, c


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classify(z: np.ndarray, params: ParamVector) -> np.ndarray:
    """Head probabilities for summaries ``z`` (..., 2h), evaluation mode."""
    a1 = z @ params["head_w1"].T + params["head_b1"]
    logits = np.maximum(a1, 0.0) @ params["head_w2"].T + params["head_b2"]
    return softmax(logits)


def cross_entropy(probs: np.ndarray, y) -> np.ndarray | float:
    """``-log p_y`` with ``p_y`` clamped at 1e-12; ``y`` holds classes 1..C."""
    probs = np.asarray(probs)
    y = np.asarray(y)
    p = np.take_along_axis(np.atleast_2d(probs), (np.atleast_1d(y) - 1)[:, None], axis=1)[:, 0]
    loss = -np.log(np.maximum(p, PROB_FLOOR))
    return float(loss[0]) if y.ndim == 0 else loss


class Forward:
    """Cache of one forward pass, consumed by :func:`backward`."""

    __slots__ = ("x", "layers", "drop_masks", "z", "a1", "r", "head_mask", "probs", "kern")


def _dropout_mask(rng, shape, rate, dtype):
    keep = 1.0 - rate
    return ((rng.random(shape) < keep) / keep).astype(dtype)


def forward(
    params: ParamVector,
    x: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
    masks: dict | None = None,
    backend: str | None = None,
) -> Forward:
    """Run the network on a batch ``x`` of shape (B, L, k).

    With ``train=True`` dropout masks are drawn from ``rng`` unless supplied in
    ``masks`` (keys ``"layer<l>"`` and ``"head"``); they are kept for backward.
    """
    dims = params.dims
    kern = kernels if backend is None else get_kernels(backend)
    dtype = params.dtype
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 3 or x.shape[2] != dims.input_dim or x.shape[1] < 1:
        raise ValueError(f"expected input (B, L>=1, {dims.input_dim}), got {x.shape}")
    fw = Forward()
    fw.kern = kern
    fw.x = x
    fw.layers = []
    fw.drop_masks = {}
    use_drop = train and dims.dropout > 0.0
    if use_drop and rng is None and masks is None:
        raise ValueError("training mode with dropout needs an rng or explicit masks")
    inp = np.ascontiguousarray(x.transpose(1, 0, 2))  # (L, B, k)
    n_steps, batch = inp.shape[:2]
    h = dims.hidden_size
    for layer in range(dims.num_layers):
        if layer > 0 and use_drop:
            key = f"layer{layer}"
            m = masks[key] if masks and key in masks else _dropout_mask(rng, inp.shape, dims.dropout, dtype)
            fw.drop_masks[key] = m
            inp = inp * m
        chains = {}
        for d in DIRECTIONS:
            seq = inp if d == "fwd" else np.ascontiguousarray(inp[::-1])
            w_x = params[f"lstm{layer}_{d}_w_x"]
            gates = seq.reshape(-1, seq.shape[2]) @ w_x.T
            gates += params[f"lstm{layer}_{d}_b"]
            gates = np.ascontiguousarray(gates.reshape(n_steps, batch, 4 * h))
            w_h = np.ascontiguousarray(params[f"lstm{layer}_{d}_w_h"])
            hs, cs = kern.lstm_forward(gates, w_h)
            chains[d] = (seq, gates, hs, cs)
        fw.layers.append(chains)
        # outputs in natural time order
        inp = np.concatenate([chains["fwd"][2], chains["bwd"][2][::-1]], axis=2)
    top = fw.layers[-1]
    fw.z = np.concatenate([top["fwd"][2][-1], top["bwd"][2][-1]], axis=1)  # (B, 2h)
    fw.a1 = fw.z @ params["head_w1"].T + params["head_b1"]
    r = np.maximum(fw.a1, 0.0)
    if use_drop:
        m = masks["head"] if masks and "head" in masks else _dropout_mask(rng, r.shape, dims.dropout, dtype)
        fw.drop_masks["head"] = m
        r = r * m
    fw.head_mask = fw.drop_masks.get("head")
    fw.r = r
    logits = r @ params["head_w2"].T + params["head_b2"]
    fw.probs = softmax(logits)
    if not np.isfinite(fw.probs).all():
        raise NonFiniteActivation("non-finite activations in forward pass")
    return fw


def encode_window(
    frames: np.ndarray,
    params: ParamVector,
    dropout_enabled: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Summary vector ``z`` (2h,) for one window (L, k), or (B, 2h) for a batch."""
    frames = np.asarray(frames)
    single = frames.ndim == 2
    fw = forward(params, frames[None] if single else frames, train=dropout_enabled, rng=rng)
    return fw.z[0] if single else fw.z


def predict_proba(params: ParamVector, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = []
    for s in range(0, len(x), batch_size):
        out.append(forward(params, x[s : s + batch_size]).probs)
    return np.concatenate(out) if out else np.empty((0, params.dims.num_classes))


def batch_loss(fw: Forward, y: np.ndarray) -> float:
    return float(np.mean(cross_entropy(fw.probs, y)))


def backward(params: ParamVector, fw: Forward, y: np.ndarray) -> ParamVector:
    """Gradients of the mean batch cross-entropy w.r.t. every parameter."""
    dims = params.dims
    kern = fw.kern
    grads = ParamVector(dims, np.zeros_like(params.flat))
    y = np.asarray(y)
    batch = fw.probs.shape[0]
    h = dims.hidden_size
    onehot = np.zeros_like(fw.probs)
    onehot[np.arange(batch), y - 1] = 1.0
    d_logits = (fw.probs - onehot) / batch
    clamped = fw.probs[np.arange(batch), y - 1] < PROB_FLOOR
    d_logits[clamped] = 0.0  # loss is constant below the floor
    grads["head_w2"][...] = d_logits.T @ fw.r
    grads["head_b2"][...] = d_logits.sum(axis=0)
    d_r = d_logits @ params["head_w2"]
    if fw.head_mask is not None:
        d_r = d_r * fw.head_mask
    d_a1 = d_r * (fw.a1 > 0)
    grads["head_w1"][...] = d_a1.T @ fw.z
    grads["head_b1"][...] = d_a1.sum(axis=0)
    d_z = d_a1 @ params["head_w1"]

    n_steps = fw.x.shape[1]
    # gradient w.r.t. the top layer's outputs, natural time, (L, B, 2h)
    d_out = np.zeros((n_steps, batch, 2 * h), dtype=params.dtype)
    d_out[-1, :, :h] = d_z[:, :h]
    d_out[0, :, h:] = d_z[:, h:]
    for layer in range(dims.num_layers - 1, -1, -1):
        chains = fw.layers[layer]
        d_inp = None
        for d in DIRECTIONS:
            seq, gates, hs, cs = chains[d]
            if d == "fwd":
                d_hs = np.ascontiguousarray(d_out[:, :, :h])
            else:
                d_hs = np.ascontiguousarray(d_out[::-1, :, h:])
            w_h = np.ascontiguousarray(params[f"lstm{layer}_{d}_w_h"])
            d_pre = kern.lstm_backward(d_hs, gates, cs, w_h)
            flat_pre = d_pre.reshape(-1, 4 * h)
            grads[f"lstm{layer}_{d}_w_x"][...] = flat_pre.T @ seq.reshape(-1, seq.shape[2])
            grads[f"lstm{layer}_{d}_b"][...] = flat_pre.sum(axis=0)
            if n_steps > 1:
                grads[f"lstm{layer}_{d}_w_h"][...] = (
                    d_pre[1:].reshape(-1, 4 * h).T @ hs[:-1].reshape(-1, h)
                )
            if layer > 0:
                d_seq = (flat_pre @ params[f"lstm{layer}_{d}_w_x"]).reshape(seq.shape)
                if d == "bwd":
                    d_seq = d_seq[::-1]
                d_inp = d_seq if d_inp is None else d_inp + d_seq
        if layer > 0:
            m = fw.drop_masks.get(f"layer{layer}")
            d_out = d_inp * m if m is not None else d_inp
    if not np.isfinite(grads.flat).all():
        raise NonFiniteGradient("non-finite gradient")
    return grads


def loss_and_grad(params, x, y, train=False, rng=None, masks=None, backend=None):
    fw = forward(params, x, train=train, rng=rng, masks=masks, backend=backend)
    return batch_loss(fw, y), backward(params, fw, y)


def save_params(params: ParamVector, path: str | os.PathLike) -> None:
    """Checkpoint as ``.npz``: one array per named tensor plus layout tags."""
    d = params.dims
    np.savez(
        path,
        __layout__=np.array(LAYOUT_VERSION),
        __dims__=np.array(
            [d.input_dim, d.hidden_size, d.num_layers, d.num_classes, d.head_hidden], dtype=np.int64
        ),
        __dropout__=np.array(d.dropout),
        **{name: params[name] for name in params},
    )


def load_params(path: str | os.PathLike) -> ParamVector:
    with np.load(Path(path), allow_pickle=False) as data:
        if str(data["__layout__"]) != LAYOUT_VERSION:
            raise ValueError(f"unsupported checkpoint layout {data['__layout__']}")
        k, h, n_layers, c, hc = (int(v) for v in data["__dims__"])
        dims = ModelDims(k, h, n_layers, c, hc, float(data["__dropout__"]))
        first = dims.shapes()[0][0]
        params = ParamVector(dims, dtype=data[first].dtype)
        for name, shape in dims.shapes():
            if name not in data:
                raise ValueError(f"checkpoint is missing tensor {name}")
            if data[name].shape != shape:
                raise ValueError(f"tensor {name} has shape {data[name].shape}, expected {shape}")
            params[name][...] = data[name]
    return params
