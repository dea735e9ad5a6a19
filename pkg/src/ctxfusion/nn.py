"""Attention and Transformer encoder blocks on top of :mod:`ctxfusion.tensor`.

Blocks do not own storage. Each exposes ``shapes(prefix, ...)``, an inventory
of ``name -> (shape, init)`` entries, and ``bind(params, prefix, ...)``, which
wraps the matching tensors of a flat parameter dict. Models assemble one
inventory, allocate it once (see :func:`init_params`) and bind blocks to it.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError

INIT_STD = 0.02
LN_EPS = 1e-5


def init_params(inventory, rng, frozen=()):
    """Allocate tensors for an inventory in its (deterministic) order.

    Weights ~ N(0, 0.02^2), biases and shifts 0, layer-norm gains 1. Names
    starting with any prefix in ``frozen`` do not require grad.
    """
    params = {}
    for name, (shape, init) in inventory.items():
        if init == "normal":
            data = rng.normal(0.0, INIT_STD, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(f"unknown init {init!r} for {name}")
        trainable = not any(name.startswith(p) for p in frozen)
        params[name] = Tensor(np.asarray(data, dtype=np.float64), requires_grad=trainable)
    return params


def count(inventory):
    return sum(int(np.prod(shape)) for shape, _ in inventory.values())


@dataclass
class LinearLayer:
    W: Tensor
    b: Tensor

    @staticmethod
    def shapes(prefix, n_in, n_out):
        if n_out < 1:
            raise ValueError("LinearLayer: out_dim must be >= 1")
        return {f"{prefix}.W": ((n_in, n_out), "normal"), f"{prefix}.b": ((n_out,), "zeros")}

    @classmethod
    def bind(cls, params, prefix):
        return cls(params[f"{prefix}.W"], params[f"{prefix}.b"])

    def __call__(self, x):
        return T.add(T.matmul(x, self.W), self.b)


def scaled_dot_attention(Q, K, V, mask=None, return_weights=False):
    """softmax(Q K^T / sqrt(d_K)) V over the last two axes.

    ``mask`` is an optional ``(batch, L_kv)`` array of 1 (attend) / 0 (ignore)
    applied to the keys.
    """
    if K.shape[-2] == 0:
        raise ShapeError("scaled_dot_attention (no keys)", K.shape)
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeError("scaled_dot_attention", Q.shape, K.shape, V.shape)
    d_k = Q.shape[-1]
    scores = T.scale(T.matmul(Q, T.transpose(K)), 1.0 / math.sqrt(d_k))
    weights = T.softmax(scores, mask)
    out = T.matmul(weights, V)
    return (out, weights) if return_weights else out


@dataclass
class MultiheadAttentionBlock:
    """Per-head projections stored side by side.

    Columns ``m*d_head:(m+1)*d_head`` of ``q.W`` are the m-th head's query
    projection (likewise for keys and values), with ``d_head = d_model / M``.
    """

    n_heads: int
    q: LinearLayer
    k: LinearLayer
    v: LinearLayer
    o: LinearLayer

    @staticmethod
    def shapes(prefix, d_model, n_heads):
        if n_heads < 1 or d_model % n_heads:
            raise ValueError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        inv = {}
        for part in ("q", "k", "v", "o"):
            inv.update(LinearLayer.shapes(f"{prefix}.{part}", d_model, d_model))
        return inv

    @classmethod
    def bind(cls, params, prefix, n_heads):
        d_model = params[f"{prefix}.q.W"].shape[0]
        if n_heads < 1 or d_model % n_heads:
            raise ValueError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        return cls(n_heads, *(LinearLayer.bind(params, f"{prefix}.{p}") for p in "qkvo"))

    @property
    def d_model(self):
        return self.q.W.shape[0]


def _split_heads(x, n_heads):
    bs, length, d = x.shape
    return T.permute(T.reshape(x, (bs, length, n_heads, d // n_heads)), (0, 2, 1, 3))


def multihead_attention(block, Q, K, V, mask=None, return_weights=False):
    """concat(Head_1, ..., Head_M) W^O with Head_m = Att(Q W_m^Q, K W_m^K, V W_m^V).

    Inputs are ``(batch, L, d_model)``; 2-D inputs are treated as batch 1.
    """
    squeeze = Q.ndim == 2
    if squeeze:
        Q, K, V = (T.reshape(t, (1,) + t.shape) for t in (Q, K, V))
    d = block.d_model
    for t in (Q, K, V):
        if t.shape[-1] != d:
            raise ShapeError("multihead_attention", t.shape, (d,))
    M = block.n_heads
    heads, weights = scaled_dot_attention(
        _split_heads(block.q(Q), M),
        _split_heads(block.k(K), M),
        _split_heads(block.v(V), M),
        mask=mask,
        return_weights=True,
    )
    bs, _, lq, dh = heads.shape
    joined = T.reshape(T.permute(heads, (0, 2, 1, 3)), (bs, lq, M * dh))
    out = block.o(joined)
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return (out, weights) if return_weights else out


def layer_norm(x, gamma, beta, eps=LN_EPS):
    return T.layer_norm(x, gamma, beta, eps)


@dataclass
class TransformerEncoderBlock:
    mha: MultiheadAttentionBlock
    ln1_gain: Tensor
    ln1_shift: Tensor
    ln2_gain: Tensor
    ln2_shift: Tensor
    ff1: LinearLayer
    ff2: LinearLayer

    @staticmethod
    def shapes(prefix, d_model, n_heads, d_ff=None):
        d_ff = 4 * d_model if d_ff is None else d_ff
        inv = MultiheadAttentionBlock.shapes(f"{prefix}.mha", d_model, n_heads)
        for ln in ("ln1", "ln2"):
            inv[f"{prefix}.{ln}.gain"] = ((d_model,), "ones")
            inv[f"{prefix}.{ln}.shift"] = ((d_model,), "zeros")
        inv.update(LinearLayer.shapes(f"{prefix}.ff1", d_model, d_ff))
        inv.update(LinearLayer.shapes(f"{prefix}.ff2", d_ff, d_model))
        return inv

    @classmethod
    def bind(cls, params, prefix, n_heads):
        return cls(
            MultiheadAttentionBlock.bind(params, f"{prefix}.mha", n_heads),
            params[f"{prefix}.ln1.gain"],
            params[f"{prefix}.ln1.shift"],
            params[f"{prefix}.ln2.gain"],
            params[f"{prefix}.ln2.shift"],
            LinearLayer.bind(params, f"{prefix}.ff1"),
            LinearLayer.bind(params, f"{prefix}.ff2"),
        )


def feed_forward(block, x):
    return block.ff2(T.tanh(block.ff1(x)))


def transformer_encoder(block, Q, K, V, mask=None):
    """LN(u + FFL(u)) where u = LN(Q + MHAtt(Q, K, V)).

    Both residuals add onto the query stream, so the output has Q's shape.
    Self-attention is the call with ``K = V = Q``.
    """
    attended = multihead_attention(block.mha, Q, K, V, mask=mask)
    u = layer_norm(T.add(Q, attended), block.ln1_gain, block.ln1_shift)
    return layer_norm(T.add(u, feed_forward(block, u)), block.ln2_gain, block.ln2_shift)
