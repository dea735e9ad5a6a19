"""The five neural architectures plus the linear-regression and random benchmarks.

All neural variants share the text encoder and the Transformer block from
:mod:`ctxfusion.nn`. Output heads are stacks of tanh layers ending in a tanh
unit, so predictions lie in (-1, 1).

context-aware
    Tabular features become J tokens; they query the text states through a
    cross-attention Transformer encoder; the J outputs are mean-pooled into
    the head. No concatenation.
context-fusion
    As context-aware, but the head sees ``concat(pooled, x_tab)``.
feature-fusion
    Head over ``concat(pooler_output, x_tab)``.
textual
    Head over ``pooler_output`` only.
tabular
    Head over ``x_tab`` only.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
import hashlib
import json
import struct

import numpy as np

from . import tensor as T
from .nn import LinearLayer, TransformerEncoderBlock, count, init_params, transformer_encoder
from .text import EncoderConfig, TextEncoder

NEURAL = ("context-aware", "context-fusion", "feature-fusion", "textual", "tabular")
BENCHMARKS = ("linear-regression", "random")
ARCHITECTURES = NEURAL + BENCHMARKS
ROLES = ("tabular-query", "text-query")

MODALITY = {
    "context-aware": "multimodal",
    "context-fusion": "multimodal",
    "feature-fusion": "multimodal",
    "textual": "text",
    "tabular": "tabular",
    "linear-regression": "tabular",
    "random": "none",
}

# Head widths at d_model = 768; other widths scale by d_model / 768.
_BASE_HEADS = {
    "context-aware": (256, 128),
    "context-fusion": (256, 128),
    "feature-fusion": (512, 256, 128),
    "textual": (256, 128),
}
_TABULAR_HEAD = (10, 10)


def scaled_head(widths, d_model):
    return tuple(max(8, int(round(w * d_model / 768))) for w in widths)


@dataclass(frozen=True)
class ModelSpec:
    architecture: str
    encoder: EncoderConfig | None = None
    J: int = 15
    n_heads_fusion: int = 8
    head_units: tuple | None = None
    cross_attention_roles: str = "tabular-query"
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        if self.cross_attention_roles not in ROLES:
            raise ValueError(f"unknown cross_attention_roles {self.cross_attention_roles!r}")
        if self.J < 1:
            raise ValueError("J must be >= 1")
        if self.head_units is not None:
            object.__setattr__(self, "head_units", tuple(int(w) for w in self.head_units))
            if not 2 <= len(self.head_units) <= 3:
                raise ValueError("head_units must list 2 or 3 hidden widths")
        if self.uses_text and self.encoder is None:
            raise ValueError(f"{self.architecture} needs an encoder config")

    @property
    def uses_text(self):
        return self.architecture in ("context-aware", "context-fusion", "feature-fusion", "textual")

    @property
    def uses_cross_attention(self):
        return self.architecture in ("context-aware", "context-fusion")

    @property
    def hidden_widths(self):
        if self.head_units is not None:
            return self.head_units
        if self.architecture == "tabular":
            return _TABULAR_HEAD
        return scaled_head(_BASE_HEADS[self.architecture], self.encoder.d_model)

    @property
    def head_input_width(self):
        a = self.architecture
        if a == "tabular":
            return self.J
        d = self.encoder.d_model
        return d + self.J if a in ("context-fusion", "feature-fusion") else d

    def to_dict(self):
        d = asdict(self)
        d["head_units"] = list(self.head_units) if self.head_units is not None else None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("encoder") is not None:
            d["encoder"] = EncoderConfig(**d["encoder"])
        if d.get("head_units") is not None:
            d["head_units"] = tuple(d["head_units"])
        return cls(**d)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def param_inventory(spec):
    """Ordered ``name -> (shape, init)`` for every parameter of ``spec``."""
    if spec.architecture in BENCHMARKS:
        return {}
    inv = {}
    if spec.uses_text:
        inv.update(TextEncoder.shapes(spec.encoder, "encoder"))
    if spec.uses_cross_attention:
        d = spec.encoder.d_model
        inv["tab_embed.W"] = ((spec.J, d), "normal")
        inv["tab_embed.b"] = ((spec.J, d), "zeros")
        inv.update(TransformerEncoderBlock.shapes("fusion", d, spec.n_heads_fusion, 4 * d))
    n_in = spec.head_input_width
    for i, w in enumerate(spec.hidden_widths):
        inv.update(LinearLayer.shapes(f"head.h{i}", n_in, w))
        n_in = w
    inv.update(LinearLayer.shapes("head.out", n_in, 1))
    return inv


def param_count(spec):
    """Exact parameter counts, split by component and by trainability.

    Computed from the shape inventory, so full-size specs never allocate.
    """
    inv = param_inventory(spec)
    groups = {}
    for name, entry in inv.items():
        key = name.split(".", 1)[0]
        groups.setdefault(key, {})[name] = entry
    out = {k: count(groups.get(k, {})) for k in ("encoder", "tab_embed", "fusion", "head")}
    out["total"] = count(inv)
    out["frozen"] = out["encoder"] if spec.uses_text and spec.encoder.frozen else 0
    out["trainable"] = out["total"] - out["frozen"]
    return out


@dataclass
class TabularTokenEmbedding:
    """token_j = x_j * w_j + b_j for each of the J tabular features."""

    W: T.Tensor
    b: T.Tensor

    def __call__(self, x_tab):
        x = T.reshape(x_tab, x_tab.shape + (1,))
        return T.add(T.mul(x, self.W), self.b)


def embed_tabular(x_tab, emb):
    return emb(x_tab)


class Model:
    """A neural architecture bound to its parameter dict."""

    def __init__(self, spec, params=None):
        if spec.architecture not in NEURAL:
            raise ValueError(f"{spec.architecture} is a benchmark, not a neural model")
        self.spec = spec
        self.inventory = param_inventory(spec)
        frozen = ("encoder.",) if spec.uses_text and spec.encoder.frozen else ()
        if params is None:
            params = init_params(self.inventory, np.random.default_rng(spec.seed), frozen)
        self.params = params
        self.encoder = TextEncoder(spec.encoder, params, "encoder") if spec.uses_text else None
        if spec.uses_cross_attention:
            self.tab_embed = TabularTokenEmbedding(params["tab_embed.W"], params["tab_embed.b"])
            self.fusion = TransformerEncoderBlock.bind(params, "fusion", spec.n_heads_fusion)
        n_hidden = len(spec.hidden_widths)
        self.head = [LinearLayer.bind(params, f"head.h{i}") for i in range(n_hidden)]
        self.head_out = LinearLayer.bind(params, "head.out")

    def parameters(self):
        return [p for p in self.params.values() if p.requires_grad]

    def named_parameters(self):
        return dict(self.params)

    @property
    def text_frozen(self):
        return self.spec.uses_text and self.spec.encoder.frozen

    def text_features(self, ids, mask):
        """``(states, pooled)`` from the encoder; pooled is None unless used."""
        states = self.encoder.encode(ids, mask)
        pooled = None
        if self.spec.architecture in ("feature-fusion", "textual"):
            pooled = self.encoder.pooler_output(states)
        return states, pooled

    def run_head(self, h):
        for layer in self.head:
            h = T.tanh(layer(h))
        return T.tanh(self.head_out(h))

    def forward(self, ids=None, mask=None, x_tab=None, states=None, pooled=None):
        """Predictions of shape ``(batch, 1)``.

        ``states``/``pooled`` may be supplied precomputed (arrays or tensors),
        which is how a frozen encoder is skipped during training.
        """
        arch = self.spec.architecture
        if x_tab is not None and not isinstance(x_tab, T.Tensor):
            x_tab = T.tensor(x_tab)
        if arch == "tabular":
            return forward_tabular(self, x_tab)
        if mask is not None:
            # padded columns get zero attention weight and are never queried
            mask = np.asarray(mask)
            used = np.flatnonzero(mask.any(axis=0))
            width = int(used[-1]) + 1 if used.size else 1
            if width < mask.shape[1]:
                mask = mask[:, :width]
                ids = None if ids is None else np.asarray(ids)[:, :width]
                if states is not None:
                    states = states[:, :width]
        if states is None and (pooled is None or arch not in ("feature-fusion", "textual")):
            states, pooled = self.text_features(ids, mask)
        states = _as_tensor(states)
        pooled = _as_tensor(pooled)
        if arch == "context-aware":
            return forward_context_aware(self, states, mask, x_tab)
        if arch == "context-fusion":
            return forward_context_fusion(self, states, mask, x_tab)
        if arch == "feature-fusion":
            return forward_feature_fusion(self, pooled, x_tab)
        return forward_textual(self, pooled)


def _as_tensor(x):
    if x is None or isinstance(x, T.Tensor):
        return x
    return T.Tensor(np.asarray(x, dtype=np.float64))


def cross_attend(model, states, mask, x_tab):
    """Cross-attention fusion of text states and tabular tokens, pooled to (batch, d)."""
    tabs = model.tab_embed(x_tab)
    mask = np.atleast_2d(np.asarray(mask, dtype=np.uint8))
    if model.spec.cross_attention_roles == "tabular-query":
        fused = transformer_encoder(model.fusion, tabs, states, states, mask=mask)
        return T.mean(fused, axis=1)
    fused = transformer_encoder(model.fusion, states, tabs, tabs)
    weights = (mask / mask.sum(axis=1, keepdims=True))[:, :, None]
    return T.sum(T.mul(fused, T.Tensor(weights)), axis=1)


def forward_context_aware(model, states, mask, x_tab):
    return model.run_head(cross_attend(model, states, mask, x_tab))


def forward_context_fusion(model, states, mask, x_tab):
    return model.run_head(T.concat([cross_attend(model, states, mask, x_tab), x_tab]))


def forward_feature_fusion(model, pooled, x_tab):
    return model.run_head(T.concat([pooled, x_tab]))


def forward_textual(model, pooled):
    return model.run_head(pooled)


def forward_tabular(model, x_tab):
    return model.run_head(x_tab)


# -- benchmarks -------------------------------------------------------------------


def fit_linear_regression(X, y):
    """OLS with intercept via the normal equations; returns ``[b0, b1..bJ]``.

    Falls back to the pseudo-inverse when ``X^T X`` is singular.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n, J = X.shape
    if n <= J + 1:
        raise ValueError(f"linear regression needs more than J+1={J + 1} rows, got {n}; supply more data")
    A = np.hstack([np.ones((n, 1)), X])
    gram = A.T @ A
    rhs = A.T @ y
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        return np.linalg.pinv(A) @ y
    return np.linalg.solve(gram, rhs)


def predict_linear(coef, X):
    return coef[0] + np.asarray(X, dtype=np.float64) @ coef[1:]


def random_predict(n, rng):
    """i.i.d. Uniform[0, 1] predictions."""
    return rng.uniform(0.0, 1.0, size=n)


# -- checkpoints --------------------------------------------------------------------

MAGIC = b"FUSE1"


def save_checkpoint(path, spec, params):
    """Binary checkpoint: magic, spec hash, then named float64 blocks.

    Layout (little-endian): ``FUSE1`` | u32 hash length | hash (ascii hex) |
    u32 block count | per block: u32 name length, name (utf-8), u32 rank,
    rank x u64 extents, float64 data.
    """
    h = spec.hash().encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(h)))
        fh.write(h)
        fh.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            data = t.data if isinstance(t, T.Tensor) else np.asarray(t)
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


class CheckpointError(ValueError):
    pass


def read_checkpoint(path):
    """Return ``(spec_hash, {name: ndarray})``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != MAGIC:
        raise CheckpointError(f"{path}: not a FUSE1 checkpoint")
    pos = 5

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, blob, pos)
        pos += struct.calcsize(fmt)
        return vals

    (hl,) = take("<I")
    spec_hash = blob[pos : pos + hl].decode()
    pos += hl
    (nblocks,) = take("<I")
    arrays = {}
    for _ in range(nblocks):
        (nl,) = take("<I")
        name = blob[pos : pos + nl].decode()
        pos += nl
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    return spec_hash, arrays


def load_model(path, spec):
    """Rebuild a :class:`Model` from a checkpoint, refusing a spec mismatch."""
    spec_hash, arrays = read_checkpoint(path)
    if spec_hash != spec.hash():
        raise CheckpointError(f"checkpoint spec hash {spec_hash[:12]} does not match model spec {spec.hash()[:12]}")
    model = Model(spec)
    for name, t in model.params.items():
        if name not in arrays or arrays[name].shape != t.shape:
            raise CheckpointError(f"checkpoint is missing or misshapes parameter {name}")
        t.data[...] = arrays[name]
    return model
