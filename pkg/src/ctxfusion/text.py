"""Word-level tokenizer and a small BERT-style encoder.

The encoder is token embedding + learned absolute position embedding followed
by self-attention :class:`~ctxfusion.nn.TransformerEncoderBlock` layers, with
padded key positions masked. ``pooler_output`` is tanh of a dense projection of
the position-0 ([CLS]) state.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, asdict
import re

import numpy as np

from . import tensor as T
from .nn import LinearLayer, TransformerEncoderBlock, transformer_encoder

PAD, UNK, CLS, SEP = 0, 1, 2, 3
SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def word_tokens(text):
    """Lowercased words; every punctuation character is its own token."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with [PAD], [UNK], [CLS], [SEP]")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary has duplicate tokens")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id(self, token):
        return self.index.get(token, UNK)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh)


def build_vocab(corpus, size):
    """Reserved tokens plus the ``size - 4`` most frequent word tokens.

    Ties in frequency are broken lexicographically.
    """
    if size < 5:
        raise ValueError("vocabulary size must be at least 5")
    corpus = [corpus] if isinstance(corpus, str) else list(corpus)
    counts = Counter()
    for doc in corpus:
        counts.update(word_tokens(doc))
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(list(SPECIALS) + [t for t, _ in ranked[: size - 4]])


@dataclass
class TokenSequence:
    """Token ids and padding mask; 1-D for one text or 2-D for a batch."""

    ids: np.ndarray
    mask: np.ndarray

    @property
    def n_tokens(self):
        return self.mask.sum(axis=-1)

    @property
    def len_max(self):
        return self.ids.shape[-1]


def tokenize_fixed(vocab, text, len_max):
    """[CLS] + tokens (+ [SEP] when there is room), truncated then padded."""
    if len_max < 1:
        raise ValueError("len_max must be >= 1")
    ids = [CLS] + [vocab.id(t) for t in word_tokens(text)]
    ids = ids[:len_max]
    if len(ids) < len_max:
        ids.append(SEP)
    n = len(ids)
    out = np.full(len_max, PAD, dtype=np.int64)
    out[:n] = ids
    mask = np.zeros(len_max, dtype=np.uint8)
    mask[:n] = 1
    return TokenSequence(out, mask)


def stack(seqs):
    return TokenSequence(np.stack([s.ids for s in seqs]), np.stack([s.mask for s in seqs]))


def detokenize(vocab, seq):
    """Token strings of the real, non-special positions."""
    return [vocab.tokens[i] for i, m in zip(seq.ids, seq.mask) if m and i not in (PAD, CLS, SEP)]


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    len_max: int
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int | None = None
    frozen: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.vocab_size < 5 or self.len_max < 2 or self.n_layers < 0:
            raise ValueError(f"invalid encoder config {self}")

    @property
    def ff_width(self):
        return 4 * self.d_model if self.d_ff is None else self.d_ff

    def to_dict(self):
        return asdict(self)


# (len_max, d_model, n_layers, n_heads, d_ff); "paper-base" mirrors bert-base sizes.
PRESETS = {
    "paper-base": (512, 768, 12, 12, 3072),
    "small": (128, 128, 4, 4, None),
    "tiny": (64, 64, 2, 4, None),
    "micro": (12, 16, 1, 2, None),
}


def preset(name, vocab_size=None, **overrides):
    if name not in PRESETS:
        raise ValueError(f"unknown encoder preset {name!r}; choose from {sorted(PRESETS)}")
    len_max, d, layers, heads, d_ff = PRESETS[name]
    if vocab_size is None:
        vocab_size = 30522 if name == "paper-base" else 2000
    kw = dict(vocab_size=vocab_size, len_max=len_max, d_model=d, n_layers=layers, n_heads=heads, d_ff=d_ff)
    kw.update(overrides)
    return EncoderConfig(**kw)


class TextEncoder:
    """Encoder bound to the ``<prefix>.*`` entries of a parameter dict."""

    def __init__(self, cfg, params, prefix="encoder"):
        self.cfg = cfg
        self.tok = params[f"{prefix}.tok_emb"]
        self.pos = params[f"{prefix}.pos_emb"]
        self.layers = [
            TransformerEncoderBlock.bind(params, f"{prefix}.layer{i}", cfg.n_heads) for i in range(cfg.n_layers)
        ]
        self.pooler = LinearLayer.bind(params, f"{prefix}.pooler")

    @staticmethod
    def shapes(cfg, prefix="encoder"):
        inv = {
            f"{prefix}.tok_emb": ((cfg.vocab_size, cfg.d_model), "normal"),
            f"{prefix}.pos_emb": ((cfg.len_max, cfg.d_model), "normal"),
        }
        for i in range(cfg.n_layers):
            inv.update(TransformerEncoderBlock.shapes(f"{prefix}.layer{i}", cfg.d_model, cfg.n_heads, cfg.ff_width))
        inv.update(LinearLayer.shapes(f"{prefix}.pooler", cfg.d_model, cfg.d_model))
        return inv

    def encode(self, ids, mask):
        """Final hidden states, shape ``(batch, L, d_model)``.

        ``L`` is normally ``len_max``; a shorter width (trailing padding cut
        off) gives the same states at the kept positions.
        """
        ids = np.atleast_2d(np.asarray(ids))
        mask = np.atleast_2d(np.asarray(mask, dtype=np.uint8))
        width = ids.shape[1]
        if not 1 <= width <= self.cfg.len_max or mask.shape != ids.shape:
            raise T.ShapeError("encode", ids.shape, mask.shape, (ids.shape[0], self.cfg.len_max))
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise IndexError(f"token id out of range for vocabulary of {self.cfg.vocab_size}")
        pos = self.pos if width == self.cfg.len_max else self.pos[:width]
        h = T.add(T.take_rows(self.tok, ids), pos)
        for layer in self.layers:
            h = transformer_encoder(layer, h, h, h, mask=mask)
        return h

    def pooler_output(self, states):
        """tanh(W_p h_[CLS] + b_p), shape ``(batch, d_model)``."""
        return T.tanh(self.pooler(states[:, 0, :]))
